#pragma once

#include <cstdint>
#include <random>

#include "motif/core/tensor.hpp"

namespace motif {

/// Deterministic random stream. Every consumer owns its own Rng seeded from
/// an explicit (master seed, stream id) pair so that adding a consumer does
/// not shift the draws of another.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}
  Rng(uint64_t master, uint64_t stream) : gen_(mix(master, stream)) {}

  static uint64_t mix(uint64_t a, uint64_t b) {
    // splitmix64 over the pair
    uint64_t x = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
  }

  uint64_t next_u64() { return gen_(); }

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(gen_);
  }

  double gamma(double alpha) {
    return std::gamma_distribution<double>(alpha, 1.0)(gen_);
  }

  /// Beta(a, b) via two gamma draws.
  double beta(double a, double b) {
    double x = gamma(a);
    double y = gamma(b);
    return x / (x + y);
  }

  long index(long n) { return std::uniform_int_distribution<long>(0, n - 1)(gen_); }

  template <class It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, gen_);
  }

  template <class T>
  Tensor<T> normal_tensor(Shape shape, double stddev = 1.0) {
    Tensor<T> t(std::move(shape));
    for (long i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(normal(0.0, stddev));
    return t;
  }

  template <class T>
  Tensor<T> uniform_tensor(Shape shape, double lo, double hi) {
    Tensor<T> t(std::move(shape));
    for (long i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(uniform(lo, hi));
    return t;
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace motif
