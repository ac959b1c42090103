#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "motif/vq/model.hpp"

namespace motif {

/// Flow time with its discretized embedding bucket.
struct FlowTime {
  double tau = 0;
  long bucket = 0;
};

/// tau = s * B with B ~ Beta(alpha, beta); bucket = floor(tau * buckets).
inline FlowTime sample_flow_time(Rng& rng, double alpha, double beta, double s, long buckets) {
  if (s <= 0 || s > 1) throw std::domain_error("time scale must be in (0,1]");
  if (buckets < 1) throw std::domain_error("bucket count must be >= 1");
  FlowTime t;
  t.tau = s * rng.beta(alpha, beta);
  t.bucket = std::min<long>(buckets - 1, static_cast<long>(std::floor(t.tau * buckets)));
  return t;
}

inline long flow_time_bucket(double tau, long buckets) {
  return std::clamp<long>(static_cast<long>(std::floor(tau * buckets)), 0, buckets - 1);
}

/// Linear interpolation between noise x0 and data x1, with the constant
/// velocity target u = x1 - x0 along the path.
template <class T>
struct FlowPath {
  Tensor<T> x_tau;
  Tensor<T> u;
};

template <class T>
FlowPath<T> interpolate_path(const Tensor<T>& x0, const Tensor<T>& x1, double tau) {
  if (!x0.same_shape(x1)) throw std::invalid_argument("interpolation endpoints differ in shape");
  if (tau < 0.0 || tau > 1.0) throw std::domain_error("flow time outside [0,1]");
  FlowPath<T> out;
  out.x_tau = Tensor<T>(x0.shape());
  out.u = Tensor<T>(x0.shape());
  for (long i = 0; i < x0.numel(); ++i) {
    out.x_tau[i] = static_cast<T>((1.0 - tau) * x0[i] + tau * x1[i]);
    out.u[i] = x1[i] - x0[i];
  }
  return out;
}

/// Snap predicted continuous motif tokens to their nearest codebook rows.
/// Same nearest-neighbor rule as the Stage I quantizer; a pure value
/// operation (nothing upstream receives gradients in Stage III).
template <class T>
struct RetrievedMotifs {
  Tensor<T> tokens;          // same shape as the prediction
  std::vector<long> indices; // one codebook row per token
};

template <class T>
RetrievedMotifs<T> retrieve_motifs(const Tensor<T>& zhat, const Tensor<T>& codebook) {
  const long d = codebook.dim(1);
  if (zhat.cols() != d) throw std::invalid_argument("motif token dim does not match codebook");
  RetrievedMotifs<T> out;
  out.indices = nearest_codes(zhat, codebook);
  out.tokens = Tensor<T>(zhat.shape());
  for (size_t r = 0; r < out.indices.size(); ++r)
    std::copy_n(codebook.data() + out.indices[r] * d, d,
                out.tokens.data() + static_cast<long>(r) * d);
  return out;
}

/// Fixed-step Euler integration of dx/dtau = field(x, tau) from tau = 0 to 1.
template <class T, class Field>
Tensor<T> euler_integrate(Tensor<T> x, long steps, Field&& field) {
  if (steps < 1) throw std::invalid_argument("Euler integration needs at least one step");
  const T h = static_cast<T>(1.0 / static_cast<double>(steps));
  for (long n = 0; n < steps; ++n) {
    Tensor<T> v = field(x, static_cast<double>(n) / static_cast<double>(steps));
    if (!v.same_shape(x)) throw std::invalid_argument("velocity field changed shape");
    x.arr() += v.arr() * h;
  }
  return x;
}

}  // namespace motif
