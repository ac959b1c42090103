#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "motif/core/ops.hpp"

namespace motif {

/// Execution context threaded through module forward passes.
template <class T>
struct Ctx {
  Tape<T>* tape = nullptr;
  bool training = false;
  Rng* rng = nullptr;  // dropout stream; required when training
};

/// Flat registry of named parameters; the unit of optimization and
/// checkpointing.
template <class T>
class ParamGroup {
 public:
  void add(Parameter<T>* p) { params_.push_back(p); }

  std::vector<Parameter<T>*>& all() { return params_; }
  const std::vector<Parameter<T>*>& all() const { return params_; }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  long numel() const {
    long n = 0;
    for (auto* p : params_) n += p->value.numel();
    return n;
  }

  Parameter<T>* find(const std::string& name) const {
    for (auto* p : params_)
      if (p->name == name) return p;
    return nullptr;
  }

  double grad_sq_norm() const {
    double s = 0;
    for (auto* p : params_)
      for (long i = 0; i < p->grad.numel(); ++i) {
        double g = static_cast<double>(p->grad[i]);
        s += g * g;
      }
    return s;
  }

  /// Scales all gradients so their global L2 norm is at most max_norm.
  void clip_grad_norm(double max_norm) {
    double n = std::sqrt(grad_sq_norm());
    if (n <= max_norm || n == 0.0) return;
    T c = static_cast<T>(max_norm / n);
    for (auto* p : params_) p->grad.arr() *= c;
  }

  bool grads_finite() const {
    for (auto* p : params_)
      if (!p->grad.all_finite()) return false;
    return true;
  }

 private:
  std::vector<Parameter<T>*> params_;
};

namespace init {

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
template <class T>
Tensor<T> xavier(Shape shape, long fan_in, long fan_out, Rng& rng) {
  double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return rng.uniform_tensor<T>(std::move(shape), -a, a);
}

template <class T>
Tensor<T> normal(Shape shape, double stddev, Rng& rng) {
  return rng.normal_tensor<T>(std::move(shape), stddev);
}

}  // namespace init

}  // namespace motif
