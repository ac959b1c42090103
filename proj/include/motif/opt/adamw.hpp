#pragma once

#include <cmath>
#include <vector>

#include "motif/nn/module.hpp"

namespace motif {

struct OptimConfig {
  double peak_lr = 1e-4;
  double weight_decay = 0.01;
  double warmup_ratio = 0.05;
  double grad_clip = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Linear warmup to peak_lr over warmup_ratio * total_steps, then cosine
/// decay to zero.
inline double lr_schedule(const OptimConfig& cfg, long step, long total_steps) {
  long warmup = std::max<long>(1, static_cast<long>(cfg.warmup_ratio * total_steps));
  if (step < warmup) return cfg.peak_lr * static_cast<double>(step + 1) / warmup;
  double t = static_cast<double>(step - warmup) / std::max<long>(1, total_steps - warmup);
  return cfg.peak_lr * 0.5 * (1.0 + std::cos(M_PI * std::min(t, 1.0)));
}

/// AdamW with decoupled weight decay.
template <class T>
class AdamW {
 public:
  AdamW(ParamGroup<T>& params, OptimConfig cfg, long total_steps)
      : params_(&params), cfg_(cfg), total_steps_(total_steps) {
    for (auto* p : params.all()) {
      m_.push_back(Tensor<double>::zeros(p->value.shape()));
      v_.push_back(Tensor<double>::zeros(p->value.shape()));
    }
  }

  double current_lr() const { return lr_schedule(cfg_, step_, total_steps_); }

  /// One update from the accumulated gradients; clips, then steps.
  void step() {
    params_->clip_grad_norm(cfg_.grad_clip);
    const double lr = current_lr();
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, step_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, step_);
    auto& ps = params_->all();
    for (size_t k = 0; k < ps.size(); ++k) {
      Parameter<T>& p = *ps[k];
      for (long i = 0; i < p.value.numel(); ++i) {
        double g = static_cast<double>(p.grad[i]);
        double m = m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * g;
        double v = v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * g * g;
        double upd = (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
        double x = static_cast<double>(p.value[i]);
        x -= lr * (upd + cfg_.weight_decay * x);
        p.value[i] = static_cast<T>(x);
      }
    }
  }

  long step_count() const { return step_; }

 private:
  ParamGroup<T>* params_;
  OptimConfig cfg_;
  long total_steps_ = 0;
  long step_ = 0;
  std::vector<Tensor<double>> m_, v_;
};

}  // namespace motif
