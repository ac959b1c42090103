#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "motif/core/rng.hpp"
#include "motif/nn/module.hpp"

namespace motif {

struct GradCheckEntry {
  std::string param;
  long index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_err = 0;
  bool ok = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0;
  bool all_ok = true;

  const GradCheckEntry& worst() const {
    size_t w = 0;
    for (size_t i = 1; i < entries.size(); ++i)
      if (entries[i].rel_err > entries[w].rel_err) w = i;
    return entries[w];
  }
};

/// Central finite differences against the analytic gradients already stored
/// in params (run forward+backward before calling). loss_fn must evaluate the
/// same loss from the current parameter values without touching gradients.
/// Checks up to coords_per_param coordinates per parameter, sampled
/// deterministically from seed.
template <class T>
GradCheckReport grad_check(const std::function<double()>& loss_fn, ParamGroup<T>& params,
                           double step = 1e-5, double tol = 1e-4, long coords_per_param = 8,
                           uint64_t seed = 0, double atol = 1e-8) {
  GradCheckReport rep;
  Rng rng(seed);
  for (auto* p : params.all()) {
    const long n = p->value.numel();
    std::vector<long> coords;
    if (n <= coords_per_param) {
      for (long i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (long i = 0; i < coords_per_param; ++i) coords.push_back(rng.index(n));
    }
    for (long i : coords) {
      const T saved = p->value[i];
      p->value[i] = saved + static_cast<T>(step);
      double lp = loss_fn();
      p->value[i] = saved - static_cast<T>(step);
      double lm = loss_fn();
      p->value[i] = saved;
      if (!std::isfinite(lp) || !std::isfinite(lm))
        throw std::runtime_error("grad_check: non-finite loss at " + p->name);
      GradCheckEntry e;
      e.param = p->name;
      e.index = i;
      e.analytic = static_cast<double>(p->grad[i]);
      e.numeric = (lp - lm) / (2.0 * step);
      e.rel_err = std::abs(e.analytic - e.numeric) /
                  std::max(std::abs(e.analytic) + std::abs(e.numeric), 1e-6);
      // atol absorbs finite-difference roundoff on coordinates whose true
      // gradient is (near) zero, where the relative metric is meaningless.
      e.ok = e.rel_err <= tol || std::abs(e.analytic - e.numeric) <= atol;
      if (e.ok) e.rel_err = std::min(e.rel_err, tol);
      rep.max_rel_err = std::max(rep.max_rel_err, e.rel_err);
      rep.all_ok = rep.all_ok && e.ok;
      rep.entries.push_back(std::move(e));
    }
  }
  return rep;
}

}  // namespace motif
