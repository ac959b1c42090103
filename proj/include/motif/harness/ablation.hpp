#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "motif/harness/rollout.hpp"

namespace motif {

enum class Variant { Full, NoMotif, NoCanon, NoNce, NoAdv };

inline const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::Full, Variant::NoMotif, Variant::NoCanon,
                                      Variant::NoNce, Variant::NoAdv};
  return v;
}

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoMotif: return "no-motif";
    case Variant::NoCanon: return "no-canon";
    case Variant::NoNce: return "no-nce";
    case Variant::NoAdv: return "no-adv";
  }
  throw std::invalid_argument("unknown variant");
}

inline Variant variant_from_name(const std::string& s) {
  for (Variant v : all_variants())
    if (variant_name(v) == s) return v;
  throw std::invalid_argument("unknown variant: " + s);
}

/// Turn one knob per variant; everything else stays at the base config.
inline PipelineTrainConfig apply_variant(PipelineTrainConfig cfg, Variant v) {
  switch (v) {
    case Variant::Full:
      break;
    case Variant::NoMotif:
      cfg.use_motif = false;
      break;
    case Variant::NoCanon:
      cfg.stage1.canonicalize = false;  // globally standardized raw segments
      break;
    case Variant::NoNce:
      cfg.stage1.model.lambda_nce = 0.0;
      break;
    case Variant::NoAdv:
      cfg.stage1.model.lambda_adv = 0.0;
      break;
  }
  return cfg;
}

/// One trained-and-evaluated cell of the ablation matrix.
struct AblationRow {
  std::string variant;
  long K = 0;
  uint64_t seed = 0;
  EvalMetrics metrics;
  std::vector<double> stage1_loss;  // per-epoch training loss curves
  std::vector<double> stage2_loss;
  std::vector<double> stage3_loss;
};

struct AblationConfig {
  PipelineTrainConfig base;
  std::vector<Variant> variants = all_variants();
  std::vector<long> K_values{5};
  std::vector<uint64_t> seeds{0};
  long rollouts = 20;
  RolloutConfig rollout;
};

/// Run variants x K x seeds sequentially: fresh split, full three-stage
/// retraining, then rollout evaluation. Training consumes only (variant, K,
/// seed); evaluation seeds derive from the training seed.
template <class T>
std::vector<AblationRow> run_ablation_matrix(const Corpus& corpus, const AblationConfig& cfg,
                                             AccessAudit* audit = nullptr) {
  if (cfg.rollouts < 1) throw std::invalid_argument("rollouts must be >= 1");
  if (cfg.seeds.empty()) throw std::invalid_argument("need at least one seed");
  std::vector<AblationRow> rows;
  for (long K : cfg.K_values) {
    BenchmarkSplit split = allocate_interleaved(corpus, corpus.config.layout, K);
    for (uint64_t seed : cfg.seeds) {
      for (Variant v : cfg.variants) {
        PipelineTrainConfig pc = apply_variant(cfg.base, v);
        pc.seed = Rng::mix(seed, static_cast<uint64_t>(v) + 11);
        PipelineTrainLog log;
        Pipeline<T> pipe = train_pipeline<T>(corpus, &split, pc, &log, audit);
        AblationRow row;
        row.variant = variant_name(v);
        row.K = K;
        row.seed = seed;
        row.metrics = evaluate_pipeline(pipe, corpus, split, cfg.rollouts,
                                        Rng::mix(seed, 0xE7A1), &cfg.rollout);
        for (const auto& e : log.stage1.epochs) row.stage1_loss.push_back(e.loss);
        for (const auto& e : log.stage2.epochs) row.stage2_loss.push_back(e.loss);
        for (const auto& e : log.stage3.epochs) row.stage3_loss.push_back(e.loss);
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

/// Mean and standard deviation of a metric over seeds for one (variant, K).
struct VariantSummary {
  std::string variant;
  long K = 0;
  long n = 0;
  double transfer_mean = 0, transfer_std = 0;
  double global_mean = 0, global_std = 0;
};

inline std::vector<VariantSummary> summarize_ablation(const std::vector<AblationRow>& rows) {
  std::map<std::pair<std::string, long>, std::vector<const AblationRow*>> by_cell;
  for (const auto& r : rows) by_cell[{r.variant, r.K}].push_back(&r);
  auto mean_std = [](const std::vector<double>& xs, double& m, double& s) {
    m = 0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    s = 0;
    for (double x : xs) s += (x - m) * (x - m);
    s = xs.size() > 1 ? std::sqrt(s / static_cast<double>(xs.size() - 1)) : 0.0;
  };
  std::vector<VariantSummary> out;
  for (const auto& [cell, group] : by_cell) {
    VariantSummary vs;
    vs.variant = cell.first;
    vs.K = cell.second;
    vs.n = static_cast<long>(group.size());
    std::vector<double> tr, gl;
    for (const auto* r : group) {
      tr.push_back(r->metrics.transfer);
      gl.push_back(r->metrics.global);
    }
    mean_std(tr, vs.transfer_mean, vs.transfer_std);
    mean_std(gl, vs.global_mean, vs.global_std);
    out.push_back(std::move(vs));
  }
  return out;
}

}  // namespace motif
