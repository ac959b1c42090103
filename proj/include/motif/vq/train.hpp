#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "motif/canonical.hpp"
#include "motif/data.hpp"
#include "motif/opt/adamw.hpp"
#include "motif/sim/synth.hpp"
#include "motif/vq/losses.hpp"

namespace motif {

/// Per-dimension affine normalization used by the no-canonicalization
/// ablation so raw world-frame segments keep a sane scale.
struct Standardizer {
  std::array<double, 4> mean{0, 0, 0, 0};
  std::array<double, 4> std{1, 1, 1, 1};
  bool active = false;

  void apply(Tensor<double>& values) const {
    if (!active) return;
    for (long i = 0; i < values.numel(); ++i) {
      int d = static_cast<int>(i % 4);
      values[i] = (values[i] - mean[d]) / std[d];
    }
  }
};

struct Stage1TrainConfig {
  MotifEncoderConfig model;
  OptimConfig optim;
  long epochs = 20;
  long batch = 128;
  long stride = 0;          // 0 -> H_s / 2
  bool canonicalize = true; // false: globally standardized raw segments
  long holdout_mod = 10;    // every n-th episode held out for validation
  uint64_t seed = 0;
};

struct Stage1Segments {
  std::vector<CanonicalSegment> segments;
  std::vector<std::string> warnings;
};

/// Segment + preprocess episodes for Stage I. With canonicalization off the
/// caller supplies the standardizer (fitted on the training set).
inline Stage1Segments prepare_segments(const Corpus& corpus, const std::vector<EpisodeRef>& refs,
                                       long H_s, long stride, bool canonical,
                                       const Standardizer* stand = nullptr) {
  Stage1Segments out;
  for (const auto& ref : refs) {
    const auto& emb = corpus.embodiment(ref.ep->embodiment_id);
    long emb_idx = corpus.embodiment_index(ref.ep->embodiment_id);
    for (auto& seg : segment_episode(*ref.ep, H_s, stride, emb_idx, &out.warnings)) {
      CanonicalSegment c;
      if (canonical) {
        c = canonicalize_segment(seg, emb);
      } else {
        c.values = seg.states;
        c.progress = seg.progress;
        c.instruction = seg.instruction;
        c.embodiment_index = seg.embodiment_index;
        if (stand) stand->apply(c.values);
      }
      out.segments.push_back(std::move(c));
    }
  }
  return out;
}

inline Standardizer fit_standardizer(const std::vector<CanonicalSegment>& segments) {
  Standardizer s;
  s.active = true;
  std::array<double, 4> sum{0, 0, 0, 0}, sq{0, 0, 0, 0};
  long n = 0;
  for (const auto& seg : segments)
    for (long i = 0; i < seg.values.numel(); ++i) {
      int d = static_cast<int>(i % 4);
      sum[d] += seg.values[i];
      sq[d] += seg.values[i] * seg.values[i];
      if (d == 0) ++n;
    }
  for (int d = 0; d < 4; ++d) {
    s.mean[d] = sum[d] / std::max<long>(1, n);
    double var = sq[d] / std::max<long>(1, n) - s.mean[d] * s.mean[d];
    s.std[d] = std::sqrt(std::max(var, 1e-12));
  }
  return s;
}

struct Stage1EpochLog {
  long epoch = 0;
  double loss = 0, vq = 0, nce = 0, adv = 0;
  double perplexity = 0;
  long codes_used = 0;
  double val_mse = 0;
};

struct Stage1TrainResult {
  std::vector<Stage1EpochLog> epochs;
  std::vector<double> first_losses;  // reported totals of the first 10 steps
  double final_val_mse = 0;
  long final_codes_used = 0;
  Standardizer standardizer;
  std::vector<std::string> warnings;
};

template <class T>
SegmentBatchMeta batch_meta(const std::vector<CanonicalSegment>& segs,
                            const std::vector<size_t>& order, size_t lo, size_t hi) {
  SegmentBatchMeta meta;
  for (size_t i = lo; i < hi; ++i) {
    const auto& s = segs[order[i]];
    meta.progress.push_back(s.progress);
    meta.instruction.push_back(s.instruction);
    meta.embodiment.push_back(s.embodiment_index);
  }
  return meta;
}

template <class T>
Tensor<T> batch_values(const std::vector<CanonicalSegment>& segs,
                       const std::vector<size_t>& order, size_t lo, size_t hi, long H_s) {
  Tensor<T> x({static_cast<long>(hi - lo), H_s, 4});
  for (size_t i = lo; i < hi; ++i) {
    const auto& v = segs[order[i]].values;
    for (long k = 0; k < v.numel(); ++k)
      x[static_cast<long>(i - lo) * H_s * 4 + k] = static_cast<T>(v[k]);
  }
  return x;
}

/// Held-out reconstruction error of decode(quantize(encode(x))) in eval mode.
template <class T>
double eval_reconstruction_mse(Stage1Model<T>& model, const std::vector<CanonicalSegment>& segs,
                               long batch) {
  if (segs.empty()) return 0;
  const long H_s = model.config().H_s;
  std::vector<size_t> order(segs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng dummy(0);
  double se = 0;
  long n = 0;
  Tape<T> tape;
  for (size_t lo = 0; lo < segs.size(); lo += static_cast<size_t>(batch)) {
    size_t hi = std::min(segs.size(), lo + static_cast<size_t>(batch));
    tape.reset();
    Ctx<T> ctx{&tape, false, &dummy};
    Tensor<T> xv = batch_values<T>(segs, order, lo, hi, H_s);
    SegmentBatchMeta meta = batch_meta<T>(segs, order, lo, hi);
    Var<T> x = tape.constant(xv);
    Var<T> z_e = model.encode(ctx, x, meta.progress);
    Quantized<T> q = quantize(ctx, z_e, model.codebook());
    Var<T> xhat = model.decode(ctx, q.st);
    for (long i = 0; i < xv.numel(); ++i) {
      double d = static_cast<double>(xhat.val()[i]) - static_cast<double>(xv[i]);
      se += d * d;
    }
    n += xv.numel();
  }
  return se / std::max<long>(1, n);
}

/// Stage I training: AdamW with warmup+cosine schedule, gradient clipping,
/// deterministic under (config, seed). Aborts on non-finite loss.
template <class T>
Stage1TrainResult train_stage1(Stage1Model<T>& model, const Corpus& corpus,
                               const BenchmarkSplit* split, const Stage1TrainConfig& cfg,
                               AccessAudit* audit = nullptr) {
  const auto& mc = model.config();
  const long stride = cfg.stride > 0 ? cfg.stride : std::max<long>(1, mc.H_s / 2);
  Stage1TrainResult result;

  auto train_refs = training_episodes(corpus, split, cfg.holdout_mod, audit);
  if (train_refs.empty()) throw std::invalid_argument("no training episodes");
  Stage1Segments train =
      prepare_segments(corpus, train_refs, mc.H_s, stride, cfg.canonicalize);
  if (!cfg.canonicalize) {
    result.standardizer = fit_standardizer(train.segments);
    for (auto& seg : train.segments) result.standardizer.apply(seg.values);
  }
  auto val_refs = heldout_episodes(corpus, cfg.holdout_mod);
  Stage1Segments val = prepare_segments(corpus, val_refs, mc.H_s, stride, cfg.canonicalize,
                                        cfg.canonicalize ? nullptr : &result.standardizer);
  result.warnings = train.warnings;
  if (train.segments.empty()) throw std::invalid_argument("no training segments");

  // Warm-start the codebook from encoder outputs on a seeded sample of
  // training segments. Random codes far from the encoder's activation shell
  // would never win a nearest-neighbor assignment and therefore never
  // receive gradient; starting on the data manifold keeps usage healthy.
  {
    Rng init_rng(Rng::mix(cfg.seed, 0xC0DEB00C));
    std::vector<size_t> pick(train.segments.size());
    for (size_t i = 0; i < pick.size(); ++i) pick[i] = i;
    init_rng.shuffle(pick.begin(), pick.end());
    const size_t sample = std::min(pick.size(), static_cast<size_t>(cfg.batch));
    Tape<T> init_tape;
    Rng dummy(0);
    Ctx<T> ictx{&init_tape, false, &dummy};
    Var<T> x = init_tape.constant(batch_values<T>(train.segments, pick, 0, sample, mc.H_s));
    SegmentBatchMeta meta = batch_meta<T>(train.segments, pick, 0, sample);
    const Tensor<T>& tok = model.encode(ictx, x, meta.progress).val();  // (B, M, d_e)
    const long rows = tok.numel() / mc.d_e;
    std::vector<long> row_order(static_cast<size_t>(rows));
    for (long i = 0; i < rows; ++i) row_order[static_cast<size_t>(i)] = i;
    init_rng.shuffle(row_order.begin(), row_order.end());
    Tensor<T>& cb = model.codebook().value;
    for (long k = 0; k < mc.K; ++k) {
      long r = rows >= mc.K ? row_order[static_cast<size_t>(k)]
                            : static_cast<long>(init_rng.index(rows));
      for (long d = 0; d < mc.d_e; ++d) {
        T jitter = rows >= mc.K ? T(0) : static_cast<T>(init_rng.normal(0.0, 1e-3));
        cb[k * mc.d_e + d] = tok[r * mc.d_e + d] + jitter;
      }
    }
  }

  const long steps_per_epoch =
      (static_cast<long>(train.segments.size()) + cfg.batch - 1) / cfg.batch;
  AdamW<T> opt(model.params(), cfg.optim, steps_per_epoch * cfg.epochs);
  Rng shuffle_rng(Rng::mix(cfg.seed, 0x0BA7C4));
  Rng dropout_rng(Rng::mix(cfg.seed, 0xD80909));

  std::vector<size_t> order(train.segments.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  Tape<T> tape;
  for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());
    Stage1EpochLog log;
    log.epoch = epoch;
    std::vector<long> usage(static_cast<size_t>(mc.K), 0);
    long steps = 0;
    for (size_t lo = 0; lo < order.size(); lo += static_cast<size_t>(cfg.batch)) {
      size_t hi = std::min(order.size(), lo + static_cast<size_t>(cfg.batch));
      tape.reset();
      Ctx<T> ctx{&tape, true, &dropout_rng};
      Var<T> x = tape.constant(batch_values<T>(train.segments, order, lo, hi, mc.H_s));
      SegmentBatchMeta meta = batch_meta<T>(train.segments, order, lo, hi);

      model.params().zero_grad();
      Var<T> z_e = model.encode(ctx, x, meta.progress);
      Quantized<T> q = quantize(ctx, z_e, model.codebook());
      for (long idx : q.indices) ++usage[static_cast<size_t>(idx)];
      Var<T> xhat = model.decode(ctx, q.st);
      Var<T> lvq = loss_vq(x, xhat, z_e, q.codes, static_cast<T>(mc.beta));
      Stage1LossParts parts;
      parts.vq = static_cast<double>(lvq.item());
      Var<T> total = lvq;
      if (mc.lambda_nce > 0) {
        Tensor<T> w = progress_weights<T>(meta.instruction, meta.progress, mc.sigma);
        Var<T> lnce = loss_nce(segment_embedding(z_e), w, static_cast<T>(mc.gamma_temp));
        parts.nce = static_cast<double>(lnce.item());
        total = add(total, scale(lnce, static_cast<T>(mc.lambda_nce)));
      }
      if (mc.lambda_adv > 0) {
        Var<T> ladv =
            loss_adv(ctx, model, z_e, meta.embodiment, static_cast<T>(mc.lambda_adv), true);
        parts.adv = static_cast<double>(ladv.item());
        total = add(total, ladv);
      }
      parts.total = parts.vq + mc.lambda_nce * parts.nce + mc.lambda_adv * parts.adv;
      if (!std::isfinite(parts.total))
        throw std::runtime_error("stage1 diverged at epoch " + std::to_string(epoch));
      tape.backward(total);
      if (!model.params().grads_finite())
        throw std::runtime_error("stage1 non-finite gradients at epoch " + std::to_string(epoch));
      opt.step();

      if (result.first_losses.size() < 10) result.first_losses.push_back(parts.total);
      log.loss += parts.total;
      log.vq += parts.vq;
      log.nce += parts.nce;
      log.adv += parts.adv;
      ++steps;
    }
    log.loss /= steps;
    log.vq /= steps;
    log.nce /= steps;
    log.adv /= steps;
    log.perplexity = codebook_perplexity(usage);
    for (long u : usage) log.codes_used += u > 0 ? 1 : 0;
    log.val_mse = eval_reconstruction_mse(model, val.segments, cfg.batch);
    result.epochs.push_back(log);
  }
  if (!result.epochs.empty()) {
    result.final_val_mse = result.epochs.back().val_mse;
    result.final_codes_used = result.epochs.back().codes_used;
  }
  return result;
}

}  // namespace motif
