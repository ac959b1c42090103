#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "motif/predictor/model.hpp"
#include "motif/vq/train.hpp"

namespace motif {

struct Stage2TrainConfig {
  PredictorConfig model;
  OptimConfig optim;
  long epochs = 30;
  long batch = 128;
  long stride = 0;           // 0 -> H_s / 2 of the Stage I model
  long holdout_mod = 10;     // every n-th episode held out for validation
  bool canonicalize = true;  // must match the Stage I preprocessing
  uint64_t seed = 0;
};

/// One Stage II training row: the observation at the segment's first step,
/// the instruction id, and the preprocessed segment the frozen Stage I
/// encoder turns into the regression target.
struct Stage2Row {
  Tensor<double> obs;  // (obs_dim)
  CanonicalSegment seg;
};

inline std::vector<Stage2Row> stage2_rows(const Corpus& corpus,
                                          const std::vector<EpisodeRef>& refs, long H_s,
                                          long stride, bool canonical,
                                          const Standardizer* stand = nullptr,
                                          std::vector<std::string>* warnings = nullptr) {
  std::vector<Stage2Row> rows;
  for (const auto& ref : refs) {
    const auto& emb = corpus.embodiment(ref.ep->embodiment_id);
    long emb_idx = corpus.embodiment_index(ref.ep->embodiment_id);
    const long obs_dim = ref.ep->observations.dim(1);
    for (auto& seg : segment_episode(*ref.ep, H_s, stride, emb_idx, warnings)) {
      Stage2Row row;
      row.obs = Tensor<double>({obs_dim});
      std::copy_n(ref.ep->observations.data() + seg.start * obs_dim, obs_dim, row.obs.data());
      if (canonical) {
        row.seg = canonicalize_segment(seg, emb);
      } else {
        row.seg.values = seg.states;
        row.seg.progress = seg.progress;
        row.seg.instruction = seg.instruction;
        row.seg.embodiment_index = seg.embodiment_index;
        if (stand) stand->apply(row.seg.values);
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

/// Regression targets from the frozen Stage I encoder (eval mode, no
/// gradients recorded against Stage I parameters). Returns (N, M, d_e).
template <class T>
Tensor<T> stage2_targets(Stage1Model<T>& stage1, const std::vector<Stage2Row>& rows, long batch) {
  const long M = stage1.config().M, d_e = stage1.config().d_e, H_s = stage1.config().H_s;
  const long N = static_cast<long>(rows.size());
  Tensor<T> out({N, M, d_e});
  Rng dummy(0);
  Tape<T> tape;
  for (long lo = 0; lo < N; lo += batch) {
    const long hi = std::min(N, lo + batch);
    tape.reset();
    Ctx<T> ctx{&tape, false, &dummy};
    Tensor<T> x({hi - lo, H_s, 4});
    std::vector<double> progress;
    for (long i = lo; i < hi; ++i) {
      const auto& v = rows[static_cast<size_t>(i)].seg.values;
      for (long k = 0; k < v.numel(); ++k)
        x[(i - lo) * H_s * 4 + k] = static_cast<T>(v[k]);
      progress.push_back(rows[static_cast<size_t>(i)].seg.progress);
    }
    Var<T> z_e = stage1.encode(ctx, tape.constant(std::move(x)), progress);
    std::copy_n(z_e.val().data(), (hi - lo) * M * d_e, out.data() + lo * M * d_e);
  }
  return out;
}

struct Stage2EpochLog {
  long epoch = 0;
  double loss = 0;
  double val_l2 = 0;
};

struct Stage2TrainResult {
  std::vector<Stage2EpochLog> epochs;
  std::vector<double> first_losses;  // first 10 step losses
  double final_val_l2 = 0;
  std::vector<std::string> warnings;
};

template <class T>
Tensor<T> stage2_obs_batch(const std::vector<Stage2Row>& rows, const std::vector<size_t>& order,
                           size_t lo, size_t hi, long obs_dim) {
  Tensor<T> obs({static_cast<long>(hi - lo), obs_dim});
  for (size_t i = lo; i < hi; ++i) {
    const auto& o = rows[order[i]].obs;
    if (o.numel() != obs_dim)
      throw std::invalid_argument("observation row dim " + std::to_string(o.numel()) +
                                  " does not match configured obs_dim " +
                                  std::to_string(obs_dim));
    for (long k = 0; k < obs_dim; ++k)
      obs[static_cast<long>(i - lo) * obs_dim + k] = static_cast<T>(o[k]);
  }
  return obs;
}

/// Mean regression loss of the predictor over rows (eval mode).
template <class T>
double eval_stage2_l2(Stage2Model<T>& model, const std::vector<Stage2Row>& rows,
                      const Tensor<T>& targets, long batch) {
  if (rows.empty()) return 0;
  const long M = targets.dim(1), d_e = targets.dim(2);
  std::vector<size_t> order(rows.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng dummy(0);
  Tape<T> tape;
  double se = 0;
  long n = 0;
  for (size_t lo = 0; lo < rows.size(); lo += static_cast<size_t>(batch)) {
    size_t hi = std::min(rows.size(), lo + static_cast<size_t>(batch));
    tape.reset();
    Ctx<T> ctx{&tape, false, &dummy};
    Tensor<T> obs = stage2_obs_batch<T>(rows, order, lo, hi, model.config().obs_dim);
    std::vector<long> ids;
    for (size_t i = lo; i < hi; ++i) ids.push_back(rows[order[i]].seg.instruction);
    Var<T> pred = model.forward(ctx, obs, ids);
    for (size_t i = lo; i < hi; ++i) {
      const T* t = targets.data() + static_cast<long>(order[i]) * M * d_e;
      const T* p = pred.val().data() + static_cast<long>(i - lo) * M * d_e;
      for (long k = 0; k < M * d_e; ++k) {
        double d = static_cast<double>(p[k]) - static_cast<double>(t[k]);
        se += d * d;
      }
    }
    n += static_cast<long>(hi - lo) * M * d_e;
  }
  return se / std::max<long>(1, n);
}

/// Stage II training: the Stage I model is used only as a frozen target
/// encoder; none of its parameters are registered with the optimizer and no
/// gradient graph ever reaches them.
template <class T>
Stage2TrainResult train_stage2(Stage2Model<T>& model, Stage1Model<T>& stage1,
                               const Corpus& corpus, const BenchmarkSplit* split,
                               const Stage2TrainConfig& cfg, const Standardizer* stand = nullptr,
                               AccessAudit* audit = nullptr) {
  const auto& pc = model.config();
  if (pc.M != stage1.config().M || pc.d_e != stage1.config().d_e)
    throw std::invalid_argument("predictor token grid must match the motif encoder");
  const long H_s = stage1.config().H_s;
  const long stride = cfg.stride > 0 ? cfg.stride : std::max<long>(1, H_s / 2);
  Stage2TrainResult result;

  auto train_refs = training_episodes(corpus, split, cfg.holdout_mod, audit);
  if (train_refs.empty()) throw std::invalid_argument("no training episodes");
  std::vector<Stage2Row> train =
      stage2_rows(corpus, train_refs, H_s, stride, cfg.canonicalize, stand, &result.warnings);
  if (train.empty()) throw std::invalid_argument("no training rows");
  auto val_refs = heldout_episodes(corpus, cfg.holdout_mod);
  std::vector<Stage2Row> val = stage2_rows(corpus, val_refs, H_s, stride, cfg.canonicalize, stand);

  Tensor<T> train_tgt = stage2_targets(stage1, train, cfg.batch);
  Tensor<T> val_tgt = stage2_targets(stage1, val, cfg.batch);

  const long N = static_cast<long>(train.size());
  const long steps_per_epoch = (N + cfg.batch - 1) / cfg.batch;
  AdamW<T> opt(model.params(), cfg.optim, steps_per_epoch * cfg.epochs);
  Rng shuffle_rng(Rng::mix(cfg.seed, 0x0BA7C5));
  Rng dropout_rng(Rng::mix(cfg.seed, 0xD8090A));

  std::vector<size_t> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  const long M = pc.M, d_e = pc.d_e;

  Tape<T> tape;
  for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());
    Stage2EpochLog log;
    log.epoch = epoch;
    long steps = 0;
    for (size_t lo = 0; lo < order.size(); lo += static_cast<size_t>(cfg.batch)) {
      size_t hi = std::min(order.size(), lo + static_cast<size_t>(cfg.batch));
      tape.reset();
      Ctx<T> ctx{&tape, true, &dropout_rng};
      Tensor<T> obs = stage2_obs_batch<T>(train, order, lo, hi, pc.obs_dim);
      std::vector<long> ids;
      Tensor<T> tgt({static_cast<long>(hi - lo), M, d_e});
      for (size_t i = lo; i < hi; ++i) {
        ids.push_back(train[order[i]].seg.instruction);
        std::copy_n(train_tgt.data() + static_cast<long>(order[i]) * M * d_e, M * d_e,
                    tgt.data() + static_cast<long>(i - lo) * M * d_e);
      }
      model.params().zero_grad();
      Var<T> pred = model.forward(ctx, obs, ids);
      Var<T> loss = loss_predictor(pred, tape.constant(std::move(tgt)));
      double l = static_cast<double>(loss.item());
      if (!std::isfinite(l))
        throw std::runtime_error("stage2 diverged at epoch " + std::to_string(epoch));
      tape.backward(loss);
      if (!model.params().grads_finite())
        throw std::runtime_error("stage2 non-finite gradients at epoch " + std::to_string(epoch));
      opt.step();
      if (result.first_losses.size() < 10) result.first_losses.push_back(l);
      log.loss += l;
      ++steps;
    }
    log.loss /= steps;
    log.val_l2 = eval_stage2_l2(model, val, val_tgt, cfg.batch);
    result.epochs.push_back(log);
  }
  if (!result.epochs.empty()) result.final_val_l2 = result.epochs.back().val_l2;
  return result;
}

}  // namespace motif
