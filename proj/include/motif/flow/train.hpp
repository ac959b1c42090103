#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "motif/data.hpp"
#include "motif/flow/model.hpp"
#include "motif/opt/adamw.hpp"
#include "motif/predictor/model.hpp"
#include "motif/sim/synth.hpp"

namespace motif {

/// Per-channel affine normalization of one embodiment's action space; flow
/// matching runs in normalized coordinates against unit Gaussian noise.
struct ActionStats {
  Tensor<double> mean;  // (action_dim)
  Tensor<double> std;   // (action_dim), floored away from zero

  void normalize(Tensor<double>& chunk) const {
    const long A = mean.numel();
    for (long i = 0; i < chunk.numel(); ++i)
      chunk[i] = (chunk[i] - mean[i % A]) / std[i % A];
  }
  void denormalize(Tensor<double>& chunk) const {
    const long A = mean.numel();
    for (long i = 0; i < chunk.numel(); ++i) chunk[i] = chunk[i] * std[i % A] + mean[i % A];
  }
};

/// One expert action chunk for one embodiment.
struct ActionChunk {
  Tensor<double> values;  // (H_a, action_dim)
  std::string embodiment_id;
};

/// One Stage III training row: state and scene at the chunk start, the
/// normalized expert chunk, and (optionally) the retrieved motif tokens from
/// the frozen Stage I/II stack.
template <class T>
struct Stage3Row {
  long emb_index = 0;
  long instruction = 0;
  Tensor<double> s_t;   // (4)
  Tensor<double> obs;   // (obs_dim)
  Tensor<double> x1;    // (H_a, action_dim), normalized in place later
  Tensor<T> motifs;     // (M, d_e) when motif guidance is on, else empty
};

template <class T>
std::vector<Stage3Row<T>> build_stage3_rows(const Corpus& corpus,
                                            const std::vector<EpisodeRef>& refs, long H_a,
                                            long stride) {
  if (stride < 1) throw std::invalid_argument("stride must be >= 1");
  std::vector<Stage3Row<T>> rows;
  for (const auto& ref : refs) {
    const Episode& ep = *ref.ep;
    const long T_ep = ep.length();
    if (T_ep < H_a) continue;
    const long A = ep.actions.dim(1);
    const long obs_dim = ep.observations.dim(1);
    long emb_index = corpus.embodiment_index(ep.embodiment_id);
    for (long t = 0; t + H_a <= T_ep; t += stride) {
      Stage3Row<T> row;
      row.emb_index = emb_index;
      row.instruction = ep.instruction;
      row.s_t = Tensor<double>({EmbodimentSpec::state_dim});
      std::copy_n(ep.states.data() + t * 4, 4, row.s_t.data());
      row.obs = Tensor<double>({obs_dim});
      std::copy_n(ep.observations.data() + t * obs_dim, obs_dim, row.obs.data());
      row.x1 = Tensor<double>({H_a, A});
      std::copy_n(ep.actions.data() + t * A, H_a * A, row.x1.data());
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

/// Per-embodiment action statistics over the training rows. The std floor
/// keeps constant (padding) channels from blowing up the normalized scale.
template <class T>
std::vector<ActionStats> fit_action_stats(const std::vector<Stage3Row<T>>& rows,
                                          const std::vector<long>& action_dims,
                                          double std_floor = 1e-3) {
  std::vector<ActionStats> stats(action_dims.size());
  for (size_t e = 0; e < action_dims.size(); ++e) {
    stats[e].mean = Tensor<double>({action_dims[e]});
    stats[e].std = Tensor<double>::full({action_dims[e]}, 1.0);
  }
  std::vector<std::vector<double>> sum(action_dims.size()), sq(action_dims.size());
  std::vector<long> n(action_dims.size(), 0);
  for (size_t e = 0; e < action_dims.size(); ++e) {
    sum[e].assign(static_cast<size_t>(action_dims[e]), 0.0);
    sq[e].assign(static_cast<size_t>(action_dims[e]), 0.0);
  }
  for (const auto& row : rows) {
    const long A = row.x1.dim(1);
    auto& s = sum[static_cast<size_t>(row.emb_index)];
    auto& q = sq[static_cast<size_t>(row.emb_index)];
    for (long i = 0; i < row.x1.numel(); ++i) {
      s[static_cast<size_t>(i % A)] += row.x1[i];
      q[static_cast<size_t>(i % A)] += row.x1[i] * row.x1[i];
    }
    n[static_cast<size_t>(row.emb_index)] += row.x1.dim(0);
  }
  for (size_t e = 0; e < action_dims.size(); ++e) {
    if (n[e] == 0) continue;
    for (long a = 0; a < action_dims[e]; ++a) {
      double m = sum[e][static_cast<size_t>(a)] / n[e];
      double var = sq[e][static_cast<size_t>(a)] / n[e] - m * m;
      stats[e].mean[a] = m;
      stats[e].std[a] = std::max(std::sqrt(std::max(var, 0.0)), std_floor);
    }
  }
  return stats;
}

/// Fill row.motifs with the frozen predictor's output snapped to the frozen
/// codebook (the retrieval the policy conditions on at inference time).
template <class T>
void attach_motifs(std::vector<Stage3Row<T>>& rows, Stage2Model<T>& predictor,
                   const Tensor<T>& codebook, long batch) {
  const long M = predictor.config().M, d_e = predictor.config().d_e;
  const long obs_dim = predictor.config().obs_dim;
  Rng dummy(0);
  Tape<T> tape;
  const long N = static_cast<long>(rows.size());
  for (long lo = 0; lo < N; lo += batch) {
    const long hi = std::min(N, lo + batch);
    tape.reset();
    Ctx<T> ctx{&tape, false, &dummy};
    Tensor<T> obs({hi - lo, obs_dim});
    std::vector<long> ids;
    for (long i = lo; i < hi; ++i) {
      const auto& o = rows[static_cast<size_t>(i)].obs;
      if (o.numel() != obs_dim) throw std::invalid_argument("observation/predictor dim mismatch");
      for (long k = 0; k < obs_dim; ++k) obs[(i - lo) * obs_dim + k] = static_cast<T>(o[k]);
      ids.push_back(rows[static_cast<size_t>(i)].instruction);
    }
    Var<T> zhat = predictor.forward(ctx, obs, ids);
    RetrievedMotifs<T> ret = retrieve_motifs(zhat.val(), codebook);
    for (long i = lo; i < hi; ++i) {
      rows[static_cast<size_t>(i)].motifs = Tensor<T>({M, d_e});
      std::copy_n(ret.tokens.data() + (i - lo) * M * d_e, M * d_e,
                  rows[static_cast<size_t>(i)].motifs.data());
    }
  }
}

/// A same-embodiment minibatch in normalized action coordinates.
template <class T>
struct FlowBatch {
  long emb_index = 0;
  Tensor<T> s_t;                  // (B, 4)
  Tensor<T> obs;                  // (B, obs_dim)
  std::vector<long> instruction;  // B ids
  Tensor<T> motifs;               // (B, M, d_e) or empty
  Tensor<T> x1;                   // (B, H_a, A)
};

/// The random quantities of one flow-matching step, drawn up front so tests
/// can replay them.
template <class T>
struct FlowDraw {
  Tensor<T> x0;              // same shape as x1
  std::vector<double> taus;  // per sample
};

template <class T>
FlowDraw<T> draw_flow_noise(const PolicyConfig& cfg, const Shape& x1_shape, Rng& rng) {
  FlowDraw<T> d;
  d.x0 = rng.normal_tensor<T>(x1_shape);
  for (long b = 0; b < x1_shape[0]; ++b)
    d.taus.push_back(sample_flow_time(rng, cfg.alpha, cfg.beta, cfg.s, cfg.time_buckets).tau);
  return d;
}

/// Conditional flow-matching loss: MSE between the predicted velocity at
/// x_tau and the path velocity x1 - x0.
template <class T>
Var<T> loss_fm(Ctx<T>& ctx, Stage3Model<T>& model, const FlowBatch<T>& batch,
               const FlowDraw<T>& draw) {
  if (!draw.x0.same_shape(batch.x1)) throw std::invalid_argument("noise/chunk shape mismatch");
  const long B = batch.x1.dim(0), R = batch.x1.dim(1) * batch.x1.dim(2);
  if (static_cast<long>(draw.taus.size()) != B)
    throw std::invalid_argument("one flow time per sample");
  Tensor<T> xtau(batch.x1.shape()), u(batch.x1.shape());
  for (long b = 0; b < B; ++b) {
    const double tau = draw.taus[static_cast<size_t>(b)];
    if (tau < 0.0 || tau > 1.0) throw std::domain_error("flow time outside [0,1]");
    for (long k = 0; k < R; ++k) {
      const long i = b * R + k;
      xtau[i] = static_cast<T>((1.0 - tau) * draw.x0[i] + tau * batch.x1[i]);
      u[i] = batch.x1[i] - draw.x0[i];
    }
  }
  Var<T> c = model.context(ctx, batch.obs, batch.instruction);
  const Tensor<T>* motifs = batch.motifs.empty() ? nullptr : &batch.motifs;
  Var<T> pred = model.velocity(ctx, batch.emb_index, batch.s_t, motifs,
                               ctx.tape->constant(std::move(xtau)), c, draw.taus);
  return mse(pred, ctx.tape->constant(std::move(u)));
}

struct Stage3TrainConfig {
  PolicyConfig model;
  OptimConfig optim;
  long epochs = 60;
  long batch = 64;
  long chunk_stride = 0;  // 0 -> H_a / 2
  long holdout_mod = 10;
  uint64_t seed = 0;
};

struct Stage3EpochLog {
  long epoch = 0;
  double loss = 0;
  double val_loss = 0;
};

struct Stage3TrainResult {
  std::vector<Stage3EpochLog> epochs;
  std::vector<double> first_losses;
  double final_val_loss = 0;
  std::vector<ActionStats> action_stats;  // per embodiment index
};

namespace detail3 {

template <class T>
FlowBatch<T> assemble_batch(const std::vector<Stage3Row<T>>& rows, const std::vector<size_t>& idx,
                            const PolicyConfig& cfg, long A) {
  const long B = static_cast<long>(idx.size());
  FlowBatch<T> b;
  b.emb_index = rows[idx[0]].emb_index;
  b.s_t = Tensor<T>({B, EmbodimentSpec::state_dim});
  b.obs = Tensor<T>({B, cfg.obs_dim});
  b.x1 = Tensor<T>({B, cfg.H_a, A});
  const bool with_motif = cfg.use_motif;
  if (with_motif) b.motifs = Tensor<T>({B, cfg.M, cfg.d_e});
  for (long i = 0; i < B; ++i) {
    const auto& r = rows[idx[static_cast<size_t>(i)]];
    for (long k = 0; k < 4; ++k) b.s_t[i * 4 + k] = static_cast<T>(r.s_t[k]);
    for (long k = 0; k < cfg.obs_dim; ++k)
      b.obs[i * cfg.obs_dim + k] = static_cast<T>(r.obs[k]);
    for (long k = 0; k < cfg.H_a * A; ++k)
      b.x1[i * cfg.H_a * A + k] = static_cast<T>(r.x1[k]);
    if (with_motif) {
      if (r.motifs.empty()) throw std::invalid_argument("row is missing motif tokens");
      std::copy_n(r.motifs.data(), cfg.M * cfg.d_e, b.motifs.data() + i * cfg.M * cfg.d_e);
    }
    b.instruction.push_back(r.instruction);
  }
  return b;
}

/// Same-embodiment batches in a seed-determined order.
template <class T>
std::vector<std::vector<size_t>> plan_batches(const std::vector<Stage3Row<T>>& rows,
                                              long n_embodiments, long batch, Rng& rng) {
  std::vector<std::vector<size_t>> per_emb(static_cast<size_t>(n_embodiments));
  for (size_t i = 0; i < rows.size(); ++i)
    per_emb[static_cast<size_t>(rows[i].emb_index)].push_back(i);
  std::vector<std::vector<size_t>> batches;
  for (auto& list : per_emb) {
    rng.shuffle(list.begin(), list.end());
    for (size_t lo = 0; lo < list.size(); lo += static_cast<size_t>(batch))
      batches.emplace_back(list.begin() + static_cast<long>(lo),
                           list.begin() + static_cast<long>(std::min(
                                              list.size(), lo + static_cast<size_t>(batch))));
  }
  rng.shuffle(batches.begin(), batches.end());
  return batches;
}

}  // namespace detail3

/// Mean flow-matching loss over rows with a fixed noise stream (eval mode).
template <class T>
double eval_fm_loss(Stage3Model<T>& model, const std::vector<Stage3Row<T>>& rows, long batch,
                    uint64_t noise_seed) {
  if (rows.empty()) return 0;
  const PolicyConfig& cfg = model.config();
  Rng noise(noise_seed);
  Rng dummy(0);
  Rng plan(noise_seed + 1);
  auto batches = detail3::plan_batches(rows, model.n_embodiments(), batch, plan);
  Tape<T> tape;
  double total = 0;
  long n = 0;
  for (const auto& idx : batches) {
    tape.reset();
    Ctx<T> ctx{&tape, false, &dummy};
    FlowBatch<T> b =
        detail3::assemble_batch(rows, idx, cfg, model.action_dim(rows[idx[0]].emb_index));
    FlowDraw<T> d = draw_flow_noise<T>(cfg, b.x1.shape(), noise);
    total += static_cast<double>(loss_fm(ctx, model, b, d).item()) * static_cast<double>(idx.size());
    n += static_cast<long>(idx.size());
  }
  return total / std::max<long>(1, n);
}

/// Stage III training. The Stage I/II models appear only through the
/// precomputed motif tokens on the rows; their parameters are untouched.
template <class T>
Stage3TrainResult train_stage3(Stage3Model<T>& model, std::vector<Stage3Row<T>>& train_rows,
                               std::vector<Stage3Row<T>>& val_rows,
                               const Stage3TrainConfig& cfg) {
  const PolicyConfig& mc = model.config();
  if (train_rows.empty()) throw std::invalid_argument("no training rows");
  Stage3TrainResult result;

  std::vector<long> dims;
  for (long e = 0; e < model.n_embodiments(); ++e) dims.push_back(model.action_dim(e));
  result.action_stats = fit_action_stats(train_rows, dims);
  for (auto& r : train_rows) result.action_stats[static_cast<size_t>(r.emb_index)].normalize(r.x1);
  for (auto& r : val_rows) result.action_stats[static_cast<size_t>(r.emb_index)].normalize(r.x1);

  long steps_per_epoch = 0;
  {
    Rng probe(1);
    steps_per_epoch = static_cast<long>(
        detail3::plan_batches(train_rows, model.n_embodiments(), cfg.batch, probe).size());
  }
  AdamW<T> opt(model.params(), cfg.optim, steps_per_epoch * cfg.epochs);
  Rng plan_rng(Rng::mix(cfg.seed, 0x0BA7C6));
  Rng dropout_rng(Rng::mix(cfg.seed, 0xD8090B));
  Rng noise_rng(Rng::mix(cfg.seed, 0x170153));

  Tape<T> tape;
  for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto batches = detail3::plan_batches(train_rows, model.n_embodiments(), cfg.batch, plan_rng);
    Stage3EpochLog log;
    log.epoch = epoch;
    long steps = 0;
    for (const auto& idx : batches) {
      tape.reset();
      Ctx<T> ctx{&tape, true, &dropout_rng};
      FlowBatch<T> b = detail3::assemble_batch(train_rows, idx, mc,
                                               model.action_dim(train_rows[idx[0]].emb_index));
      FlowDraw<T> d = draw_flow_noise<T>(mc, b.x1.shape(), noise_rng);
      model.params().zero_grad();
      Var<T> loss = loss_fm(ctx, model, b, d);
      double l = static_cast<double>(loss.item());
      if (!std::isfinite(l))
        throw std::runtime_error("stage3 diverged at epoch " + std::to_string(epoch));
      tape.backward(loss);
      if (!model.params().grads_finite())
        throw std::runtime_error("stage3 non-finite gradients at epoch " + std::to_string(epoch));
      opt.step();
      if (result.first_losses.size() < 10) result.first_losses.push_back(l);
      log.loss += l;
      ++steps;
    }
    log.loss /= std::max<long>(1, steps);
    log.val_loss = eval_fm_loss(model, val_rows, cfg.batch, Rng::mix(cfg.seed, 0xEA11));
    result.epochs.push_back(log);
  }
  if (!result.epochs.empty()) result.final_val_loss = result.epochs.back().val_loss;
  return result;
}

/// Sample one action chunk by Euler integration of the learned velocity
/// field from Gaussian noise, in normalized action coordinates, then map
/// back to the embodiment's action space.
template <class T>
ActionChunk generate_actions(Stage3Model<T>& model, long emb_index, const Tensor<double>& s_t,
                             const Tensor<double>& obs, long instruction,
                             const Tensor<T>* motifs, const ActionStats& stats, long steps,
                             Rng& rng) {
  const PolicyConfig& cfg = model.config();
  const long A = model.action_dim(emb_index);
  Tensor<T> st({1, EmbodimentSpec::state_dim});
  for (long k = 0; k < 4; ++k) st[k] = static_cast<T>(s_t[k]);
  Tensor<T> ob({1, cfg.obs_dim});
  for (long k = 0; k < cfg.obs_dim; ++k) ob[k] = static_cast<T>(obs[k]);

  Tensor<T> x = rng.normal_tensor<T>({1, cfg.H_a, A});
  Rng dummy(0);
  Tape<T> tape;
  auto field = [&](const Tensor<T>& xt, double tau) {
    tape.reset();
    Ctx<T> ctx{&tape, false, &dummy};
    Var<T> c = model.context(ctx, ob, {instruction});
    Var<T> v = model.velocity(ctx, emb_index, st, motifs, tape.constant(xt),
                              c, {tau});
    return v.val();
  };
  x = euler_integrate(std::move(x), steps, field);

  ActionChunk chunk;
  chunk.embodiment_id = model.embodiment_id(emb_index);
  chunk.values = Tensor<double>({cfg.H_a, A});
  for (long i = 0; i < chunk.values.numel(); ++i) chunk.values[i] = static_cast<double>(x[i]);
  stats.denormalize(chunk.values);
  return chunk;
}

}  // namespace motif
