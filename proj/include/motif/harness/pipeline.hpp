#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "motif/flow/train.hpp"
#include "motif/predictor/train.hpp"
#include "motif/vq/train.hpp"

namespace motif {

/// The trained three-stage stack plus the preprocessing state needed to run
/// it: segment preprocessing mode, action normalization, and the benchmark's
/// instruction vocabulary.
template <class T>
struct Pipeline {
  std::unique_ptr<Stage1Model<T>> stage1;
  std::unique_ptr<Stage2Model<T>> stage2;  // null when motif guidance is off
  std::unique_ptr<Stage3Model<T>> stage3;
  bool use_motif = true;
  bool canonicalize = true;
  Standardizer standardizer;               // Stage I preprocessing when not canonical
  std::vector<ActionStats> action_stats;   // per embodiment index

  bool complete() const { return stage1 && stage3 && (!use_motif || stage2 != nullptr); }
};

struct PipelineTrainConfig {
  Stage1TrainConfig stage1;
  Stage2TrainConfig stage2;
  Stage3TrainConfig stage3;
  bool use_motif = true;
  uint64_t seed = 0;

  /// Propagates shared knobs (seed offsets, vocab, preprocessing mode) so the
  /// three stage configs cannot drift apart.
  void harmonize(const BenchmarkConfig& bench) {
    stage1.seed = Rng::mix(seed, 1);
    stage2.seed = Rng::mix(seed, 2);
    stage3.seed = Rng::mix(seed, 3);
    stage2.canonicalize = stage1.canonicalize;
    stage2.model.M = stage1.model.M;
    stage2.model.d_e = stage1.model.d_e;
    stage2.model.vocab = static_cast<long>(bench.tasks.size());
    stage2.model.obs_dim = kObsDim;
    stage3.model.M = stage1.model.M;
    stage3.model.d_e = stage1.model.d_e;
    stage3.model.vocab = static_cast<long>(bench.tasks.size());
    stage3.model.obs_dim = kObsDim;
    stage3.model.use_motif = use_motif;
  }
};

struct PipelineTrainLog {
  Stage1TrainResult stage1;
  Stage2TrainResult stage2;
  Stage3TrainResult stage3;
};

/// Train the full stack on one corpus/split. Stage I and II are frozen once
/// trained; Stage III conditions on their outputs only through precomputed
/// motif tokens.
template <class T>
Pipeline<T> train_pipeline(const Corpus& corpus, const BenchmarkSplit* split,
                           PipelineTrainConfig cfg, PipelineTrainLog* log = nullptr,
                           AccessAudit* audit = nullptr) {
  cfg.harmonize(corpus.config);
  Pipeline<T> pipe;
  pipe.use_motif = cfg.use_motif;
  pipe.canonicalize = cfg.stage1.canonicalize;

  const long n_emb = static_cast<long>(corpus.config.embodiments.size());
  pipe.stage1 = std::make_unique<Stage1Model<T>>(cfg.stage1.model, n_emb, cfg.stage1.seed);
  Stage1TrainResult r1 = train_stage1(*pipe.stage1, corpus, split, cfg.stage1, audit);
  pipe.standardizer = r1.standardizer;

  Stage2TrainResult r2;
  if (cfg.use_motif) {
    pipe.stage2 = std::make_unique<Stage2Model<T>>(cfg.stage2.model, cfg.stage2.seed);
    r2 = train_stage2(*pipe.stage2, *pipe.stage1, corpus, split, cfg.stage2,
                      pipe.canonicalize ? nullptr : &pipe.standardizer, audit);
  }

  pipe.stage3 = std::make_unique<Stage3Model<T>>(
      cfg.stage3.model, [&] {
        std::vector<std::pair<std::string, long>> embs;
        for (const auto& e : corpus.config.embodiments) embs.emplace_back(e.id, e.action_dim);
        return embs;
      }(),
      cfg.stage3.seed);
  const long H_a = cfg.stage3.model.H_a;
  const long stride = cfg.stage3.chunk_stride > 0 ? cfg.stage3.chunk_stride
                                                  : std::max<long>(1, H_a / 2);
  auto refs = training_episodes(corpus, split, cfg.stage3.holdout_mod, audit);
  auto val_refs = heldout_episodes(corpus, cfg.stage3.holdout_mod);
  auto rows = build_stage3_rows<T>(corpus, refs, H_a, stride);
  auto val_rows = build_stage3_rows<T>(corpus, val_refs, H_a, stride);
  if (cfg.use_motif) {
    attach_motifs(rows, *pipe.stage2, pipe.stage1->codebook().value, cfg.stage3.batch);
    attach_motifs(val_rows, *pipe.stage2, pipe.stage1->codebook().value, cfg.stage3.batch);
  }
  Stage3TrainResult r3 = train_stage3(*pipe.stage3, rows, val_rows, cfg.stage3);
  pipe.action_stats = r3.action_stats;

  if (log) {
    log->stage1 = std::move(r1);
    log->stage2 = std::move(r2);
    log->stage3 = std::move(r3);
  }
  return pipe;
}

/// One closed-loop policy call: observation and instruction -> motif tokens
/// (when enabled) -> Euler-sampled action chunk in the embodiment's space.
template <class T>
ActionChunk pipeline_act(Pipeline<T>& pipe, long emb_index, const Tensor<double>& s_t,
                         const Tensor<double>& obs, long instruction, Rng& rng) {
  if (!pipe.complete()) throw std::invalid_argument("pipeline is missing trained stages");
  const PolicyConfig& pc = pipe.stage3->config();
  Tensor<T> motifs;
  const Tensor<T>* motif_ptr = nullptr;
  if (pipe.use_motif) {
    Rng dummy(0);
    Tape<T> tape;
    Ctx<T> ctx{&tape, false, &dummy};
    Tensor<T> o({1, pipe.stage2->config().obs_dim});
    for (long k = 0; k < o.numel(); ++k) o[k] = static_cast<T>(obs[k]);
    Var<T> zhat = pipe.stage2->forward(ctx, o, {instruction});
    RetrievedMotifs<T> ret = retrieve_motifs(zhat.val(), pipe.stage1->codebook().value);
    motifs = ret.tokens.reshaped({1, pc.M, pc.d_e});
    motif_ptr = &motifs;
  }
  return generate_actions(*pipe.stage3, emb_index, s_t, obs, instruction, motif_ptr,
                          pipe.action_stats[static_cast<size_t>(emb_index)], pc.inference_steps,
                          rng);
}

}  // namespace motif
