#pragma once

#include "motif/harness/pipeline.hpp"

namespace motif {

/// Full-size training configuration: every knob at its published default.
inline PipelineTrainConfig full_profile() { return PipelineTrainConfig{}; }

/// Reduced configuration sized for a single desktop CPU core, used by the
/// ablation matrix so the 5-variant x 3-seed sweep finishes in well under an
/// hour. Architecture shrinks (width/depth/codebook) but every mechanism
/// stays on; the segment window, action horizon, and loss weights match the
/// full profile.
inline PipelineTrainConfig desk_profile() {
  PipelineTrainConfig cfg;
  cfg.stage1.model.H_s = 32;
  cfg.stage1.model.M = 8;
  cfg.stage1.model.d_model = 64;
  cfg.stage1.model.d_e = 64;
  cfg.stage1.model.K = 64;
  cfg.stage1.model.enc_layers = 2;
  cfg.stage1.model.dec_layers = 2;
  cfg.stage1.model.heads = 4;
  cfg.stage1.model.local_k = 8;
  cfg.stage1.epochs = 6;
  cfg.stage1.batch = 128;
  cfg.stage1.optim.peak_lr = 3e-4;

  cfg.stage2.model.dim = 64;
  cfg.stage2.model.depth = 2;
  cfg.stage2.model.heads = 4;
  cfg.stage2.model.dim_head = 16;
  cfg.stage2.epochs = 8;
  cfg.stage2.batch = 128;
  cfg.stage2.optim.peak_lr = 3e-4;

  cfg.stage3.model.H_a = 16;
  cfg.stage3.model.hidden = 96;
  cfg.stage3.model.layers = 2;
  cfg.stage3.model.heads = 4;
  cfg.stage3.model.dropout = 0.1;
  cfg.stage3.epochs = 45;
  cfg.stage3.batch = 64;
  cfg.stage3.optim.peak_lr = 1e-3;
  return cfg;
}

/// Benchmark sized to match desk_profile: fewer episodes per pair, same
/// three embodiments and four tasks.
inline BenchmarkConfig desk_benchmark(uint64_t master_seed = 0) {
  BenchmarkConfig bench = default_benchmark(master_seed);
  bench.episodes_per_pair = 20;
  return bench;
}

}  // namespace motif
