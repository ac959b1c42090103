#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "motif/core/rng.hpp"
#include "motif/sim/env.hpp"
#include "motif/sim/types.hpp"

namespace motif {

/// Smooth bounded path noise: three seeded harmonics per channel, with
/// |value| <= amp for every t. Depends only on the seed, never on the
/// embodiment, so same-seed episodes across embodiments stay related by the
/// base-frame similarity transform.
struct PathNoise {
  double amp = 0;
  std::array<double, 9> a{};    // 3 harmonics x (x, y, theta)
  std::array<double, 9> phi{};

  PathNoise(uint64_t seed, double amplitude) : amp(amplitude) {
    Rng rng(Rng::mix(seed, 0x5EEDF00DULL));
    for (auto& v : a) v = rng.uniform(-1.0, 1.0) / 3.0;
    for (auto& v : phi) v = rng.uniform(0.0, 2.0 * M_PI);
  }

  void eval(double t, double& nx, double& ny, double& nth) const {
    double out[3] = {0, 0, 0};
    for (int c = 0; c < 3; ++c)
      for (int h = 0; h < 3; ++h)
        out[c] += amp * a[c * 3 + h] * std::sin(2.0 * M_PI * (h + 1) * t + phi[c * 3 + h]);
    nx = out[0], ny = out[1], nth = out[2];
  }
};

/// Deterministic expert demonstration: the task's unit profile, time-warped
/// by the embodiment's speed, mapped into its workspace, with seeded smooth
/// noise; actions are the per-step pose deltas in the embodiment's own
/// encoding, and observations come from replaying those actions through the
/// scene dynamics.
inline Episode synthesize_episode(const EmbodimentSpec& emb, const TaskSpec& task, long seed,
                                  long base_steps = 96, double noise_amp = 0.02) {
  if (seed < 0) throw std::invalid_argument("seed must be >= 0");
  emb.validate();
  const long T =
      std::clamp<long>(std::lround(static_cast<double>(base_steps) / emb.speed_scale), 64, 128);
  PathNoise noise(static_cast<uint64_t>(seed), noise_amp);

  // unit-frame samples
  std::vector<UnitPose> unit(static_cast<size_t>(T));
  double max_r = 0;
  for (long i = 0; i < T; ++i) {
    double t = static_cast<double>(i) / static_cast<double>(T - 1);
    UnitPose u = unit_profile(task, t);
    double nx, ny, nth;
    noise.eval(t, nx, ny, nth);
    u.x += nx, u.y += ny;
    u.theta = wrap_angle(u.theta + nth);
    max_r = std::max(max_r, std::hypot(u.x, u.y));
    unit[static_cast<size_t>(i)] = u;
  }
  if (max_r > 1.0)
    throw std::invalid_argument("task '" + task.id + "' exits the workspace (|p| = " +
                                std::to_string(max_r) + " > 1)");

  Episode ep;
  ep.embodiment_id = emb.id;
  ep.task_id = task.id;
  ep.instruction = task.instruction;
  ep.seed = seed;
  ep.states = Tensor<double>({T, EmbodimentSpec::state_dim});
  ep.actions = Tensor<double>({T, emb.action_dim});
  ep.observations = Tensor<double>({T, kObsDim});

  for (long i = 0; i < T; ++i) {
    const UnitPose& u = unit[static_cast<size_t>(i)];
    double* s = ep.states.data() + i * 4;
    world_from_unit(emb, u.x, u.y, u.theta, s[0], s[1], s[2]);
    s[3] = u.grip;
  }
  for (long i = 0; i < T; ++i) {
    const double* s0 = ep.states.data() + i * 4;
    double dx = 0, dy = 0, dth = 0, grip = s0[3];
    if (i + 1 < T) {
      const double* s1 = ep.states.data() + (i + 1) * 4;
      dx = s1[0] - s0[0];
      dy = s1[1] - s0[1];
      dth = wrap_angle(s1[2] - s0[2]);
      grip = s1[3];
    }
    encode_action(emb, dx, dy, dth, grip, ep.actions.data() + i * emb.action_dim);
  }

  // scene: object sits where the gripper closes, target where it reopens
  Scene scene;
  {
    double tg = grasp_time(task), tr = release_time(task);
    UnitPose ug = unit_profile(task, tg), ur = unit_profile(task, tr);
    double nx, ny, nth;
    noise.eval(tg, nx, ny, nth);
    double th;
    world_from_unit(emb, ug.x + nx, ug.y + ny, 0, scene.obj_x, scene.obj_y, th);
    noise.eval(tr, nx, ny, nth);
    world_from_unit(emb, ur.x + nx, ur.y + ny, 0, scene.tgt_x, scene.tgt_y, th);
  }

  // replay the actions through the scene dynamics to record observations
  double sim[4];
  std::copy_n(ep.states.data(), 4, sim);
  for (long i = 0; i < T; ++i) {
    std::vector<double> o = observe(emb, sim, scene);
    std::copy(o.begin(), o.end(), ep.observations.data() + i * kObsDim);
    if (i + 1 < T) env_step(emb, ep.actions.data() + i * emb.action_dim, sim, scene);
  }
  if (!task_success(task, emb, scene, sim[3]))
    throw std::logic_error("expert episode failed its own task: " + emb.id + "/" + task.id);
  return ep;
}

/// Fixed windows at starts 0, stride, 2*stride, ... with progress
/// start / (T - H_s) clamped to [0,1] (0 when T == H_s). Episodes shorter
/// than H_s yield no segments and append a warning.
inline std::vector<TrajectorySegment> segment_episode(const Episode& ep, long H_s, long stride,
                                                      long embodiment_index,
                                                      std::vector<std::string>* warnings = nullptr) {
  if (stride < 1) throw std::invalid_argument("stride must be >= 1");
  std::vector<TrajectorySegment> out;
  const long T = ep.length();
  if (T < H_s) {
    if (warnings)
      warnings->push_back("episode " + ep.embodiment_id + "/" + ep.task_id + " seed " +
                          std::to_string(ep.seed) + " shorter than window (" + std::to_string(T) +
                          " < " + std::to_string(H_s) + ")");
    return out;
  }
  const long denom = T - H_s;
  for (long start = 0; start + H_s <= T; start += stride) {
    TrajectorySegment seg;
    seg.states = Tensor<double>({H_s, EmbodimentSpec::state_dim});
    std::copy_n(ep.states.data() + start * 4, H_s * 4, seg.states.data());
    seg.start = start;
    seg.progress = denom == 0 ? 0.0 : std::clamp(static_cast<double>(start) / denom, 0.0, 1.0);
    seg.instruction = ep.instruction;
    seg.embodiment_index = embodiment_index;
    seg.embodiment_id = ep.embodiment_id;
    seg.task_id = ep.task_id;
    out.push_back(std::move(seg));
  }
  return out;
}

/// Generate the full corpus for a benchmark config. Episode seeds derive
/// from (master seed, task, episode index) only, so the same (task, index)
/// across embodiments shares its profile noise.
inline Corpus make_corpus(const BenchmarkConfig& cfg) {
  Corpus corpus;
  corpus.config = cfg;
  for (const auto& emb : cfg.embodiments)
    for (size_t j = 0; j < cfg.tasks.size(); ++j)
      for (long e = 0; e < cfg.episodes_per_pair; ++e) {
        uint64_t s = Rng::mix(cfg.master_seed, static_cast<uint64_t>(j) * 1000003ULL +
                                                   static_cast<uint64_t>(e));
        long seed = static_cast<long>(s & 0x7fffffffffffULL);
        corpus.episodes.push_back(
            synthesize_episode(emb, cfg.tasks[j], seed, cfg.base_steps, cfg.noise_amp));
      }
  return corpus;
}

/// Build the Source(Full)/Target(Few-K) split. Few pairs keep exactly the
/// first K episode indices in collection order.
inline BenchmarkSplit allocate_interleaved(const Corpus& corpus,
                                           const std::map<std::string, std::string>& layout,
                                           long K) {
  if (K < 1) throw std::invalid_argument("K must be >= 1");
  const auto& cfg = corpus.config;
  // interleaving invariant: every task full somewhere and few somewhere else
  for (const auto& task : cfg.tasks) {
    bool has_full = false, has_few = false;
    for (const auto& emb : cfg.embodiments) {
      auto it = layout.find(pair_key(emb.id, task.id));
      if (it == layout.end()) throw std::invalid_argument("layout missing " + pair_key(emb.id, task.id));
      (it->second == "few" ? has_few : has_full) = true;
    }
    if (!has_full || !has_few)
      throw std::invalid_argument("layout not interleaved for task " + task.id);
  }
  // episode counts per pair, in collection order
  std::map<std::string, std::vector<long>> per_pair;
  {
    std::map<std::string, long> next;
    for (const auto& ep : corpus.episodes) {
      std::string key = pair_key(ep.embodiment_id, ep.task_id);
      per_pair[key].push_back(next[key]++);
    }
  }
  BenchmarkSplit split;
  split.K = K;
  for (const auto& [key, role] : layout) {
    const auto& all = per_pair[key];
    if (role == "few") {
      if (K > static_cast<long>(all.size()))
        throw std::invalid_argument("K exceeds available episodes for " + key);
      split.assignment[key] = BenchmarkSplit::Role::Few;
      split.episodes[key] = std::vector<long>(all.begin(), all.begin() + K);
    } else {
      split.assignment[key] = BenchmarkSplit::Role::Full;
      split.episodes[key] = all;
    }
  }
  return split;
}

}  // namespace motif
