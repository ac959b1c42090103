#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "motif/harness/pipeline.hpp"
#include "motif/sim/synth.hpp"

namespace motif {

/// Scene layout at the start of an episode: object placed where the expert's
/// gripper closes, target where it reopens. Identical to the construction in
/// synthesize_episode, which consumes its scene during observation replay.
inline Scene initial_scene(const EmbodimentSpec& emb, const TaskSpec& task, long seed,
                           double noise_amp) {
  PathNoise noise(static_cast<uint64_t>(seed), noise_amp);
  Scene scene;
  double tg = grasp_time(task), tr = release_time(task);
  UnitPose ug = unit_profile(task, tg), ur = unit_profile(task, tr);
  double nx, ny, nth, th;
  noise.eval(tg, nx, ny, nth);
  world_from_unit(emb, ug.x + nx, ug.y + ny, 0, scene.obj_x, scene.obj_y, th);
  noise.eval(tr, nx, ny, nth);
  world_from_unit(emb, ur.x + nx, ur.y + ny, 0, scene.tgt_x, scene.tgt_y, th);
  return scene;
}

struct RolloutConfig {
  long exec_steps = 8;           // actions executed per predicted chunk
  double horizon_factor = 2.0;   // step budget relative to the expert length
  long base_steps = 96;
  double noise_amp = 0.02;
};

struct RolloutResult {
  bool success = false;
  long steps = 0;          // control steps executed
  double final_dist = 0;   // object-to-target distance at the end
};

/// Closed-loop receding-horizon evaluation of one (embodiment, task, seed)
/// episode. The policy callback maps (state, observation) to an action chunk
/// (H_a, action_dim); the first exec_steps actions are executed before
/// re-planning. Success is checked after every step.
template <class PolicyFn>
RolloutResult rollout_episode(const EmbodimentSpec& emb, const TaskSpec& task, long seed,
                              const RolloutConfig& rc, PolicyFn&& policy) {
  if (rc.exec_steps < 1) throw std::invalid_argument("exec_steps must be >= 1");
  Episode ref = synthesize_episode(emb, task, seed, rc.base_steps, rc.noise_amp);
  Scene scene = initial_scene(emb, task, seed, rc.noise_amp);
  const long max_steps =
      static_cast<long>(std::lround(rc.horizon_factor * static_cast<double>(ref.length())));

  double state[4];
  std::copy_n(ref.states.data(), 4, state);
  Tensor<double> s({4});

  RolloutResult out;
  while (out.steps < max_steps && !out.success) {
    std::copy_n(state, 4, s.data());
    std::vector<double> ov = observe(emb, state, scene);
    Tensor<double> obs({static_cast<long>(ov.size())}, ov);
    Tensor<double> chunk = policy(s, obs);  // (H_a, action_dim)
    if (chunk.ndim() != 2 || chunk.dim(1) != emb.action_dim)
      throw std::invalid_argument("policy chunk has the wrong shape");
    const long exec = std::min(rc.exec_steps, chunk.dim(0));
    for (long i = 0; i < exec && out.steps < max_steps; ++i) {
      env_step(emb, chunk.data() + i * emb.action_dim, state, scene);
      ++out.steps;
      if (task_success(task, emb, scene, state[3])) {
        out.success = true;
        break;
      }
    }
  }
  out.final_dist = std::hypot(scene.obj_x - scene.tgt_x, scene.obj_y - scene.tgt_y);
  return out;
}

/// Success rates keyed by embodiment/task pair plus the two benchmark
/// aggregates: Global averages every pair, Transfer averages only the
/// few-shot pairs of the split.
struct EvalMetrics {
  std::map<std::string, double> pair_rate;
  double global = 0;
  double transfer = 0;
};

inline EvalMetrics eval_metrics(const std::map<std::string, double>& rates,
                                const BenchmarkSplit& split) {
  EvalMetrics m;
  double g = 0, t = 0;
  long ng = 0, nt = 0;
  for (const auto& [key, role] : split.assignment) {
    auto it = rates.find(key);
    if (it == rates.end())
      throw std::invalid_argument("missing success rate for pair " + key);
    m.pair_rate[key] = it->second;
    g += it->second;
    ++ng;
    if (role == BenchmarkSplit::Role::Few) {
      t += it->second;
      ++nt;
    }
  }
  if (ng == 0) throw std::invalid_argument("split has no pairs");
  m.global = g / static_cast<double>(ng);
  m.transfer = nt == 0 ? 0.0 : t / static_cast<double>(nt);
  return m;
}

/// Evaluate a trained pipeline over every pair of the benchmark with a fixed
/// number of rollouts per pair. Rollout seeds derive from the evaluation
/// seed, the pair, and the rollout index only, so changing the evaluation
/// seed changes initial conditions but never the checkpoints.
template <class T>
EvalMetrics evaluate_pipeline(Pipeline<T>& pipe, const Corpus& corpus,
                              const BenchmarkSplit& split, long rollouts, uint64_t eval_seed,
                              const RolloutConfig* rc_in = nullptr) {
  if (rollouts < 1) throw std::invalid_argument("rollouts must be >= 1");
  RolloutConfig rc;
  if (rc_in) rc = *rc_in;
  rc.base_steps = corpus.config.base_steps;
  rc.noise_amp = corpus.config.noise_amp;

  std::map<std::string, double> rates;
  for (size_t ei = 0; ei < corpus.config.embodiments.size(); ++ei) {
    const auto& emb = corpus.config.embodiments[ei];
    for (const auto& task : corpus.config.tasks) {
      const std::string key = pair_key(emb.id, task.id);
      long wins = 0;
      for (long r = 0; r < rollouts; ++r) {
        uint64_t s = Rng::mix(Rng::mix(eval_seed, std::hash<std::string>{}(key)),
                              static_cast<uint64_t>(r) + 1);
        long ep_seed = static_cast<long>(s & 0x7fffffffffffULL);
        Rng noise_rng(Rng::mix(s, 0xF10));
        auto policy = [&](const Tensor<double>& st, const Tensor<double>& obs) {
          ActionChunk c = pipeline_act(pipe, static_cast<long>(ei), st, obs, task.instruction,
                                       noise_rng);
          return c.values;
        };
        if (rollout_episode(emb, task, ep_seed, rc, policy).success) ++wins;
      }
      rates[key] = static_cast<double>(wins) / static_cast<double>(rollouts);
    }
  }
  return eval_metrics(rates, split);
}

}  // namespace motif
