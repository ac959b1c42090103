#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "motif/core/tensor.hpp"

namespace motif {

/// Wrap an angle into (-pi, pi].
inline double wrap_angle(double a) {
  double w = std::remainder(a, 2.0 * M_PI);
  if (w <= -M_PI) w += 2.0 * M_PI;
  return w;
}

struct Pose2 {
  double x = 0, y = 0, theta = 0;
};

/// One robot platform: planar base frame, reach, execution speed, and its own
/// action encoding. State is always (x, y, orientation, gripper openness).
struct EmbodimentSpec {
  std::string id;
  Pose2 base_pose;
  double workspace_radius = 1.0;
  double speed_scale = 1.0;
  long action_dim = 4;
  static constexpr long state_dim = 4;
  // How actions encode the pose delta: 0 = world-frame (dx,dy,dth,g),
  // 1 = base-frame (dx,dy rotated into the base frame), 2 = world-frame
  // padded to 6 dims with two always-zero channels at positions 4,5.
  int action_coding = 0;

  void validate() const {
    if (workspace_radius <= 0) throw std::invalid_argument("workspace_radius must be > 0");
    if (speed_scale <= 0) throw std::invalid_argument("speed_scale must be > 0");
    if (action_dim < 4) throw std::invalid_argument("action_dim must be >= 4");
  }
};

/// One manipulation task: a parametric unit-disk reference path with a
/// gripper close/open schedule, plus the success tolerance.
struct TaskSpec {
  std::string id;
  long instruction = 0;  // token id; the text is the human-readable form
  std::string text;
  int profile = 0;          // which parametric curve family
  double close_t = 0.25;    // gripper closes around this normalized time
  double open_t = 0.80;     // and re-opens around this one
  double eps_unit = 0.12;   // success radius in unit-workspace scale
};

/// One expert demonstration: per-step states, actions, and scene features.
struct Episode {
  std::string embodiment_id;
  std::string task_id;
  Tensor<double> states;        // (T, 4)
  Tensor<double> actions;       // (T, action_dim)
  Tensor<double> observations;  // (T, obs_dim)
  long instruction = 0;
  long seed = 0;

  long length() const { return states.ndim() ? states.dim(0) : 0; }
};

/// A fixed window of raw states plus the metadata Stage I consumes.
struct TrajectorySegment {
  Tensor<double> states;  // (H_s, 4) absolute
  long start = 0;         // first step of the window in its episode
  double progress = 0;    // normalized position of the window in its episode
  long instruction = 0;
  long embodiment_index = 0;
  std::string embodiment_id;
  std::string task_id;
};

inline std::string pair_key(const std::string& emb, const std::string& task) {
  return emb + "/" + task;
}

/// Interleaved Source(Full)/Target(Few-K) assignment over embodiment-task
/// pairs, with the episode indices each pair may use for training.
struct BenchmarkSplit {
  enum class Role { Full, Few };
  std::map<std::string, Role> assignment;              // pair_key -> role
  long K = 0;
  std::map<std::string, std::vector<long>> episodes;   // pair_key -> indices
};

struct BenchmarkConfig {
  std::vector<EmbodimentSpec> embodiments;
  std::vector<TaskSpec> tasks;
  long episodes_per_pair = 50;
  long base_steps = 96;        // nominal episode length before speed warp
  double noise_amp = 0.02;     // smooth path noise, unit-workspace scale
  uint64_t master_seed = 0;
  // pair_key -> "full" | "few"; every task must be full on at least one
  // embodiment and few on at least one other.
  std::map<std::string, std::string> layout;
};

struct Corpus {
  BenchmarkConfig config;
  std::vector<Episode> episodes;

  const EmbodimentSpec& embodiment(const std::string& id) const {
    for (const auto& e : config.embodiments)
      if (e.id == id) return e;
    throw std::invalid_argument("unknown embodiment: " + id);
  }
  const TaskSpec& task(const std::string& id) const {
    for (const auto& t : config.tasks)
      if (t.id == id) return t;
    throw std::invalid_argument("unknown task: " + id);
  }
  long embodiment_index(const std::string& id) const {
    for (size_t i = 0; i < config.embodiments.size(); ++i)
      if (config.embodiments[i].id == id) return static_cast<long>(i);
    throw std::invalid_argument("unknown embodiment: " + id);
  }
};

/// The default 3-embodiment x 4-task benchmark. Embodiments differ in base
/// frame, reach, speed, and action encoding; tasks share semantics across
/// embodiments via the unit-disk reference profiles.
inline BenchmarkConfig default_benchmark(uint64_t master_seed = 0) {
  BenchmarkConfig cfg;
  cfg.master_seed = master_seed;
  cfg.embodiments = {
      {"alpha", {0.0, 0.0, 0.0}, 1.0, 1.0, 4, 0},
      {"beta", {1.5, -0.5, 0.7}, 1.6, 1.25, 4, 1},
      {"gamma", {-1.2, 0.8, -1.1}, 0.7, 0.8, 6, 2},
  };
  cfg.tasks = {
      {"slide", 0, "slide the block to the marked spot", 0, 0.25, 0.80, 0.12},
      {"arc", 1, "sweep the block along the arc", 1, 0.30, 0.85, 0.12},
      {"hook", 2, "pull the block around the corner", 2, 0.30, 0.85, 0.12},
      {"wave", 3, "carry the block across the weave", 3, 0.20, 0.80, 0.12},
  };
  // Cyclic interleaving: task j is Few on embodiment (3 - j mod 3) mod 3 and
  // Full everywhere else, so every task is full-data on two robots and
  // few-shot on one.
  for (size_t i = 0; i < cfg.embodiments.size(); ++i)
    for (size_t j = 0; j < cfg.tasks.size(); ++j) {
      bool few = (i + j) % cfg.embodiments.size() == 0;
      cfg.layout[pair_key(cfg.embodiments[i].id, cfg.tasks[j].id)] = few ? "few" : "full";
    }
  return cfg;
}

}  // namespace motif
