#pragma once

#include <string>
#include <vector>

#include "motif/sim/types.hpp"

namespace motif {

struct AccessRecord {
  std::string pair;
  long index = 0;  // episode index within its (embodiment, task) pair
};

/// Log of every episode the training loader handed out, for protocol audits.
struct AccessAudit {
  std::vector<AccessRecord> accesses;

  /// Number of accesses that violate the few-shot budget of the split.
  long violations(const BenchmarkSplit& split) const {
    long v = 0;
    for (const auto& a : accesses) {
      auto it = split.assignment.find(a.pair);
      if (it != split.assignment.end() && it->second == BenchmarkSplit::Role::Few &&
          a.index >= split.K)
        ++v;
    }
    return v;
  }
};

struct EpisodeRef {
  const Episode* ep = nullptr;
  std::string pair;
  long index_in_pair = 0;
};

/// Episodes available for training. Respects the split's per-pair episode
/// lists when given, holds out every holdout_mod-th episode for validation
/// (0 disables), and records every access.
inline std::vector<EpisodeRef> training_episodes(const Corpus& corpus,
                                                 const BenchmarkSplit* split, long holdout_mod,
                                                 AccessAudit* audit) {
  std::vector<EpisodeRef> out;
  std::map<std::string, long> next;
  for (const auto& ep : corpus.episodes) {
    std::string key = pair_key(ep.embodiment_id, ep.task_id);
    long idx = next[key]++;
    if (holdout_mod > 0 && idx % holdout_mod == holdout_mod - 1) continue;
    if (split) {
      auto it = split->episodes.find(key);
      if (it == split->episodes.end()) continue;
      if (std::find(it->second.begin(), it->second.end(), idx) == it->second.end()) continue;
    }
    if (audit) audit->accesses.push_back({key, idx});
    out.push_back({&ep, key, idx});
  }
  return out;
}

/// The validation complement of training_episodes' holdout rule.
inline std::vector<EpisodeRef> heldout_episodes(const Corpus& corpus, long holdout_mod) {
  std::vector<EpisodeRef> out;
  std::map<std::string, long> next;
  for (const auto& ep : corpus.episodes) {
    std::string key = pair_key(ep.embodiment_id, ep.task_id);
    long idx = next[key]++;
    if (holdout_mod > 0 && idx % holdout_mod == holdout_mod - 1) out.push_back({&ep, key, idx});
  }
  return out;
}

}  // namespace motif
