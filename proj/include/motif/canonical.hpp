#pragma once

#include <cmath>
#include <stdexcept>

#include "motif/sim/types.hpp"

namespace motif {

/// A trajectory window re-anchored at its initial end-effector pose: the
/// first sample is at the origin with zero relative orientation, positions
/// are expressed in the initial heading's frame and divided by the
/// workspace radius, orientations are wrapped offsets from the initial one.
struct CanonicalSegment {
  Tensor<double> values;  // (H_s, 4)
  double progress = 0;
  long instruction = 0;
  long embodiment_index = 0;
};

inline CanonicalSegment canonicalize_segment(const TrajectorySegment& seg,
                                             const EmbodimentSpec& emb) {
  if (emb.workspace_radius <= 0) throw std::domain_error("workspace_radius must be > 0");
  const long H = seg.states.dim(0);
  CanonicalSegment out;
  out.values = Tensor<double>({H, 4});
  out.progress = seg.progress;
  out.instruction = seg.instruction;
  out.embodiment_index = seg.embodiment_index;
  const double* s0 = seg.states.data();
  const double c = std::cos(-s0[2]), s = std::sin(-s0[2]);
  for (long t = 0; t < H; ++t) {
    const double* st = seg.states.data() + t * 4;
    double dx = st[0] - s0[0], dy = st[1] - s0[1];
    double* v = out.values.data() + t * 4;
    v[0] = (c * dx - s * dy) / emb.workspace_radius;
    v[1] = (s * dx + c * dy) / emb.workspace_radius;
    v[2] = wrap_angle(st[2] - s0[2]);
    v[3] = st[3];
  }
  return out;
}

/// Inverse of canonicalize_segment given the anchor pose (the raw first
/// sample's pose). decanonicalize(canonicalize(seg), seg0) == seg.
inline Tensor<double> decanonicalize_segment(const CanonicalSegment& cseg, const Pose2& anchor,
                                             const EmbodimentSpec& emb) {
  if (emb.workspace_radius <= 0) throw std::domain_error("workspace_radius must be > 0");
  const long H = cseg.values.dim(0);
  Tensor<double> out({H, 4});
  const double c = std::cos(anchor.theta), s = std::sin(anchor.theta);
  for (long t = 0; t < H; ++t) {
    const double* v = cseg.values.data() + t * 4;
    double px = v[0] * emb.workspace_radius, py = v[1] * emb.workspace_radius;
    double* o = out.data() + t * 4;
    o[0] = anchor.x + c * px - s * py;
    o[1] = anchor.y + s * px + c * py;
    o[2] = wrap_angle(anchor.theta + v[2]);
    o[3] = v[3];
  }
  return out;
}

}  // namespace motif
