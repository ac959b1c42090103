#include <catch2/catch_amalgamated.hpp>

#include "motif/canonical.hpp"
#include "motif/core/rng.hpp"
#include "motif/sim/synth.hpp"

using namespace motif;

namespace {

EmbodimentSpec emb_with(double radius) {
  EmbodimentSpec e;
  e.id = "e";
  e.workspace_radius = radius;
  return e;
}

TrajectorySegment random_segment(Rng& rng, long H = 32, double scale = 0.3) {
  TrajectorySegment seg;
  seg.states = Tensor<double>({H, 4});
  double x = rng.uniform(-0.3, 0.3), y = rng.uniform(-0.3, 0.3), th = rng.uniform(-2, 2);
  for (long t = 0; t < H; ++t) {
    double* s = seg.states.data() + t * 4;
    s[0] = x, s[1] = y, s[2] = wrap_angle(th), s[3] = rng.uniform(0, 1);
    x += rng.uniform(-scale, scale) / H;
    y += rng.uniform(-scale, scale) / H;
    th += rng.uniform(-0.2, 0.2);
  }
  return seg;
}

TrajectorySegment apply_rigid(const TrajectorySegment& seg, double tx, double ty, double ang) {
  TrajectorySegment out = seg;
  const double c = std::cos(ang), s = std::sin(ang);
  for (long t = 0; t < seg.states.dim(0); ++t) {
    const double* a = seg.states.data() + t * 4;
    double* b = out.states.data() + t * 4;
    b[0] = tx + c * a[0] - s * a[1];
    b[1] = ty + s * a[0] + c * a[1];
    b[2] = wrap_angle(a[2] + ang);
    b[3] = a[3];
  }
  return out;
}

}  // namespace

TEST_CASE("identity anchor leaves the segment unchanged") {
  TrajectorySegment seg;
  seg.states = Tensor<double>({4, 4}, {0, 0, 0, 1,   0.1, 0.2, 0.3, 0.8,
                                       0.2, 0.1, -0.2, 0.5, 0.3, -0.1, 0.1, 0.2});
  CanonicalSegment c = canonicalize_segment(seg, emb_with(1.0));
  CHECK(max_abs_diff(c.values, seg.states) == 0.0);
}

TEST_CASE("constant segment collapses to zero motion") {
  TrajectorySegment seg;
  seg.states = Tensor<double>({8, 4});
  for (long t = 0; t < 8; ++t) {
    double* s = seg.states.data() + t * 4;
    s[0] = 0.4, s[1] = -0.2, s[2] = 1.1, s[3] = 0.7;
  }
  CanonicalSegment c = canonicalize_segment(seg, emb_with(2.0));
  for (long t = 0; t < 8; ++t) {
    const double* v = c.values.data() + t * 4;
    CHECK(v[0] == 0.0);
    CHECK(v[1] == 0.0);
    CHECK(v[2] == 0.0);
    CHECK(v[3] == 0.7);
  }
}

TEST_CASE("rigid invariance over 1000 random transforms") {
  Rng rng(31);
  EmbodimentSpec emb = emb_with(1.3);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    TrajectorySegment seg = random_segment(rng);
    CanonicalSegment base = canonicalize_segment(seg, emb);
    TrajectorySegment moved =
        apply_rigid(seg, rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-M_PI, M_PI));
    CanonicalSegment other = canonicalize_segment(moved, emb);
    for (long k = 0; k < base.values.numel(); ++k) {
      double d = std::abs(base.values[k] - other.values[k]);
      if (k % 4 == 2) d = std::abs(wrap_angle(base.values[k] - other.values[k]));
      worst = std::max(worst, d);
    }
  }
  INFO("max deviation " << worst);
  CHECK(worst <= 1e-9);
}

TEST_CASE("round trip over 100 random segments") {
  Rng rng(77);
  EmbodimentSpec emb = emb_with(1.7);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    TrajectorySegment seg = random_segment(rng);
    CanonicalSegment c = canonicalize_segment(seg, emb);
    const double* s0 = seg.states.data();
    Tensor<double> back = decanonicalize_segment(c, {s0[0], s0[1], s0[2]}, emb);
    for (long k = 0; k < back.numel(); ++k) {
      double d = std::abs(back[k] - seg.states[k]);
      if (k % 4 == 2) d = std::abs(wrap_angle(back[k] - seg.states[k]));
      worst = std::max(worst, d);
    }
  }
  INFO("max round-trip error " << worst);
  CHECK(worst <= 1e-9);
}

TEST_CASE("scale covariance") {
  Rng rng(5);
  TrajectorySegment seg = random_segment(rng);
  CanonicalSegment a = canonicalize_segment(seg, emb_with(1.0));
  TrajectorySegment scaled = seg;
  for (long t = 0; t < seg.states.dim(0); ++t) {
    scaled.states[t * 4 + 0] = seg.states[t * 4 + 0] * 3.0;
    scaled.states[t * 4 + 1] = seg.states[t * 4 + 1] * 3.0;
  }
  CanonicalSegment b = canonicalize_segment(scaled, emb_with(3.0));
  CHECK(max_abs_diff(a.values, b.values) <= 1e-12);
}

TEST_CASE("zero canonical segment decanonicalizes to a constant at the anchor") {
  CanonicalSegment c;
  c.values = Tensor<double>({6, 4});
  Pose2 anchor{0.5, -0.3, 0.8};
  Tensor<double> raw = decanonicalize_segment(c, anchor, emb_with(1.0));
  for (long t = 0; t < 6; ++t) {
    CHECK(raw[t * 4 + 0] == Catch::Approx(0.5));
    CHECK(raw[t * 4 + 1] == Catch::Approx(-0.3));
    CHECK(raw[t * 4 + 2] == Catch::Approx(0.8));
  }
}

TEST_CASE("unit canonical step scales by the workspace radius") {
  CanonicalSegment c;
  c.values = Tensor<double>({2, 4});
  c.values[4] = 1.0;  // second step at (1, 0) in canonical frame
  Tensor<double> raw = decanonicalize_segment(c, {0, 0, 0}, emb_with(2.0));
  CHECK(raw[4] == Catch::Approx(2.0));
  CHECK(raw[5] == Catch::Approx(0.0));
}

TEST_CASE("orientations stay wrapped to (-pi, pi]") {
  TrajectorySegment seg;
  seg.states = Tensor<double>({3, 4});
  seg.states[2] = 3.0;
  seg.states[4 + 2] = -3.0;
  seg.states[8 + 2] = 3.1;
  CanonicalSegment c = canonicalize_segment(seg, emb_with(1.0));
  for (long t = 0; t < 3; ++t) {
    double v = c.values[t * 4 + 2];
    CHECK(v > -M_PI);
    CHECK(v <= M_PI);
  }
  CHECK(c.values[4 + 2] == Catch::Approx(wrap_angle(-6.0)));
}

TEST_CASE("zero workspace radius is a domain error") {
  TrajectorySegment seg;
  seg.states = Tensor<double>({2, 4});
  CHECK_THROWS_AS(canonicalize_segment(seg, emb_with(0.0)), std::domain_error);
}
