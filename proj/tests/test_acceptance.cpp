// End-to-end acceptance suite. Each test prints one machine-readable verdict
// line ("criterion NN ...: PASS/FAIL") and fails the build on any miss.
#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "motif/harness/ablation.hpp"
#include "motif/harness/grad_check.hpp"
#include "motif/harness/profiles.hpp"
#include "motif/harness/report.hpp"

using namespace motif;

namespace {

void verdict(int idx, const char* what, bool ok, const std::string& detail) {
  std::printf("criterion %02d (%s): %s%s%s\n", idx, what, ok ? "PASS" : "FAIL",
              detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

MotifEncoderConfig tiny_encoder() {
  MotifEncoderConfig cfg;
  cfg.H_s = 8;
  cfg.M = 2;
  cfg.d_model = 8;
  cfg.d_e = 4;
  cfg.K = 4;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.heads = 2;
  cfg.dropout = 0.0;
  cfg.local_k = 2;
  return cfg;
}

PredictorConfig tiny_predictor() {
  PredictorConfig cfg;
  cfg.M = 2;
  cfg.d_e = 4;
  cfg.dim = 16;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.dim_head = 8;
  cfg.obs_tokens = 2;
  cfg.vocab = 4;
  cfg.dropout = 0.0;
  return cfg;
}

PolicyConfig tiny_policy() {
  PolicyConfig cfg;
  cfg.H_a = 4;
  cfg.hidden = 16;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.dropout = 0.0;
  cfg.M = 2;
  cfg.d_e = 4;
  cfg.obs_dim = 6;
  cfg.ctx_tokens = 2;
  cfg.vocab = 2;
  cfg.time_buckets = 50;
  return cfg;
}

SegmentBatchMeta tiny_meta(long B, long n_tasks = 2, long n_emb = 3) {
  SegmentBatchMeta m;
  for (long b = 0; b < B; ++b) {
    m.progress.push_back(static_cast<double>(b) / std::max<long>(1, B - 1));
    m.instruction.push_back(b % n_tasks);
    m.embodiment.push_back(b % n_emb);
  }
  return m;
}

PipelineTrainConfig tiny_pipeline_config() {
  PipelineTrainConfig cfg;
  cfg.stage1.model.H_s = 16;
  cfg.stage1.model.M = 4;
  cfg.stage1.model.d_model = 32;
  cfg.stage1.model.d_e = 32;
  cfg.stage1.model.K = 16;
  cfg.stage1.model.enc_layers = 1;
  cfg.stage1.model.dec_layers = 1;
  cfg.stage1.model.heads = 2;
  cfg.stage1.model.local_k = 4;
  cfg.stage1.epochs = 2;
  cfg.stage1.batch = 64;
  cfg.stage1.holdout_mod = 3;
  cfg.stage2.model.dim = 32;
  cfg.stage2.model.depth = 1;
  cfg.stage2.model.heads = 2;
  cfg.stage2.model.dim_head = 16;
  cfg.stage2.epochs = 2;
  cfg.stage2.batch = 64;
  cfg.stage2.holdout_mod = 3;
  cfg.stage3.model.H_a = 8;
  cfg.stage3.model.hidden = 32;
  cfg.stage3.model.layers = 1;
  cfg.stage3.model.heads = 2;
  cfg.stage3.model.dropout = 0.1;
  cfg.stage3.model.inference_steps = 2;
  cfg.stage3.model.time_buckets = 100;
  cfg.stage3.epochs = 2;
  cfg.stage3.batch = 32;
  cfg.stage3.holdout_mod = 3;
  cfg.seed = 7;
  return cfg;
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

BenchmarkSplit toy_split(const std::vector<std::pair<std::string, bool>>& pairs) {
  BenchmarkSplit split;
  split.K = 1;
  for (const auto& [key, few] : pairs)
    split.assignment[key] = few ? BenchmarkSplit::Role::Few : BenchmarkSplit::Role::Full;
  return split;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("acceptance: analytic gradients of all five losses match finite differences") {
  auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  bool all_ok = true;
  auto merge = [&](const GradCheckReport& rep) {
    worst = std::max(worst, rep.max_rel_err);
    all_ok = all_ok && rep.all_ok;
    CHECK(rep.all_ok);
  };

  // reconstruction + codebook + commitment through encoder/quantizer/decoder
  {
    MotifEncoderConfig cfg = tiny_encoder();
    Stage1Model<double> model(cfg, 3, 13);
    Rng rng(21);
    Tensor<double> xv = rng.normal_tensor<double>({4, cfg.H_s, 4}, 0.3);
    SegmentBatchMeta meta = tiny_meta(4);

    // The pass-through quantizer means backward computes the gradient of a
    // linearization of the loss, so finite differences must run on that
    // linearization (detached pieces frozen at the base point).
    Tensor<double> off0, ze0, codes0;
    std::vector<long> idx0;
    {
      Tape<double> tp;
      Rng dr(0);
      Ctx<double> ctx{&tp, false, &dr};
      Var<double> z_e = model.encode(ctx, tp.constant(xv), meta.progress);
      Quantized<double> q = quantize(ctx, z_e, model.codebook());
      ze0 = z_e.val();
      codes0 = q.codes.val();
      idx0 = q.indices;
      off0 = Tensor<double>(ze0.shape());
      for (long i = 0; i < off0.numel(); ++i) off0[i] = codes0[i] - ze0[i];
    }
    auto vq_linearized = [&](Tape<double>& tp, Ctx<double>& ctx) {
      Var<double> x = tp.constant(xv);
      Var<double> z_e = model.encode(ctx, x, meta.progress);
      Var<double> st = add(z_e, tp.constant(off0));
      Var<double> xhat = model.decode(ctx, st);
      Var<double> codes = reshape(gather_rows(tp.param(model.codebook()), idx0), z_e.shape());
      Var<double> l = mse(xhat, x);
      l = add(l, mse(tp.constant(ze0), codes));
      return add(l, scale(mse(z_e, tp.constant(codes0)), 0.25));
    };
    auto vq_real = [&](Tape<double>& tp, Ctx<double>& ctx) {
      Var<double> x = tp.constant(xv);
      Var<double> z_e = model.encode(ctx, x, meta.progress);
      Quantized<double> q = quantize(ctx, z_e, model.codebook());
      Var<double> xhat = model.decode(ctx, q.st);
      return loss_vq(x, xhat, z_e, q.codes, 0.25);
    };
    {
      // linearization and production loss agree at the base point
      Tape<double> t1, t2;
      Rng d1(0), d2(0);
      Ctx<double> c1{&t1, false, &d1}, c2{&t2, false, &d2};
      REQUIRE(std::abs(vq_real(t1, c1).item() - vq_linearized(t2, c2).item()) < 1e-12);
    }
    auto check = [&](auto&& make_loss, auto&& fd_loss) {
      model.params().zero_grad();
      {
        Tape<double> tp;
        Rng dr(0);
        Ctx<double> ctx{&tp, false, &dr};
        tp.backward(make_loss(tp, ctx));
      }
      auto eval = [&] {
        Tape<double> tp;
        Rng dr(0);
        Ctx<double> ctx{&tp, false, &dr};
        return static_cast<double>(fd_loss(tp, ctx).item());
      };
      merge(grad_check<double>(eval, model.params(), 1e-5, 1e-4, 4, 99));
    };
    check(vq_real, vq_linearized);

    auto w = progress_weights<double>(meta.instruction, meta.progress, cfg.sigma);
    auto nce = [&](Tape<double>& tp, Ctx<double>& ctx) {
      Var<double> z_e = model.encode(ctx, tp.constant(xv), meta.progress);
      return loss_nce(segment_embedding(z_e), w, 0.1);
    };
    check(nce, nce);

    auto adv = [&](Tape<double>& tp, Ctx<double>& ctx) {
      Var<double> z_e = model.encode(ctx, tp.constant(xv), meta.progress);
      return loss_adv(ctx, model, z_e, meta.embodiment, 0.1, false);
    };
    check(adv, adv);
  }

  // motif-token regression loss through the resampler
  {
    PredictorConfig cfg = tiny_predictor();
    Stage2Model<double> model(cfg, 19);
    Rng rng(29);
    Tensor<double> obs = rng.normal_tensor<double>({3, cfg.obs_dim}, 0.5);
    std::vector<long> ids{0, 1, 2};
    Tensor<double> target = rng.normal_tensor<double>({3, cfg.M, cfg.d_e}, 1.0);
    auto make_loss = [&](Tape<double>& tp) {
      Rng dr(0);
      Ctx<double> ctx{&tp, false, &dr};
      return loss_predictor(model.forward(ctx, obs, ids), tp.constant(target));
    };
    model.params().zero_grad();
    {
      Tape<double> tp;
      tp.backward(make_loss(tp));
    }
    auto eval = [&] {
      Tape<double> tp;
      return static_cast<double>(make_loss(tp).item());
    };
    merge(grad_check<double>(eval, model.params(), 1e-5, 1e-4, 4, 77));
  }

  // flow-matching velocity regression through the full policy network
  {
    PolicyConfig cfg = tiny_policy();
    Stage3Model<double> model(cfg, {{"a", 2}}, 37);
    Rng rng(41);
    const long B = 2, A = 2;
    FlowBatch<double> batch;
    batch.emb_index = 0;
    batch.s_t = rng.normal_tensor<double>({B, 4}, 0.5);
    batch.obs = rng.normal_tensor<double>({B, cfg.obs_dim}, 0.5);
    batch.instruction = {1, 0};
    batch.motifs = rng.normal_tensor<double>({B, cfg.M, cfg.d_e}, 1.0);
    batch.x1 = rng.normal_tensor<double>({B, cfg.H_a, A}, 1.0);
    Rng noise(43);
    FlowDraw<double> draw = draw_flow_noise<double>(cfg, batch.x1.shape(), noise);
    auto make_loss = [&](Tape<double>& tp) {
      Rng dr(0);
      Ctx<double> ctx{&tp, false, &dr};
      return loss_fm(ctx, model, batch, draw);
    };
    model.params().zero_grad();
    {
      Tape<double> tp;
      tp.backward(make_loss(tp));
    }
    auto eval = [&] {
      Tape<double> tp;
      return static_cast<double>(make_loss(tp).item());
    };
    merge(grad_check<double>(eval, model.params(), 1e-5, 1e-4, 3, 47));
  }

  double dt = seconds_since(t0);
  bool ok = all_ok && dt < 60.0;
  CHECK(dt < 60.0);
  verdict(1, "gradient suite vs finite differences", ok,
          "max rel err " + reportd::fmt(worst, 8) + ", " + reportd::fmt(dt, 1) + " s");
}

TEST_CASE("acceptance: reversal layer scales encoder gradients by minus lambda") {
  MotifEncoderConfig cfg = tiny_encoder();
  REQUIRE(cfg.lambda_adv == 0.1);  // shipped default
  const double lambda = cfg.lambda_adv;
  Stage1Model<double> model(cfg, 3, 7);
  Rng rng(6);
  Tensor<double> xv = rng.normal_tensor<double>({4, cfg.H_s, 4}, 0.3);
  SegmentBatchMeta meta = tiny_meta(4);

  auto run = [&](bool reverse) {
    model.params().zero_grad();
    Tape<double> tp;
    Rng dr(0);
    Ctx<double> ctx{&tp, false, &dr};
    Var<double> z_e = model.encode(ctx, tp.constant(xv), meta.progress);
    tp.backward(loss_adv(ctx, model, z_e, meta.embodiment, lambda, reverse));
    std::map<std::string, Tensor<double>> grads;
    for (auto* p : model.params().all()) grads[p->name] = p->grad;
    return grads;
  };
  auto plain = run(false);
  auto reversed = run(true);

  double worst = 0;
  bool zeros_ok = true;
  for (auto* p : model.encoder_side_params()) {
    const auto& g0 = plain[p->name];
    const auto& g1 = reversed[p->name];
    for (long i = 0; i < g0.numel(); ++i) {
      double expect = -lambda * g0[i];
      if (std::abs(expect) > 1e-12)
        worst = std::max(worst, std::abs(g1[i] - expect) / std::abs(expect));
      else
        zeros_ok = zeros_ok && std::abs(g1[i]) <= 1e-12;
    }
  }
  bool ok = worst <= 1e-10 && zeros_ok;
  CHECK(worst <= 1e-10);
  CHECK(zeros_ok);
  verdict(2, "gradient reversal equals -lambda x plain gradient", ok,
          "worst rel deviation " + reportd::fmt(worst, 14));
}

TEST_CASE("acceptance: canonical form is invariant under planar rigid motion") {
  auto t0 = std::chrono::steady_clock::now();
  Rng rng(31);
  EmbodimentSpec emb;
  emb.id = "e";
  emb.workspace_radius = 1.3;

  double worst_inv = 0;
  for (int i = 0; i < 1000; ++i) {
    TrajectorySegment seg = random_segment(rng);
    CanonicalSegment base = canonicalize_segment(seg, emb);
    TrajectorySegment moved =
        apply_rigid(seg, rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-M_PI, M_PI));
    CanonicalSegment other = canonicalize_segment(moved, emb);
    for (long k = 0; k < base.values.numel(); ++k) {
      double d = std::abs(base.values[k] - other.values[k]);
      if (k % 4 == 2) d = std::abs(wrap_angle(base.values[k] - other.values[k]));
      worst_inv = std::max(worst_inv, d);
    }
  }
  double worst_rt = 0;
  for (int i = 0; i < 1000; ++i) {
    TrajectorySegment seg = random_segment(rng);
    CanonicalSegment c = canonicalize_segment(seg, emb);
    const double* s0 = seg.states.data();
    Tensor<double> back = decanonicalize_segment(c, {s0[0], s0[1], s0[2]}, emb);
    for (long k = 0; k < back.numel(); ++k) {
      double d = std::abs(back[k] - seg.states[k]);
      if (k % 4 == 2) d = std::abs(wrap_angle(back[k] - seg.states[k]));
      worst_rt = std::max(worst_rt, d);
    }
  }
  double dt = seconds_since(t0);
  bool ok = worst_inv <= 1e-9 && worst_rt <= 1e-9 && dt < 10.0;
  CHECK(worst_inv <= 1e-9);
  CHECK(worst_rt <= 1e-9);
  CHECK(dt < 10.0);
  verdict(3, "canonicalization rigid invariance and round trip", ok,
          "max deviation " + reportd::fmt(worst_inv, 12) + ", round trip " +
              reportd::fmt(worst_rt, 12) + ", " + reportd::fmt(dt, 1) + " s");
}

TEST_CASE("acceptance: nearest-code lookup agrees with a loop oracle") {
  Rng rng(4);
  long agree = 0, total = 0;
  for (int rep = 0; rep < 100; ++rep) {
    long K = 2 + rng.index(12), d = 1 + rng.index(6), R = 100;
    Tensor<double> codes = rng.normal_tensor<double>({K, d});
    Tensor<double> z = rng.normal_tensor<double>({R, d});
    auto idx = nearest_codes(z, codes);
    for (long r = 0; r < R; ++r) {
      long best = 0;
      double bestd = 1e300;
      for (long j = 0; j < K; ++j) {
        double dist = 0;
        for (long c = 0; c < d; ++c) {
          double diff = z[r * d + c] - codes[j * d + c];
          dist += diff * diff;
        }
        if (dist < bestd) {
          bestd = dist;
          best = j;
        }
      }
      agree += idx[static_cast<size_t>(r)] == best ? 1 : 0;
      ++total;
    }
  }
  // deterministic tie to the lowest index
  Tensor<double> tie_codes({6, 1}, {9.0, 9.0, 2.0, 9.0, 9.0, 5.0});
  Tensor<double> tie_z({1, 1}, {3.5});
  bool tie_ok = nearest_codes(tie_z, tie_codes)[0] == 2;
  // idempotence: re-quantizing selected codes returns the same indices
  Tensor<double> codes = rng.normal_tensor<double>({16, 4});
  Tensor<double> z = rng.normal_tensor<double>({64, 4});
  auto idx = nearest_codes(z, codes);
  Tensor<double> zq({64, 4});
  for (long r = 0; r < 64; ++r)
    std::copy_n(codes.data() + idx[static_cast<size_t>(r)] * 4, 4, zq.data() + r * 4);
  bool idem_ok = nearest_codes(zq, codes) == idx;

  bool ok = total == 10000 && agree == total && tie_ok && idem_ok;
  CHECK(total == 10000);
  CHECK(agree == total);
  CHECK(tie_ok);
  CHECK(idem_ok);
  verdict(4, "quantizer oracle agreement, tie-breaking, idempotence", ok,
          std::to_string(agree) + "/" + std::to_string(total) + " agree");
}

TEST_CASE("acceptance: flow-time sampler matches the scaled Beta law") {
  Rng rng(123);
  const long n = 1000000;
  double sum = 0, max_tau = 0;
  bool range_ok = true;
  for (long i = 0; i < n; ++i) {
    FlowTime t = sample_flow_time(rng, 1.5, 1.0, 0.999, 1000);
    range_ok = range_ok && t.tau >= 0.0 && t.tau < 0.999 && t.bucket >= 0 && t.bucket < 1000;
    sum += t.tau;
    max_tau = std::max(max_tau, t.tau);
  }
  const double mean = sum / n;
  bool ok = std::abs(mean - 0.5994) <= 0.001 && max_tau < 0.999 && range_ok;
  CHECK(std::abs(mean - 0.5994) <= 0.001);
  CHECK(max_tau < 0.999);
  CHECK(range_ok);
  verdict(5, "flow time sampler mean and support", ok,
          "mean " + reportd::fmt(mean, 5) + " (target 0.59940 +/- 0.001), max " +
              reportd::fmt(max_tau, 5));
}

TEST_CASE("acceptance: Euler integration shows first-order convergence") {
  Tensor<double> x0({1}, {1.0});
  auto run = [&](long steps) {
    return euler_integrate(x0, steps, [](const Tensor<double>& x, double) { return x; })[0];
  };
  bool exact_ok = true, mono_ok = true, ratio_ok = true;
  double prev_err = -1, worst_ratio_lo = 1, worst_ratio_hi = 0;
  for (long n : {1L, 2L, 4L, 8L, 16L}) {
    double got = run(n);
    double expect = std::pow(1.0 + 1.0 / static_cast<double>(n), static_cast<double>(n));
    exact_ok = exact_ok && std::abs(got - expect) <= 1e-12;
    double err = std::exp(1.0) - got;
    mono_ok = mono_ok && err > 0 && (prev_err < 0 || err < prev_err);
    // The asymptotic halving sets in from the 2 -> 4 doubling onward; the
    // exact 1 -> 2 ratio is (e - 2.25)/(e - 2) = 0.652, ahead of the
    // first-order regime, so the band applies to the later doublings.
    if (prev_err > 0 && n >= 4) {
      double ratio = err / prev_err;
      ratio_ok = ratio_ok && ratio > 0.4 && ratio < 0.6;
      worst_ratio_lo = std::min(worst_ratio_lo, ratio);
      worst_ratio_hi = std::max(worst_ratio_hi, ratio);
    }
    prev_err = err;
  }
  bool ok = exact_ok && mono_ok && ratio_ok;
  CHECK(exact_ok);
  CHECK(mono_ok);
  CHECK(ratio_ok);
  verdict(6, "Euler sampler first-order convergence on v(x)=x", ok,
          "error ratios in [" + reportd::fmt(worst_ratio_lo, 3) + ", " +
              reportd::fmt(worst_ratio_hi, 3) + "]");
}

TEST_CASE("acceptance: codebook training reaches the reconstruction target") {
  auto t0 = std::chrono::steady_clock::now();
  Corpus corpus = make_corpus(default_benchmark(0));

  Stage1TrainConfig tc;
  tc.model.H_s = 32;
  tc.model.M = 16;
  tc.model.K = 128;
  tc.model.d_e = 256;
  // narrower trunk than the published width so 20 epochs fit the time budget
  // on one desktop core; window, token count, and codebook size are untouched
  tc.model.d_model = 128;
  tc.model.enc_layers = 2;
  tc.model.dec_layers = 2;
  tc.epochs = 20;
  tc.batch = 128;
  tc.optim.peak_lr = 1e-4;
  tc.seed = 0;

  Stage1Model<float> model(tc.model, 3, tc.seed);
  Stage1TrainResult r = train_stage1(model, corpus, nullptr, tc);
  double dt = seconds_since(t0);

  bool ok = r.final_val_mse <= 0.05 && r.final_codes_used >= 32 && dt <= 600.0;
  CHECK(r.final_val_mse <= 0.05);
  CHECK(r.final_codes_used >= 32);
  CHECK(dt <= 600.0);
  verdict(7, "segment autoencoder: 20 epochs, K=128, M=16, H_s=32", ok,
          "held-out MSE " + reportd::fmt(r.final_val_mse, 4) + " (<= 0.05), codes used " +
              std::to_string(r.final_codes_used) + "/128 (>= 32), " + reportd::fmt(dt, 0) +
              " s (<= 600)");
}

TEST_CASE("acceptance: embeddings align by task progress across embodiments") {
  Corpus corpus = make_corpus(desk_benchmark(0));
  Stage1TrainConfig tc = desk_profile().stage1;
  double margin_sum = 0;
  std::string per_seed;
  for (uint64_t seed = 0; seed < 3; ++seed) {
    tc.seed = Rng::mix(seed, 1);
    Stage1Model<float> model(tc.model, 3, tc.seed);
    train_stage1(model, corpus, nullptr, tc);

    auto val_refs = heldout_episodes(corpus, tc.holdout_mod);
    Stage1Segments val =
        prepare_segments(corpus, val_refs, tc.model.H_s, tc.model.H_s / 2, true);
    const long B = static_cast<long>(val.segments.size());
    REQUIRE(B > 1);
    std::vector<size_t> order(val.segments.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Tensor<float> emb({B, tc.model.d_e});
    Rng dummy(0);
    Tape<float> tape;
    for (long lo = 0; lo < B; lo += 128) {
      long hi = std::min(B, lo + 128L);
      tape.reset();
      Ctx<float> ctx{&tape, false, &dummy};
      Var<float> x =
          tape.constant(batch_values<float>(val.segments, order, lo, hi, tc.model.H_s));
      SegmentBatchMeta meta = batch_meta<float>(val.segments, order, lo, hi);
      Var<float> e = segment_embedding(model.encode(ctx, x, meta.progress));
      std::copy_n(e.val().data(), (hi - lo) * tc.model.d_e, emb.data() + lo * tc.model.d_e);
    }
    double near_sum = 0, far_sum = 0;
    long near_n = 0, far_n = 0;
    for (long i = 0; i < B; ++i)
      for (long j = i + 1; j < B; ++j) {
        if (val.segments[i].instruction != val.segments[j].instruction) continue;
        double dp = std::abs(val.segments[i].progress - val.segments[j].progress);
        if (dp > 0.1 && dp < 0.5) continue;
        double dot = 0;  // rows are unit-normalized, so the dot is the cosine
        for (long d = 0; d < tc.model.d_e; ++d)
          dot += static_cast<double>(emb[i * tc.model.d_e + d]) *
                 static_cast<double>(emb[j * tc.model.d_e + d]);
        if (dp <= 0.1) {
          near_sum += dot;
          ++near_n;
        } else {
          far_sum += dot;
          ++far_n;
        }
      }
    REQUIRE(near_n > 0);
    REQUIRE(far_n > 0);
    double margin = near_sum / near_n - far_sum / far_n;
    margin_sum += margin;
    per_seed += (per_seed.empty() ? "" : ", ") + reportd::fmt(margin, 3);
  }
  double mean_margin = margin_sum / 3.0;
  bool ok = mean_margin >= 0.05;
  CHECK(mean_margin >= 0.05);
  verdict(8, "near-progress cosine exceeds far-progress cosine", ok,
          "mean margin " + reportd::fmt(mean_margin, 4) + " (>= 0.05; per seed " + per_seed +
              ")");
}

TEST_CASE("acceptance: motif guidance and canonicalization carry the transfer gain") {
  auto t0 = std::chrono::steady_clock::now();
  Corpus corpus = make_corpus(desk_benchmark(0));

  AblationConfig cfg;
  cfg.base = desk_profile();
  cfg.K_values = {5};
  cfg.seeds = {0, 1, 2};
  cfg.rollouts = 20;

  std::vector<AblationRow> rows = run_ablation_matrix<float>(corpus, cfg);
  std::map<std::string, double> transfer;
  for (const auto& s : summarize_ablation(rows)) transfer[s.variant] = s.transfer_mean;
  double dt = seconds_since(t0);

  REQUIRE(transfer.count("full"));
  REQUIRE(transfer.count("no-motif"));
  REQUIRE(transfer.count("no-canon"));
  double full = transfer["full"], nm = transfer["no-motif"], nc = transfer["no-canon"];
  bool ok = full >= nm + 0.05 && full >= nc + 0.05 && dt <= 45.0 * 60.0;
  CHECK(full >= nm + 0.05);
  CHECK(full >= nc + 0.05);
  CHECK(dt <= 45.0 * 60.0);
  verdict(9, "ablation matrix: K=5, 20 rollouts/pair, 3 seeds", ok,
          "Transfer full " + reportd::fmt(full, 4) + " vs no-motif " + reportd::fmt(nm, 4) +
              " vs no-canon " + reportd::fmt(nc, 4) + " (margins >= 0.05), " +
              reportd::fmt(dt / 60.0, 1) + " min (<= 45)");
}

TEST_CASE("acceptance: few-shot aggregate reproduces the published 36 percent") {
  auto split = toy_split({{"r1/t1", true},
                          {"r1/t2", true},
                          {"r2/t3", true},
                          {"r2/t4", true},
                          {"r3/t5", true},
                          {"r3/t6", true}});
  std::map<std::string, double> rates{{"r1/t1", 0.98}, {"r1/t2", 0.14}, {"r2/t3", 0.70},
                                      {"r2/t4", 0.02}, {"r3/t5", 0.30}, {"r3/t6", 0.02}};
  EvalMetrics m = eval_metrics(rates, split);
  bool ok = std::abs(m.transfer - 0.36) <= 1e-12;
  CHECK(std::abs(m.transfer - 0.36) <= 1e-12);
  verdict(10, "metric aggregation on the reference rate set", ok,
          "Transfer " + reportd::fmt(m.transfer, 12) + " (expected 0.360000000000)");
}

TEST_CASE("acceptance: training and evaluation are bit-deterministic per seed") {
  BenchmarkConfig bench = default_benchmark(21);
  bench.episodes_per_pair = 3;
  Corpus corpus = make_corpus(bench);
  BenchmarkSplit split = allocate_interleaved(corpus, bench.layout, 1);
  PipelineTrainConfig cfg = tiny_pipeline_config();

  bool stage_ok = true;
  {
    // each stage twice with the same seed: identical first-10 loss sequences
    PipelineTrainConfig c = cfg;
    c.harmonize(bench);
    auto s1 = [&] {
      Stage1Model<float> m(c.stage1.model, 3, c.stage1.seed);
      return train_stage1(m, corpus, &split, c.stage1);
    };
    Stage1TrainResult a1 = s1(), b1 = s1();
    stage_ok = stage_ok && a1.first_losses == b1.first_losses &&
               a1.final_val_mse == b1.final_val_mse;

    Stage1Model<float> frozen(c.stage1.model, 3, c.stage1.seed);
    train_stage1(frozen, corpus, &split, c.stage1);
    auto s2 = [&] {
      Stage2Model<float> m(c.stage2.model, c.stage2.seed);
      return train_stage2(m, frozen, corpus, &split, c.stage2);
    };
    Stage2TrainResult a2 = s2(), b2 = s2();
    stage_ok = stage_ok && a2.first_losses == b2.first_losses &&
               a2.final_val_l2 == b2.final_val_l2;

    auto refs = training_episodes(corpus, &split, c.stage3.holdout_mod, nullptr);
    auto rows = build_stage3_rows<float>(corpus, refs, c.stage3.model.H_a, c.stage3.model.H_a);
    std::vector<std::pair<std::string, long>> embs;
    for (const auto& e : bench.embodiments) embs.emplace_back(e.id, e.action_dim);
    std::vector<Stage3Row<float>> none;
    PolicyConfig p3 = c.stage3.model;
    p3.use_motif = false;
    Stage3TrainConfig t3 = c.stage3;
    t3.model = p3;
    auto s3 = [&] {
      Stage3Model<float> m(p3, embs, t3.seed);
      return train_stage3(m, rows, none, t3);
    };
    Stage3TrainResult a3 = s3(), b3 = s3();
    stage_ok = stage_ok && a3.first_losses == b3.first_losses;
  }
  CHECK(stage_ok);

  // full pipeline + evaluation + report twice: byte-identical metric files
  namespace fs = std::filesystem;
  auto emit_once = [&](const fs::path& dir) {
    Pipeline<float> pipe = train_pipeline<float>(corpus, &split, cfg);
    AblationRow row;
    row.variant = "full";
    row.K = 1;
    row.seed = cfg.seed;
    row.metrics = evaluate_pipeline(pipe, corpus, split, 2, 1234);
    fs::remove_all(dir);
    emit_report({row}, bench, dir.string());
    return slurp(dir / "metrics.json");
  };
  fs::path base = fs::temp_directory_path();
  std::string m1 = emit_once(base / "motif_acc_det_a");
  std::string m2 = emit_once(base / "motif_acc_det_b");
  bool files_ok = !m1.empty() && m1 == m2;
  CHECK(files_ok);
  fs::remove_all(base / "motif_acc_det_a");
  fs::remove_all(base / "motif_acc_det_b");

  bool ok = stage_ok && files_ok;
  verdict(11, "same seed: identical losses and metric files", ok,
          std::string("stage reruns ") + (stage_ok ? "identical" : "diverged") +
              ", metric files " + (files_ok ? "byte-identical" : "differ"));
}

TEST_CASE("acceptance: few-shot pairs never expose episodes beyond their budget") {
  BenchmarkConfig bench = default_benchmark(33);
  bench.episodes_per_pair = 6;
  Corpus corpus = make_corpus(bench);
  PipelineTrainConfig cfg = tiny_pipeline_config();

  bool ok = true;
  std::string detail;
  for (long K : {1L, 5L}) {
    BenchmarkSplit split = allocate_interleaved(corpus, bench.layout, K);
    AccessAudit audit;
    train_pipeline<float>(corpus, &split, cfg, nullptr, &audit);
    long v = audit.violations(split);
    bool nonempty = !audit.accesses.empty();
    ok = ok && v == 0 && nonempty;
    CHECK(v == 0);
    CHECK(nonempty);
    detail += (detail.empty() ? "" : "; ") + std::string("K=") + std::to_string(K) + ": " +
              std::to_string(audit.accesses.size()) + " accesses, " + std::to_string(v) +
              " violations";
  }
  verdict(12, "loader audit at K in {1,5}", ok, detail);
}
