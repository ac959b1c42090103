#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "motif/harness/ablation.hpp"
#include "motif/harness/report.hpp"
#include "motif/harness/rollout.hpp"
#include "motif/io/checkpoint.hpp"

using namespace motif;

namespace {

/// Replays a reference episode's recorded actions as receding-horizon chunks.
struct ExpertReplay {
  const Episode* ep;
  long exec_steps;
  long cursor = 0;

  Tensor<double> operator()(const Tensor<double>&, const Tensor<double>&) {
    const long A = ep->actions.dim(1), H = 16, T = ep->length();
    Tensor<double> chunk({H, A});
    for (long i = 0; i < H; ++i) {
      long t = cursor + i;
      if (t < T)
        std::copy_n(ep->actions.data() + t * A, A, chunk.data() + i * A);
      else
        chunk.data()[i * A + 3] = 1.0;  // hold position, gripper open
    }
    cursor += exec_steps;
    return chunk;
  }
};

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

BenchmarkSplit toy_split(const std::vector<std::pair<std::string, bool>>& pairs) {
  BenchmarkSplit split;
  split.K = 1;
  for (const auto& [key, few] : pairs)
    split.assignment[key] = few ? BenchmarkSplit::Role::Few : BenchmarkSplit::Role::Full;
  return split;
}

}  // namespace

TEST_CASE("initial scene matches the reference episode's first observation") {
  BenchmarkConfig cfg = default_benchmark(11);
  for (const auto& emb : cfg.embodiments)
    for (const auto& task : cfg.tasks) {
      Episode ep = synthesize_episode(emb, task, 321, cfg.base_steps, cfg.noise_amp);
      Scene scene = initial_scene(emb, task, 321, cfg.noise_amp);
      double state[4];
      std::copy_n(ep.states.data(), 4, state);
      std::vector<double> o = observe(emb, state, scene);
      for (long k = 0; k < kObsDim; ++k)
        REQUIRE(o[static_cast<size_t>(k)] == Catch::Approx(ep.observations[k]).margin(1e-12));
    }
}

TEST_CASE("expert replay succeeds on every pair") {
  BenchmarkConfig cfg = default_benchmark(5);
  RolloutConfig rc;
  for (const auto& emb : cfg.embodiments)
    for (const auto& task : cfg.tasks) {
      ExpertReplay expert{nullptr, rc.exec_steps};
      Episode ep = synthesize_episode(emb, task, 77, cfg.base_steps, cfg.noise_amp);
      expert.ep = &ep;
      RolloutResult r = rollout_episode(emb, task, 77, rc, expert);
      INFO(pair_key(emb.id, task.id));
      CHECK(r.success);
    }
}

TEST_CASE("zero-action policy fails tasks requiring displacement") {
  BenchmarkConfig cfg = default_benchmark(5);
  RolloutConfig rc;
  auto zero = [&](const Tensor<double>&, const Tensor<double>&) {
    return Tensor<double>({16, cfg.embodiments[0].action_dim});
  };
  RolloutResult r = rollout_episode(cfg.embodiments[0], cfg.tasks[0], 9, rc, zero);
  CHECK_FALSE(r.success);
  CHECK(r.final_dist > 0.1);
}

TEST_CASE("fixed-seed rollouts are identical") {
  BenchmarkConfig cfg = default_benchmark(5);
  RolloutConfig rc;
  auto run = [&] {
    ExpertReplay expert{nullptr, rc.exec_steps};
    Episode ep = synthesize_episode(cfg.embodiments[1], cfg.tasks[1], 13, cfg.base_steps,
                                    cfg.noise_amp);
    expert.ep = &ep;
    return rollout_episode(cfg.embodiments[1], cfg.tasks[1], 13, rc, expert);
  };
  RolloutResult a = run(), b = run();
  CHECK(a.success == b.success);
  CHECK(a.steps == b.steps);
  CHECK(a.final_dist == b.final_dist);
}

TEST_CASE("metric aggregation matches direct recomputation") {
  SECTION("all ones") {
    auto split = toy_split({{"a/x", false}, {"a/y", true}, {"b/x", true}});
    std::map<std::string, double> rates{{"a/x", 1.0}, {"a/y", 1.0}, {"b/x", 1.0}};
    EvalMetrics m = eval_metrics(rates, split);
    CHECK(m.global == 1.0);
    CHECK(m.transfer == 1.0);
  }
  SECTION("published few-shot cell rates average to 36 percent") {
    auto split = toy_split({{"r1/t1", true},
                            {"r1/t2", true},
                            {"r2/t3", true},
                            {"r2/t4", true},
                            {"r3/t5", true},
                            {"r3/t6", true},
                            {"r1/t3", false},
                            {"r2/t1", false}});
    std::map<std::string, double> rates{{"r1/t1", 0.98}, {"r1/t2", 0.14}, {"r2/t3", 0.70},
                                        {"r2/t4", 0.02}, {"r3/t5", 0.30}, {"r3/t6", 0.02},
                                        {"r1/t3", 0.50}, {"r2/t1", 0.40}};
    EvalMetrics m = eval_metrics(rates, split);
    CHECK(std::abs(m.transfer - 0.36) <= 1e-12);
    double g = (0.98 + 0.14 + 0.70 + 0.02 + 0.30 + 0.02 + 0.50 + 0.40) / 8.0;
    CHECK(std::abs(m.global - g) <= 1e-12);
  }
  SECTION("singleton few-shot mean") {
    auto split = toy_split({{"a/x", false}, {"a/y", true}});
    std::map<std::string, double> rates{{"a/x", 0.9}, {"a/y", 0.25}};
    CHECK(eval_metrics(rates, split).transfer == 0.25);
  }
  SECTION("missing pair is an error") {
    auto split = toy_split({{"a/x", false}, {"a/y", true}});
    std::map<std::string, double> rates{{"a/x", 0.9}};
    CHECK_THROWS_AS(eval_metrics(rates, split), std::invalid_argument);
  }
}

TEST_CASE("ablation variants change exactly one knob") {
  PipelineTrainConfig base = tiny_pipeline_config();
  CHECK(all_variants().size() == 5);

  PipelineTrainConfig nm = apply_variant(base, Variant::NoMotif);
  CHECK_FALSE(nm.use_motif);
  CHECK(nm.stage1.canonicalize == base.stage1.canonicalize);
  CHECK(nm.stage1.model.lambda_nce == base.stage1.model.lambda_nce);
  CHECK(nm.stage1.model.lambda_adv == base.stage1.model.lambda_adv);

  PipelineTrainConfig nc = apply_variant(base, Variant::NoCanon);
  CHECK_FALSE(nc.stage1.canonicalize);
  CHECK(nc.use_motif);

  CHECK(apply_variant(base, Variant::NoNce).stage1.model.lambda_nce == 0.0);
  CHECK(apply_variant(base, Variant::NoAdv).stage1.model.lambda_adv == 0.0);
  for (Variant v : all_variants()) CHECK(variant_from_name(variant_name(v)) == v);
}

TEST_CASE("tiny pipeline trains, evaluates, and respects the few-shot budget") {
  BenchmarkConfig bench = default_benchmark(21);
  bench.episodes_per_pair = 3;
  Corpus corpus = make_corpus(bench);
  BenchmarkSplit split = allocate_interleaved(corpus, bench.layout, 1);

  PipelineTrainConfig cfg = tiny_pipeline_config();
  AccessAudit audit;
  PipelineTrainLog log;
  Pipeline<float> pipe = train_pipeline<float>(corpus, &split, cfg, &log, &audit);

  CHECK(audit.violations(split) == 0);
  CHECK_FALSE(audit.accesses.empty());
  REQUIRE(pipe.complete());
  CHECK(log.stage1.epochs.size() == 2);
  CHECK(log.stage3.epochs.size() == 2);

  uint64_t d1 = params_digest(pipe.stage1->params());
  uint64_t d3 = params_digest(pipe.stage3->params());

  EvalMetrics m1 = evaluate_pipeline(pipe, corpus, split, 1, 100);
  EvalMetrics m2 = evaluate_pipeline(pipe, corpus, split, 1, 100);
  CHECK(m1.pair_rate.size() == 12);
  CHECK(m1.global >= 0.0);
  CHECK(m1.global <= 1.0);
  CHECK(m1.transfer >= 0.0);
  CHECK(m1.transfer <= 1.0);
  // same evaluation seed: identical metrics
  CHECK(m1.pair_rate == m2.pair_rate);
  // evaluation never touches the checkpoints
  evaluate_pipeline(pipe, corpus, split, 1, 200);
  CHECK(params_digest(pipe.stage1->params()) == d1);
  CHECK(params_digest(pipe.stage3->params()) == d3);
}

TEST_CASE("report emission is deterministic and rejects empty input") {
  BenchmarkConfig bench = default_benchmark(0);
  std::vector<AblationRow> rows;
  for (uint64_t seed : {0ULL, 1ULL})
    for (const char* v : {"full", "no-motif"}) {
      AblationRow r;
      r.variant = v;
      r.K = 5;
      r.seed = seed;
      double base = v == std::string("full") ? 0.6 : 0.4;
      for (const auto& e : bench.embodiments)
        for (const auto& t : bench.tasks)
          r.metrics.pair_rate[pair_key(e.id, t.id)] = base + 0.01 * static_cast<double>(seed);
      r.metrics.global = base;
      r.metrics.transfer = base - 0.1;
      r.stage1_loss = {1.0, 0.5, 0.25};
      r.stage3_loss = {2.0, 1.0};
      rows.push_back(std::move(r));
    }

  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "motif_report_test";
  fs::remove_all(dir);
  emit_report(rows, bench, dir.string());
  for (const char* f : {"metrics.json", "summary.md", "loss_curves.svg", "success_rates.svg"})
    CHECK(fs::exists(dir / f));

  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  std::string first = slurp(dir / "metrics.json");
  std::string md_first = slurp(dir / "summary.md");
  emit_report(rows, bench, dir.string());
  CHECK(slurp(dir / "metrics.json") == first);
  CHECK(slurp(dir / "summary.md") == md_first);
  CHECK(md_first.find('*') != std::string::npos);  // few-shot cells flagged

  fs::path empty_dir = fs::temp_directory_path() / "motif_report_empty";
  fs::remove_all(empty_dir);
  CHECK_THROWS_AS(emit_report({}, bench, empty_dir.string()), std::invalid_argument);
  CHECK_FALSE(fs::exists(empty_dir / "metrics.json"));
  fs::remove_all(dir);
  fs::remove_all(empty_dir);
}

TEST_CASE("ablation summary averages over seeds") {
  std::vector<AblationRow> rows;
  for (double t : {0.5, 0.7}) {
    AblationRow r;
    r.variant = "full";
    r.K = 5;
    r.metrics.transfer = t;
    r.metrics.global = t + 0.1;
    rows.push_back(r);
  }
  auto s = summarize_ablation(rows);
  REQUIRE(s.size() == 1);
  CHECK(s[0].n == 2);
  CHECK(s[0].transfer_mean == Catch::Approx(0.6));
  CHECK(s[0].transfer_std == Catch::Approx(std::sqrt(0.02)));
  CHECK(s[0].global_mean == Catch::Approx(0.7));
}
