// Command-line front end for the motif pipeline: corpus generation, the
// three training stages, single-chunk inference, rollout evaluation, the
// ablation matrix, and report regeneration.

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "motif/harness/ablation.hpp"
#include "motif/harness/profiles.hpp"
#include "motif/harness/report.hpp"
#include "motif/harness/rollout.hpp"
#include "motif/harness/serialize.hpp"
#include "motif/sim/io.hpp"

using namespace motif;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  json j;
  f >> j;
  return j;
}

/// Shared training-profile plumbing: --config may carry {"profile":
/// "desk"|"full"} plus per-stage "epochs"/"batch" overrides.
PipelineTrainConfig profile_from_config(const std::string& config_path) {
  PipelineTrainConfig cfg = full_profile();
  if (config_path.empty()) return cfg;
  json j = read_json_file(config_path);
  if (j.value("profile", "full") == std::string("desk")) cfg = desk_profile();
  auto apply = [&](const char* key, auto& stage) {
    if (!j.contains(key)) return;
    const json& s = j.at(key);
    if (s.contains("epochs")) stage.epochs = s.at("epochs").get<long>();
    if (s.contains("batch")) stage.batch = s.at("batch").get<long>();
    if (s.contains("peak_lr")) stage.optim.peak_lr = s.at("peak_lr").get<double>();
  };
  apply("stage1", cfg.stage1);
  apply("stage2", cfg.stage2);
  apply("stage3", cfg.stage3);
  if (j.contains("canonicalize")) cfg.stage1.canonicalize = j.at("canonicalize").get<bool>();
  return cfg;
}

int cmd_gen_data(const std::string& config, const std::string& out, uint64_t seed,
                 const std::string& split_out, long K) {
  BenchmarkConfig bench =
      config.empty() ? default_benchmark(seed) : config_from_json(read_json_file(config));
  bench.master_seed = seed;
  Corpus corpus = make_corpus(bench);
  write_corpus(corpus, out);
  std::printf("wrote %zu episodes to %s\n", corpus.episodes.size(), out.c_str());
  if (!split_out.empty()) {
    BenchmarkSplit split = allocate_interleaved(corpus, bench.layout, K);
    write_split(split, split_out);
    std::printf("wrote K=%ld split to %s\n", K, split_out.c_str());
  }
  return 0;
}

int cmd_train_stage1(const std::string& data, const std::string& config, const std::string& out,
                     uint64_t seed, const std::string& split_path) {
  Corpus corpus = read_corpus(data);
  PipelineTrainConfig prof = profile_from_config(config);
  Stage1TrainConfig cfg = prof.stage1;
  cfg.seed = seed;
  BenchmarkSplit split;
  const BenchmarkSplit* sp = nullptr;
  if (!split_path.empty()) {
    split = read_split(split_path);
    sp = &split;
  }
  const long n_emb = static_cast<long>(corpus.config.embodiments.size());
  Stage1Model<float> model(cfg.model, n_emb, seed);
  Stage1TrainResult r = train_stage1(model, corpus, sp, cfg);
  save_stage1(out, model, n_emb, cfg.canonicalize, r.standardizer, seed);
  std::printf("stage1 done: val mse %.6f, codes used %ld/%ld -> %s\n", r.final_val_mse,
              r.final_codes_used, cfg.model.K, out.c_str());
  return 0;
}

int cmd_train_stage2(const std::string& data, const std::string& stage1_path,
                     const std::string& config, const std::string& out, uint64_t seed,
                     const std::string& split_path) {
  Corpus corpus = read_corpus(data);
  LoadedStage1<float> s1 = load_stage1<float>(stage1_path);
  PipelineTrainConfig prof = profile_from_config(config);
  Stage2TrainConfig cfg = prof.stage2;
  cfg.seed = seed;
  cfg.canonicalize = s1.canonicalize;
  cfg.model.M = s1.model->config().M;
  cfg.model.d_e = s1.model->config().d_e;
  cfg.model.vocab = static_cast<long>(corpus.config.tasks.size());
  cfg.model.obs_dim = kObsDim;
  BenchmarkSplit split;
  const BenchmarkSplit* sp = nullptr;
  if (!split_path.empty()) {
    split = read_split(split_path);
    sp = &split;
  }
  Stage2Model<float> model(cfg.model, seed);
  Stage2TrainResult r = train_stage2(model, *s1.model, corpus, sp, cfg,
                                     s1.canonicalize ? nullptr : &s1.standardizer);
  save_stage2(out, model, seed);
  std::printf("stage2 done: val l2 %.6f -> %s\n", r.final_val_l2, out.c_str());
  return 0;
}

int cmd_train_stage3(const std::string& data, const std::string& split_path,
                     const std::string& stage1_path, const std::string& stage2_path,
                     bool no_motif, const std::string& config, const std::string& out,
                     uint64_t seed) {
  Corpus corpus = read_corpus(data);
  LoadedStage1<float> s1 = load_stage1<float>(stage1_path);
  std::unique_ptr<Stage2Model<float>> s2;
  if (!no_motif) {
    if (stage2_path.empty())
      throw std::runtime_error("--stage2 is required unless --no-motif is given");
    s2 = load_stage2<float>(stage2_path);
  }
  PipelineTrainConfig prof = profile_from_config(config);
  Stage3TrainConfig cfg = prof.stage3;
  cfg.seed = seed;
  cfg.model.use_motif = !no_motif;
  cfg.model.M = s1.model->config().M;
  cfg.model.d_e = s1.model->config().d_e;
  cfg.model.vocab = static_cast<long>(corpus.config.tasks.size());
  cfg.model.obs_dim = kObsDim;

  BenchmarkSplit split;
  const BenchmarkSplit* sp = nullptr;
  if (!split_path.empty()) {
    split = read_split(split_path);
    sp = &split;
  }
  std::vector<std::pair<std::string, long>> embs;
  for (const auto& e : corpus.config.embodiments) embs.emplace_back(e.id, e.action_dim);
  Stage3Model<float> model(cfg.model, embs, seed);

  const long stride = cfg.chunk_stride > 0 ? cfg.chunk_stride : std::max<long>(1, cfg.model.H_a / 2);
  auto refs = training_episodes(corpus, sp, cfg.holdout_mod, nullptr);
  auto val_refs = heldout_episodes(corpus, cfg.holdout_mod);
  auto rows = build_stage3_rows<float>(corpus, refs, cfg.model.H_a, stride);
  auto val_rows = build_stage3_rows<float>(corpus, val_refs, cfg.model.H_a, stride);
  if (!no_motif) {
    attach_motifs(rows, *s2, s1.model->codebook().value, cfg.batch);
    attach_motifs(val_rows, *s2, s1.model->codebook().value, cfg.batch);
  }
  Stage3TrainResult r = train_stage3(model, rows, val_rows, cfg);
  save_stage3(out, model, embs, r.action_stats, seed);
  std::printf("stage3 done: val flow loss %.6f -> %s\n", r.final_val_loss, out.c_str());
  return 0;
}

int cmd_infer(const std::string& stage1_path, const std::string& stage2_path,
              const std::string& stage3_path, const std::string& episode_path,
              const std::string& out, uint64_t seed) {
  Pipeline<float> pipe = load_pipeline<float>(stage1_path, stage2_path, stage3_path);
  json ep = read_json_file(episode_path);
  const std::string emb_id = ep.at("embodiment_id").get<std::string>();
  long emb_index = -1;
  for (long i = 0; i < pipe.stage3->n_embodiments(); ++i)
    if (pipe.stage3->embodiment_id(i) == emb_id) emb_index = i;
  if (emb_index < 0) throw std::runtime_error("checkpoint has no embodiment " + emb_id);
  std::vector<double> sv = ep.at("state").get<std::vector<double>>();
  std::vector<double> ov = ep.at("observation").get<std::vector<double>>();
  Tensor<double> s({static_cast<long>(sv.size())}, sv);
  Tensor<double> o({static_cast<long>(ov.size())}, ov);
  Rng rng(seed);
  ActionChunk chunk = pipeline_act(pipe, emb_index, s, o, ep.at("instruction").get<long>(), rng);
  json rec = {{"embodiment_id", chunk.embodiment_id},
              {"shape", chunk.values.shape()},
              {"actions", chunk.values.vec()}};
  if (out.empty()) {
    std::cout << rec.dump(2) << "\n";
  } else {
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot write " + out);
    f << rec.dump(2) << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& data, const std::string& stage1_path,
             const std::string& stage2_path, const std::string& stage3_path,
             const std::string& split_path, long rollouts, uint64_t seed,
             const std::string& out) {
  Corpus corpus = read_corpus(data);
  BenchmarkSplit split = read_split(split_path);
  Pipeline<float> pipe = load_pipeline<float>(stage1_path, stage2_path, stage3_path);
  EvalMetrics m = evaluate_pipeline(pipe, corpus, split, rollouts, seed);
  for (const auto& [key, rate] : m.pair_rate) {
    const char* role =
        split.assignment.at(key) == BenchmarkSplit::Role::Few ? "few " : "full";
    std::printf("  %-14s (%s)  %.2f\n", key.c_str(), role, rate);
  }
  std::printf("Global   %.4f\nTransfer %.4f\n", m.global, m.transfer);
  if (!out.empty()) {
    json j = {{"pair_rate", m.pair_rate}, {"global", m.global}, {"transfer", m.transfer},
              {"rollouts", rollouts}, {"seed", seed}};
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot write " + out);
    f << j.dump(2) << "\n";
  }
  return 0;
}

int cmd_ablate(const std::string& config_path) {
  json j = read_json_file(config_path);
  const std::string out_dir = j.at("out").get<std::string>();

  Corpus corpus;
  if (j.contains("data")) {
    corpus = read_corpus(j.at("data").get<std::string>());
  } else {
    corpus = make_corpus(desk_benchmark(j.value("master_seed", 0ULL)));
  }

  AblationConfig cfg;
  cfg.base = j.value("profile", "desk") == std::string("full") ? full_profile() : desk_profile();
  if (j.contains("K")) cfg.K_values = j.at("K").get<std::vector<long>>();
  if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  if (j.contains("rollouts")) cfg.rollouts = j.at("rollouts").get<long>();
  if (j.contains("variants")) {
    cfg.variants.clear();
    for (const auto& v : j.at("variants")) cfg.variants.push_back(variant_from_name(v));
  }

  std::vector<AblationRow> rows = run_ablation_matrix<float>(corpus, cfg);
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream f(out_dir + "/rows.json");
    f << ablation_rows_to_json(rows).dump(2) << "\n";
    std::ofstream b(out_dir + "/bench.json");
    b << config_to_json(corpus.config).dump(2) << "\n";
  }
  emit_report(rows, corpus.config, out_dir);
  for (const auto& s : summarize_ablation(rows))
    std::printf("%-10s K=%ld  Transfer %.4f +/- %.4f  Global %.4f +/- %.4f\n", s.variant.c_str(),
                s.K, s.transfer_mean, s.transfer_std, s.global_mean, s.global_std);
  std::printf("report written to %s\n", out_dir.c_str());
  return 0;
}

int cmd_report(const std::string& runs_dir) {
  std::vector<AblationRow> rows = ablation_rows_from_json(read_json_file(runs_dir + "/rows.json"));
  BenchmarkConfig bench = config_from_json(read_json_file(runs_dir + "/bench.json"));
  emit_report(rows, bench, runs_dir);
  std::printf("report regenerated in %s\n", runs_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"three-stage motif pipeline: data, training, evaluation"};
  app.require_subcommand(1);

  std::string config, data, out, split, stage1, stage2, stage3, episode, runs;
  uint64_t seed = 0;
  long K = 5, rollouts = 20;
  bool no_motif = false;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
  gen->add_option("--config", config, "benchmark config JSON (default benchmark if omitted)");
  gen->add_option("--out", out, "output corpus directory")->required();
  gen->add_option("--seed", seed, "master seed");
  gen->add_option("--split-out", split, "also write an interleaved split here");
  gen->add_option("--K", K, "few-shot budget for --split-out");

  auto* t1 = app.add_subcommand("train-stage1", "train the motif autoencoder");
  t1->add_option("--data", data, "corpus directory")->required();
  t1->add_option("--config", config, "training profile JSON");
  t1->add_option("--out", out, "checkpoint path")->required();
  t1->add_option("--seed", seed, "training seed");
  t1->add_option("--split", split, "restrict training episodes to this split");

  auto* t2 = app.add_subcommand("train-stage2", "train the motif predictor");
  t2->add_option("--data", data, "corpus directory")->required();
  t2->add_option("--stage1", stage1, "stage-one checkpoint")->required();
  t2->add_option("--config", config, "training profile JSON");
  t2->add_option("--out", out, "checkpoint path")->required();
  t2->add_option("--seed", seed, "training seed");
  t2->add_option("--split", split, "restrict training episodes to this split");

  auto* t3 = app.add_subcommand("train-stage3", "train the flow-matching policy");
  t3->add_option("--data", data, "corpus directory")->required();
  t3->add_option("--split", split, "episode split file")->required();
  t3->add_option("--stage1", stage1, "stage-one checkpoint")->required();
  t3->add_option("--stage2", stage2, "stage-two checkpoint");
  t3->add_flag("--no-motif", no_motif, "train without motif guidance");
  t3->add_option("--config", config, "training profile JSON");
  t3->add_option("--out", out, "checkpoint path")->required();
  t3->add_option("--seed", seed, "training seed");

  auto* inf = app.add_subcommand("infer", "generate one action chunk");
  inf->add_option("--stage1", stage1, "stage-one checkpoint")->required();
  inf->add_option("--stage2", stage2, "stage-two checkpoint (omit for no-motif)");
  inf->add_option("--stage3", stage3, "stage-three checkpoint")->required();
  inf->add_option("--episode", episode, "JSON with embodiment_id/instruction/state/observation")
      ->required();
  inf->add_option("--out", out, "write the chunk here instead of stdout");
  inf->add_option("--seed", seed, "sampling seed");

  auto* ev = app.add_subcommand("eval", "closed-loop rollout evaluation");
  ev->add_option("--data", data, "corpus directory")->required();
  ev->add_option("--stage1", stage1, "stage-one checkpoint")->required();
  ev->add_option("--stage2", stage2, "stage-two checkpoint (omit for no-motif)");
  ev->add_option("--stage3", stage3, "stage-three checkpoint")->required();
  ev->add_option("--split", split, "episode split file")->required();
  ev->add_option("--rollouts", rollouts, "rollouts per pair");
  ev->add_option("--seed", seed, "evaluation seed");
  ev->add_option("--out", out, "metrics JSON output path");

  auto* ab = app.add_subcommand("ablate", "run the variant matrix and emit a report");
  ab->add_option("--config", config, "ablation run config JSON")->required();

  auto* rep = app.add_subcommand("report", "regenerate a report from saved rows");
  rep->add_option("--runs", runs, "directory with rows.json and bench.json")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(config, out, seed, split, K);
    if (t1->parsed()) return cmd_train_stage1(data, config, out, seed, split);
    if (t2->parsed()) return cmd_train_stage2(data, stage1, config, out, seed, split);
    if (t3->parsed())
      return cmd_train_stage3(data, split, stage1, stage2, no_motif, config, out, seed);
    if (inf->parsed()) return cmd_infer(stage1, stage2, stage3, episode, out, seed);
    if (ev->parsed()) return cmd_eval(data, stage1, stage2, stage3, split, rollouts, seed, out);
    if (ab->parsed()) return cmd_ablate(config);
    if (rep->parsed()) return cmd_report(runs);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
