#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "motif/harness/pipeline.hpp"
#include "motif/io/checkpoint.hpp"

namespace motif {

inline nlohmann::json encoder_config_to_json(const MotifEncoderConfig& c) {
  return {{"H_s", c.H_s},       {"M", c.M},
          {"d_model", c.d_model}, {"d_e", c.d_e},
          {"K", c.K},           {"enc_layers", c.enc_layers},
          {"dec_layers", c.dec_layers}, {"heads", c.heads},
          {"dropout", c.dropout}, {"conv_kernels", c.conv_kernels},
          {"conv_strides", c.conv_strides}, {"local_k", c.local_k},
          {"beta", c.beta},     {"lambda_nce", c.lambda_nce},
          {"lambda_adv", c.lambda_adv}, {"sigma", c.sigma},
          {"gamma_temp", c.gamma_temp}, {"d_ff", c.d_ff}};
}

inline MotifEncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  MotifEncoderConfig c;
  c.H_s = j.at("H_s").get<long>();
  c.M = j.at("M").get<long>();
  c.d_model = j.at("d_model").get<long>();
  c.d_e = j.at("d_e").get<long>();
  c.K = j.at("K").get<long>();
  c.enc_layers = j.at("enc_layers").get<long>();
  c.dec_layers = j.at("dec_layers").get<long>();
  c.heads = j.at("heads").get<long>();
  c.dropout = j.at("dropout").get<double>();
  c.conv_kernels = j.at("conv_kernels").get<std::vector<long>>();
  c.conv_strides = j.at("conv_strides").get<std::vector<long>>();
  c.local_k = j.at("local_k").get<long>();
  c.beta = j.at("beta").get<double>();
  c.lambda_nce = j.at("lambda_nce").get<double>();
  c.lambda_adv = j.at("lambda_adv").get<double>();
  c.sigma = j.at("sigma").get<double>();
  c.gamma_temp = j.at("gamma_temp").get<double>();
  c.d_ff = j.at("d_ff").get<long>();
  return c;
}

inline nlohmann::json predictor_config_to_json(const PredictorConfig& c) {
  return {{"M", c.M},           {"d_e", c.d_e},     {"dim", c.dim},
          {"depth", c.depth},   {"heads", c.heads}, {"dim_head", c.dim_head},
          {"obs_dim", c.obs_dim}, {"obs_tokens", c.obs_tokens}, {"vocab", c.vocab},
          {"dropout", c.dropout}, {"d_ff", c.d_ff}};
}

inline PredictorConfig predictor_config_from_json(const nlohmann::json& j) {
  PredictorConfig c;
  c.M = j.at("M").get<long>();
  c.d_e = j.at("d_e").get<long>();
  c.dim = j.at("dim").get<long>();
  c.depth = j.at("depth").get<long>();
  c.heads = j.at("heads").get<long>();
  c.dim_head = j.at("dim_head").get<long>();
  c.obs_dim = j.at("obs_dim").get<long>();
  c.obs_tokens = j.at("obs_tokens").get<long>();
  c.vocab = j.at("vocab").get<long>();
  c.dropout = j.at("dropout").get<double>();
  c.d_ff = j.at("d_ff").get<long>();
  return c;
}

inline nlohmann::json policy_config_to_json(const PolicyConfig& c) {
  return {{"H_a", c.H_a},       {"hidden", c.hidden},   {"layers", c.layers},
          {"heads", c.heads},   {"dropout", c.dropout}, {"alpha", c.alpha},
          {"beta", c.beta},     {"s", c.s},             {"inference_steps", c.inference_steps},
          {"time_buckets", c.time_buckets}, {"M", c.M}, {"d_e", c.d_e},
          {"obs_dim", c.obs_dim}, {"ctx_tokens", c.ctx_tokens}, {"vocab", c.vocab},
          {"use_motif", c.use_motif}, {"d_ff", c.d_ff}};
}

inline PolicyConfig policy_config_from_json(const nlohmann::json& j) {
  PolicyConfig c;
  c.H_a = j.at("H_a").get<long>();
  c.hidden = j.at("hidden").get<long>();
  c.layers = j.at("layers").get<long>();
  c.heads = j.at("heads").get<long>();
  c.dropout = j.at("dropout").get<double>();
  c.alpha = j.at("alpha").get<double>();
  c.beta = j.at("beta").get<double>();
  c.s = j.at("s").get<double>();
  c.inference_steps = j.at("inference_steps").get<long>();
  c.time_buckets = j.at("time_buckets").get<long>();
  c.M = j.at("M").get<long>();
  c.d_e = j.at("d_e").get<long>();
  c.obs_dim = j.at("obs_dim").get<long>();
  c.ctx_tokens = j.at("ctx_tokens").get<long>();
  c.vocab = j.at("vocab").get<long>();
  c.use_motif = j.at("use_motif").get<bool>();
  c.d_ff = j.at("d_ff").get<long>();
  return c;
}

inline nlohmann::json standardizer_to_json(const Standardizer& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"active", s.active}};
}

inline Standardizer standardizer_from_json(const nlohmann::json& j) {
  Standardizer s;
  s.mean = j.at("mean").get<std::array<double, 4>>();
  s.std = j.at("std").get<std::array<double, 4>>();
  s.active = j.at("active").get<bool>();
  return s;
}

inline nlohmann::json action_stats_to_json(const ActionStats& s) {
  return {{"mean", s.mean.vec()}, {"std", s.std.vec()}};
}

inline ActionStats action_stats_from_json(const nlohmann::json& j) {
  ActionStats s;
  std::vector<double> m = j.at("mean").get<std::vector<double>>();
  std::vector<double> d = j.at("std").get<std::vector<double>>();
  s.mean = Tensor<double>({static_cast<long>(m.size())}, m);
  s.std = Tensor<double>({static_cast<long>(d.size())}, d);
  return s;
}

// --- per-stage checkpoints: parameters plus the config needed to rebuild ---

template <class T>
void save_stage1(const std::string& path, const Stage1Model<T>& model, long n_embodiments,
                 bool canonicalize, const Standardizer& stand, uint64_t seed) {
  nlohmann::json manifest;
  manifest["stage"] = 1;
  manifest["config"] = encoder_config_to_json(model.config());
  manifest["n_embodiments"] = n_embodiments;
  manifest["canonicalize"] = canonicalize;
  manifest["standardizer"] = standardizer_to_json(stand);
  manifest["seed"] = seed;
  save_checkpoint(path, manifest, const_cast<Stage1Model<T>&>(model).params());
}

template <class T>
struct LoadedStage1 {
  std::unique_ptr<Stage1Model<T>> model;
  bool canonicalize = true;
  Standardizer standardizer;
};

template <class T>
LoadedStage1<T> load_stage1(const std::string& path) {
  // first pass only reads the manifest to size the model, then reloads values
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  nlohmann::json j = nlohmann::json::from_msgpack(bytes);
  const nlohmann::json& manifest = j.at("manifest");
  if (manifest.at("stage").get<int>() != 1)
    throw std::runtime_error(path + " is not a stage-one checkpoint");
  LoadedStage1<T> out;
  out.model = std::make_unique<Stage1Model<T>>(
      encoder_config_from_json(manifest.at("config")), manifest.at("n_embodiments").get<long>(),
      manifest.at("seed").get<uint64_t>());
  out.canonicalize = manifest.at("canonicalize").get<bool>();
  out.standardizer = standardizer_from_json(manifest.at("standardizer"));
  load_checkpoint(path, out.model->params());
  return out;
}

template <class T>
void save_stage2(const std::string& path, const Stage2Model<T>& model, uint64_t seed) {
  nlohmann::json manifest;
  manifest["stage"] = 2;
  manifest["config"] = predictor_config_to_json(model.config());
  manifest["seed"] = seed;
  save_checkpoint(path, manifest, const_cast<Stage2Model<T>&>(model).params());
}

template <class T>
std::unique_ptr<Stage2Model<T>> load_stage2(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  nlohmann::json j = nlohmann::json::from_msgpack(bytes);
  const nlohmann::json& manifest = j.at("manifest");
  if (manifest.at("stage").get<int>() != 2)
    throw std::runtime_error(path + " is not a stage-two checkpoint");
  auto model = std::make_unique<Stage2Model<T>>(predictor_config_from_json(manifest.at("config")),
                                                manifest.at("seed").get<uint64_t>());
  load_checkpoint(path, model->params());
  return model;
}

template <class T>
void save_stage3(const std::string& path, const Stage3Model<T>& model,
                 const std::vector<std::pair<std::string, long>>& embodiments,
                 const std::vector<ActionStats>& stats, uint64_t seed) {
  nlohmann::json manifest;
  manifest["stage"] = 3;
  manifest["config"] = policy_config_to_json(model.config());
  manifest["seed"] = seed;
  for (const auto& [id, dim] : embodiments)
    manifest["embodiments"].push_back({{"id", id}, {"action_dim", dim}});
  for (const auto& s : stats) manifest["action_stats"].push_back(action_stats_to_json(s));
  save_checkpoint(path, manifest, const_cast<Stage3Model<T>&>(model).params());
}

template <class T>
struct LoadedStage3 {
  std::unique_ptr<Stage3Model<T>> model;
  std::vector<ActionStats> action_stats;
};

template <class T>
LoadedStage3<T> load_stage3(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  nlohmann::json j = nlohmann::json::from_msgpack(bytes);
  const nlohmann::json& manifest = j.at("manifest");
  if (manifest.at("stage").get<int>() != 3)
    throw std::runtime_error(path + " is not a stage-three checkpoint");
  std::vector<std::pair<std::string, long>> embs;
  for (const auto& e : manifest.at("embodiments"))
    embs.emplace_back(e.at("id").get<std::string>(), e.at("action_dim").get<long>());
  LoadedStage3<T> out;
  out.model = std::make_unique<Stage3Model<T>>(policy_config_from_json(manifest.at("config")),
                                               embs, manifest.at("seed").get<uint64_t>());
  for (const auto& s : manifest.at("action_stats"))
    out.action_stats.push_back(action_stats_from_json(s));
  load_checkpoint(path, out.model->params());
  return out;
}

/// Reassemble a runnable pipeline from the three per-stage checkpoint files.
/// The no-motif configuration omits the stage-two path.
template <class T>
Pipeline<T> load_pipeline(const std::string& stage1_path, const std::string& stage2_path,
                          const std::string& stage3_path) {
  Pipeline<T> pipe;
  LoadedStage1<T> s1 = load_stage1<T>(stage1_path);
  pipe.stage1 = std::move(s1.model);
  pipe.canonicalize = s1.canonicalize;
  pipe.standardizer = s1.standardizer;
  LoadedStage3<T> s3 = load_stage3<T>(stage3_path);
  pipe.stage3 = std::move(s3.model);
  pipe.action_stats = std::move(s3.action_stats);
  pipe.use_motif = pipe.stage3->config().use_motif;
  if (pipe.use_motif) {
    if (stage2_path.empty())
      throw std::runtime_error("policy expects motif guidance but no stage-two checkpoint given");
    pipe.stage2 = load_stage2<T>(stage2_path);
    if (pipe.stage2->config().M != pipe.stage1->config().M ||
        pipe.stage2->config().d_e != pipe.stage1->config().d_e)
      throw std::runtime_error("stage-one and stage-two checkpoints disagree on token shape");
  }
  return pipe;
}

}  // namespace motif
