#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "motif/sim/types.hpp"

namespace motif {

namespace iod {

inline nlohmann::json tensor_to_json(const Tensor<double>& t) {
  return {{"shape", t.shape()}, {"data", t.vec()}};
}

inline Tensor<double> tensor_from_json(const nlohmann::json& j, const std::string& what) {
  try {
    Shape shape = j.at("shape").get<Shape>();
    std::vector<double> data = j.at("data").get<std::vector<double>>();
    if (shape_numel(shape) != static_cast<long>(data.size()))
      throw std::runtime_error("shape/data mismatch");
    return Tensor<double>(std::move(shape), std::move(data));
  } catch (const std::exception& e) {
    throw std::runtime_error("corpus parse error in " + what + ": " + e.what());
  }
}

}  // namespace iod

inline nlohmann::json config_to_json(const BenchmarkConfig& cfg) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["episodes_per_pair"] = cfg.episodes_per_pair;
  j["base_steps"] = cfg.base_steps;
  j["noise_amp"] = cfg.noise_amp;
  j["master_seed"] = cfg.master_seed;
  j["layout"] = cfg.layout;
  for (const auto& e : cfg.embodiments)
    j["embodiments"].push_back({{"id", e.id},
                                {"base", {e.base_pose.x, e.base_pose.y, e.base_pose.theta}},
                                {"workspace_radius", e.workspace_radius},
                                {"speed_scale", e.speed_scale},
                                {"action_dim", e.action_dim},
                                {"action_coding", e.action_coding}});
  for (const auto& t : cfg.tasks)
    j["tasks"].push_back({{"id", t.id},
                          {"instruction", t.instruction},
                          {"text", t.text},
                          {"profile", t.profile},
                          {"close_t", t.close_t},
                          {"open_t", t.open_t},
                          {"eps_unit", t.eps_unit}});
  return j;
}

inline BenchmarkConfig config_from_json(const nlohmann::json& j) {
  BenchmarkConfig cfg;
  cfg.episodes_per_pair = j.at("episodes_per_pair").get<long>();
  cfg.base_steps = j.at("base_steps").get<long>();
  cfg.noise_amp = j.at("noise_amp").get<double>();
  cfg.master_seed = j.at("master_seed").get<uint64_t>();
  cfg.layout = j.at("layout").get<std::map<std::string, std::string>>();
  for (const auto& e : j.at("embodiments")) {
    EmbodimentSpec s;
    s.id = e.at("id").get<std::string>();
    auto b = e.at("base").get<std::vector<double>>();
    s.base_pose = {b.at(0), b.at(1), b.at(2)};
    s.workspace_radius = e.at("workspace_radius").get<double>();
    s.speed_scale = e.at("speed_scale").get<double>();
    s.action_dim = e.at("action_dim").get<long>();
    s.action_coding = e.at("action_coding").get<int>();
    cfg.embodiments.push_back(std::move(s));
  }
  for (const auto& t : j.at("tasks")) {
    TaskSpec s;
    s.id = t.at("id").get<std::string>();
    s.instruction = t.at("instruction").get<long>();
    s.text = t.at("text").get<std::string>();
    s.profile = t.at("profile").get<int>();
    s.close_t = t.at("close_t").get<double>();
    s.open_t = t.at("open_t").get<double>();
    s.eps_unit = t.at("eps_unit").get<double>();
    cfg.tasks.push_back(std::move(s));
  }
  return cfg;
}

/// Corpus on disk: <dir>/manifest.json (config + schema) plus
/// <dir>/episodes.msgpack with named numeric arrays per episode. MessagePack
/// keeps every double bit-exact, so the round trip is value-exact.
inline void write_corpus(const Corpus& corpus, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    nlohmann::json manifest = config_to_json(corpus.config);
    manifest["episode_count"] = corpus.episodes.size();
    std::ofstream f(dir + "/manifest.json");
    if (!f) throw std::runtime_error("cannot write " + dir + "/manifest.json");
    f << manifest.dump(2) << "\n";
  }
  nlohmann::json eps = nlohmann::json::array();
  for (const auto& ep : corpus.episodes)
    eps.push_back({{"embodiment_id", ep.embodiment_id},
                   {"task_id", ep.task_id},
                   {"instruction", ep.instruction},
                   {"seed", ep.seed},
                   {"states", iod::tensor_to_json(ep.states)},
                   {"actions", iod::tensor_to_json(ep.actions)},
                   {"observations", iod::tensor_to_json(ep.observations)}});
  std::vector<uint8_t> bytes = nlohmann::json::to_msgpack(eps);
  std::ofstream f(dir + "/episodes.msgpack", std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + dir + "/episodes.msgpack");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Corpus read_corpus(const std::string& dir) {
  Corpus corpus;
  {
    std::ifstream f(dir + "/manifest.json");
    if (!f) throw std::runtime_error("cannot read " + dir + "/manifest.json");
    nlohmann::json manifest;
    try {
      f >> manifest;
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("corpus parse error in manifest.json: ") + e.what());
    }
    corpus.config = config_from_json(manifest);
  }
  std::ifstream f(dir + "/episodes.msgpack", std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + dir + "/episodes.msgpack");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  nlohmann::json eps;
  try {
    eps = nlohmann::json::from_msgpack(bytes);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("corpus parse error in episodes.msgpack: ") + e.what());
  }
  for (size_t i = 0; i < eps.size(); ++i) {
    const auto& j = eps[i];
    std::string where = "episode " + std::to_string(i);
    Episode ep;
    try {
      ep.embodiment_id = j.at("embodiment_id").get<std::string>();
      ep.task_id = j.at("task_id").get<std::string>();
      ep.instruction = j.at("instruction").get<long>();
      ep.seed = j.at("seed").get<long>();
    } catch (const std::exception& e) {
      throw std::runtime_error("corpus parse error in " + where + ": " + e.what());
    }
    ep.states = iod::tensor_from_json(j.at("states"), where + " states");
    ep.actions = iod::tensor_from_json(j.at("actions"), where + " actions");
    ep.observations = iod::tensor_from_json(j.at("observations"), where + " observations");
    corpus.episodes.push_back(std::move(ep));
  }
  return corpus;
}

inline void write_split(const BenchmarkSplit& split, const std::string& path) {
  nlohmann::json j;
  j["K"] = split.K;
  for (const auto& [key, role] : split.assignment)
    j["assignment"][key] = role == BenchmarkSplit::Role::Few ? "few" : "full";
  for (const auto& [key, eps] : split.episodes) j["episodes"][key] = eps;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << "\n";
}

inline BenchmarkSplit read_split(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  nlohmann::json j;
  f >> j;
  BenchmarkSplit split;
  split.K = j.at("K").get<long>();
  for (const auto& [key, role] : j.at("assignment").items())
    split.assignment[key] =
        role.get<std::string>() == "few" ? BenchmarkSplit::Role::Few : BenchmarkSplit::Role::Full;
  for (const auto& [key, eps] : j.at("episodes").items())
    split.episodes[key] = eps.get<std::vector<long>>();
  return split;
}

}  // namespace motif
