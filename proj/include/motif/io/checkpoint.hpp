#pragma once

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "motif/nn/module.hpp"

namespace motif {

/// Checkpoint format: one MessagePack file holding a JSON manifest (config,
/// seed, epoch, ...) and named numeric arrays per parameter, stored as
/// doubles for lossless round trips regardless of the training scalar type.
template <class T>
void save_checkpoint(const std::string& path, const nlohmann::json& manifest,
                     const ParamGroup<T>& params) {
  nlohmann::json j;
  j["manifest"] = manifest;
  nlohmann::json arrays = nlohmann::json::object();
  for (const auto* p : params.all()) {
    std::vector<double> data(static_cast<size_t>(p->value.numel()));
    for (long i = 0; i < p->value.numel(); ++i) data[static_cast<size_t>(i)] =
        static_cast<double>(p->value[i]);
    arrays[p->name] = {{"shape", p->value.shape()}, {"data", std::move(data)}};
  }
  j["params"] = std::move(arrays);
  std::vector<uint8_t> bytes = nlohmann::json::to_msgpack(j);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Loads values into an already-constructed parameter set by name; shapes
/// must match. Returns the manifest.
template <class T>
nlohmann::json load_checkpoint(const std::string& path, ParamGroup<T>& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  nlohmann::json j;
  try {
    j = nlohmann::json::from_msgpack(bytes);
  } catch (const std::exception& e) {
    throw std::runtime_error("checkpoint parse error in " + path + ": " + e.what());
  }
  const auto& arrays = j.at("params");
  for (auto* p : params.all()) {
    if (!arrays.contains(p->name))
      throw std::runtime_error("checkpoint " + path + " missing parameter " + p->name);
    const auto& a = arrays.at(p->name);
    Shape shape = a.at("shape").template get<Shape>();
    if (shape != p->value.shape())
      throw std::runtime_error("checkpoint shape mismatch for " + p->name);
    std::vector<double> data = a.at("data").template get<std::vector<double>>();
    for (long i = 0; i < p->value.numel(); ++i)
      p->value[i] = static_cast<T>(data[static_cast<size_t>(i)]);
  }
  return j.at("manifest");
}

/// Order-independent digest of parameter values, for freeze contracts.
template <class T>
uint64_t params_digest(const ParamGroup<T>& params) {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](uint64_t v) {
    h ^= v;
    h *= 1099511628211ULL;
  };
  for (const auto* p : params.all()) {
    for (char c : p->name) mix(static_cast<uint64_t>(static_cast<unsigned char>(c)));
    for (long i = 0; i < p->value.numel(); ++i) {
      double d = static_cast<double>(p->value[i]);
      uint64_t bits;
      static_assert(sizeof(bits) == sizeof(d));
      std::memcpy(&bits, &d, sizeof(bits));
      mix(bits);
    }
  }
  return h;
}

}  // namespace motif
