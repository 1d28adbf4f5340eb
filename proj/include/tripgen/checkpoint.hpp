#pragma once

// Self-describing JSON checkpoint: model config, named parameters with
// shapes and row-major values, the three training scalers, and free-form
// run metadata. Doubles are written with round-trip precision, so
// save/load is bit-exact.

#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "tripgen/common.hpp"
#include "tripgen/models.hpp"
#include "tripgen/nn/scaler.hpp"

namespace tripgen {

inline constexpr int kCheckpointFormat = 1;

struct Scalers {
  nn::MinMaxScaler features;  // 43 columns
  nn::MinMaxScaler targets;   // 2 columns (out, in)
  nn::MinMaxScaler age;       // 1 column, station age in months

  bool operator==(const Scalers&) const = default;
};

struct Checkpoint {
  ModelConfig config;
  nn::ParameterSet params;
  Scalers scalers;
  nlohmann::json metadata = nlohmann::json::object();

  [[nodiscard]] Model model() const { return Model(config, params); }
};

inline nlohmann::json parameters_to_json(const nn::ParameterSet& params) {
  auto out = nlohmann::json::array();
  for (const auto& p : params)
    out.push_back({{"name", p.name}, {"symbol", parameter_symbol(p.name)}, {"shape", {p.value.rows(), p.value.cols()}},
                   {"values", p.value.values()}});
  return out;
}

inline nn::ParameterSet parameters_from_json(const nlohmann::json& j) {
  nn::ParameterSet params;
  for (const auto& e : j) {
    const auto shape = e.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2) throw DataError("checkpoint: parameter shape must have two entries");
    params.add(e.at("name").get<std::string>(), nn::Tensor(shape, e.at("values").get<std::vector<double>>()));
  }
  return params;
}

inline nlohmann::json to_json(const Checkpoint& c) {
  return {{"format", kCheckpointFormat},
          {"config", c.config.to_json()},
          {"parameters", parameters_to_json(c.params)},
          {"scalers",
           {{"features", c.scalers.features.to_json()},
            {"targets", c.scalers.targets.to_json()},
            {"age", c.scalers.age.to_json()}}},
          {"metadata", c.metadata}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", 0) != kCheckpointFormat) throw DataError("checkpoint: unsupported format");
  Checkpoint c;
  c.config = ModelConfig::from_json(j.at("config"));
  c.params = parameters_from_json(j.at("parameters"));
  const auto& s = j.at("scalers");
  c.scalers.features = nn::MinMaxScaler::from_json(s.at("features"));
  c.scalers.targets = nn::MinMaxScaler::from_json(s.at("targets"));
  c.scalers.age = nn::MinMaxScaler::from_json(s.at("age"));
  c.metadata = j.value("metadata", nlohmann::json::object());
  // Validates names and shapes against the configuration.
  (void)c.model();
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << to_json(c).dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace tripgen
