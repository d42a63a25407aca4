#pragma once

// JSON round-trip for named parameter collections. Layout:
//   { "format_version": 1, "h": 16,
//     "params": { "<name>": {"shape": [..], "data": [..]}, ... } }

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "metasaea/common.hpp"
#include "metasaea/tensor.hpp"

namespace metasaea {

constexpr int kCheckpointFormatVersion = 1;

inline nlohmann::json params_to_json(const ParamMap& params, int h) {
  nlohmann::json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["h"] = h;
  nlohmann::json p = nlohmann::json::object();
  for (const auto& [name, t] : params) {
    p[name] = {{"shape", t.shape()}, {"data", t.value()}};
  }
  j["params"] = std::move(p);
  return j;
}

/// Loads values into an already-constructed parameter set (shapes must match).
inline void params_from_json(const nlohmann::json& j, ParamMap& params, int expect_h) {
  if (!j.contains("format_version") || j["format_version"].get<int>() != kCheckpointFormatVersion)
    throw ContractError("checkpoint: unsupported or missing format_version");
  if (!j.contains("h") || j["h"].get<int>() != expect_h)
    throw ContractError("checkpoint: h=" +
                        (j.contains("h") ? std::to_string(j["h"].get<int>()) : std::string("?")) +
                        " does not match configured h=" + std::to_string(expect_h));
  const auto& p = j.at("params");
  for (auto& [name, t] : params) {
    if (!p.contains(name)) throw ContractError("checkpoint: missing parameter " + name);
    auto shape = p[name].at("shape").get<std::vector<int>>();
    auto data = p[name].at("data").get<std::vector<double>>();
    if (shape != t.shape())
      throw DimensionError("checkpoint: shape mismatch for " + name);
    if (data.size() != t.numel())
      throw DimensionError("checkpoint: data length mismatch for " + name);
    t.mutable_value() = std::move(data);
  }
}

inline void save_checkpoint(const std::string& path, const ParamMap& params, int h) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot write checkpoint file: " + path);
  out << params_to_json(params, h).dump(2) << "\n";
}

inline void load_checkpoint(const std::string& path, ParamMap& params, int expect_h) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot read checkpoint file: " + path);
  nlohmann::json j;
  in >> j;
  params_from_json(j, params, expect_h);
}

}  // namespace metasaea
