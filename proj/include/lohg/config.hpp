#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include <json.hpp>

#include "lohg/error.hpp"
#include "lohg/model.hpp"

namespace lohg {

/// Run settings shared by the command surface. input == 0 and edges == 0 mean
/// "derive from the preset" (tiny: 64 px and the resolution rule; full: 256 px
/// and the flat 256-edge budget).
struct RunConfig {
  double curvature = 1.0;
  std::string preset = "tiny";  // tiny|full
  int64_t input = 0;
  double lambda = 0.5;
  int64_t edges = 0;
  double degree_eps = 1e-6;
  int64_t attention_ratio = 4;
  uint64_t seed = 0;
  std::string precision = "f32";  // f32|f64
  double lr = 1e-2;
  int64_t steps = 100;
};

inline void validate(const RunConfig& c) {
  if (c.preset != "tiny" && c.preset != "full")
    throw FormatError("config: preset must be tiny or full");
  if (c.precision != "f32" && c.precision != "f64")
    throw FormatError("config: precision must be f32 or f64");
  if (!(c.curvature > 0.0)) throw FormatError("config: curvature must be positive");
  if (c.lambda < 0.0 || c.lambda > 1.0) throw FormatError("config: lambda must lie in [0, 1]");
  if (c.input < 0 || c.input % 16 != 0)
    throw FormatError("config: input size must be a nonnegative multiple of 16");
  if (c.edges < 0) throw FormatError("config: edge count must be nonnegative");
  if (!(c.degree_eps > 0.0)) throw FormatError("config: degree epsilon must be positive");
  if (c.attention_ratio < 1) throw FormatError("config: attention ratio must be positive");
  if (c.lr < 0.0) throw FormatError("config: learning rate must be nonnegative");
  if (c.steps < 0) throw FormatError("config: steps must be nonnegative");
}

inline int64_t effective_input(const RunConfig& c) {
  if (c.input > 0) return c.input;
  return c.preset == "full" ? 256 : 64;
}

inline int64_t effective_edges(const RunConfig& c, int64_t input) {
  if (c.edges > 0) return c.edges;
  return derive_edge_count(input, 4, c.preset == "full");
}

inline NetworkOptions to_network_options(const RunConfig& c, int64_t input) {
  NetworkOptions o;
  o.widths = c.preset == "full" ? std::vector<int64_t>{16, 32, 64, 128, 256}
                                : std::vector<int64_t>{8, 16, 32, 64, 128};
  o.in_channels = 1;
  o.edges = effective_edges(c, input);
  o.curvature = c.curvature;
  o.lambda = c.lambda;
  o.degree_eps = c.degree_eps;
  o.attention_ratio = c.attention_ratio;
  return o;
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["curvature"] = c.curvature;
  j["preset"] = c.preset;
  j["input"] = c.input;
  j["lambda"] = c.lambda;
  j["edges"] = c.edges;
  j["degree_eps"] = c.degree_eps;
  j["attention_ratio"] = c.attention_ratio;
  j["seed"] = c.seed;
  j["precision"] = c.precision;
  j["lr"] = c.lr;
  j["steps"] = c.steps;
  return j;
}

/// Strict parse: unknown keys are rejected so config typos fail loudly.
inline RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError("config: expected a JSON object");
  RunConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "curvature") c.curvature = value.get<double>();
      else if (key == "preset") c.preset = value.get<std::string>();
      else if (key == "input") c.input = value.get<int64_t>();
      else if (key == "lambda") c.lambda = value.get<double>();
      else if (key == "edges") c.edges = value.get<int64_t>();
      else if (key == "degree_eps") c.degree_eps = value.get<double>();
      else if (key == "attention_ratio") c.attention_ratio = value.get<int64_t>();
      else if (key == "seed") c.seed = value.get<uint64_t>();
      else if (key == "precision") c.precision = value.get<std::string>();
      else if (key == "lr") c.lr = value.get<double>();
      else if (key == "steps") c.steps = value.get<int64_t>();
      else throw FormatError("config: unknown key \"" + key + "\"");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  validate(c);
  return c;
}

inline RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open config file");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace lohg
