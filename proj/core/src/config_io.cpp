#include "hctrl/config_io.hpp"

#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace hctrl {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& message) { throw std::invalid_argument(message); }

json parse_json(const std::string& text) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) fail("config is not valid JSON");
  if (!j.is_object()) fail("config root must be an object");
  return j;
}

const json& require(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) fail(std::string("missing config key '") + key + "'");
  return *it;
}

double as_number(const json& j, const char* key) {
  const json& v = require(j, key);
  if (!v.is_number()) fail(std::string("config key '") + key + "' must be a number");
  return v.get<double>();
}

double number_or(const json& j, const char* key, double fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_number()) fail(std::string("config key '") + key + "' must be a number");
  return it->get<double>();
}

int as_int(const json& j, const char* key) {
  const json& v = require(j, key);
  if (!v.is_number_integer()) fail(std::string("config key '") + key + "' must be an integer");
  return v.get<int>();
}

std::string as_string(const json& j, const char* key) {
  const json& v = require(j, key);
  if (!v.is_string()) fail(std::string("config key '") + key + "' must be a string");
  return v.get<std::string>();
}

// Row-major matrix: array of equal-length numeric rows.
Mat as_matrix(const json& v, const char* key) {
  if (!v.is_array() || v.empty()) fail(std::string("config key '") + key + "' must be a nonempty array of rows");
  const auto& first = v.front();
  if (!first.is_array() || first.empty()) fail(std::string("config key '") + key + "' rows must be nonempty arrays");
  const int rows = static_cast<int>(v.size());
  const int cols = static_cast<int>(first.size());
  Mat out(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const auto& row = v[r];
    if (!row.is_array() || static_cast<int>(row.size()) != cols) {
      fail(std::string("config key '") + key + "' rows must all have the same length");
    }
    for (int c = 0; c < cols; ++c) {
      if (!row[c].is_number()) fail(std::string("config key '") + key + "' entries must be numbers");
      out(r, c) = row[c].get<double>();
    }
  }
  return out;
}

Mat require_matrix(const json& j, const char* key) { return as_matrix(require(j, key), key); }

CostConfig parse_cost(const json& j, const char* key) {
  const json& v = require(j, key);
  if (!v.is_object()) fail(std::string("config key '") + key + "' must be an object");
  CostConfig cost;
  cost.family = as_string(v, "family");
  if (cost.family == "quadratic") {
    cost.Q = require_matrix(v, "Q");
  } else if (cost.family == "zero") {
    cost.Q = Mat();
  } else {
    fail(std::string("unknown cost family '") + cost.family + "'");
  }
  return cost;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

ProblemConfig parse_problem_config(const std::string& text) {
  const json j = parse_json(text);
  ProblemConfig config;
  config.dim = as_int(j, "dim");
  config.ctrl_dim = as_int(j, "ctrl_dim");
  config.horizon_T = as_number(j, "horizon_T");

  const json& drift = require(j, "drift");
  if (!drift.is_object()) fail("config key 'drift' must be an object");
  config.drift.family = as_string(drift, "family");
  if (config.drift.family == "linear") {
    config.drift.matrix = require_matrix(drift, "matrix");
  } else if (config.drift.family == "saturating") {
    config.drift.scale = as_number(drift, "scale");
  } else {
    fail(std::string("unknown drift family '") + config.drift.family + "'");
  }

  config.cost_running = parse_cost(j, "cost_running");
  config.cost_terminal = parse_cost(j, "cost_terminal");
  config.B = require_matrix(j, "B");
  config.N = require_matrix(j, "N");
  return config;
}

ProblemConfig load_problem_config(const std::string& path) {
  return parse_problem_config(read_file(path));
}

MFConfig parse_mf_config(const std::string& text) {
  const json j = parse_json(text);
  MFConfig config;
  config.problem.n = as_int(j, "n");
  config.problem.A = require_matrix(j, "A");
  config.problem.B = require_matrix(j, "B");
  config.problem.N_weight = require_matrix(j, "N_weight");
  config.problem.Q = require_matrix(j, "Q");
  config.problem.s = number_or(j, "s", 0.0);
  if (j.contains("Q_T") && !j["Q_T"].is_null()) {
    config.problem.Q_T = as_matrix(j["Q_T"], "Q_T");
  }
  config.problem.s_T = number_or(j, "s_T", 0.0);
  config.problem.horizon_T = as_number(j, "horizon_T");

  const bool has_points = j.contains("points");
  const bool has_sampling = j.contains("sampling");
  if (has_points == has_sampling) {
    fail("exactly one of 'points' or 'sampling' must be given");
  }
  config.measure.n = config.problem.n;
  if (has_points) {
    const json& pts = j["points"];
    if (!pts.is_array() || pts.empty()) fail("'points' must be a nonempty array");
    for (const auto& row : pts) {
      if (!row.is_array() || static_cast<int>(row.size()) != config.problem.n) {
        fail("'points' rows must match the state dimension");
      }
      Vec point(config.problem.n);
      for (int c = 0; c < config.problem.n; ++c) {
        if (!row[c].is_number()) fail("'points' entries must be numbers");
        point[c] = row[c].get<double>();
      }
      config.measure.points.push_back(point);
    }
  } else {
    const json& sampling = j["sampling"];
    if (!sampling.is_object()) fail("'sampling' must be an object");
    const int count = as_int(sampling, "count");
    const double radius = as_number(sampling, "radius");
    if (count < 1) fail("'sampling.count' must be positive");
    if (!(radius > 0.0)) fail("'sampling.radius' must be positive");
    std::uint64_t seed = 12345;
    if (sampling.contains("seed")) {
      if (!sampling["seed"].is_number_integer()) fail("'sampling.seed' must be an integer");
      seed = sampling["seed"].get<std::uint64_t>();
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-radius, radius);
    for (int i = 0; i < count; ++i) {
      Vec point(config.problem.n);
      for (int c = 0; c < config.problem.n; ++c) point[c] = dist(rng);
      config.measure.points.push_back(point);
    }
  }
  return config;
}

MFConfig load_mf_config(const std::string& path) { return parse_mf_config(read_file(path)); }

}  // namespace hctrl
