#pragma once

// JSON run configuration shared by the command-line subcommands. Everything
// is validated at load time, before any computation starts.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "stochadp/adp.hpp"
#include "stochadp/error.hpp"
#include "stochadp/harness.hpp"
#include "stochadp/model.hpp"
#include "stochadp/sde.hpp"

namespace stochadp {

using nlohmann::json;

struct SimulateSettings {
  double h = 0.01;
  double duration = 5.0;
  std::string gain = "lqr";  // "lqr", "optimal" or "zero"
  std::optional<Matrix> gain_matrix;
};

struct RunConfig {
  LinearStochasticSystem system;
  InitialStateSpec initial_state;
  std::string system_label;  // preset name or "inline"
  AdpConfig adp;
  SweepConfig sweep;
  SimulateSettings simulate;
  std::uint64_t seed = 1;
  std::string output = "stochadp_out";
  unsigned threads = 1;
  bool timing = false;
  json resolved;  // full config with defaults filled in, echoed in outputs
};

namespace config_detail {

inline void reject_unknown(const json& j, const std::set<std::string>& keys,
                           const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!keys.count(it.key())) {
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
  }
}

inline double number(const json& j, const std::string& where) {
  if (!j.is_number()) throw ConfigError(where + " must be a number");
  return j.get<double>();
}

inline int integer(const json& j, const std::string& where) {
  if (!j.is_number_integer()) throw ConfigError(where + " must be an integer");
  return j.get<int>();
}

inline std::uint64_t seed_value(const json& j, const std::string& where) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0)) {
    throw ConfigError(where + " must be a non-negative integer");
  }
  return j.get<std::uint64_t>();
}

inline Matrix matrix(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) {
    throw ConfigError(where + " must be a non-empty array of rows");
  }
  const auto rows = static_cast<Eigen::Index>(j.size());
  Eigen::Index cols = -1;
  Matrix M;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array()) throw ConfigError(where + " rows must be arrays");
    if (cols < 0) {
      cols = static_cast<Eigen::Index>(row.size());
      M.resize(rows, cols);
    }
    if (static_cast<Eigen::Index>(row.size()) != cols || cols == 0) {
      throw ConfigError(where + " is ragged");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      M(i, c) = number(row[static_cast<std::size_t>(c)], where);
    }
  }
  return M;
}

inline Vector vector(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + " must be an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = number(j[i], where);
  }
  return v;
}

inline std::vector<Matrix> matrix_list(const json& j,
                                       const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + " must be an array");
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.push_back(matrix(j[i], where + "[" + std::to_string(i) + "]"));
  }
  return out;
}

inline json to_json(const Matrix& M) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back(M(i, c));
    rows.push_back(row);
  }
  return rows;
}

inline json to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline ArmParams arm_params(const json& j) {
  ArmParams p;
  if (j.is_null()) return p;
  reject_unknown(j,
                 {"mass", "viscosity", "time_constant", "c1", "c2",
                  "force_field", "Q", "R", "x0_mean", "x0_cov"},
                 "system.params");
  if (j.contains("mass")) p.mass = number(j["mass"], "system.params.mass");
  if (j.contains("viscosity")) {
    p.viscosity = number(j["viscosity"], "system.params.viscosity");
  }
  if (j.contains("time_constant")) {
    p.time_constant = number(j["time_constant"], "system.params.time_constant");
  }
  if (j.contains("c1")) p.c1 = number(j["c1"], "system.params.c1");
  if (j.contains("c2")) p.c2 = number(j["c2"], "system.params.c2");
  if (j.contains("force_field")) {
    p.force_field = matrix(j["force_field"], "system.params.force_field");
  }
  if (j.contains("Q")) p.Q = matrix(j["Q"], "system.params.Q");
  if (j.contains("R")) p.R = matrix(j["R"], "system.params.R");
  if (j.contains("x0_mean")) {
    p.x0_mean = vector(j["x0_mean"], "system.params.x0_mean");
  }
  if (j.contains("x0_cov")) {
    p.x0_cov = matrix(j["x0_cov"], "system.params.x0_cov");
  }
  return p;
}

inline void load_system(const json& j, RunConfig& cfg) {
  if (j.contains("preset")) {
    reject_unknown(j, {"preset", "params"}, "system");
    const json& name = j["preset"];
    if (!name.is_string() || name.get<std::string>() != "sensorimotor-arm") {
      throw ConfigError("unknown system preset (available: sensorimotor-arm)");
    }
    const ArmModel arm =
        sensorimotor_arm(arm_params(j.value("params", json())));
    cfg.system = arm.system;
    cfg.initial_state = arm.initial_state;
    cfg.system_label = "sensorimotor-arm";
    return;
  }
  reject_unknown(j, {"A", "B", "F", "G", "Q", "R", "x0_mean", "x0_cov"},
                 "system");
  for (const char* key : {"A", "B", "Q", "R"}) {
    if (!j.contains(key)) {
      throw ConfigError(std::string("system.") + key + " is required");
    }
  }
  LinearStochasticSystem& s = cfg.system;
  s.A = matrix(j["A"], "system.A");
  s.B = matrix(j["B"], "system.B");
  s.Q = matrix(j["Q"], "system.Q");
  s.R = matrix(j["R"], "system.R");
  if (j.contains("F")) s.F = matrix_list(j["F"], "system.F");
  if (j.contains("G")) s.G = matrix_list(j["G"], "system.G");
  const Eigen::Index n = s.A.rows();
  cfg.initial_state.mean =
      j.contains("x0_mean") ? vector(j["x0_mean"], "system.x0_mean")
                            : Vector::Zero(n);
  cfg.initial_state.covariance =
      j.contains("x0_cov") ? matrix(j["x0_cov"], "system.x0_cov")
                           : Matrix::Identity(n, n);
  cfg.system_label = "inline";
}

inline ExplorationSignal exploration(const json& j, Eigen::Index m) {
  if (j.is_null()) return default_exploration(m);
  reject_unknown(j,
                 {"kind", "amplitude", "base_frequency", "count", "noise_std",
                  "terms"},
                 "adp.exploration");
  const std::string kind = j.value("kind", "sinusoids");
  const double noise = j.contains("noise_std")
                           ? number(j["noise_std"], "adp.exploration.noise_std")
                           : 0.0;
  if (kind == "zero") {
    ExplorationSignal e;
    e.kind = ExplorationSignal::Kind::kZero;
    return e;
  }
  if (kind == "gaussian") {
    ExplorationSignal e;
    e.kind = ExplorationSignal::Kind::kGaussian;
    e.noise_std = noise;
    return e;
  }
  if (kind != "sinusoids") {
    throw ConfigError("adp.exploration.kind must be zero, sinusoids or "
                      "gaussian");
  }
  if (j.contains("terms")) {
    ExplorationSignal e;
    e.kind = ExplorationSignal::Kind::kSinusoids;
    e.noise_std = noise;
    const json& terms = j["terms"];
    if (!terms.is_array()) {
      throw ConfigError("adp.exploration.terms must be an array");
    }
    for (const json& t : terms) {
      reject_unknown(t, {"channel", "amplitude", "frequency", "phase"},
                     "adp.exploration.terms[]");
      Sinusoid s;
      s.channel = integer(t.at("channel"), "exploration channel");
      s.amplitude = number(t.at("amplitude"), "exploration amplitude");
      s.frequency = number(t.at("frequency"), "exploration frequency");
      s.phase = t.contains("phase") ? number(t["phase"], "exploration phase")
                                    : 0.0;
      e.terms.push_back(s);
    }
    return e;
  }
  const int count =
      j.contains("count") ? integer(j["count"], "adp.exploration.count") : 10;
  if (count < 1) throw ConfigError("adp.exploration.count must be >= 1");
  return default_exploration(
      m,
      j.contains("amplitude") ? number(j["amplitude"], "adp.exploration.amplitude")
                              : 1.0,
      j.contains("base_frequency")
          ? number(j["base_frequency"], "adp.exploration.base_frequency")
          : 1.0,
      count, noise);
}

inline json exploration_to_json(const ExplorationSignal& e) {
  json j;
  switch (e.kind) {
    case ExplorationSignal::Kind::kZero: j["kind"] = "zero"; break;
    case ExplorationSignal::Kind::kGaussian: j["kind"] = "gaussian"; break;
    case ExplorationSignal::Kind::kSinusoids: j["kind"] = "sinusoids"; break;
  }
  j["noise_std"] = e.noise_std;
  json terms = json::array();
  for (const auto& s : e.terms) {
    terms.push_back({{"channel", s.channel},
                     {"amplitude", s.amplitude},
                     {"frequency", s.frequency},
                     {"phase", s.phase}});
  }
  j["terms"] = terms;
  return j;
}

inline void load_adp(const json& j, RunConfig& cfg) {
  AdpConfig& a = cfg.adp;
  const json src = j.is_null() ? json::object() : j;
  reject_unknown(src,
                 {"h", "delta_t", "l", "l_mode", "N_mc", "max_iter", "tol",
                  "batches", "exploration"},
                 "adp");
  if (src.contains("h")) a.h = number(src["h"], "adp.h");
  if (src.contains("delta_t")) a.delta_t = number(src["delta_t"], "adp.delta_t");
  if (src.contains("l")) {
    if (src["l"].is_string() && src["l"] == "auto") {
      a.l = 0;
    } else {
      a.l = integer(src["l"], "adp.l");
      if (a.l < 1) throw ConfigError("adp.l must be >= 1 or \"auto\"");
    }
  }
  if (src.contains("l_mode")) {
    if (!src["l_mode"].is_string()) {
      throw ConfigError("adp.l_mode must be a string");
    }
    a.mode = solve_mode_from_string(src["l_mode"].get<std::string>());
  }
  if (src.contains("N_mc")) a.n_mc = integer(src["N_mc"], "adp.N_mc");
  if (src.contains("max_iter")) {
    a.max_iter = integer(src["max_iter"], "adp.max_iter");
  }
  if (src.contains("tol")) a.tol = number(src["tol"], "adp.tol");
  if (src.contains("batches")) a.batches = integer(src["batches"], "adp.batches");
  if (a.batches < 1) throw ConfigError("adp.batches must be >= 1");
  a.explore = exploration(src.value("exploration", json()), cfg.system.m());
}

inline void load_sweep(const json& j, RunConfig& cfg) {
  SweepConfig& s = cfg.sweep;
  const json src = j.is_null() ? json::object() : j;
  reject_unknown(src,
                 {"h_list", "master_seed", "expectation", "max_iter", "tol",
                  "n_mc_initial", "n_mc_cap", "stderr_fraction", "cost_paths",
                  "cost_h_sim", "cost_time_constants"},
                 "sweep");
  if (src.contains("h_list")) {
    const Vector v = vector(src["h_list"], "sweep.h_list");
    s.h_list.assign(v.data(), v.data() + v.size());
  }
  if (src.contains("master_seed")) {
    s.master_seed = seed_value(src["master_seed"], "sweep.master_seed");
  }
  if (src.contains("expectation")) {
    if (!src["expectation"].is_string()) {
      throw ConfigError("sweep.expectation must be a string");
    }
    s.mode = expectation_mode_from_string(src["expectation"].get<std::string>());
  }
  const int max_iter = s.adp.max_iter;
  const double tol = s.adp.tol;
  s.adp = cfg.adp;
  s.adp.max_iter = src.contains("max_iter")
                       ? integer(src["max_iter"], "sweep.max_iter")
                       : max_iter;
  s.adp.tol = src.contains("tol") ? number(src["tol"], "sweep.tol") : tol;
  if (src.contains("n_mc_initial")) {
    s.n_mc_initial = integer(src["n_mc_initial"], "sweep.n_mc_initial");
  }
  if (src.contains("n_mc_cap")) {
    s.n_mc_cap = integer(src["n_mc_cap"], "sweep.n_mc_cap");
  }
  if (src.contains("stderr_fraction")) {
    s.stderr_fraction = number(src["stderr_fraction"], "sweep.stderr_fraction");
  }
  if (src.contains("cost_paths")) {
    s.cost_paths = integer(src["cost_paths"], "sweep.cost_paths");
  }
  if (src.contains("cost_h_sim")) {
    s.cost_h_sim = number(src["cost_h_sim"], "sweep.cost_h_sim");
  }
  if (src.contains("cost_time_constants")) {
    s.cost_time_constants =
        number(src["cost_time_constants"], "sweep.cost_time_constants");
    if (!(s.cost_time_constants > 0.0)) {
      throw ConfigError("sweep.cost_time_constants must be positive");
    }
  }
}

inline void load_simulate(const json& j, RunConfig& cfg) {
  SimulateSettings& s = cfg.simulate;
  const json src = j.is_null() ? json::object() : j;
  reject_unknown(src, {"h", "duration", "gain"}, "simulate");
  if (src.contains("h")) s.h = number(src["h"], "simulate.h");
  if (src.contains("duration")) {
    s.duration = number(src["duration"], "simulate.duration");
  }
  if (src.contains("gain")) {
    const json& g = src["gain"];
    if (g.is_string()) {
      s.gain = g.get<std::string>();
      if (s.gain != "lqr" && s.gain != "optimal" && s.gain != "zero") {
        throw ConfigError("simulate.gain must be lqr, optimal, zero or a "
                          "matrix");
      }
    } else {
      s.gain = "matrix";
      s.gain_matrix = matrix(g, "simulate.gain");
      if (s.gain_matrix->rows() != cfg.system.m() ||
          s.gain_matrix->cols() != cfg.system.n()) {
        throw ConfigError("simulate.gain is " + shape_of(*s.gain_matrix) +
                          ", expected " + std::to_string(cfg.system.m()) +
                          "x" + std::to_string(cfg.system.n()));
      }
    }
  }
  steps_in(s.duration, s.h, "simulate: duration");
}

inline json resolved_json(const RunConfig& c) {
  json sys;
  sys["label"] = c.system_label;
  sys["A"] = to_json(c.system.A);
  sys["B"] = to_json(c.system.B);
  json F = json::array(), G = json::array();
  for (const auto& M : c.system.F) F.push_back(to_json(M));
  for (const auto& M : c.system.G) G.push_back(to_json(M));
  sys["F"] = F;
  sys["G"] = G;
  sys["Q"] = to_json(c.system.Q);
  sys["R"] = to_json(c.system.R);
  sys["x0_mean"] = to_json(c.initial_state.mean);
  sys["x0_cov"] = to_json(c.initial_state.covariance);
  json adp = {{"h", c.adp.h},
              {"delta_t", c.adp.delta_t},
              {"l", resolved_intervals(c.adp, c.system.n(), c.system.m())},
              {"l_mode", to_string(c.adp.mode)},
              {"N_mc", c.adp.n_mc},
              {"max_iter", c.adp.max_iter},
              {"tol", c.adp.tol},
              {"batches", c.adp.batches},
              {"exploration", exploration_to_json(c.adp.explore)}};
  json sweep = {{"h_list", c.sweep.h_list},
                {"master_seed", c.sweep.master_seed},
                {"expectation", to_string(c.sweep.mode)},
                {"max_iter", c.sweep.adp.max_iter},
                {"tol", c.sweep.adp.tol},
                {"n_mc_initial", c.sweep.n_mc_initial},
                {"n_mc_cap", c.sweep.n_mc_cap},
                {"stderr_fraction", c.sweep.stderr_fraction},
                {"cost_paths", c.sweep.cost_paths},
                {"cost_h_sim", c.sweep.cost_h_sim},
                {"cost_time_constants", c.sweep.cost_time_constants}};
  json sim = {{"h", c.simulate.h}, {"duration", c.simulate.duration}};
  if (c.simulate.gain_matrix) {
    sim["gain"] = to_json(*c.simulate.gain_matrix);
  } else {
    sim["gain"] = c.simulate.gain;
  }
  // Thread count is left out on purpose: it never changes results.
  return {{"system", sys},  {"adp", adp},           {"sweep", sweep},
          {"simulate", sim}, {"seed", c.seed},       {"output", c.output}};
}

}  // namespace config_detail

struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output;
  std::optional<int> n_mc;
  std::optional<unsigned> threads;
};

/// Parses and validates a full run configuration.
inline RunConfig load_config(const json& root,
                             const ConfigOverrides& overrides = {}) {
  using namespace config_detail;
  reject_unknown(root,
                 {"system", "adp", "sweep", "simulate", "seed", "output",
                  "threads"},
                 "config");
  if (!root.contains("system")) throw ConfigError("config.system is required");
  RunConfig cfg;
  load_system(root["system"], cfg);
  const auto problems = validate(cfg.system);
  if (!problems.empty()) throw ConfigError(problems.front());
  const auto x0_problems = validate(cfg.initial_state, cfg.system.n());
  if (!x0_problems.empty()) throw ConfigError(x0_problems.front());

  if (root.contains("seed")) cfg.seed = seed_value(root["seed"], "seed");
  if (root.contains("output")) {
    if (!root["output"].is_string()) {
      throw ConfigError("output must be a string path prefix");
    }
    cfg.output = root["output"].get<std::string>();
  }
  if (root.contains("threads")) {
    const int t = integer(root["threads"], "threads");
    if (t < 1) throw ConfigError("threads must be >= 1");
    cfg.threads = static_cast<unsigned>(t);
  }
  if (overrides.seed) cfg.seed = *overrides.seed;
  if (overrides.output) cfg.output = *overrides.output;
  if (overrides.threads) {
    if (*overrides.threads < 1) throw ConfigError("--threads must be >= 1");
    cfg.threads = *overrides.threads;
  }

  load_adp(root.value("adp", json()), cfg);
  if (overrides.n_mc) cfg.adp.n_mc = *overrides.n_mc;
  cfg.adp.seed = cfg.seed;
  cfg.adp.threads = cfg.threads;
  validate_adp_config(cfg.adp, cfg.system.n(), cfg.system.m());

  load_sweep(root.value("sweep", json()), cfg);
  if (root.contains("sweep") && root["sweep"].is_object() &&
      !root["sweep"].contains("master_seed") && root.contains("seed")) {
    cfg.sweep.master_seed = cfg.seed;
  }
  if (overrides.seed) cfg.sweep.master_seed = *overrides.seed;
  cfg.sweep.threads = cfg.threads;
  load_simulate(root.value("simulate", json()), cfg);

  cfg.resolved = resolved_json(cfg);
  return cfg;
}

inline json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " +
                      e.what());
  }
}

}  // namespace stochadp
