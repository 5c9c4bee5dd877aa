#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "stochadp/config.hpp"

namespace stochadp {
namespace {

using nlohmann::json;

json scalar_root() {
  return json::parse(R"({
    "system": {"A": [[0.0]], "B": [[1.0]], "Q": [[1.0]], "R": [[1.0]]},
    "adp": {"h": 0.001, "delta_t": 0.1, "l": 6, "N_mc": 20},
    "seed": 7,
    "output": "out/scalar"
  })");
}

std::string config_error(const json& root, const ConfigOverrides& o = {}) {
  try {
    load_config(root, o);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(LoadConfig, MinimalArmPreset) {
  const RunConfig cfg = load_config(json::parse(R"({"system": {"preset": "sensorimotor-arm"}})"));
  EXPECT_EQ(cfg.system_label, "sensorimotor-arm");
  EXPECT_EQ(cfg.system.n(), 6);
  EXPECT_EQ(cfg.system.m(), 2);
  EXPECT_EQ(cfg.resolved["adp"]["l"], 36 + 12 + 4);
}

TEST(LoadConfig, InlineSystemDefaults) {
  const RunConfig cfg = load_config(scalar_root());
  EXPECT_EQ(cfg.seed, 7u);
  EXPECT_EQ(cfg.adp.seed, 7u);
  EXPECT_EQ(cfg.adp.l, 6);
  EXPECT_EQ(cfg.initial_state.covariance(0, 0), 1.0);
  EXPECT_EQ(cfg.initial_state.mean(0), 0.0);
  EXPECT_EQ(cfg.output, "out/scalar");
}

TEST(LoadConfig, AutoIntervalCount) {
  json root = scalar_root();
  root["adp"]["l"] = "auto";
  const RunConfig cfg = load_config(root);
  EXPECT_EQ(cfg.adp.l, 0);
  EXPECT_EQ(cfg.resolved["adp"]["l"], 3);
  root["adp"]["l"] = 0;
  EXPECT_NE(config_error(root).find("adp.l"), std::string::npos);
}

TEST(LoadConfig, UnknownKeysRejected) {
  json root = scalar_root();
  root["adp"]["Nmc"] = 3;
  EXPECT_NE(config_error(root).find("Nmc"), std::string::npos);
  root = scalar_root();
  root["extra"] = true;
  EXPECT_NE(config_error(root).find("extra"), std::string::npos);
}

TEST(LoadConfig, InvalidSystemNamesTheProblem) {
  json root = scalar_root();
  root["system"]["R"] = json::parse("[[-1.0]]");
  EXPECT_NE(config_error(root).find("R not positive definite"),
            std::string::npos);
  root = scalar_root();
  root["system"].erase("B");
  EXPECT_NE(config_error(root).find("system.B is required"), std::string::npos);
  root = scalar_root();
  root["system"] = json::parse(R"({"preset": "pendulum"})");
  EXPECT_NE(config_error(root).find("unknown system preset"),
            std::string::npos);
}

TEST(LoadConfig, NonDividingStepRejected) {
  json root = scalar_root();
  root["adp"]["h"] = 0.03;
  EXPECT_FALSE(config_error(root).empty());
}

TEST(LoadConfig, OverridesApply) {
  ConfigOverrides o;
  o.seed = 99;
  o.output = "elsewhere/run";
  o.threads = 3;
  o.n_mc = 5;
  const RunConfig cfg = load_config(scalar_root(), o);
  EXPECT_EQ(cfg.seed, 99u);
  EXPECT_EQ(cfg.adp.seed, 99u);
  EXPECT_EQ(cfg.sweep.master_seed, 99u);
  EXPECT_EQ(cfg.output, "elsewhere/run");
  EXPECT_EQ(cfg.threads, 3u);
  EXPECT_EQ(cfg.adp.threads, 3u);
  EXPECT_EQ(cfg.sweep.threads, 3u);
  EXPECT_EQ(cfg.adp.n_mc, 5);
  o.threads = 0;
  EXPECT_NE(config_error(scalar_root(), o).find("--threads"),
            std::string::npos);
}

TEST(LoadConfig, ResolvedConfigOmitsThreadCount) {
  json root = scalar_root();
  root["threads"] = 4;
  const RunConfig a = load_config(root);
  root["threads"] = 1;
  const RunConfig b = load_config(root);
  EXPECT_FALSE(a.resolved.contains("threads"));
  EXPECT_EQ(a.resolved.dump(), b.resolved.dump());
  EXPECT_EQ(a.threads, 4u);
}

TEST(LoadConfig, SimulateGainForms) {
  json root = scalar_root();
  root["simulate"] = json::parse(R"({"h": 0.01, "duration": 1.0, "gain": [[2.0]]})");
  const RunConfig cfg = load_config(root);
  ASSERT_TRUE(cfg.simulate.gain_matrix.has_value());
  EXPECT_EQ((*cfg.simulate.gain_matrix)(0, 0), 2.0);
  root["simulate"]["gain"] = json::parse("[[1.0, 2.0]]");
  EXPECT_NE(config_error(root).find("simulate.gain is 1x2"), std::string::npos);
  root["simulate"]["gain"] = "best";
  EXPECT_FALSE(config_error(root).empty());
}

TEST(ReadJsonFile, ReportsMissingAndMalformedFiles) {
  EXPECT_THROW(read_json_file("/nonexistent/cfg.json"), ConfigError);
  const auto path = std::filesystem::temp_directory_path() / "stochadp_bad.json";
  std::ofstream(path) << "{\"system\": ";
  EXPECT_THROW(read_json_file(path.string()), ConfigError);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace stochadp
