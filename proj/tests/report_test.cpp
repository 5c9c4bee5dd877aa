#include <gtest/gtest.h>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "stochadp/report.hpp"
#include "systems.hpp"

namespace stochadp {
namespace {

namespace fs = std::filesystem;

SweepRecord sample_record(double h, std::uint64_t seed) {
  SweepRecord r;
  r.h = h;
  r.n_mc = 512;
  r.iters = 3;
  r.err_P = 0.1 / 3.0 + h;
  r.err_K = 2e-17;
  r.J_E_hat = 30.123456789012345;
  r.J_E_hat_stderr = kNaN;
  r.J_E_exact = -1.5e300;
  r.seed = seed;
  r.wall_time = 1.25;
  return r;
}

TEST(FormatDouble, RoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.0, 12345.678}) {
    EXPECT_EQ(parse_double(format_double(v)), v);
  }
  EXPECT_TRUE(std::isnan(parse_double(format_double(kNaN))));
  EXPECT_THROW(parse_double("1.5x"), ConfigError);
}

TEST(SweepCsv, HeaderAndOneRow) {
  std::ostringstream os;
  write_sweep_csv({sample_record(0.01, 7)}, os);
  std::istringstream is(os.str());
  std::string header, row, rest;
  std::getline(is, header);
  std::getline(is, row);
  EXPECT_EQ(header,
            "h,n_mc,iters,err_P_fro,err_K_fro,JE_hat,JE_hat_stderr,JE_exact,"
            "seed,wall_time_s");
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 9);
  EXPECT_EQ(row.substr(row.rfind(',') + 1), "0");
  EXPECT_FALSE(std::getline(is, rest));
}

TEST(SweepCsv, RoundTrip) {
  const std::vector<SweepRecord> recs{sample_record(0.04, 1),
                                      sample_record(0.02, 18446744073709551615u),
                                      sample_record(0.01, 3)};
  std::stringstream ss;
  write_sweep_csv(recs, ss, true);
  const auto back = read_sweep_csv(ss);
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(back[i].h, recs[i].h);
    EXPECT_EQ(back[i].n_mc, recs[i].n_mc);
    EXPECT_EQ(back[i].iters, recs[i].iters);
    EXPECT_EQ(back[i].err_P, recs[i].err_P);
    EXPECT_EQ(back[i].err_K, recs[i].err_K);
    EXPECT_EQ(back[i].J_E_hat, recs[i].J_E_hat);
    EXPECT_TRUE(std::isnan(back[i].J_E_hat_stderr));
    EXPECT_EQ(back[i].J_E_exact, recs[i].J_E_exact);
    EXPECT_EQ(back[i].seed, recs[i].seed);
    EXPECT_EQ(back[i].wall_time, recs[i].wall_time);
  }
  std::istringstream bad("h,n\n");
  EXPECT_THROW(read_sweep_csv(bad), ConfigError);
}

void expect_well_formed_svg(const std::string& svg) {
  std::istringstream is(svg);
  boost::property_tree::ptree tree;
  ASSERT_NO_THROW(boost::property_tree::read_xml(is, tree));
  EXPECT_EQ(tree.front().first, "svg");
}

TEST(RenderSvg, WellFormedOnLogAndLinearAxes) {
  PlotSpec spec;
  spec.title = "errors <P & K>";
  spec.x_label = "h";
  spec.y_label = "err";
  spec.log_x = spec.log_y = true;
  spec.series.push_back({"P", "#1f77b4", {0.04, 0.02, 0.01}, {0.3, 0.1, 0.05},
                         {0.01, 0.01, 0.01}, false, false});
  spec.series.push_back({"fit", "#ff7f0e", {0.04, 0.01}, {0.3, 0.05}, {}, true,
                         true});
  expect_well_formed_svg(render_svg(spec));
  spec.log_x = spec.log_y = false;
  spec.series[0].y = {kNaN, 1.0, 1.0};
  expect_well_formed_svg(render_svg(spec));
  spec.series.clear();
  expect_well_formed_svg(render_svg(spec));
}

SweepResult small_result() {
  SweepResult res;
  for (double h : {0.04, 0.02, 0.01, 0.005}) {
    SweepRecord r = sample_record(h, 9);
    r.err_P = 2 * h;
    r.J_E_exact = 30 + h;
    r.J_E_hat = 30.5 + h;
    r.J_E_hat_stderr = 0.1;
    res.records.push_back(r);
  }
  res.P_star = Matrix::Identity(2, 2);
  res.K_star = Matrix::Ones(1, 2);
  res.X0 = Matrix::Identity(2, 2);
  res.J_star = 2;
  res.cost_horizon = 8;
  return res;
}

TEST(EmitReport, WritesAllArtifacts) {
  const fs::path dir = fs::temp_directory_path() / "stochadp_report_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto res = small_result();
  const auto fits = compute_fits(res.records);
  ASSERT_TRUE(fits.err_P.has_value());
  EXPECT_NEAR(fits.err_P->slope, 1.0, 1e-12);
  const auto paths = emit_report(res, fits, SweepConfig{}, {{"k", 1}},
                                 (dir / "run").string());
  for (const auto& p : {paths.csv, paths.json, paths.error_svg, paths.cost_svg}) {
    EXPECT_TRUE(fs::exists(p)) << p;
  }
  std::ifstream js(paths.json);
  const auto j = nlohmann::json::parse(js);
  EXPECT_EQ(j["tool"], kToolVersion);
  EXPECT_EQ(j["config"]["k"], 1);
  EXPECT_EQ(j["records"].size(), 4u);
  EXPECT_NEAR(j["fits"]["err_P_loglog"]["slope"].get<double>(), 1.0, 1e-12);
  for (const auto& p : {paths.error_svg, paths.cost_svg}) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    expect_well_formed_svg(ss.str());
  }
  std::ifstream csv(paths.csv);
  EXPECT_EQ(read_sweep_csv(csv).size(), 4u);
  fs::remove_all(dir);
}

TEST(EmitReport, UnwritablePathLeavesNothingBehind) {
  const fs::path dir = fs::temp_directory_path() / "stochadp_report_missing";
  fs::remove_all(dir);
  const auto res = small_result();
  EXPECT_THROW(emit_report(res, compute_fits(res.records), SweepConfig{}, {},
                           (dir / "sub" / "run").string()),
               ConfigError);
  EXPECT_FALSE(fs::exists(dir));
  EXPECT_THROW(emit_report(SweepResult{}, {}, SweepConfig{}, {}, "x"),
               ConfigError);
}

}  // namespace
}  // namespace stochadp
