// Command-line front end: solve, simulate, adp, sweep.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure,
// 4 non-convergence.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "stochadp/adp.hpp"
#include "stochadp/config.hpp"
#include "stochadp/harness.hpp"
#include "stochadp/report.hpp"
#include "stochadp/riccati.hpp"
#include "stochadp/sde.hpp"

namespace {

using stochadp::json;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitNonConvergence = 4;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> threads;
  std::optional<int> n_mc;
  bool dry_run = false;
  bool timing = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "JSON run configuration")->required();
  cmd->add_option("--seed", o.seed, "Override the master seed");
  cmd->add_option("--out", o.out, "Override the output path prefix");
  cmd->add_option("--threads", o.threads, "Worker threads (results do not "
                                          "depend on this)");
  cmd->add_option("--n-mc", o.n_mc, "Override adp.N_mc");
  cmd->add_flag("--dry-run", o.dry_run,
                "Validate the config, print the plan, run nothing");
}

stochadp::RunConfig load(const CommonOptions& o) {
  stochadp::ConfigOverrides ov;
  ov.seed = o.seed;
  ov.output = o.out;
  ov.threads = o.threads;
  ov.n_mc = o.n_mc;
  stochadp::RunConfig cfg =
      stochadp::load_config(stochadp::read_json_file(o.config), ov);
  cfg.timing = o.timing;
  return cfg;
}

void ensure_parent(const std::string& prefix) {
  const auto parent = std::filesystem::path(prefix).parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(parent, ec);
  if (ec) {
    throw stochadp::ConfigError("cannot create output directory '" +
                                parent.string() + "'");
  }
}

json header(const stochadp::RunConfig& cfg, const char* command) {
  return {{"tool", stochadp::kToolVersion},
          {"command", command},
          {"config", cfg.resolved}};
}

// ------------------------------------------------------------------ solve

int cmd_solve(const CommonOptions& o) {
  const auto cfg = load(o);
  if (o.dry_run) {
    std::cout << "plan: solve the generalized Riccati equation for the "
              << cfg.system_label << " system (n=" << cfg.system.n()
              << ", m=" << cfg.system.m() << ") by policy iteration from the "
              << "noise-free LQR gain\n  output: " << cfg.output << ".json\n";
    return kExitOk;
  }
  const stochadp::Matrix K0 = stochadp::lqr_initial_gain(cfg.system);
  const auto sol = stochadp::solve(cfg.system, K0, {});
  json j = header(cfg, "solve");
  j["P_star"] = stochadp::matrix_to_json(sol.P_star);
  j["K_star"] = stochadp::matrix_to_json(sol.K_star);
  j["iterations"] = sol.iterations;
  j["residual_fro"] = sol.final_residual;
  j["J_star"] = stochadp::expected_cost_exact(
      sol.P_star, stochadp::second_moment(cfg.initial_state));
  j["closed_loop_spectral_abscissa"] =
      stochadp::mean_square_stability(cfg.system, sol.K_star)
          .spectral_abscissa;
  json hist = json::array();
  for (const auto& it : sol.history) hist.push_back(it.residual);
  j["residual_history"] = hist;
  const std::string text = j.dump(2) + "\n";
  ensure_parent(cfg.output);
  stochadp::write_files_atomically({{cfg.output + ".json", text}});
  std::cout << text;
  return kExitOk;
}

// --------------------------------------------------------------- simulate

stochadp::Matrix simulation_gain(const stochadp::RunConfig& cfg) {
  const auto& s = cfg.simulate;
  if (s.gain_matrix) return *s.gain_matrix;
  if (s.gain == "zero") {
    return stochadp::Matrix::Zero(cfg.system.m(), cfg.system.n());
  }
  const stochadp::Matrix K0 = stochadp::lqr_initial_gain(cfg.system);
  if (s.gain == "lqr") return K0;
  return stochadp::solve(cfg.system, K0, {}).K_star;
}

int cmd_simulate(const CommonOptions& o) {
  const auto cfg = load(o);
  if (o.dry_run) {
    std::cout << "plan: simulate one Euler-Maruyama path of the "
              << cfg.system_label << " system with gain '"
              << cfg.simulate.gain << "', h=" << cfg.simulate.h
              << ", duration=" << cfg.simulate.duration
              << "\n  output: " << cfg.output << ".csv, " << cfg.output
              << ".json\n";
    return kExitOk;
  }
  const stochadp::Matrix K = simulation_gain(cfg);
  const stochadp::CounterNormal rng(cfg.seed);
  const stochadp::Vector x0 =
      stochadp::draw_initial_state(cfg.initial_state, rng, 0);
  const auto tr = stochadp::simulate(cfg.system, K, cfg.adp.explore, x0, 0.0,
                                     cfg.simulate.duration, cfg.simulate.h,
                                     cfg.seed);
  std::ostringstream csv;
  stochadp::write_trajectory_csv(tr, csv);
  json j = header(cfg, "simulate");
  j["gain"] = stochadp::matrix_to_json(K);
  j["steps"] = tr.steps();
  j["diagnostics"] = tr.diagnostics;
  ensure_parent(cfg.output);
  stochadp::write_files_atomically(
      {{cfg.output + ".csv", csv.str()}, {cfg.output + ".json", j.dump(2) + "\n"}});
  for (const auto& d : tr.diagnostics) std::cerr << "warning: " << d << "\n";
  std::cout << "wrote " << cfg.output << ".csv (" << tr.steps()
            << " steps)\n";
  return kExitOk;
}

// -------------------------------------------------------------------- adp

int cmd_adp(const CommonOptions& o) {
  const auto cfg = load(o);
  const int l = stochadp::resolved_intervals(cfg.adp, cfg.system.n(),
                                             cfg.system.m());
  if (o.dry_run) {
    std::cout << "plan: data-driven policy iteration on the "
              << cfg.system_label << " system\n  h=" << cfg.adp.h
              << " delta_t=" << cfg.adp.delta_t << " l=" << l
              << " mode=" << stochadp::to_string(cfg.adp.mode)
              << " N_mc=" << cfg.adp.n_mc << " max_iter=" << cfg.adp.max_iter
              << " tol=" << cfg.adp.tol << " seed=" << cfg.seed
              << "\n  output: " << cfg.output << ".json, " << cfg.output
              << "_iterations.csv\n";
    return kExitOk;
  }
  const stochadp::Matrix K0 = stochadp::lqr_initial_gain(cfg.system);
  const stochadp::SimulatedPlant plant(cfg.system, cfg.initial_state);
  const auto r =
      stochadp::run_adp(plant, K0, cfg.system.Q, cfg.system.R, cfg.adp);

  std::ostringstream csv;
  csv << "iteration,P_hat_fro,P_change_fro,K_next_fro,mc_stderr_P,"
         "mc_stderr_K,condition,rank\n";
  json iters = json::array();
  for (std::size_t k = 0; k < r.iterates.size(); ++k) {
    const auto& it = r.iterates[k];
    const double change =
        k == 0 ? stochadp::kNaN : (it.P_hat - r.iterates[k - 1].P_hat).norm();
    csv << it.index << ',' << stochadp::format_double(it.P_hat.norm()) << ','
        << stochadp::format_double(change) << ','
        << stochadp::format_double(it.K_next.norm()) << ','
        << stochadp::format_double(it.mc_stderr_P) << ','
        << stochadp::format_double(it.mc_stderr_K) << ','
        << stochadp::format_double(it.condition_estimate) << ',' << it.rank
        << '\n';
    iters.push_back({{"index", it.index},
                     {"K", stochadp::matrix_to_json(it.K)},
                     {"P_hat", stochadp::matrix_to_json(it.P_hat)},
                     {"BtP_hat", stochadp::matrix_to_json(it.BtP_hat)},
                     {"Sigma_hat", stochadp::matrix_to_json(it.Sigma_hat)},
                     {"K_next", stochadp::matrix_to_json(it.K_next)},
                     {"condition", it.condition_estimate},
                     {"rank", it.rank},
                     {"mc_stderr_P", it.mc_stderr_P},
                     {"mc_stderr_K", it.mc_stderr_K},
                     {"diagnostics", it.diagnostics}});
  }
  json j = header(cfg, "adp");
  j["converged"] = r.converged;
  j["iterations_used"] = r.iterations_used;
  j["l"] = r.l;
  j["N_mc"] = r.n_mc;
  j["h"] = r.h;
  j["delta_t"] = r.delta_t;
  j["K0"] = stochadp::matrix_to_json(K0);
  j["P_final"] = stochadp::matrix_to_json(r.P_final);
  j["K_final"] = stochadp::matrix_to_json(r.K_final);
  j["iterates"] = iters;
  ensure_parent(cfg.output);
  stochadp::write_files_atomically({{cfg.output + ".json", j.dump(2) + "\n"},
                                    {cfg.output + "_iterations.csv", csv.str()}});
  std::cout << (r.converged ? "converged" : "not converged") << " after "
            << r.iterations_used << " iterations; wrote " << cfg.output
            << ".json\n";
  if (!r.converged) {
    std::cerr << "error: policy iteration did not meet tol=" << cfg.adp.tol
              << " within max_iter=" << cfg.adp.max_iter << "\n";
    return kExitNonConvergence;
  }
  return kExitOk;
}

// ------------------------------------------------------------------ sweep

int cmd_sweep(const CommonOptions& o) {
  const auto cfg = load(o);
  stochadp::validate_sweep_config(cfg.sweep, cfg.system.n(), cfg.system.m());
  if (o.dry_run) {
    std::cout << "plan: sampling-period sweep on the " << cfg.system_label
              << " system, expectation=" << stochadp::to_string(cfg.sweep.mode)
              << ", delta_t=" << cfg.sweep.adp.delta_t
              << ", max_iter=" << cfg.sweep.adp.max_iter << "\n";
    for (std::size_t i = 0; i < cfg.sweep.h_list.size(); ++i) {
      std::cout << "  h=" << cfg.sweep.h_list[i] << " seed="
                << stochadp::sweep_point_seed(cfg.sweep.master_seed, i);
      if (cfg.sweep.mode == stochadp::ExpectationMode::kSampled) {
        std::cout << " N_mc=" << cfg.sweep.n_mc_initial << ".."
                  << cfg.sweep.n_mc_cap;
      }
      std::cout << "\n";
    }
    const auto paths = stochadp::report_paths(cfg.output);
    std::cout << "  output: " << paths.csv << ", " << paths.json << ", "
              << paths.error_svg << ", " << paths.cost_svg << "\n";
    return kExitOk;
  }
  const auto res = stochadp::sweep_h(cfg.system, cfg.initial_state, cfg.sweep);
  const auto fits = stochadp::compute_fits(res.records);
  ensure_parent(cfg.output);
  stochadp::emit_report(res, fits, cfg.sweep, cfg.resolved, cfg.output,
                        cfg.timing);
  for (const auto& r : res.records) {
    if (!r.ok()) std::cerr << "warning: h=" << r.h << ": " << r.error << "\n";
  }
  auto show = [](const char* name, const std::optional<stochadp::RateFit>& f) {
    if (f) {
      std::printf("%-18s slope %.4f  intercept %.6g  R^2 %.4f\n", name,
                  f->slope, f->intercept, f->r_squared);
    } else {
      std::printf("%-18s unavailable\n", name);
    }
  };
  show("err_P (log-log)", fits.err_P);
  show("err_K (log-log)", fits.err_K);
  show("JE_exact (linear)", fits.J_E_exact_linear);
  show("JE_hat (linear)", fits.J_E_hat_linear);
  std::printf("Tr(P* X0)          %.6g\n", res.J_star);
  for (const auto& n : fits.notes) std::cerr << "note: " << n << "\n";
  return kExitOk;
}

int exit_code_for(const stochadp::Error& e) {
  switch (e.category()) {
    case stochadp::Error::Category::kConfig: return kExitConfig;
    case stochadp::Error::Category::kNumerical: return kExitNumerical;
    case stochadp::Error::Category::kNonConvergence: return kExitNonConvergence;
  }
  return kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Data-driven policy iteration for stochastic LQR"};
  app.set_version_flag("--version", std::string(stochadp::kToolVersion));
  app.require_subcommand(1);
  CommonOptions solve_o, sim_o, adp_o, sweep_o;
  auto* solve = app.add_subcommand("solve", "Model-based Riccati solution");
  add_common(solve, solve_o);
  auto* sim = app.add_subcommand("simulate", "Simulate one trajectory");
  add_common(sim, sim_o);
  auto* adp = app.add_subcommand("adp", "Data-driven policy iteration");
  add_common(adp, adp_o);
  auto* sweep = app.add_subcommand("sweep", "Sampling-period sweep");
  add_common(sweep, sweep_o);
  sweep->add_flag("--timing", sweep_o.timing,
                  "Write measured wall time into the CSV (breaks byte "
                  "reproducibility)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  try {
    if (*solve) return cmd_solve(solve_o);
    if (*sim) return cmd_simulate(sim_o);
    if (*adp) return cmd_adp(adp_o);
    if (*sweep) return cmd_sweep(sweep_o);
  } catch (const stochadp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitConfig;
}
