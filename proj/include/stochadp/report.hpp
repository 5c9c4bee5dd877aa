#pragma once

// Sweep output: CSV table, JSON summary and two standalone SVG plots.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "json.hpp"
#include "stochadp/error.hpp"
#include "stochadp/harness.hpp"

namespace stochadp {

#ifndef STOCHADP_VERSION
#define STOCHADP_VERSION "0.0.0"
#endif

inline constexpr const char* kToolVersion = "stochadp " STOCHADP_VERSION;

inline constexpr const char* kSweepCsvHeader =
    "h,n_mc,iters,err_P_fro,err_K_fro,JE_hat,JE_hat_stderr,JE_exact,seed,"
    "wall_time_s";

/// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("csv: cannot parse number '" + s + "'");
  }
  return v;
}

/// wall_time_s is written as 0 unless `timing` is set, which keeps the file
/// byte-identical across runs.
inline void write_sweep_csv(const std::vector<SweepRecord>& records,
                            std::ostream& os, bool timing = false) {
  os << kSweepCsvHeader << '\n';
  for (const auto& r : records) {
    os << format_double(r.h) << ',' << r.n_mc << ',' << r.iters << ','
       << format_double(r.err_P) << ',' << format_double(r.err_K) << ','
       << format_double(r.J_E_hat) << ',' << format_double(r.J_E_hat_stderr)
       << ',' << format_double(r.J_E_exact) << ',' << r.seed << ','
       << format_double(timing ? r.wall_time : 0.0) << '\n';
  }
}

inline std::vector<SweepRecord> read_sweep_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kSweepCsvHeader) {
    throw ConfigError("csv: unexpected header");
  }
  std::vector<SweepRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 10) throw ConfigError("csv: expected 10 fields");
    SweepRecord r;
    r.h = parse_double(f[0]);
    r.n_mc = std::stoi(f[1]);
    r.iters = std::stoi(f[2]);
    r.err_P = parse_double(f[3]);
    r.err_K = parse_double(f[4]);
    r.J_E_hat = parse_double(f[5]);
    r.J_E_hat_stderr = parse_double(f[6]);
    r.J_E_exact = parse_double(f[7]);
    r.seed = std::stoull(f[8]);
    r.wall_time = parse_double(f[9]);
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------- SVG

struct PlotSeries {
  std::string label;
  std::string color;
  std::vector<double> x, y, yerr;  // yerr may be empty
  bool line = false;               // polyline instead of markers
  bool dashed = false;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
  std::vector<PlotSeries> series;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string svg_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace detail

inline std::string render_svg(const PlotSpec& spec) {
  constexpr double W = 640, H = 440, L = 80, R = 170, T = 40, B = 60;
  auto tx = [&](double v) { return spec.log_x ? std::log10(v) : v; };
  auto ty = [&](double v) { return spec.log_y ? std::log10(v) : v; };
  auto usable = [&](double x, double y) {
    return std::isfinite(x) && std::isfinite(y) && (!spec.log_x || x > 0) &&
           (!spec.log_y || y > 0);
  };
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0,
         y1 = -x0;
  for (const auto& s : spec.series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      const double e = i < s.yerr.size() && std::isfinite(s.yerr[i])
                           ? s.yerr[i]
                           : 0.0;
      x0 = std::min(x0, tx(s.x[i]));
      x1 = std::max(x1, tx(s.x[i]));
      const double lo = spec.log_y ? s.y[i] : s.y[i] - e;
      const double hi = spec.log_y ? s.y[i] : s.y[i] + e;
      y0 = std::min(y0, ty(lo));
      y1 = std::max(y1, ty(hi));
    }
  }
  if (!std::isfinite(x0)) {
    x0 = 0;
    x1 = 1;
    y0 = 0;
    y1 = 1;
  }
  auto pad = [](double& lo, double& hi) {
    const double span = hi - lo;
    const double p = span > 0 ? 0.06 * span : std::max(0.5, 0.1 * std::abs(lo));
    lo -= p;
    hi += p;
  };
  pad(x0, x1);
  pad(y0, y1);
  const double pw = W - L - R, ph = H - T - B;
  auto px = [&](double v) { return L + (tx(v) - x0) / (x1 - x0) * pw; };
  auto py = [&](double v) { return T + ph - (ty(v) - y0) / (y1 - y0) * ph; };

  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
    << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << ' ' << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
    << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" "
       "font-size=\"15\">"
    << detail::xml_escape(spec.title) << "</text>\n"
    << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw
    << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"black\"/>\n";
  // Ticks: decades on log axes, five even steps otherwise.
  auto ticks = [](double lo, double hi, bool log) {
    std::vector<double> t;
    if (log) {
      for (double d = std::ceil(lo); d <= hi; d += 1.0) t.push_back(d);
    }
    if (t.size() < 2) {
      t.clear();
      for (int i = 0; i <= 4; ++i) t.push_back(lo + (hi - lo) * i / 4.0);
    }
    return t;
  };
  for (double t : ticks(x0, x1, spec.log_x)) {
    const double v = spec.log_x ? std::pow(10.0, t) : t;
    const double X = L + (t - x0) / (x1 - x0) * pw;
    o << "<line x1=\"" << detail::svg_num(X) << "\" y1=\"" << T + ph
      << "\" x2=\"" << detail::svg_num(X) << "\" y2=\"" << T + ph + 5
      << "\" stroke=\"black\"/>\n<text x=\"" << detail::svg_num(X)
      << "\" y=\"" << T + ph + 18 << "\" text-anchor=\"middle\">"
      << detail::tick_label(v) << "</text>\n";
  }
  for (double t : ticks(y0, y1, spec.log_y)) {
    const double v = spec.log_y ? std::pow(10.0, t) : t;
    const double Y = T + ph - (t - y0) / (y1 - y0) * ph;
    o << "<line x1=\"" << L - 5 << "\" y1=\"" << detail::svg_num(Y)
      << "\" x2=\"" << L << "\" y2=\"" << detail::svg_num(Y)
      << "\" stroke=\"black\"/>\n<text x=\"" << L - 8 << "\" y=\""
      << detail::svg_num(Y + 4) << "\" text-anchor=\"end\">"
      << detail::tick_label(v) << "</text>\n";
  }
  o << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 15
    << "\" text-anchor=\"middle\">" << detail::xml_escape(spec.x_label)
    << "</text>\n<text x=\"18\" y=\"" << T + ph / 2
    << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " << T + ph / 2
    << ")\">" << detail::xml_escape(spec.y_label) << "</text>\n";

  double legend_y = T + 10;
  for (const auto& s : spec.series) {
    const std::string color = detail::xml_escape(s.color);
    if (s.line) {
      std::ostringstream pts;
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!usable(s.x[i], s.y[i])) continue;
        pts << detail::svg_num(px(s.x[i])) << ',' << detail::svg_num(py(s.y[i]))
            << ' ';
      }
      o << "<polyline fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"1.5\"" << (s.dashed ? " stroke-dasharray=\"6 4\"" : "")
        << " points=\"" << pts.str() << "\"/>\n";
    } else {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!usable(s.x[i], s.y[i])) continue;
        const double X = px(s.x[i]), Y = py(s.y[i]);
        if (i < s.yerr.size() && std::isfinite(s.yerr[i]) && s.yerr[i] > 0 &&
            !spec.log_y) {
          o << "<line x1=\"" << detail::svg_num(X) << "\" y1=\""
            << detail::svg_num(py(s.y[i] - s.yerr[i])) << "\" x2=\""
            << detail::svg_num(X) << "\" y2=\""
            << detail::svg_num(py(s.y[i] + s.yerr[i])) << "\" stroke=\""
            << color << "\"/>\n";
        }
        o << "<circle cx=\"" << detail::svg_num(X) << "\" cy=\""
          << detail::svg_num(Y) << "\" r=\"4\" fill=\"" << color << "\"/>\n";
      }
    }
    const double lx = L + pw + 12;
    if (s.line) {
      o << "<line x1=\"" << lx << "\" y1=\"" << legend_y << "\" x2=\""
        << lx + 20 << "\" y2=\"" << legend_y << "\" stroke=\"" << color
        << "\" stroke-width=\"1.5\""
        << (s.dashed ? " stroke-dasharray=\"6 4\"" : "") << "/>\n";
    } else {
      o << "<circle cx=\"" << lx + 10 << "\" cy=\"" << legend_y
        << "\" r=\"4\" fill=\"" << color << "\"/>\n";
    }
    o << "<text x=\"" << lx + 26 << "\" y=\"" << legend_y + 4 << "\">"
      << detail::xml_escape(s.label) << "</text>\n";
    legend_y += 18;
  }
  o << "</svg>\n";
  return o.str();
}

// ---------------------------------------------------------------- report

struct SweepFits {
  std::optional<RateFit> err_P;
  std::optional<RateFit> err_K;
  std::optional<RateFit> J_E_exact_linear;
  std::optional<RateFit> J_E_hat_linear;
  std::vector<std::string> notes;  // fits that could not be computed
};

/// Every fit the report shows; failures become notes rather than errors.
inline SweepFits compute_fits(const std::vector<SweepRecord>& records) {
  SweepFits f;
  auto attempt = [&](auto&& fn, const char* name) {
    try {
      return std::optional<RateFit>(fn());
    } catch (const Error& e) {
      f.notes.push_back(std::string(name) + ": " + e.what());
      return std::optional<RateFit>();
    }
  };
  f.err_P = attempt([&] { return fit_rate(records, FitField::kErrP); },
                    "err_P");
  f.err_K = attempt([&] { return fit_rate(records, FitField::kErrK); },
                    "err_K");
  f.J_E_exact_linear = attempt(
      [&] { return fit_linear(records, CostField::kJEExact); }, "JE_exact");
  f.J_E_hat_linear = attempt(
      [&] { return fit_linear(records, CostField::kJEHat); }, "JE_hat");
  return f;
}

inline nlohmann::json matrix_to_json(const Matrix& M) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json fit_to_json(const std::optional<RateFit>& f) {
  if (!f) return nullptr;
  return {{"slope", f->slope},
          {"intercept", f->intercept},
          {"r_squared", f->r_squared},
          {"points_used", f->points_used},
          {"slope_stderr", f->slope_stderr},
          {"intercept_stderr", f->intercept_stderr}};
}

inline nlohmann::json sweep_summary_json(const SweepResult& res,
                                         const SweepFits& fits,
                                         const SweepConfig& cfg,
                                         const nlohmann::json& config_echo) {
  nlohmann::json j;
  j["tool"] = kToolVersion;
  j["config"] = config_echo;
  j["mode"] = to_string(cfg.mode);
  j["master_seed"] = cfg.master_seed;
  j["P_star"] = matrix_to_json(res.P_star);
  j["K_star"] = matrix_to_json(res.K_star);
  j["J_star"] = res.J_star;
  j["cost_horizon"] = {
      {"value", res.cost_horizon},
      {"rule", std::to_string(cfg.cost_time_constants) +
                   " time constants of the slowest mean-square mode under "
                   "K_star"}};
  j["fits"] = {{"err_P_loglog", fit_to_json(fits.err_P)},
               {"err_K_loglog", fit_to_json(fits.err_K)},
               {"JE_exact_linear", fit_to_json(fits.J_E_exact_linear)},
               {"JE_hat_linear", fit_to_json(fits.J_E_hat_linear)}};
  j["fit_notes"] = fits.notes;
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : res.records) {
    nlohmann::json o = {{"h", r.h},
                        {"seed", r.seed},
                        {"n_mc", r.n_mc},
                        {"iters", r.iters},
                        {"converged", r.converged},
                        {"noise_limited", r.noise_limited},
                        {"err_P_fro", r.err_P},
                        {"err_K_fro", r.err_K},
                        {"mc_stderr_P", r.mc_stderr},
                        {"JE_hat", r.J_E_hat},
                        {"JE_hat_stderr", r.J_E_hat_stderr},
                        {"JE_exact", r.J_E_exact},
                        {"JE_exact_stderr", r.J_E_exact_stderr}};
    if (!r.ok()) o["error"] = r.error;
    recs.push_back(std::move(o));
  }
  j["records"] = std::move(recs);
  return j;
}

inline PlotSpec error_plot(const std::vector<SweepRecord>& records,
                           const SweepFits& fits) {
  PlotSpec p;
  p.title = "Learned solution error vs sampling period";
  p.x_label = "h";
  p.y_label = "Frobenius error";
  p.log_x = p.log_y = true;
  PlotSeries eP{"||P - P*||", "#1f77b4"}, eK{"||K - K*||", "#d62728"};
  for (const auto& r : records) {
    if (!r.ok()) continue;
    eP.x.push_back(r.h);
    eP.y.push_back(r.err_P);
    eK.x.push_back(r.h);
    eK.y.push_back(r.err_K);
  }
  p.series.push_back(eP);
  p.series.push_back(eK);
  auto fit_line = [&](const std::optional<RateFit>& f, const PlotSeries& s,
                      const std::string& label) {
    if (!f || s.x.empty()) return;
    PlotSeries l{label, s.color};
    l.line = l.dashed = true;
    for (double h : {*std::max_element(s.x.begin(), s.x.end()),
                     *std::min_element(s.x.begin(), s.x.end())}) {
      l.x.push_back(h);
      l.y.push_back(std::exp(f->intercept + f->slope * std::log(h)));
    }
    p.series.push_back(l);
  };
  char buf[64];
  if (fits.err_P) {
    std::snprintf(buf, sizeof buf, "slope %.3f", fits.err_P->slope);
    fit_line(fits.err_P, eP, buf);
  }
  if (fits.err_K) {
    std::snprintf(buf, sizeof buf, "slope %.3f", fits.err_K->slope);
    fit_line(fits.err_K, eK, buf);
  }
  return p;
}

inline PlotSpec cost_plot(const SweepResult& res, const SweepFits& fits) {
  PlotSpec p;
  p.title = "Expected cost vs sampling period";
  p.x_label = "h";
  p.y_label = "J_E";
  PlotSeries ex{"Tr(P X0)", "#1f77b4"}, mc{"Monte Carlo", "#ff7f0e"};
  for (const auto& r : res.records) {
    if (!r.ok()) continue;
    ex.x.push_back(r.h);
    ex.y.push_back(r.J_E_exact);
    ex.yerr.push_back(r.J_E_exact_stderr);
    if (std::isfinite(r.J_E_hat)) {
      mc.x.push_back(r.h);
      mc.y.push_back(r.J_E_hat);
      mc.yerr.push_back(r.J_E_hat_stderr);
    }
  }
  p.series.push_back(ex);
  if (!mc.x.empty()) p.series.push_back(mc);
  if (fits.J_E_exact_linear && !ex.x.empty()) {
    PlotSeries l{"linear fit", "#1f77b4"};
    l.line = true;
    const double hmax = *std::max_element(ex.x.begin(), ex.x.end());
    for (double h : {0.0, hmax}) {
      l.x.push_back(h);
      l.y.push_back(fits.J_E_exact_linear->intercept +
                    fits.J_E_exact_linear->slope * h);
    }
    p.series.push_back(l);
    PlotSeries star{"Tr(P* X0)", "#2ca02c"};
    star.line = star.dashed = true;
    star.x = {0.0, hmax};
    star.y = {res.J_star, res.J_star};
    p.series.push_back(star);
  }
  return p;
}

struct ReportPaths {
  std::string csv, json, error_svg, cost_svg;
};

inline ReportPaths report_paths(const std::string& prefix) {
  return {prefix + ".csv", prefix + ".json", prefix + "_error.svg",
          prefix + "_cost.svg"};
}

/// Writes every file to a temporary name first and renames once all of them
/// succeeded, so a failure leaves no partial outputs behind.
inline void write_files_atomically(
    const std::vector<std::pair<std::string, std::string>>& files) {
  std::vector<std::string> temps;
  auto cleanup = [&] {
    std::error_code ec;
    for (const auto& t : temps) std::filesystem::remove(t, ec);
  };
  for (const auto& [path, content] : files) {
    const std::string tmp = path + ".tmp";
    std::ofstream os(tmp, std::ios::binary);
    if (!os) {
      cleanup();
      throw ConfigError("cannot write output file '" + path + "'");
    }
    temps.push_back(tmp);
    os << content;
    os.close();
    if (!os) {
      cleanup();
      throw ConfigError("cannot write output file '" + path + "'");
    }
  }
  for (std::size_t i = 0; i < files.size(); ++i) {
    std::error_code ec;
    std::filesystem::rename(temps[i], files[i].first, ec);
    if (ec) {
      cleanup();
      throw ConfigError("cannot write output file '" + files[i].first + "'");
    }
  }
}

inline ReportPaths emit_report(const SweepResult& res, const SweepFits& fits,
                               const SweepConfig& cfg,
                               const nlohmann::json& config_echo,
                               const std::string& prefix,
                               bool timing = false) {
  if (res.records.empty()) throw ConfigError("emit_report: no records");
  const ReportPaths paths = report_paths(prefix);
  std::ostringstream csv;
  write_sweep_csv(res.records, csv, timing);
  const nlohmann::json summary =
      sweep_summary_json(res, fits, cfg, config_echo);
  write_files_atomically({{paths.csv, csv.str()},
                          {paths.json, summary.dump(2) + "\n"},
                          {paths.error_svg, render_svg(error_plot(res.records, fits))},
                          {paths.cost_svg, render_svg(cost_plot(res, fits))}});
  return paths;
}

}  // namespace stochadp
