#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmpamp/detail/format.hpp"
#include "cmpamp/harness/experiment.hpp"
#include "cmpamp/se.hpp"

namespace cmpamp::harness {

using Cell = std::variant<std::int64_t, double, std::string>;

/// Column-ordered result table; every emitted artifact is one of these.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  bool operator==(const Table& other) const {
    if (columns != other.columns || rows.size() != other.rows.size()) return false;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != other.rows[i].size()) return false;
      for (std::size_t j = 0; j < rows[i].size(); ++j) {
        const auto& a = rows[i][j];
        const auto& b = other.rows[i][j];
        if (a.index() != b.index()) return false;
        if (auto* x = std::get_if<double>(&a)) {
          const double y = std::get<double>(b);
          if (!(*x == y || (std::isnan(*x) && std::isnan(y)))) return false;
        } else if (a != b) {
          return false;
        }
      }
    }
    return true;
  }
};

enum class Format { csv, json };

inline Format format_from_string(const std::string& name) {
  if (name == "csv") return Format::csv;
  if (name == "json") return Format::json;
  throw ConfigError("format must be csv or json, got '" + name + "'");
}

namespace detail {

inline std::int64_t ix(std::size_t v) { return static_cast<std::int64_t>(v); }

inline std::string csv_cell(const Cell& c) {
  if (auto* i = std::get_if<std::int64_t>(&c)) return std::to_string(*i);
  if (auto* d = std::get_if<double>(&c)) return cmpamp::detail::format_double(*d);
  const auto& s = std::get<std::string>(c);
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

// Non-finite doubles become strings so the JSON stays valid and roundtrips.
inline nlohmann::ordered_json json_cell(const Cell& c) {
  if (auto* i = std::get_if<std::int64_t>(&c)) return *i;
  if (auto* d = std::get_if<double>(&c)) {
    if (std::isfinite(*d)) return *d;
    return cmpamp::detail::format_double(*d);
  }
  return std::get<std::string>(c);
}

inline Cell cell_from_json(const nlohmann::ordered_json& v) {
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number()) return v.get<double>();
  const auto s = v.get<std::string>();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  return s;
}

}  // namespace detail

inline void write_csv(std::ostream& out, const Table& t) {
  for (std::size_t j = 0; j < t.columns.size(); ++j) out << (j ? "," : "") << t.columns[j];
  out << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << detail::csv_cell(row[j]);
    out << '\n';
  }
}

/// JSON: an array of row objects with keys in column order.
inline nlohmann::ordered_json to_json(const Table& t) {
  auto rows = nlohmann::ordered_json::array();
  for (const auto& row : t.rows) {
    nlohmann::ordered_json obj = nlohmann::ordered_json::object();
    for (std::size_t j = 0; j < row.size(); ++j) obj[t.columns[j]] = detail::json_cell(row[j]);
    rows.push_back(std::move(obj));
  }
  return nlohmann::ordered_json{{"columns", t.columns}, {"rows", rows}};
}

inline Table table_from_json(const nlohmann::ordered_json& j) {
  Table t;
  t.columns = j.at("columns").get<std::vector<std::string>>();
  for (const auto& obj : j.at("rows")) {
    std::vector<Cell> row;
    for (const auto& col : t.columns) row.push_back(detail::cell_from_json(obj.at(col)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline void write_json(std::ostream& out, const nlohmann::ordered_json& j) { out << j.dump(2) << '\n'; }

inline void write_table(std::ostream& out, const Table& t, Format format) {
  if (format == Format::csv) write_csv(out, t);
  else write_json(out, to_json(t));
}

/// Writes to `path`, or stdout when empty. I/O failures throw.
template <typename Writer>
void write_output(const std::string& path, Writer&& writer) {
  if (path.empty()) {
    writer(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  writer(out);
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void emit_results(const Table& t, Format format, const std::string& path) {
  write_output(path, [&](std::ostream& out) { write_table(out, t, format); });
}

// ------------------------------------------------------------- conversions

/// Trajectory table: s,k,p,mse_p,tau_hat_p,tau_se_p,<loss...> (p 1-based),
/// or t,mse,tau_hat,tau_se,<loss...> for centralized AMP (the same layout
/// write_cmp_csv / write_amp_csv produce). Several trials get a leading
/// `trial` column.
inline Table trajectory_table(const ExperimentResult& res, Algorithm algorithm) {
  Table t;
  const bool many = res.trials.size() > 1;
  if (many) t.columns.push_back("trial");
  if (algorithm == Algorithm::amp) {
    for (const char* c : {"t", "mse", "tau_hat", "tau_se"}) t.columns.emplace_back(c);
  } else {
    for (const char* c : {"s", "k", "p", "mse_p", "tau_hat_p", "tau_se_p"}) t.columns.emplace_back(c);
  }
  for (const auto& name : res.loss_names) t.columns.push_back(name);
  for (const auto& trial : res.trials) {
    for (const auto& r : trial.rows) {
      std::vector<Cell> row;
      if (many) row.emplace_back(detail::ix(trial.index));
      if (algorithm == Algorithm::amp) {
        row.emplace_back(detail::ix(r.s));
      } else {
        row.emplace_back(detail::ix(r.s));
        row.emplace_back(detail::ix(r.k));
        row.emplace_back(detail::ix(r.p + 1));
      }
      row.emplace_back(r.mse);
      row.emplace_back(r.tau_hat);
      row.emplace_back(r.tau_se);
      for (double v : r.losses) row.emplace_back(v);
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

inline Table summary_table(const ExperimentResult& res) {
  Table t;
  t.columns = {"s", "k", "p", "trials", "mse_mean", "mse_std"};
  for (const auto& name : res.loss_names) {
    t.columns.push_back(name + "_mean");
    t.columns.push_back(name + "_std");
  }
  for (const auto& r : res.summary) {
    std::vector<Cell> row{detail::ix(r.s), detail::ix(r.k), detail::ix(r.p + 1), detail::ix(r.count), r.mse_mean,
                          r.mse_std};
    for (std::size_t l = 0; l < r.loss_mean.size(); ++l) {
      row.emplace_back(r.loss_mean[l]);
      row.emplace_back(r.loss_std[l]);
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline Table compare_table(const CompareReport& rep) {
  Table t;
  t.columns = {"s", "k", "p", "loss", "trials", "empirical_mean", "std_error", "se_prediction", "abs_gap",
               "rel_gap", "tau_sq"};
  for (const auto& r : rep.rows)
    t.rows.push_back({detail::ix(r.s), detail::ix(r.k), detail::ix(r.p + 1), r.loss, detail::ix(r.trials),
                      r.empirical_mean, r.std_error, r.se_prediction, r.abs_gap, r.rel_gap, r.tau_sq});
  return t;
}

inline Table concentration_table(const ConcentrationReport& rep) {
  Table t;
  t.columns = {"n", "trials", "diverged_trials", "samples", "loss", "epsilon", "empirical_deviation_rate",
               "mean_abs_deviation", "max_abs_deviation"};
  for (const auto& r : rep.records)
    t.rows.push_back({detail::ix(r.n), detail::ix(r.trials), detail::ix(r.diverged_trials), detail::ix(r.samples),
                      rep.loss, rep.epsilon, r.empirical_deviation_rate, r.mean_abs_deviation,
                      r.max_abs_deviation});
  return t;
}

inline Table damping_table(const std::vector<DampingRecord>& recs) {
  Table t;
  t.columns = {"rho", "diverged", "divergence_step", "final_mse", "plateau_spread", "plateau"};
  for (const auto& r : recs)
    t.rows.push_back({r.rho, detail::ix(r.diverged), detail::ix(r.divergence_step), r.final_mse, r.plateau_spread,
                      detail::ix(r.plateau)});
  return t;
}

/// SE trajectory as CSV: s,k,p,sigma_sq,tau_sq,next_sigma_sq,predicted_mse.
inline Table se_table(const se::SeTrajectory& traj) {
  Table t;
  t.columns = {"s", "k", "p", "sigma_sq", "tau_sq", "next_sigma_sq", "predicted_mse"};
  for (const auto& e : traj.entries)
    t.rows.push_back({detail::ix(e.s), detail::ix(e.k), detail::ix(e.p + 1), e.sigma_sq, e.tau_sq, e.next_sigma_sq,
                      traj.predicted_mse(e)});
  return t;
}

/// SE trajectory as JSON: {mode, params, entries: [{s,k,p,sigma_sq,tau_sq}]}.
inline nlohmann::ordered_json se_json(const se::SeTrajectory& traj, const se::SeParams& params) {
  nlohmann::ordered_json p;
  p["n"] = params.n;
  p["sizes"] = params.sizes;
  p["sigma_w_sq"] = params.sigma_w_sq;
  p["prior"] = {{"kind", std::string(to_string(params.prior.kind))},
                {"epsilon", params.prior.epsilon},
                {"nonzero_variance", params.prior.nonzero_variance}};
  const auto& eta = params.denoiser.stages().back();
  p["denoiser"] = {{"kind", std::string(to_string(eta.kind))}, {"alpha", eta.alpha}};
  p["deltas"] = traj.deltas;
  auto entries = nlohmann::ordered_json::array();
  for (const auto& e : traj.entries)
    entries.push_back({{"s", e.s}, {"k", e.k}, {"p", e.p + 1}, {"sigma_sq", e.sigma_sq}, {"tau_sq", e.tau_sq}});
  return {{"mode", std::string(to_string(traj.mode))}, {"params", p}, {"entries", entries}};
}

}  // namespace cmpamp::harness
