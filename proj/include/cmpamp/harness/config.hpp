#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cmpamp/error.hpp"

namespace cmpamp::harness {

enum class KeyType { integer, real, string, boolean, int_list, real_list, string_list };

inline std::string_view to_string(KeyType t) {
  switch (t) {
    case KeyType::integer: return "int";
    case KeyType::real: return "float";
    case KeyType::string: return "string";
    case KeyType::boolean: return "bool";
    case KeyType::int_list: return "int list";
    case KeyType::real_list: return "float list";
    case KeyType::string_list: return "string list";
  }
  return "?";
}

struct KeySpec {
  std::string key;
  KeyType type;
  std::string fallback;  // default, as it would be written in a file ("" = unset)
  std::string doc;
};

/// Every recognised key. Lists are comma separated.
inline const std::vector<KeySpec>& config_schema() {
  static const std::vector<KeySpec> schema{
      // instance
      {"n", KeyType::integer, "500", "rows of A (measurements)"},
      {"N", KeyType::integer, "", "total columns; split evenly over P when sizes is unset (default n / delta)"},
      {"delta", KeyType::real, "0.5", "n / N, used only when neither N nor sizes is set"},
      {"P", KeyType::integer, "2", "processor count, used when sizes is unset"},
      {"sizes", KeyType::int_list, "", "column block sizes N_1..N_P (overrides N and P)"},
      {"prior", KeyType::string, "bernoulli_gaussian", "signal prior: bernoulli_gaussian | rademacher_sparse"},
      {"epsilon", KeyType::real, "0.1", "prior sparsity (probability of a nonzero)"},
      {"nonzero_variance", KeyType::real, "1.0", "variance (bernoulli_gaussian) or squared amplitude of nonzeros"},
      {"sigma_w_sq", KeyType::real, "0.01", "noise variance"},
      {"matrix", KeyType::string, "iid_gaussian", "iid_gaussian | correlated_blocks"},
      {"column_correlation", KeyType::real, "0.0", "within-block column correlation for correlated_blocks"},
      {"instance", KeyType::string, "", "instance container to load instead of generating (single trial)"},
      // algorithm
      {"algorithm", KeyType::string, "cmp", "cmp (column-wise multiprocessor) | amp (centralized)"},
      {"kind", KeyType::string, "bayes_bg", "denoiser: soft_threshold | bayes_bg | zero"},
      {"alpha", KeyType::real, "1.1403", "soft threshold multiplier, theta = alpha * tau"},
      {"s_hat", KeyType::integer, "10", "outer (fusion) rounds"},
      {"k_hats", KeyType::int_list, "2", "inner iterations per round: one value for all rounds, or s_hat values"},
      {"amp_iterations", KeyType::integer, "", "iterations for algorithm=amp (default: total inner steps)"},
      {"rho", KeyType::real, "1.0", "damping factor in (0, 1]; 1 = undamped"},
      {"damp", KeyType::string, "both", "what damping blends: x | r | both"},
      {"tau_mode", KeyType::string, "estimated", "estimated (||z||/sqrt(n)) | state_evolution"},
      {"execution_mode", KeyType::string, "sequential", "sequential | parallel (in-process messages) | distributed (TCP)"},
      {"workers", KeyType::string_list, "", "host:port of each remote worker (distributed mode); empty = local"},
      {"timeout_ms", KeyType::integer, "60000", "per-message transport timeout"},
      // experiment
      {"trials", KeyType::integer, "1", "Monte-Carlo repetitions"},
      {"seed", KeyType::integer, "0", "base seed; trial i uses an independent derived stream"},
      {"losses", KeyType::string_list, "", "PL(2) losses beyond mse: squared_error, absolute_error, estimate_power"},
      {"threads", KeyType::integer, "0", "worker threads for trials (0 = hardware concurrency)"},
      // state evolution
      {"expectation", KeyType::string, "adaptive", "SE expectation engine: adaptive | gauss_hermite | monte_carlo"},
      {"hermite_nodes", KeyType::integer, "61", "nodes for gauss_hermite"},
      {"mc_samples", KeyType::integer, "1000000", "samples for monte_carlo"},
      {"se_mode", KeyType::string, "cmp", "se subcommand: amp | cmp"},
      {"fixed_point", KeyType::boolean, "false", "se subcommand: report the fixed point instead of a trajectory"},
      {"fixed_point_tol", KeyType::real, "1e-13", "fixed-point stopping tolerance on tau^2"},
      // studies
      {"n_grid", KeyType::int_list, "200,500,1000,2000", "concentration: row counts (block ratios kept fixed)"},
      {"deviation_epsilon", KeyType::real, "0.05", "concentration: deviation threshold (--epsilon there)"},
      {"study_loss", KeyType::string, "mse", "concentration: loss whose deviation is measured"},
      {"min_tau_sq", KeyType::real, "0.001", "compare: relative gaps reported only where tau^2 exceeds this"},
      {"rhos", KeyType::real_list, "1.0,0.7,0.5,0.3", "damping sweep values"},
      {"plateau_window", KeyType::integer, "10", "damping sweep: trailing rounds checked for a plateau"},
      {"plateau_tol", KeyType::real, "0.1", "damping sweep: max relative MSE spread over the window"},
      {"t_max", KeyType::integer, "8", "oracle: recursion steps compared"},
      {"oracle_tol", KeyType::real, "1e-10", "oracle: pass threshold on the largest deviation"},
      // worker process
      {"processor", KeyType::integer, "", "worker: which block this process owns (1-based)"},
      {"listen", KeyType::string, "", "worker: host:port to accept the fusion center on"},
      // output
      {"format", KeyType::string, "csv", "csv | json"},
      {"out", KeyType::string, "", "output path (default stdout)"},
  };
  return schema;
}

inline const KeySpec* find_key(std::string_view key) {
  const auto& schema = config_schema();
  auto it = std::find_if(schema.begin(), schema.end(), [&](const KeySpec& k) { return k.key == key; });
  return it == schema.end() ? nullptr : &*it;
}

namespace detail {

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    auto comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::int64_t parse_int(const std::string& key, const std::string& text) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
    throw ConfigError(key + ": expected an integer, got '" + text + "'");
  return v;
}

inline double parse_real(const std::string& key, const std::string& text) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

// Parses once to reject malformed values early.
inline void check_value(const KeySpec& spec, const std::string& value) {
  switch (spec.type) {
    case KeyType::integer: parse_int(spec.key, value); break;
    case KeyType::real: parse_real(spec.key, value); break;
    case KeyType::boolean: parse_bool(spec.key, value); break;
    case KeyType::int_list:
      for (const auto& item : split_list(value)) parse_int(spec.key, item);
      break;
    case KeyType::real_list:
      for (const auto& item : split_list(value)) parse_real(spec.key, item);
      break;
    case KeyType::string:
    case KeyType::string_list: break;
  }
}

}  // namespace detail

/// Flat, typed key = value configuration. `#` starts a comment.
class Config {
 public:
  static Config parse(std::istream& in, const std::string& origin = "<config>") {
    Config cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      if (detail::trim(line).empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      try {
        cfg.set(detail::trim(std::string_view(line).substr(0, eq)), detail::trim(std::string_view(line).substr(eq + 1)));
      } catch (const ConfigError& e) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    return cfg;
  }

  static Config parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse(in, path);
  }

  void set(const std::string& key, const std::string& value) {
    const KeySpec* spec = find_key(key);
    if (!spec) throw ConfigError("unknown config key '" + key + "'");
    detail::check_value(*spec, value);
    values_[key] = value;
  }

  /// "key=value" as given to --set.
  void set_assignment(std::string_view text) {
    auto eq = text.find('=');
    if (eq == std::string_view::npos) throw ConfigError("expected key=value, got '" + std::string(text) + "'");
    set(detail::trim(text.substr(0, eq)), detail::trim(text.substr(eq + 1)));
  }

  bool has(const std::string& key) const {
    return values_.count(key) > 0 || !spec(key).fallback.empty();
  }
  bool explicitly_set(const std::string& key) const { return values_.count(key) > 0; }

  std::string raw(const std::string& key) const {
    auto it = values_.find(key);
    return it != values_.end() ? it->second : spec(key).fallback;
  }

  std::int64_t get_int(const std::string& key) const { return detail::parse_int(key, need(key, KeyType::integer)); }
  std::size_t get_count(const std::string& key) const {
    auto v = get_int(key);
    if (v < 0) throw ConfigError(key + " must be non-negative");
    return static_cast<std::size_t>(v);
  }
  double get_real(const std::string& key) const { return detail::parse_real(key, need(key, KeyType::real)); }
  bool get_bool(const std::string& key) const { return detail::parse_bool(key, need(key, KeyType::boolean)); }
  std::string get_string(const std::string& key) const { return need(key, KeyType::string); }

  std::vector<std::int64_t> get_int_list(const std::string& key) const {
    std::vector<std::int64_t> out;
    for (const auto& item : detail::split_list(need(key, KeyType::int_list))) out.push_back(detail::parse_int(key, item));
    return out;
  }
  std::vector<double> get_real_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : detail::split_list(need(key, KeyType::real_list))) out.push_back(detail::parse_real(key, item));
    return out;
  }
  std::vector<std::string> get_string_list(const std::string& key) const {
    return detail::split_list(need(key, KeyType::string_list));
  }

  const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  static const KeySpec& spec(const std::string& key) {
    const KeySpec* s = find_key(key);
    if (!s) throw ConfigError("unknown config key '" + key + "'");
    return *s;
  }

  std::string need(const std::string& key, KeyType type) const {
    const KeySpec& s = spec(key);
    if (s.type != type) throw ConfigError(key + " is a " + std::string(to_string(s.type)) + " key");
    return raw(key);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace cmpamp::harness
