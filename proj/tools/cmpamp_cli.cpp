// cmpamp: command-line front end for the solvers, state evolution and the
// Monte-Carlo studies. Exit codes: 0 ok, 1 config error, 2 divergence,
// 3 other failure (I/O, transport, failed oracle check).

#include <algorithm>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cmpamp/container.hpp"
#include "cmpamp/harness/config.hpp"
#include "cmpamp/harness/emit.hpp"
#include "cmpamp/harness/experiment.hpp"
#include "cmpamp/oracle.hpp"
#include "cmpamp/runtime/distributed.hpp"

using namespace cmpamp;
using namespace cmpamp::harness;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitDivergence = 2;
constexpr int kExitFailure = 3;

std::string flag_for(const std::string& key) {
  std::string out = key;
  std::replace(out.begin(), out.end(), '_', '-');
  return "--" + out;
}

// Options shared by every subcommand: --config, --set, plus one flag per
// config key. Flags win over --set, which wins over the file.
struct KeyFlags {
  std::string config_path;
  std::vector<std::string> assignments;
  std::map<std::string, std::string> flags;
  std::map<std::string, std::string> aliases;  // flag name -> key, per subcommand

  void attach(CLI::App* app, const std::map<std::string, std::string>& alias_keys = {}) {
    app->add_option("-c,--config", config_path, "config file (key = value lines)");
    app->add_option("--set", assignments, "key=value override, repeatable");
    for (const auto& [flag, key] : alias_keys) {
      aliases[flag] = key;
      app->add_option(flag, flags[flag], "alias for " + key + " (" + find_key(key)->doc + ")");
    }
    for (const auto& spec : config_schema()) {
      const auto flag = flag_for(spec.key);
      if (alias_keys.count(flag)) continue;  // the alias owns this name here
      app->add_option(flag, flags[flag],
                      spec.doc + " [" + std::string(to_string(spec.type)) +
                          (spec.fallback.empty() ? "" : ", default " + spec.fallback) + "]");
    }
  }

  Config build(CLI::App* app) const {
    Config cfg = config_path.empty() ? Config{} : Config::load(config_path);
    for (const auto& a : assignments) cfg.set_assignment(a);
    for (const auto& [flag, value] : flags) {
      if (app->count(flag) == 0) continue;
      auto alias = aliases.find(flag);
      std::string key = flag.substr(2);
      std::replace(key.begin(), key.end(), '-', '_');  // keys never contain dashes
      cfg.set(alias != aliases.end() ? alias->second : key, value);
    }
    return cfg;
  }
};

Format output_format(const Config& cfg) { return format_from_string(cfg.get_string("format")); }

void report_divergences(const ExperimentResult& res) {
  for (const auto& t : res.trials)
    if (t.divergence)
      std::cerr << "trial " << t.index << ": diverged at s=" << t.divergence->s << " k=" << t.divergence->k
                << " p=" << (t.divergence->p + 1) << " (" << t.divergence->reason << ")\n";
}

int cmd_solve(const Config& cfg) {
  const auto spec = spec_from_config(cfg);
  const auto format = output_format(cfg);
  const auto out = cfg.get_string("out");
  if (spec.mode == ExecutionMode::distributed && !spec.workers.empty()) {
    if (spec.trials != 1) throw ConfigError("remote workers serve a single trial");
    // The center needs only the SE inputs; the workers hold the instance.
    auto res = runtime::run_remote_center(se_params_for(spec), spec.schedule, spec.losses, spec.workers,
                                          spec.timeout);
    ExperimentResult wrapped;
    wrapped.loss_names = res.loss_names;
    TrialResult tr;
    for (auto& r : res.records) tr.rows.push_back({r.s, r.k, r.p, r.mse, r.tau_hat, r.tau_se, r.losses});
    tr.divergence = res.divergence;
    wrapped.trials.push_back(std::move(tr));
    emit_results(trajectory_table(wrapped, spec.algorithm), format, out);
    report_divergences(wrapped);
    return wrapped.diverged_trials() ? kExitDivergence : kExitOk;
  }
  const auto res = run_experiment(spec);
  emit_results(trajectory_table(res, spec.algorithm), format, out);
  report_divergences(res);
  return res.diverged_trials() ? kExitDivergence : kExitOk;
}

int cmd_se(const Config& cfg) {
  auto spec = spec_from_config(cfg);
  const auto mode = se::se_mode_from_string(cfg.get_string("se_mode"));
  spec.algorithm = mode == se::SeMode::amp ? Algorithm::amp : Algorithm::cmp;
  const auto params = se_params_for(spec);
  const auto format = output_format(cfg);
  const auto out = cfg.get_string("out");
  if (cfg.get_bool("fixed_point")) {
    if (!spec.schedule.is_constant()) throw ConfigError("fixed point sweeps need a constant k_hats");
    const auto fp = se::fixed_point(mode, params, spec.schedule.k_hats.front(), cfg.get_real("fixed_point_tol"));
    Table t{{"mode", "tau_sq", "sweeps", "residual", "processor_spread"},
            {{std::string(to_string(mode)), fp.tau_sq, static_cast<std::int64_t>(fp.sweeps), fp.residual,
              fp.processor_spread}}};
    emit_results(t, format, out);
    return kExitOk;
  }
  const auto traj = spec_se(spec);
  if (format == Format::json) write_output(out, [&](std::ostream& o) { write_json(o, se_json(traj, params)); });
  else emit_results(se_table(traj), format, out);
  return kExitOk;
}

int cmd_compare(const Config& cfg) {
  const auto spec = spec_from_config(cfg);
  const auto res = run_experiment(spec);
  const auto rep = compare_rows(res);
  emit_results(compare_table(rep), output_format(cfg), cfg.get_string("out"));
  report_divergences(res);
  std::cerr << "max relative mse gap (tau^2 > " << cfg.get_real("min_tau_sq")
            << "): " << rep.max_rel_gap(cfg.get_real("min_tau_sq")) << " over " << spec.trials << " trials\n";
  return kExitOk;
}

int cmd_concentration(const Config& cfg) {
  const auto spec = spec_from_config(cfg);
  std::vector<std::size_t> grid;
  for (auto v : cfg.get_int_list("n_grid")) {
    if (v <= 0) throw ConfigError("n_grid entries must be positive");
    grid.push_back(static_cast<std::size_t>(v));
  }
  const auto rep = concentration_study(spec, grid, cfg.get_real("deviation_epsilon"), cfg.get_string("study_loss"));
  emit_results(concentration_table(rep), output_format(cfg), cfg.get_string("out"));
  return kExitOk;
}

int cmd_oracle(const Config& cfg) {
  const auto spec = spec_from_config(cfg);
  const auto inst = trial_instance(spec, 0);
  const auto t_max = cfg.get_count("t_max");
  const auto rep = oracle::check_equivalence(inst, spec.schedule, spec.denoiser, t_max);
  const double tol = cfg.get_real("oracle_tol");
  Table t{{"steps", "h", "q", "b", "m", "max", "tolerance", "pass"},
          {{static_cast<std::int64_t>(rep.steps), rep.h, rep.q, rep.b, rep.m, rep.max(), tol,
            static_cast<std::int64_t>(rep.max() <= tol)}}};
  emit_results(t, output_format(cfg), cfg.get_string("out"));
  return rep.max() <= tol ? kExitOk : kExitFailure;
}

int cmd_damping(const Config& cfg) {
  const auto spec = spec_from_config(cfg);
  const auto recs = damping_sweep(spec, cfg.get_real_list("rhos"), cfg.get_count("plateau_window"),
                                  cfg.get_real("plateau_tol"));
  emit_results(damping_table(recs), output_format(cfg), cfg.get_string("out"));
  return kExitOk;
}

int cmd_generate(const Config& cfg) {
  const auto spec = spec_from_config(cfg);
  const auto out = cfg.get_string("out");
  if (out.empty()) throw ConfigError("generate needs --out <path>");
  write_instance(out, generate_instance(spec.instance, derive_seed(spec.seed, 0)));
  std::cerr << "wrote " << out << " (n=" << spec.instance.n << ", P=" << spec.instance.sizes.size() << ")\n";
  return kExitOk;
}

int cmd_worker(const Config& cfg) {
  const auto spec = spec_from_config(cfg);
  if (spec.instance_path.empty()) throw ConfigError("worker needs --instance <container>");
  if (!cfg.explicitly_set("processor")) throw ConfigError("worker needs --processor <1..P>");
  if (cfg.get_string("listen").empty()) throw ConfigError("worker needs --listen host:port");
  const auto p = cfg.get_int("processor");
  if (p < 1 || static_cast<std::size_t>(p) > spec.instance.sizes.size())
    throw ConfigError("processor must lie in 1.." + std::to_string(spec.instance.sizes.size()));
  const auto listen = harness::detail::as_config_error("listen", [&] { return runtime::Endpoint::parse(cfg.get_string("listen")); });
  const auto inst = trial_instance(spec, 0);
  runtime::run_remote_worker(inst, static_cast<std::size_t>(p - 1), spec.schedule, spec.denoiser, cmp_options(spec),
                             listen, spec.timeout);
  return kExitOk;
}

int cmd_keys() {
  for (const auto& k : config_schema())
    std::cout << k.key << '\t' << to_string(k.type) << '\t' << (k.fallback.empty() ? "-" : k.fallback) << '\t'
              << k.doc << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Column-wise multiprocessor AMP: solvers, state evolution and Monte-Carlo studies"};
  app.require_subcommand(1);

  struct Command {
    const char* name;
    const char* help;
    std::map<std::string, std::string> aliases;
    std::function<int(const Config&)> run;
  };
  const std::vector<Command> commands{
      {"solve", "run the solver and write its trajectory", {{"--mode", "execution_mode"}}, cmd_solve},
      {"se", "state-evolution trajectory or fixed point", {{"--mode", "se_mode"}}, cmd_se},
      {"concentration", "deviation of per-trial losses from SE over an n grid",
       {{"--epsilon", "deviation_epsilon"}}, cmd_concentration},
      {"compare", "trial-mean losses against SE at every index", {}, cmd_compare},
      {"oracle", "algorithm vs general recursion equivalence check", {}, cmd_oracle},
      {"damping", "damping sweep on one instance", {}, cmd_damping},
      {"generate", "write an instance container", {}, cmd_generate},
      {"worker", "serve one processor block to a remote fusion center", {}, cmd_worker},
  };
  std::vector<KeyFlags> flags(commands.size());
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    auto* sub = app.add_subcommand(commands[i].name, commands[i].help);
    flags[i].attach(sub, commands[i].aliases);
    subs.push_back(sub);
  }
  auto* keys = app.add_subcommand("keys", "list every config key with its type and default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*keys) return cmd_keys();
    for (std::size_t i = 0; i < commands.size(); ++i)
      if (*subs[i]) return commands[i].run(flags[i].build(subs[i]));
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const ContainerError& e) {
    std::cerr << "instance error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}
