// Command-line front end. Talks to the simulator only through shelab.h.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "shelab/shelab.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct CString {
  char* p = nullptr;
  ~CString() { shelab_string_free(p); }
  std::string str() const { return p ? std::string(p) : std::string(); }
};

struct ConfigDeleter {
  void operator()(shelab_config* c) const { shelab_config_free(c); }
};
using ConfigPtr = std::unique_ptr<shelab_config, ConfigDeleter>;

struct EnsembleDeleter {
  void operator()(shelab_ensemble* e) const { shelab_ensemble_free(e); }
};
using EnsemblePtr = std::unique_ptr<shelab_ensemble, EnsembleDeleter>;

int exit_code(shelab_status s) {
  return s == SHELAB_ERR_CONFIG || s == SHELAB_ERR_INVALID_ARGUMENT || s == SHELAB_ERR_IO ? kExitConfig
                                                                                          : kExitRuntime;
}

struct Failure {
  int code;
};

void check(shelab_status s, const char* what) {
  if (s == SHELAB_OK) return;
  std::cerr << "shelab " << what << ": " << shelab_last_error() << '\n';
  throw Failure{exit_code(s)};
}

/// Config file plus per-key overrides, shared by every subcommand that runs.
struct ConfigOptions {
  std::string path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", path, "key = value config file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override as key=value (repeatable)");
    for (std::size_t i = 0; i < shelab_config_key_count(); ++i) {
      const std::string key = shelab_config_key_name(i);
      const std::string help =
          std::string(shelab_config_key_help(i)) + " [default: " + shelab_config_key_default(i) + "]";
      app->add_option("--" + key, flags[key], help)->group("Config keys");
    }
  }

  ConfigPtr load(CLI::App* app) const {
    shelab_config* raw = nullptr;
    check(path.empty() ? shelab_config_default(&raw) : shelab_config_load(path.c_str(), &raw), "config");
    ConfigPtr cfg(raw);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) {
        std::cerr << "shelab config: --set expects key=value, got '" << s << "'\n";
        throw Failure{kExitConfig};
      }
      check(shelab_config_set(cfg.get(), s.substr(0, eq).c_str(), s.substr(eq + 1).c_str()), "config");
    }
    for (const auto& [key, value] : flags)
      if (app->count("--" + key) > 0) check(shelab_config_set(cfg.get(), key.c_str(), value.c_str()), "config");
    return cfg;
  }
};

std::string config_value(const shelab_config* cfg, const char* key) {
  CString v;
  check(shelab_config_get(cfg, key, &v.p), "config");
  return v.str();
}

std::string output_dir(const shelab_config* cfg) { return config_value(cfg, "run.output"); }

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    std::cerr << "shelab: cannot write " << path << '\n';
    throw Failure{kExitConfig};
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic heat equation simulator with dyadic blow-up diagnostics"};
  app.require_subcommand(1);

  ConfigOptions sim_opts, sweep_opts, verify_opts, probe_opts;

  auto* simulate = app.add_subcommand("simulate", "run an ensemble and write rows.csv, ensemble.json, metrics.json");
  sim_opts.attach(simulate);
  std::uint64_t trajectory_seed = 0;
  simulate->add_option("--trajectory", trajectory_seed, "print one trajectory CSV for this seed instead");

  auto* sweep = app.add_subcommand("sweep-gamma", "exit fractions across a gamma grid");
  sweep_opts.attach(sweep);
  std::vector<double> gammas{1.3, 1.5, 1.7, 2.0};
  std::vector<int> levels{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  sweep->add_option("--gammas", gammas, "gamma grid")->delimiter(',')->capture_default_str();
  sweep->add_option("--levels", levels, "threshold levels m (threshold 2^m)")->delimiter(',')->capture_default_str();

  auto* verify = app.add_subcommand("verify-assumptions", "fit the heat-kernel and noise-decay exponents");
  verify_opts.attach(verify);

  auto* probe = app.add_subcommand("probe-convolution", "moment probe of the stochastic convolution with phi = 1");
  probe_opts.attach(probe);
  shelab_probe_options popts;
  shelab_probe_options_default(&popts);
  std::vector<double> T_grid{1e-3, 2.5e-3, 6.3e-3, 1.6e-2, 4e-2, 1e-1};
  probe->add_option("--p", popts.p, "moment order")->capture_default_str();
  probe->add_option("--T-grid", T_grid, "horizons")->delimiter(',')->capture_default_str();
  probe->add_option("--probe-paths", popts.paths, "paths")->capture_default_str();
  probe->add_option("--batches", popts.batches, "median-of-means batches")->capture_default_str();
  probe->add_option("--probe-dt", popts.dt, "time step")->capture_default_str();
  probe->add_option("--probe-seed", popts.seed, "seed")->capture_default_str();
  probe->add_option("--probe-workers", popts.workers, "workers (0: hardware concurrency)");

  auto* report = app.add_subcommand("report", "reload an output directory and check aggregates against rows");
  std::string report_dir;
  report->add_option("dir", report_dir, "output directory")->required()->check(CLI::ExistingDirectory);

  auto* keys = app.add_subcommand("keys", "list config keys with defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*keys) {
      for (std::size_t i = 0; i < shelab_config_key_count(); ++i)
        std::cout << shelab_config_key_name(i) << " = " << shelab_config_key_default(i) << "  # "
                  << shelab_config_key_help(i) << '\n';
      return kExitOk;
    }

    if (*simulate) {
      const auto cfg = sim_opts.load(simulate);
      if (simulate->count("--trajectory") > 0) {
        CString csv;
        check(shelab_trajectory_csv(cfg.get(), trajectory_seed, &csv.p), "simulate");
        std::cout << csv.str();
        return kExitOk;
      }
      shelab_ensemble* raw = nullptr;
      check(shelab_ensemble_run(cfg.get(), &raw), "simulate");
      EnsemblePtr ens(raw);
      check(shelab_ensemble_write(ens.get()), "simulate");
      const std::size_t paths = shelab_ensemble_paths(ens.get());
      const std::size_t failures = shelab_ensemble_failures(ens.get());
      CString hash, regime;
      check(shelab_config_hash(cfg.get(), &hash.p), "simulate");
      check(shelab_config_regime(cfg.get(), &regime.p), "simulate");
      std::cout << "paths " << paths << ", failures " << failures << ", config " << hash.str() << " ("
                << regime.str() << "), output " << output_dir(cfg.get()) << '\n';
      const double tolerated = std::stod(config_value(cfg.get(), "run.max_failure_fraction"));
      if (paths > 0 && static_cast<double>(failures) > tolerated * static_cast<double>(paths)) {
        std::cerr << "shelab simulate: failure fraction " << static_cast<double>(failures) / paths
                  << " exceeds run.max_failure_fraction " << tolerated << '\n';
        return kExitRuntime;
      }
      return kExitOk;
    }

    if (*sweep) {
      const auto cfg = sweep_opts.load(sweep);
      CString js, csv;
      check(shelab_sweep_gamma(cfg.get(), gammas.data(), gammas.size(), levels.data(), levels.size(), &js.p,
                               &csv.p),
            "sweep-gamma");
      const std::filesystem::path dir(output_dir(cfg.get()));
      write_file(dir / "sweep.json", js.str());
      write_file(dir / "sweep.csv", csv.str());
      std::cout << csv.str();
      return kExitOk;
    }

    if (*verify) {
      const auto cfg = verify_opts.load(verify);
      CString js;
      int all_pass = 0;
      check(shelab_verify_assumptions(cfg.get(), &js.p, &all_pass), "verify-assumptions");
      write_file(std::filesystem::path(output_dir(cfg.get())) / "assumptions.json", js.str());
      std::cout << js.str();
      return kExitOk;
    }

    if (*probe) {
      const auto cfg = probe_opts.load(probe);
      popts.T_grid = T_grid.data();
      popts.T_count = T_grid.size();
      CString js;
      int pass = 0;
      check(shelab_probe_convolution(cfg.get(), &popts, &js.p, &pass), "probe-convolution");
      write_file(std::filesystem::path(output_dir(cfg.get())) / "probe.json", js.str());
      std::cout << js.str();
      return kExitOk;
    }

    if (*report) {
      CString js;
      int consistent = 0;
      check(shelab_report(report_dir.c_str(), &js.p, &consistent), "report");
      std::cout << js.str();
      if (!consistent) {
        std::cerr << "shelab report: aggregates do not match the rows\n";
        return kExitRuntime;
      }
      return kExitOk;
    }
  } catch (const Failure& f) {
    return f.code;
  }
  return kExitOk;
}
