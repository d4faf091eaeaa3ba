#include "shelab/shelab.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <sstream>
#include <string>

#include <json.hpp>

#include "shelab/diagnostics.hpp"
#include "shelab/error.hpp"
#include "shelab/harness.hpp"
#include "shelab/parallel.hpp"
#include "shelab/stats.hpp"

struct shelab_config {
  shelab::Settings settings;
  shelab::SimConfig config;
};

struct shelab_ensemble {
  shelab::SimConfig config;
  shelab::EnsembleResult result;
};

namespace {

thread_local std::string last_error;

shelab_status status_of(shelab::ErrorCode c) {
  switch (c) {
    case shelab::ErrorCode::invalid_argument:
      return SHELAB_ERR_INVALID_ARGUMENT;
    case shelab::ErrorCode::config:
      return SHELAB_ERR_CONFIG;
    case shelab::ErrorCode::numerical:
      return SHELAB_ERR_NUMERICAL;
    case shelab::ErrorCode::io:
      return SHELAB_ERR_IO;
  }
  return SHELAB_ERR_INTERNAL;
}

template <class Fn>
shelab_status guard(Fn&& fn) {
  try {
    fn();
    last_error.clear();
    return SHELAB_OK;
  } catch (const shelab::Error& e) {
    last_error = e.what();
    return status_of(e.code());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return SHELAB_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return SHELAB_ERR_INTERNAL;
  } catch (...) {
    last_error = "unknown error";
    return SHELAB_ERR_INTERNAL;
  }
}

shelab_status bad_argument(const char* what) {
  last_error = what;
  return SHELAB_ERR_INVALID_ARGUMENT;
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* shelab_version(void) { return "0.1.0"; }

const char* shelab_last_error(void) { return last_error.c_str(); }

void shelab_string_free(char* s) { std::free(s); }

size_t shelab_config_key_count(void) { return shelab::config_keys().size(); }

const char* shelab_config_key_name(size_t i) {
  const auto& k = shelab::config_keys();
  return i < k.size() ? k[i].key.c_str() : nullptr;
}

const char* shelab_config_key_default(size_t i) {
  const auto& k = shelab::config_keys();
  return i < k.size() ? k[i].default_value.c_str() : nullptr;
}

const char* shelab_config_key_help(size_t i) {
  const auto& k = shelab::config_keys();
  return i < k.size() ? k[i].help.c_str() : nullptr;
}

shelab_status shelab_config_default(shelab_config** out) {
  if (!out) return bad_argument("shelab_config_default: null output");
  return guard([&] {
    auto c = std::make_unique<shelab_config>();
    c->config = shelab::build_config(c->settings);
    *out = c.release();
  });
}

shelab_status shelab_config_load(const char* path, shelab_config** out) {
  if (!path || !out) return bad_argument("shelab_config_load: null argument");
  return guard([&] {
    auto c = std::make_unique<shelab_config>();
    c->settings = shelab::read_settings_file(path);
    c->config = shelab::build_config(c->settings);
    *out = c.release();
  });
}

shelab_status shelab_config_set(shelab_config* config, const char* key, const char* value) {
  if (!config || !key || !value) return bad_argument("shelab_config_set: null argument");
  return guard([&] {
    shelab::Settings next = config->settings;
    shelab::set_setting(next, key, value);
    shelab::SimConfig built = shelab::build_config(next);
    config->settings = std::move(next);
    config->config = std::move(built);
  });
}

shelab_status shelab_config_get(const shelab_config* config, const char* key, char** out) {
  if (!config || !key || !out) return bad_argument("shelab_config_get: null argument");
  return guard([&] {
    shelab::Settings probe;
    shelab::set_setting(probe, key, "");
    const auto s = shelab::to_settings(config->config);
    const auto it = s.find(key);
    *out = copy_string(it == s.end() ? std::string() : it->second);
  });
}

shelab_status shelab_config_canonical(const shelab_config* config, char** out) {
  if (!config || !out) return bad_argument("shelab_config_canonical: null argument");
  return guard([&] { *out = copy_string(shelab::canonical_text(config->config)); });
}

shelab_status shelab_config_hash(const shelab_config* config, char** out) {
  if (!config || !out) return bad_argument("shelab_config_hash: null argument");
  return guard([&] { *out = copy_string(shelab::config_hash(config->config)); });
}

shelab_status shelab_config_regime(const shelab_config* config, char** out) {
  if (!config || !out) return bad_argument("shelab_config_regime: null argument");
  return guard([&] { *out = copy_string(to_string(shelab::regime_info(config->config).regime)); });
}

void shelab_config_free(shelab_config* config) { delete config; }

shelab_status shelab_trajectory_csv(const shelab_config* config, uint64_t seed, char** out) {
  if (!config || !out) return bad_argument("shelab_trajectory_csv: null argument");
  return guard([&] {
    const shelab::Simulation sim(config->config.trajectory);
    std::ostringstream ss;
    shelab::write_trajectory_csv(sim.run(seed), ss);
    *out = copy_string(ss.str());
  });
}

shelab_status shelab_ensemble_run(const shelab_config* config, shelab_ensemble** out) {
  if (!config || !out) return bad_argument("shelab_ensemble_run: null argument");
  return guard([&] {
    auto e = std::make_unique<shelab_ensemble>();
    e->config = config->config;
    e->result = shelab::run_ensemble(e->config);
    *out = e.release();
  });
}

size_t shelab_ensemble_paths(const shelab_ensemble* e) { return e ? e->result.rows.size() : 0; }

size_t shelab_ensemble_failures(const shelab_ensemble* e) {
  return e ? e->result.aggregates.failures : 0;
}

shelab_status shelab_ensemble_rows_csv(const shelab_ensemble* e, char** out) {
  if (!e || !out) return bad_argument("shelab_ensemble_rows_csv: null argument");
  return guard([&] {
    std::ostringstream ss;
    shelab::write_rows_csv(e->result, ss);
    *out = copy_string(ss.str());
  });
}

shelab_status shelab_ensemble_json(const shelab_ensemble* e, char** out) {
  if (!e || !out) return bad_argument("shelab_ensemble_json: null argument");
  return guard([&] { *out = copy_string(shelab::aggregates_json(e->result, e->config)); });
}

shelab_status shelab_ensemble_metrics_json(const shelab_ensemble* e, char** out) {
  if (!e || !out) return bad_argument("shelab_ensemble_metrics_json: null argument");
  return guard([&] { *out = copy_string(shelab::metrics_json(e->result)); });
}

shelab_status shelab_ensemble_write(const shelab_ensemble* e) {
  if (!e) return bad_argument("shelab_ensemble_write: null argument");
  return guard([&] { shelab::write_ensemble(e->result, e->config); });
}

void shelab_ensemble_free(shelab_ensemble* e) { delete e; }

shelab_status shelab_report(const char* dir, char** json_out, int* consistent) {
  if (!dir || !json_out) return bad_argument("shelab_report: null argument");
  return guard([&] {
    const auto loaded = shelab::load_ensemble(dir);
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["kind"] = "report";
    j["config_hash"] = loaded.config_hash;
    j["rows"] = loaded.rows.size();
    j["consistent"] = loaded.consistent;
    j["aggregates"] = nlohmann::ordered_json::parse(loaded.stored_aggregates);
    if (!loaded.consistent)
      j["recomputed_aggregates"] = nlohmann::ordered_json::parse(loaded.recomputed_aggregates);
    *json_out = copy_string(j.dump(2) + "\n");
    if (consistent) *consistent = loaded.consistent ? 1 : 0;
  });
}

shelab_status shelab_sweep_gamma(const shelab_config* config, const double* gammas, size_t gamma_count,
                                 const int* levels, size_t level_count, char** json_out,
                                 char** csv_out) {
  if (!config || !gammas || !levels || gamma_count == 0 || level_count == 0)
    return bad_argument("shelab_sweep_gamma: need a config and non-empty gamma and level grids");
  return guard([&] {
    const auto r = shelab::sweep_gamma(config->config, std::vector<double>(gammas, gammas + gamma_count),
                                       std::vector<int>(levels, levels + level_count));
    std::string js = shelab::sweep_json(r);
    std::ostringstream csv;
    shelab::write_sweep_csv(r, csv);
    char* j = json_out ? copy_string(js) : nullptr;
    try {
      if (csv_out) *csv_out = copy_string(csv.str());
    } catch (...) {
      std::free(j);
      throw;
    }
    if (json_out) *json_out = j;
  });
}

shelab_status shelab_verify_assumptions(const shelab_config* config, char** json_out, int* all_pass) {
  if (!config || !json_out) return bad_argument("shelab_verify_assumptions: null argument");
  return guard([&] {
    const auto r = shelab::verify_assumptions(config->config);
    *json_out = copy_string(shelab::assumption_json(r));
    if (all_pass) *all_pass = r.all_pass ? 1 : 0;
  });
}

void shelab_probe_options_default(shelab_probe_options* o) {
  if (!o) return;
  const shelab::MomentProbeOptions d;
  o->p = d.p;
  o->T_grid = nullptr;
  o->T_count = 0;
  o->paths = d.paths;
  o->batches = d.batches;
  o->dt = d.dt;
  o->seed = d.seed;
  o->workers = 0;
}

shelab_status shelab_probe_convolution(const shelab_config* config, const shelab_probe_options* options,
                                       char** json_out, int* pass) {
  if (!config || !options || !json_out) return bad_argument("shelab_probe_convolution: null argument");
  if (options->T_count > 0 && !options->T_grid)
    return bad_argument("shelab_probe_convolution: T_grid is null");
  return guard([&] {
    shelab::MomentProbeOptions o;
    o.p = options->p;
    if (options->T_count > 0)
      o.T_grid.assign(options->T_grid, options->T_grid + options->T_count);
    else
      o.T_grid = shelab::stats::log_spaced(1e-3, 1e-1, 6);
    o.paths = options->paths;
    o.batches = options->batches;
    o.dt = options->dt;
    o.seed = options->seed;
    o.workers = options->workers == 0 ? shelab::default_workers() : options->workers;
    const auto& t = config->config.trajectory;
    auto basis = std::make_shared<const shelab::SpectralBasis>(t.domain);
    const shelab::NoiseModel noise(t.noise, basis);
    const auto r = shelab::convolution_moment_probe(noise, {}, o);
    *json_out = copy_string(shelab::probe_json(r, shelab::config_hash(config->config)));
    if (pass) *pass = r.pass ? 1 : 0;
  });
}

}  // extern "C"
