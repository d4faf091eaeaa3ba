// Exercises the shared library through the C header only.
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <string>

#include "shelab/shelab.h"

namespace {

struct Owned {
  char* p = nullptr;
  ~Owned() { shelab_string_free(p); }
  std::string str() const { return p ? p : ""; }
};

shelab_config* small_config() {
  shelab_config* c = nullptr;
  REQUIRE(shelab_config_default(&c) == SHELAB_OK);
  const char* kv[][2] = {{"noise.kernel", "white"}, {"domain.grid", "32"}, {"run.dt", "1e-4"},
                         {"run.horizon", "0.005"}, {"run.paths", "6"},    {"run.doubling_floor", "3"}};
  for (const auto& [k, v] : kv) REQUIRE(shelab_config_set(c, k, v) == SHELAB_OK);
  return c;
}

}  // namespace

TEST_CASE("version and key table") {
  CHECK(std::strlen(shelab_version()) > 0);
  REQUIRE(shelab_config_key_count() > 10);
  CHECK(std::string(shelab_config_key_name(0)) == "domain.dimension");
  CHECK(shelab_config_key_name(shelab_config_key_count()) == nullptr);
}

TEST_CASE("config handle") {
  shelab_config* c = small_config();
  Owned v, hash, hash2, regime, canonical;
  REQUIRE(shelab_config_get(c, "run.paths", &v.p) == SHELAB_OK);
  CHECK(v.str() == "6");
  REQUIRE(shelab_config_hash(c, &hash.p) == SHELAB_OK);
  CHECK(hash.str().size() == 16);

  // a rejected value leaves the handle unchanged
  CHECK(shelab_config_set(c, "noise.kernel", "riesz") == SHELAB_OK);
  CHECK(shelab_config_set(c, "noise.alpha", "1") == SHELAB_ERR_CONFIG);
  CHECK(std::string(shelab_last_error()).find("noise.alpha") != std::string::npos);
  CHECK(shelab_config_set(c, "noise.kernel", "white") == SHELAB_OK);
  CHECK(shelab_config_set(c, "no.such.key", "1") == SHELAB_ERR_CONFIG);
  REQUIRE(shelab_config_hash(c, &hash2.p) == SHELAB_OK);
  CHECK(hash2.str() == hash.str());

  REQUIRE(shelab_config_regime(c, &regime.p) == SHELAB_OK);
  CHECK(regime.str() == "paper regime");
  REQUIRE(shelab_config_canonical(c, &canonical.p) == SHELAB_OK);
  CHECK(canonical.str().find("noise.kernel = white") != std::string::npos);

  CHECK(shelab_config_get(nullptr, "run.paths", &v.p) == SHELAB_ERR_INVALID_ARGUMENT);
  CHECK(shelab_config_load("/nonexistent/shelab.cfg", nullptr) == SHELAB_ERR_INVALID_ARGUMENT);
  shelab_config* missing = nullptr;
  CHECK(shelab_config_load("/nonexistent/shelab.cfg", &missing) == SHELAB_ERR_CONFIG);
  CHECK(missing == nullptr);
  shelab_config_free(c);
  shelab_config_free(nullptr);
}

TEST_CASE("ensemble round trip through the report") {
  shelab_config* c = small_config();
  const auto dir = std::filesystem::temp_directory_path() / "shelab_test_capi";
  std::filesystem::remove_all(dir);
  REQUIRE(shelab_config_set(c, "run.output", dir.c_str()) == SHELAB_OK);
  shelab_ensemble* e = nullptr;
  REQUIRE(shelab_ensemble_run(c, &e) == SHELAB_OK);
  CHECK(shelab_ensemble_paths(e) == 6);
  CHECK(shelab_ensemble_failures(e) == 0);
  Owned rows, js, metrics, report;
  REQUIRE(shelab_ensemble_rows_csv(e, &rows.p) == SHELAB_OK);
  CHECK(rows.str().rfind("# config_hash=", 0) == 0);
  REQUIRE(shelab_ensemble_json(e, &js.p) == SHELAB_OK);
  REQUIRE(shelab_ensemble_metrics_json(e, &metrics.p) == SHELAB_OK);
  CHECK(metrics.str().find("wall_seconds") != std::string::npos);
  REQUIRE(shelab_ensemble_write(e) == SHELAB_OK);
  int consistent = 0;
  REQUIRE(shelab_report(dir.c_str(), &report.p, &consistent) == SHELAB_OK);
  CHECK(consistent == 1);
  shelab_ensemble_free(e);
  std::filesystem::remove_all(dir);
  Owned none;
  CHECK(shelab_report(dir.c_str(), &none.p, &consistent) == SHELAB_ERR_IO);

  Owned traj;
  REQUIRE(shelab_trajectory_csv(c, 4, &traj.p) == SHELAB_OK);
  CHECK(traj.str().rfind("step,t,sup_norm", 0) == 0);
  shelab_config_free(c);
}

TEST_CASE("sweep, assumptions and probe") {
  shelab_config* c = small_config();
  const double gammas[] = {1.2, 1.8};
  const int levels[] = {1, 2};
  Owned sj, sc;
  REQUIRE(shelab_sweep_gamma(c, gammas, 2, levels, 2, &sj.p, &sc.p) == SHELAB_OK);
  CHECK(sj.str().find("\"cells\"") != std::string::npos);
  CHECK(shelab_sweep_gamma(c, gammas, 0, levels, 2, &sj.p, &sc.p) == SHELAB_ERR_INVALID_ARGUMENT);

  Owned aj;
  int all_pass = 0;
  REQUIRE(shelab_verify_assumptions(c, &aj.p, &all_pass) == SHELAB_OK);
  CHECK(aj.str().find("inapplicable") != std::string::npos);

  REQUIRE(shelab_config_set(c, "domain.boundary", "dirichlet") == SHELAB_OK);
  REQUIRE(shelab_config_set(c, "noise.kernel", "spectral") == SHELAB_OK);
  REQUIRE(shelab_config_set(c, "noise.shift", "0") == SHELAB_OK);
  shelab_probe_options o;
  shelab_probe_options_default(&o);
  const double T[] = {0.002, 0.004};
  o.T_grid = T;
  o.T_count = 2;
  o.paths = 64;
  o.batches = 8;
  o.dt = 1e-4;
  o.workers = 1;
  Owned pj;
  int pass = 0;
  REQUIRE(shelab_probe_convolution(c, &o, &pj.p, &pass) == SHELAB_OK);
  CHECK(pj.str().find("\"fitted_slope\"") != std::string::npos);
  o.p = 3.0;
  Owned bad;
  CHECK(shelab_probe_convolution(c, &o, &bad.p, &pass) != SHELAB_OK);
  CHECK(std::string(shelab_last_error()).find("admissible") != std::string::npos);
  shelab_config_free(c);
}
