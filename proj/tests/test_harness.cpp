#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "shelab/error.hpp"
#include "shelab/harness.hpp"

using namespace shelab;
namespace fs = std::filesystem;

namespace {

Settings settings(const std::string& text) {
  std::istringstream in(text);
  return parse_settings(in, "test");
}

const char* kSmallWhite =
    "domain.dimension = 1\n"
    "domain.boundary = neumann\n"
    "domain.grid = 32\n"
    "noise.kernel = white\n"
    "sigma.gamma = 1.5\n"
    "run.dt = 1e-4\n"
    "run.horizon = 0.01\n"
    "run.paths = 12\n"
    "run.doubling_floor = 3\n";

std::string error_text(const Settings& s) {
  try {
    build_config(s);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::config);
    return e.what();
  }
  return {};
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("shelab_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string rows_text(const EnsembleResult& r) {
  std::ostringstream out;
  write_rows_csv(r, out);
  return out.str();
}

}  // namespace

TEST_CASE("minimal white-noise config is at or below the critical exponent") {
  const auto cfg = build_config(settings(kSmallWhite));
  const auto info = regime_info(cfg);
  CHECK(info.regime == SigmaRegime::subcritical);
  CHECK(to_string(info.regime) == "paper regime");
  CHECK(info.beta == doctest::Approx(0.5));
  REQUIRE(info.gamma_c.has_value());
  CHECK(*info.gamma_c == doctest::Approx(1.5));
}

TEST_CASE("config errors name the key") {
  auto s = settings(kSmallWhite);
  s["noise.kernel"] = "riesz";
  s["noise.alpha"] = "1";
  CHECK(error_text(s).find("noise.alpha") != std::string::npos);

  s = settings(kSmallWhite);
  s["run.initial_value"] = "-1";
  CHECK(error_text(s).find("u0 >= 0") != std::string::npos);

  s = settings(kSmallWhite);
  s["run.dt"] = "fast";
  CHECK(error_text(s).find("run.dt") != std::string::npos);

  s = settings(kSmallWhite);
  s["domain.boundary"] = "robin";
  CHECK_FALSE(error_text(s).empty());

  s = settings(kSmallWhite);
  s["noise.kernel"] = "spectral";
  s["noise.shift"] = "0";
  CHECK(error_text(s).find("noise.shift") != std::string::npos);
}

TEST_CASE("settings parser") {
  const auto s = settings("# comment\n\n  domain.grid = 16  # trailing\nnoise.kernel=white\n");
  CHECK(s.size() == 2);
  CHECK(s.at("domain.grid") == "16");
  CHECK(s.at("noise.kernel") == "white");
  CHECK_THROWS_WITH_AS(settings("domain.gird = 16\n"), doctest::Contains("test:1: unknown key 'domain.gird'"),
                       Error);
  CHECK_THROWS_WITH_AS(settings("run.dt = 1\nrun.dt = 2\n"), doctest::Contains("test:2: duplicate key"), Error);
  CHECK_THROWS_WITH_AS(settings("run.dt 1\n"), doctest::Contains("test:1"), Error);
  Settings o;
  set_setting(o, "run.paths", "7");
  CHECK(build_config(o).paths == 7);
  CHECK_THROWS_AS(set_setting(o, "run.nope", "1"), Error);
}

TEST_CASE("config hash ignores workers and output and normalizes numbers") {
  auto s = settings(kSmallWhite);
  const auto base = config_hash(build_config(s));
  CHECK(base.size() == 16);
  s["run.workers"] = "3";
  s["run.output"] = "elsewhere";
  CHECK(config_hash(build_config(s)) == base);
  s["run.dt"] = "0.00010";
  s["domain.length"] = "3.141592653589793";
  CHECK(config_hash(build_config(s)) == base);
  s["noise.alpha"] = "0.3";  // inactive for white noise
  CHECK(config_hash(build_config(s)) == base);
  s["run.horizon"] = "0.02";
  CHECK(config_hash(build_config(s)) != base);
  // canonical text round-trips through the parser
  const auto cfg = build_config(settings(kSmallWhite));
  CHECK(config_hash(build_config(settings(canonical_text(cfg)))) == config_hash(cfg));
}

TEST_CASE("ensemble results do not depend on the worker count") {
  auto s = settings(kSmallWhite);
  s["run.workers"] = "1";
  const auto one = run_ensemble(build_config(s));
  s["run.workers"] = "3";
  const auto three = run_ensemble(build_config(s));
  CHECK(rows_text(one) == rows_text(three));
  CHECK(aggregates_json(one, build_config(s)) == aggregates_json(three, build_config(s)));
  CHECK(one.rows.size() == 12);
  for (std::size_t i = 0; i < one.rows.size(); ++i) CHECK(one.rows[i].seed == 1 + i);
}

TEST_CASE("a single path matches the trajectory runner") {
  auto s = settings(kSmallWhite);
  s["run.paths"] = "1";
  s["run.seed"] = "9";
  const auto cfg = build_config(s);
  const auto result = run_ensemble(cfg);
  REQUIRE(result.rows.size() == 1);
  const auto rec = run_trajectory(cfg.trajectory, 9);
  const auto expect = summarize(rec, rec.l1_norm.front(), 3);
  const auto& row = result.rows[0];
  CHECK(row.seed == 9);
  CHECK(row.stop == expect.stop);
  CHECK(row.stop_time == expect.stop_time);
  CHECK(row.max_sup_norm == expect.max_sup_norm);
  CHECK(row.final_I == expect.final_I);
  CHECK(row.final_Q == expect.final_Q);
  CHECK(row.doubling_count == expect.doubling_count);
}

TEST_CASE("row summary") {
  TrajectoryRecord rec;
  rec.step = {0, 1, 2, 3};
  rec.t = {0.0, 0.1, 0.2, 0.3};
  rec.sup_norm = {1.0, 2.5, 4.5, 1.5};
  rec.l1_norm = {2.0, 3.0, 1.0, 2.5};
  rec.I = {2.0, 2.9, 0.8, 2.2};
  rec.Q = {0.0, 0.1, 0.3, 0.4};
  rec.clamped_mass = {0.0, 0.1, 0.2, 0.3};
  rec.stop = StopFlag::horizon;
  const auto row = summarize(rec, 2.0, 1);
  CHECK(row.stop_time == 0.3);
  CHECK(row.max_sup_norm == 4.5);
  CHECK(row.max_l1 == 3.0);
  CHECK(row.final_I == 2.2);
  CHECK(row.final_Q == 0.4);
  CHECK(row.clamped_fraction == doctest::Approx(0.15));
  // 2.5 starts level 1, 4.5 goes up, 1.5 comes down from level 2
  CHECK(row.doubling_count == 2);
}

TEST_CASE("aggregates from rows") {
  std::vector<EnsembleRow> rows(4);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].seed = i + 1;
    rows[i].stop = StopFlag::horizon;
    rows[i].final_I = 1.0;
    rows[i].max_l1 = 1.0;
    rows[i].max_sup_norm = 1.0;
  }
  rows[0].stop = StopFlag::tau_n;
  rows[0].max_sup_norm = 64.0;
  rows[1].max_sup_norm = 5.0;
  rows[2].stop = StopFlag::tau_M;
  rows[2].max_l1 = 3.0;
  rows[2].final_Q = 2.0;
  const auto a = aggregate_rows(rows, 1.0, 3.0, 64.0, 2);
  CHECK(a.stopped_tau_n == 1);
  CHECK(a.stopped_tau_M == 1);
  CHECK(a.stopped_horizon == 2);
  CHECK(a.explosion_exit_fraction == 0.25);
  REQUIRE(a.exits.size() == 6);
  CHECK(a.exits[0].count == 2);   // 2^1
  CHECK(a.exits[2].count == 1);   // 2^3
  CHECK(a.exits[5].count == 1);   // 2^6
  REQUIRE(a.doob.entries.size() == 3);
  CHECK(a.doob.entries[0].exceed_fraction == 0.25);
  REQUIRE(a.qv.has_value());
  CHECK(a.qv->paths == 4);
  CHECK(a.qv->mean_Q == 0.5);
  CHECK(a.qv->pass);
}

TEST_CASE("written ensembles reload consistently and tampering is detected") {
  auto s = settings(kSmallWhite);
  const fs::path dir = scratch_dir("reload");
  s["run.output"] = dir.string();
  s["run.save_trajectories"] = "true";
  const auto cfg = build_config(s);
  const auto result = run_ensemble(cfg);
  write_ensemble(result, cfg);
  CHECK(fs::exists(dir / "rows.csv"));
  CHECK(fs::exists(dir / "ensemble.json"));
  CHECK(fs::exists(dir / "metrics.json"));
  CHECK(fs::exists(dir / "trajectories" / "seed_1.csv"));
  CHECK(slurp(dir / "rows.csv").rfind("# config_hash=" + result.config_hash + "\n", 0) == 0);

  const auto loaded = load_ensemble(dir.string());
  CHECK(loaded.consistent);
  CHECK(loaded.config_hash == result.config_hash);
  CHECK(loaded.rows.size() == result.rows.size());
  CHECK(loaded.stored_aggregates == loaded.recomputed_aggregates);

  // change one final_I entry
  std::string rows = slurp(dir / "rows.csv");
  std::istringstream in(rows);
  std::string line, out;
  for (int i = 0; std::getline(in, line); ++i) {
    if (i == 2) {
      std::vector<std::string> f;
      std::stringstream ls(line);
      for (std::string tok; std::getline(ls, tok, ',');) f.push_back(tok);
      f[5] = "1234.5";
      line.clear();
      for (std::size_t k = 0; k < f.size(); ++k) line += (k ? "," : "") + f[k];
    }
    out += line + "\n";
  }
  std::ofstream(dir / "rows.csv", std::ios::binary) << out;
  CHECK_FALSE(load_ensemble(dir.string()).consistent);
  fs::remove_all(dir);
  CHECK_THROWS_AS(load_ensemble(dir.string()), Error);
}

TEST_CASE("rows CSV round-trip") {
  auto s = settings(kSmallWhite);
  s["run.paths"] = "3";
  const auto result = run_ensemble(build_config(s));
  std::istringstream in(rows_text(result));
  std::string hash;
  const auto rows = read_rows_csv(in, hash);
  CHECK(hash == result.config_hash);
  REQUIRE(rows.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(rows[i].final_I == result.rows[i].final_I);
    CHECK(rows[i].max_sup_norm == result.rows[i].max_sup_norm);
    CHECK(rows[i].stop == result.rows[i].stop);
  }
  std::istringstream bad("seed,stop_flag\n1,horizon\n");
  CHECK_THROWS_AS(read_rows_csv(bad, hash), Error);
}

TEST_CASE("gamma sweep") {
  auto s = settings(kSmallWhite);
  s["run.paths"] = "40";
  s["run.initial_value"] = "0.5";
  s["sigma.truncation"] = "64";
  const auto cfg = build_config(s);
  const auto sw = sweep_gamma(cfg, {1.0, 1.5, 2.0}, {1, 2, 3, 6});
  REQUIRE(sw.cells.size() == 3);
  CHECK(sw.monotone_in_threshold);
  for (const auto& cell : sw.cells) {
    REQUIRE(cell.exits.size() == 4);
    for (std::size_t k = 1; k < cell.exits.size(); ++k) CHECK(cell.exits[k].fraction <= cell.exits[k - 1].fraction);
  }
  // linear sigma from 0.5 does not reach 64 in this horizon
  CHECK(sw.cells[0].exits[3].count == 0);
  CHECK(sw.cells[0].regime == SigmaRegime::subcritical);
  CHECK(sw.cells[2].regime == SigmaRegime::explosive);
  CHECK_THROWS_AS(sweep_gamma(cfg, {1.5}, {7}), Error);
  std::ostringstream csv;
  write_sweep_csv(sw, csv);
  CHECK(csv.str().find("gamma") != std::string::npos);
  CHECK(sweep_json(sw).find("\"gamma_c\"") != std::string::npos);
}

TEST_CASE("assumption checks") {
  auto s = settings(kSmallWhite);
  s["domain.boundary"] = "dirichlet";
  s["noise.kernel"] = "spectral";
  s["noise.theta"] = "0.25";
  s["noise.shift"] = "0";
  auto report = verify_assumptions(build_config(s));
  CHECK(report.heat_kernel.status == ClauseStatus::pass);
  CHECK(report.heat_kernel.fitted == doctest::Approx(0.5).epsilon(0.1));
  CHECK(report.noise_decay.status == ClauseStatus::pass);
  CHECK(report.noise_decay.expected == doctest::Approx(0.25));
  CHECK(report.double_integral.status == ClauseStatus::pass);
  CHECK(report.all_pass);
  CHECK(assumption_json(report).find("\"all_pass\": true") != std::string::npos);

  s["noise.theta"] = "0.5";  // theta = d/2 gives eta = 0
  report = verify_assumptions(build_config(s));
  CHECK(report.noise_decay.status == ClauseStatus::fail);
  CHECK(report.noise_decay.detail.find("eta in (0,1) fails") != std::string::npos);
  CHECK_FALSE(report.all_pass);

  report = verify_assumptions(build_config(settings(kSmallWhite)));
  CHECK(report.double_integral.status == ClauseStatus::inapplicable);
  CHECK(report.heat_kernel.status == ClauseStatus::pass);
}
