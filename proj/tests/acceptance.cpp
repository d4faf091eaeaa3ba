// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. `acceptance 3 5` runs a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "shelab/diagnostics.hpp"
#include "shelab/domain.hpp"
#include "shelab/harness.hpp"
#include "shelab/noise.hpp"
#include "shelab/rng.hpp"
#include "shelab/stats.hpp"

using namespace shelab;

namespace {

constexpr double pi = std::numbers::pi;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

SimConfig config_from(const std::string& text) {
  std::istringstream in(text);
  return build_config(parse_settings(in, "acceptance"));
}

std::string rows_text(const EnsembleResult& r) {
  std::ostringstream out;
  write_rows_csv(r, out);
  return out.str();
}

// White noise, Neumann, d = 1: the setting of the mass identity runs.
const std::string kMassConfig =
    "domain.dimension = 1\n"
    "domain.boundary = neumann\n"
    "domain.grid = 64\n"
    "noise.kernel = white\n"
    "sigma.gamma = 1.5\n"
    "sigma.truncation = 1024\n"
    "run.dt = 1e-4\n"
    "run.horizon = 0.1\n"
    "run.paths = 1000\n"
    "run.seed = 1000\n"
    "run.doubling_floor = 3\n";

// 1. sup_x G(t, x, x) ~ t^{-d/2}
Outcome heat_kernel_exponent() {
  Outcome o{true, ""};
  const auto t = stats::log_spaced(1e-4, 1e-2, 9);
  for (int d : {1, 2}) {
    for (Boundary b : {Boundary::periodic, Boundary::neumann, Boundary::dirichlet}) {
      DomainSpec dom;
      dom.dimension = d;
      dom.boundary = b;
      dom.grid = d == 1 ? 4096 : 512;
      const SpectralBasis basis(dom);
      std::vector<double> g;
      for (double ti : t) g.push_back(heat_kernel_diagonal_sup(basis, ti));
      const double slope = stats::fit_power_law(t, g).slope;
      const bool ok = std::abs(slope + 0.5 * d) <= 0.05;
      o.pass = o.pass && ok;
      o.detail += "d=" + std::to_string(d) + " " + to_string(b) + " " + fmt(slope, 5) + "; ";
    }
  }
  o.detail += "target -d/2 +/- 0.05";
  return o;
}

// 2. spectral kernel, d = 2, theta = 3/4: decay slope -1/4
Outcome noise_decay_exponent() {
  DomainSpec dom;
  dom.dimension = 2;
  dom.boundary = Boundary::neumann;
  dom.grid = 512;
  const double theta = 0.75, a = 1.0;
  const auto basis = std::make_shared<const SpectralBasis>(dom);
  const double kmax = basis->axis_wavenumber(basis->mode_cutoff() - 1);
  const auto t = stats::log_spaced(std::max(1e-4, 15.0 / (kmax * kmax)), 1e-2, 9);
  const auto rep = verify_decay(CovarianceSpec::spectral(theta, a), *basis, t);

  // direct double sum at the center, cos^2(k pi / 2) kills odd k
  double worst = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    double f = 0.0;
    for (int k1 = 0; k1 < 512; k1 += 2) {
      const double e1 = k1 == 0 ? 1.0 / pi : 2.0 / pi;
      for (int k2 = 0; k2 < 512; k2 += 2) {
        const double e2 = k2 == 0 ? 1.0 / pi : 2.0 / pi;
        const double lam = double(k1) * k1 + double(k2) * k2;
        f += std::tgamma(theta) * std::pow(a + lam, -theta) * std::exp(-2.0 * lam * t[i]) * e1 * e2;
      }
    }
    worst = std::max(worst, std::abs(rep.values[i] / f - 1.0));
  }
  const bool ok = std::abs(rep.fitted_slope + 0.25) <= 0.1 && worst < 1e-9;
  return {ok, "slope " + fmt(rep.fitted_slope, 5) + " (target -0.25 +/- 0.1), t in [" + fmt(t.front()) + ", " +
                  fmt(t.back()) + "], series mismatch " + fmt(worst, 2)};
}

// 3. int int Lambda = pi^3 / 12 for the Dirichlet Green's function kernel
Outcome double_integral_closed_form() {
  DomainSpec dom;
  dom.boundary = Boundary::dirichlet;
  dom.grid = 256;
  const SpectralBasis basis(dom);
  const double value = double_integral(CovarianceSpec::spectral(1.0, 0.0), basis);
  const double exact = pi * pi * pi / 12.0;
  // midpoint rule on G(x, y) = min(x, y)(pi - max(x, y))/pi
  const int n = 2000;
  const double h = pi / n;
  double green = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double x = (i + 0.5) * h, y = (j + 0.5) * h;
      green += std::min(x, y) * (pi - std::max(x, y)) / pi;
    }
  green *= h * h;
  const double rel = std::abs(value / exact - 1.0);
  return {rel < 0.005 && std::abs(green / exact - 1.0) < 1e-4,
          "series " + fmt(value, 8) + ", pi^3/12 " + fmt(exact, 8) + ", Green quadrature " + fmt(green, 8) +
              ", rel err " + fmt(rel, 2)};
}

// 4. empirical covariance of the increments at 20 grid pairs
Outcome sampler_covariance() {
  const std::size_t n = 64, draws = 100000, pairs = 20;
  const double dt = 1e-3;
  DomainSpec dom;
  dom.grid = n;
  const auto basis = std::make_shared<const SpectralBasis>(dom);
  const double theta = 0.25, a = 1.0, alpha = 0.25;
  const double h = basis->spacing();

  auto spectral_oracle = [&](double x, double y) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double ek = k == 0 ? 1.0 / std::sqrt(pi) : std::sqrt(2.0 / pi) * std::cos(k * x);
      const double fk = k == 0 ? 1.0 / std::sqrt(pi) : std::sqrt(2.0 / pi) * std::cos(k * y);
      s += std::tgamma(theta) * std::pow(a + double(k) * k, -theta) * ek * fk;
    }
    return s;
  };
  auto riesz_oracle = [&](double x, double y) {
    if (x == y) return std::pow(h, -alpha) * std::pow(2.0, alpha) / (1.0 - alpha);  // cell average
    return std::pow(std::abs(x - y), -alpha);
  };

  RandomStream pick(2024);
  std::vector<std::pair<std::size_t, std::size_t>> ij;
  for (std::size_t p = 0; p < pairs; ++p)
    ij.emplace_back(static_cast<std::size_t>(pick.uniform() * n), static_cast<std::size_t>(pick.uniform() * n));

  Outcome o{true, ""};
  struct Variant {
    const char* name;
    CovarianceSpec spec;
    std::function<double(double, double)> oracle;
  };
  const std::vector<Variant> variants{{"spectral", CovarianceSpec::spectral(theta, a), spectral_oracle},
                                      {"riesz", CovarianceSpec::riesz(alpha), riesz_oracle}};
  for (const auto& v : variants) {
    const NoiseModel model(v.spec, basis);
    auto ws = model.make_workspace();
    RandomStream rng(77);
    std::vector<double> dw(n);
    std::vector<std::vector<double>> prod(pairs, std::vector<double>(draws));
    for (std::size_t r = 0; r < draws; ++r) {
      model.sample(dt, rng, dw, ws);
      for (std::size_t p = 0; p < pairs; ++p) prod[p][r] = dw[ij[p].first] * dw[ij[p].second];
    }
    double worst = 0.0;
    for (std::size_t p = 0; p < pairs; ++p) {
      const auto est = stats::mean_estimate(prod[p]);
      const double target =
          v.oracle(basis->grid_coordinate(ij[p].first), basis->grid_coordinate(ij[p].second)) * dt;
      worst = std::max(worst, std::abs(est.mean - target) / est.standard_error);
    }
    o.pass = o.pass && worst < 3.0;
    o.detail += std::string(v.name) + " max |dev| " + fmt(worst, 3) + " se; ";
  }
  o.detail += std::to_string(pairs) + " pairs, " + std::to_string(draws) + " draws";
  return o;
}

struct MassRun {
  EnsembleResult result;
  std::vector<double> final_l1;
  std::vector<char> identity_ok;
  double l1_initial = 0.0;
};

MassRun mass_identity_run(std::size_t workers) {
  auto cfg = config_from(kMassConfig);
  cfg.workers = workers;
  MassRun run;
  run.final_l1.assign(cfg.paths, 0.0);
  run.identity_ok.assign(cfg.paths, 0);
  run.result = run_ensemble(cfg, [&](std::size_t i, const TrajectoryRecord& rec) {
    bool ok = true;
    for (std::size_t k = 0; k < rec.size(); ++k)
      ok = ok && std::abs(rec.l1_norm[k] - rec.I[k]) < 1e-9 * rec.I[k] + rec.clamped_mass[k];
    run.identity_ok[i] = ok;
    run.final_l1[i] = rec.l1_norm.back();
  });
  run.l1_initial = run.result.aggregates.l1_initial;
  return run;
}

MassRun& mass_run() {
  static MassRun run = mass_identity_run(1);
  return run;
}

// 5. discrete martingale identity and mean mass
Outcome martingale_identity() {
  const auto& run = mass_run();
  const auto bad = std::count(run.identity_ok.begin(), run.identity_ok.end(), 0);
  const auto est = stats::mean_estimate(run.final_l1);
  const double dev = std::abs(est.mean - run.l1_initial);
  const auto& agg = run.result.aggregates;
  return {bad == 0 && dev < 3.0 * est.standard_error && agg.failures == 0,
          std::to_string(bad) + " paths break the identity; mean L1(T) " + fmt(est.mean, 6) + " vs " +
              fmt(run.l1_initial, 6) + " (" + fmt(dev / est.standard_error, 3) + " se); clamped fraction " +
              fmt(agg.mean_clamped_fraction, 2) + "; stops tau_n " + std::to_string(agg.stopped_tau_n)};
}

struct Violations {
  double fraction = 0.0;  // L1 > I + 1e-9 I + clamped mass
  double worst_relative = 0.0;
  double raw_fraction = 0.0;  // same without the clamped mass
  double raw_worst_relative = 0.0;
  double clamped_fraction = 0.0;
  std::size_t samples = 0;
};

Violations dirichlet_violations(double dt, std::size_t stride) {
  auto cfg = config_from(
      "domain.boundary = dirichlet\n"
      "domain.grid = 64\n"
      "noise.kernel = white\n"
      "sigma.gamma = 1.5\n"
      "run.initial = eigenmode\n"
      "run.initial_mode = 1\n"
      "run.initial_value = 2\n"
      "run.horizon = 0.1\n"
      "run.paths = 400\n"
      "run.doubling_floor = 3\n");
  cfg.trajectory.dt = dt;
  cfg.trajectory.record_stride = stride;
  std::vector<std::size_t> count(cfg.paths), raw_count(cfg.paths), total(cfg.paths);
  std::vector<double> worst(cfg.paths), raw_worst(cfg.paths);
  const auto result = run_ensemble(cfg, [&](std::size_t i, const TrajectoryRecord& rec) {
    for (std::size_t k = 1; k < rec.size(); ++k) {
      ++total[i];
      const double raw = rec.l1_norm[k] - rec.I[k];
      const double excess = raw - rec.clamped_mass[k];
      if (raw > 1e-9 * rec.I[k]) {
        ++raw_count[i];
        raw_worst[i] = std::max(raw_worst[i], raw / rec.I[k]);
      }
      if (excess > 1e-9 * rec.I[k]) {
        ++count[i];
        worst[i] = std::max(worst[i], excess / rec.I[k]);
      }
    }
  });
  Violations v;
  std::size_t c = 0, rc = 0;
  for (std::size_t i = 0; i < cfg.paths; ++i) {
    c += count[i];
    rc += raw_count[i];
    v.samples += total[i];
    v.worst_relative = std::max(v.worst_relative, worst[i]);
    v.raw_worst_relative = std::max(v.raw_worst_relative, raw_worst[i]);
  }
  v.fraction = v.samples ? static_cast<double>(c) / v.samples : 0.0;
  v.raw_fraction = v.samples ? static_cast<double>(rc) / v.samples : 0.0;
  v.clamped_fraction = result.aggregates.mean_clamped_fraction;
  return v;
}

// 6. Dirichlet mass stays below I up to discretization error. The tolerance
// carries the accounted clamped mass, as in the Neumann identity; a violation
// fraction already zero at the coarse step counts as a decreasing trend.
Outcome dirichlet_domination() {
  const auto coarse = dirichlet_violations(1e-4, 1);
  const auto fine = dirichlet_violations(5e-5, 2);
  const bool trend = coarse.fraction == 0.0 ? fine.fraction == 0.0 : fine.fraction < coarse.fraction;
  return {trend && coarse.worst_relative < 0.01,
          "violation fraction " + fmt(coarse.fraction, 3) + " at dt=1e-4, " + fmt(fine.fraction, 3) +
              " at dt=5e-5; worst excess " + fmt(coarse.worst_relative, 3) + " of I; without clamped mass " +
              fmt(coarse.raw_fraction, 3) + " -> " + fmt(fine.raw_fraction, 3) + ", worst " +
              fmt(coarse.raw_worst_relative, 3) + "; clamped fraction " + fmt(coarse.clamped_fraction, 2) +
              " -> " + fmt(fine.clamped_fraction, 2)};
}

// Stronger noise so the exceedance and QV checks are not vacuous; the
// clamped fraction stays below one percent.
SimConfig strong_noise_config(double mass_bound) {
  auto cfg = config_from(kMassConfig + "sigma.scale = 1.1\n");
  cfg.trajectory.mass_bound = mass_bound;
  return cfg;
}

// 7. P(sup L1 > M) <= L1(0)/M
Outcome doob_bound() {
  const auto r = run_ensemble(strong_noise_config(1e12));
  const auto& doob = r.aggregates.doob;
  std::string detail;
  for (const auto& e : doob.entries)
    detail += "M=" + fmt(e.M) + ": " + fmt(e.exceed_fraction, 3) + " <= " + fmt(e.bound, 3) + "; ";
  detail += "clamped fraction " + fmt(r.aggregates.mean_clamped_fraction, 2);
  return {doob.pass && doob.entries.size() == 3 && r.aggregates.failures == 0, detail};
}

// 8. E Q(tau) <= M^2 with tau the first of T, tau_n, tau_M^I
Outcome qv_bound() {
  Outcome o{true, ""};
  const double l1 = pi;  // constant 1 on [0, pi]
  for (double k : {2.0, 4.0, 8.0}) {
    const auto r = run_ensemble(strong_noise_config(k * l1));
    std::vector<double> q;
    for (const auto& row : r.rows) q.push_back(row.final_Q);
    const auto est = stats::mean_estimate(q);
    const double M = k * l1;
    const bool ok = est.mean <= M * M + 3.0 * est.standard_error && r.aggregates.failures == 0;
    o.pass = o.pass && ok;
    o.detail += "M=" + fmt(M) + ": " + fmt(est.mean, 4) + " <= " + fmt(M * M, 4) + " (tau_M " +
                std::to_string(r.aggregates.stopped_tau_M) + ", clamped " +
                fmt(r.aggregates.mean_clamped_fraction, 2) + "); ";
  }
  return o;
}

// 9. stochastic convolution moments, phi = 1
Outcome convolution_moments() {
  DomainSpec dom;
  dom.boundary = Boundary::dirichlet;
  dom.grid = 64;
  const double theta = 0.25;
  const auto basis = std::make_shared<const SpectralBasis>(dom);
  const NoiseModel noise(CovarianceSpec::spectral(theta, 0.0), basis);
  MomentProbeOptions opt;
  opt.p = 20.0;
  opt.T_grid = stats::log_spaced(1e-3, 1e-1, 6);
  opt.paths = 10000;
  opt.batches = 40;
  opt.dt = 1e-4;
  opt.seed = 11;
  opt.workers = 1;
  const auto r = convolution_moment_probe(noise, {}, opt);

  const double x = r.probe_point[0], T = opt.T_grid.back();
  double oracle = 0.0;
  for (int k = 1; k <= 64; ++k) {
    const double a = double(k) * k;
    const double e = std::sqrt(2.0 / pi) * std::sin(k * x);
    oracle += std::tgamma(theta) * std::pow(a, -theta) * (1.0 - std::exp(-2.0 * a * T)) / (2.0 * a) * e * e;
  }
  const double var_dev = std::abs(r.variance - oracle) / r.variance_se;
  const bool slope_ok = r.fitted_slope >= r.theoretical_exponent - 0.15;
  return {var_dev < 3.0 && slope_ok,
          "variance " + fmt(r.variance, 5) + " vs oracle " + fmt(oracle, 5) + " (" + fmt(var_dev, 3) +
              " se); slope " + fmt(r.fitted_slope, 4) + " vs exponent " + fmt(r.theoretical_exponent, 4) +
              " - 0.15"};
}

// 10. exit fractions across gamma
Outcome gamma_sweep() {
  auto cfg = config_from(
      "domain.boundary = neumann\n"
      "domain.grid = 64\n"
      "noise.kernel = white\n"
      "sigma.truncation = 1024\n"
      "run.initial_value = 5\n"
      "run.horizon = 0.1\n"
      "run.paths = 1000\n"
      "run.doubling_floor = 4\n");
  std::vector<int> levels;
  for (int m = 1; m <= 10; ++m) levels.push_back(m);
  const auto sw = sweep_gamma(cfg, {1.3, 1.5, 1.7, 2.0}, levels);
  bool gamma_monotone = true, finite = true;
  std::string detail = "exit(2^10):";
  for (std::size_t g = 0; g < sw.cells.size(); ++g) {
    const auto& c = sw.cells[g];
    detail += " " + fmt(c.gamma, 2) + "->" + fmt(c.exits.back().fraction, 3) + " (ups>m0 " +
              fmt(c.mean_up_events_above_m0, 3) + ", clamped " + fmt(c.mean_clamped_fraction, 2) + ")";
    finite = finite && std::isfinite(c.mean_up_events_above_m0);
    if (g > 0) gamma_monotone = gamma_monotone && c.exits.back().fraction >= sw.cells[g - 1].exits.back().fraction;
  }
  detail += std::string("; nested in threshold: ") + (sw.monotone_in_threshold ? "yes" : "no");
  const bool gc = sw.gamma_c && std::abs(*sw.gamma_c - 1.5) < 1e-12;
  return {gamma_monotone && sw.monotone_in_threshold && finite && gc, detail};
}

// 11. rows are byte-identical across worker counts
Outcome determinism() {
  const auto& first = mass_run();
  const auto again = mass_identity_run(1);
  const auto threaded = mass_identity_run(4);
  const std::string a = rows_text(first.result), b = rows_text(again.result), c = rows_text(threaded.result);
  return {a == b && a == c,
          "rows " + std::to_string(a.size()) + " bytes; rerun " + (a == b ? "identical" : "differs") +
              "; 4 workers " + (a == c ? "identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
      {"heat-kernel exponent", heat_kernel_exponent},
      {"noise-decay exponent", noise_decay_exponent},
      {"closed-form double integral", double_integral_closed_form},
      {"sampler covariance", sampler_covariance},
      {"discrete martingale identity", martingale_identity},
      {"Dirichlet domination", dirichlet_domination},
      {"Doob bound", doob_bound},
      {"quadratic variation bound", qv_bound},
      {"convolution moment probe", convolution_moments},
      {"gamma sweep", gamma_sweep},
      {"determinism", determinism},
  };
  std::vector<bool> selected(criteria.size(), argc == 1);
  for (int i = 1; i < argc; ++i) {
    const int k = std::atoi(argv[i]);
    if (k >= 1 && k <= static_cast<int>(criteria.size())) selected[k - 1] = true;
  }
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected[i]) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] %2zu %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, secs,
                o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
