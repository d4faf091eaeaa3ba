#include "shelab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "shelab/error.hpp"
#include "shelab/format.hpp"
#include "shelab/parallel.hpp"
#include "shelab/stats.hpp"

namespace shelab {

std::string to_string(DoublingDirection d) {
  switch (d) {
    case DoublingDirection::up:
      return "up";
    case DoublingDirection::down:
      return "down";
    case DoublingDirection::censored:
      return "censored";
  }
  return "censored";
}

DoublingSummary detect_doubling(std::span<const double> t, std::span<const double> sup,
                                std::span<const double> Q, int m0) {
  require(t.size() == sup.size() && t.size() == Q.size(),
          "detect_doubling: series lengths differ");
  require(m0 >= 1, "detect_doubling: m0 must be >= 1");
  DoublingSummary out;
  out.m0 = m0;
  if (t.empty()) return out;

  bool started = false;
  int level = 0;
  int bracket = -1;  // pre-start: sup sits strictly inside [2^b, 2^{b+1})
  DoublingEvent open;

  auto start = [&](std::size_t i, int m) {
    started = true;
    level = m;
    open = DoublingEvent{};
    open.index = 0;
    open.level = m;
    open.rho_start = t[i];
    open.start_sample = i;
  };
  auto close = [&](std::size_t i, DoublingDirection dir) {
    open.direction = dir;
    open.rho_end = t[i];
    open.end_sample = i;
    open.q_segment = Q[i] - Q[open.start_sample];
    if (dir == DoublingDirection::up) {
      ++out.up_events;
      if (open.level > m0) ++out.up_events_above_m0;
    } else if (dir == DoublingDirection::down) {
      ++out.down_events;
    }
    out.events.push_back(open);
    const std::size_t next_index = open.index + 1;
    open = DoublingEvent{};
    open.index = next_index;
    open.rho_start = t[i];
    open.start_sample = i;
  };
  auto process = [&](std::size_t i) {
    const double s = sup[i];
    for (;;) {
      if (s >= std::ldexp(1.0, level + 1)) {
        close(i, DoublingDirection::up);
        open.level = ++level;
      } else if (level >= 2 && s <= std::ldexp(1.0, level - 1)) {
        close(i, DoublingDirection::down);
        open.level = --level;
      } else {
        break;
      }
    }
  };

  for (std::size_t i = 0; i < t.size(); ++i) {
    const double s = sup[i];
    if (started) {
      process(i);
      continue;
    }
    if (i == 0) {
      if (s >= 2.0) {
        int e = 0;
        const double f = std::frexp(s, &e);  // s = f 2^e, f in [1/2, 1)
        if (f == 0.5) {
          start(i, e - 1);
          process(i);
        } else {
          bracket = e - 1;
        }
      }
      continue;
    }
    if (bracket < 0) {
      if (s >= 2.0) {
        start(i, 1);
        process(i);
      }
    } else if (s >= std::ldexp(1.0, bracket + 1)) {
      start(i, bracket + 1);
      process(i);
    } else if (s <= std::ldexp(1.0, bracket)) {
      start(i, bracket);
      process(i);
    }
  }
  if (started) {
    const std::size_t last = t.size() - 1;
    open.direction = DoublingDirection::censored;
    open.rho_end = t[last];
    open.end_sample = last;
    open.q_segment = Q[last] - Q[open.start_sample];
    out.events.push_back(open);
  }
  return out;
}

DoublingSummary detect_doubling(const TrajectoryRecord& record, int m0) {
  return detect_doubling(record.t, record.sup_norm, record.Q, m0);
}

void write_doubling_csv(const DoublingSummary& summary, std::ostream& out) {
  out << "n,m,direction,rho_start,rho_end,Q_segment\n";
  for (const auto& e : summary.events)
    out << e.index << ',' << e.level << ',' << to_string(e.direction) << ','
        << format_double(e.rho_start) << ',' << format_double(e.rho_end) << ','
        << format_double(e.q_segment) << '\n';
}

double doubling_window(double mass_bound, int level, double beta, double c_fit) {
  require(mass_bound > 0.0 && beta > 0.0 && c_fit > 0.0,
          "doubling_window: M, beta and C must be positive");
  const double tm = std::pow(c_fit * mass_bound / std::ldexp(1.0, level - 2), 1.0 / beta);
  if (!(tm < 1.0))
    fail(ErrorCode::invalid_argument,
         "doubling_window: T_m >= 1; level " + std::to_string(level) + " is below the m0 threshold " +
             std::to_string(doubling_level_floor(mass_bound, c_fit)));
  return tm;
}

int doubling_level_floor(double mass_bound, double c_fit) {
  require(mass_bound > 0.0 && c_fit > 0.0, "doubling_level_floor: M and C must be positive");
  return static_cast<int>(std::ceil(std::log2(c_fit * mass_bound))) + 2;
}

void annotate_fast(DoublingSummary& summary, double mass_bound, double beta, double c_fit) {
  const int m0 = doubling_level_floor(mass_bound, c_fit);
  for (auto& e : summary.events) {
    e.fast = false;
    if (e.direction != DoublingDirection::up || e.level <= m0) continue;
    e.fast = (e.rho_end - e.rho_start) <= doubling_window(mass_bound, e.level, beta, c_fit);
  }
}

DoobReport doob_check(std::span<const double> max_l1, double l1_initial,
                      std::span<const double> mass_grid) {
  DoobReport r;
  r.l1_initial = l1_initial;
  r.paths = max_l1.size();
  for (double M : mass_grid) {
    require(M > 0.0, "doob_check: M must be positive");
    DoobEntry e;
    e.M = M;
    std::size_t hits = 0;
    for (double v : max_l1)
      if (v > M) ++hits;
    e.exceed_fraction = max_l1.empty() ? 0.0 : static_cast<double>(hits) / max_l1.size();
    e.bound = l1_initial / M;
    e.standard_error = stats::fraction_standard_error(e.exceed_fraction, max_l1.size());
    const double gap = e.bound - e.exceed_fraction;
    e.margin_se = e.standard_error > 0.0 ? gap / e.standard_error
                                         : (gap >= 0.0 ? std::numeric_limits<double>::infinity()
                                                       : -std::numeric_limits<double>::infinity());
    e.pass = e.exceed_fraction <= e.bound + 3.0 * e.standard_error;
    r.pass = r.pass && e.pass;
    r.entries.push_back(e);
  }
  return r;
}

QVReport qv_bound_check(std::span<const double> q_at_stop, double mass_bound) {
  QVReport r;
  r.M = mass_bound;
  r.bound = mass_bound * mass_bound;
  r.paths = q_at_stop.size();
  const auto est = stats::mean_estimate(q_at_stop);
  r.mean_Q = est.mean;
  r.standard_error = est.standard_error;
  const double gap = r.bound - r.mean_Q;
  r.margin_se = r.standard_error > 0.0 ? gap / r.standard_error
                                       : (gap >= 0.0 ? std::numeric_limits<double>::infinity()
                                                     : -std::numeric_limits<double>::infinity());
  r.pass = r.mean_Q <= r.bound + 3.0 * r.standard_error;
  return r;
}

MartingaleReport martingale_mean_check(std::span<const double> final_l1, double l1_initial) {
  MartingaleReport r;
  r.l1_initial = l1_initial;
  const auto est = stats::mean_estimate(final_l1);
  r.mean_final = est.mean;
  r.standard_error = est.standard_error;
  const double dev = std::abs(r.mean_final - l1_initial);
  r.deviation_se = r.standard_error > 0.0 ? dev / r.standard_error
                                          : (dev == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
  r.pass = r.standard_error > 0.0 ? dev < 3.0 * r.standard_error : dev == 0.0;
  return r;
}

bool moment_order_admissible(double p, double beta, double eta) {
  if (!(p > 2.0)) return false;
  return (1.0 + beta) / p < 0.5 * (1.0 - eta) - beta / (p - 2.0);
}

MomentProbeReport convolution_moment_probe(const NoiseModel& noise, std::span<const double> phi,
                                           const MomentProbeOptions& opt) {
  const SpectralBasis& basis = noise.basis();
  const int d = basis.dimension();
  const KernelParams kp = raw_kernel_params(noise.spec(), d);

  MomentProbeReport r;
  r.p = opt.p;
  r.beta = kp.beta;
  r.eta = kp.eta;
  r.admissible = kp.eta > 0.0 && kp.eta < 1.0 && moment_order_admissible(opt.p, kp.beta, kp.eta);
  if (!r.admissible)
    fail(ErrorCode::invalid_argument,
         "convolution_moment_probe: p = " + format_double(opt.p) +
             " is not admissible: need (1+beta)/p < (1-eta)/2 - beta/(p-2)");
  require(opt.T_grid.size() >= 2, "convolution_moment_probe: need at least two horizons");
  require(opt.dt > 0.0, "convolution_moment_probe: dt must be positive");
  require(opt.batches >= 1 && opt.paths >= opt.batches,
          "convolution_moment_probe: need at least one path per batch");

  const std::size_t P = basis.point_count();
  require(phi.empty() || phi.size() == P, "convolution_moment_probe: phi size mismatch with basis");
  bool phi_is_one = true;
  for (double v : phi) phi_is_one = phi_is_one && v == 1.0;

  r.T_grid = opt.T_grid;
  std::sort(r.T_grid.begin(), r.T_grid.end());
  require(r.T_grid.front() > 0.0, "convolution_moment_probe: horizons must be positive");
  r.paths = opt.paths;
  r.batches = opt.batches;
  r.dt = opt.dt;
  r.slope_tolerance = opt.slope_tolerance;
  r.theoretical_exponent = 0.5 * (1.0 - kp.eta) * (opt.p - 2.0) - 2.0 * kp.beta;

  const std::size_t nT = r.T_grid.size();
  std::vector<std::size_t> stop_step(nT);
  for (std::size_t j = 0; j < nT; ++j)
    stop_step[j] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(r.T_grid[j] / opt.dt)));
  const std::size_t K = stop_step.back();

  std::size_t probe_index = 0;
  for (int i = 0; i < d; ++i) probe_index = probe_index * basis.grid_size() + basis.grid_size() / 2;
  r.probe_point = basis.grid_point(probe_index);

  std::vector<double> sup_p(nT * opt.paths);
  std::vector<double> z2(opt.paths);
  parallel_for(opt.paths, opt.workers, [&](std::size_t path) {
    RandomStream rng(opt.seed + path, 1);
    NoiseWorkspace ws = noise.make_workspace();
    std::vector<double> z(P, 0.0), dW(P), coeffs(basis.mode_count());
    std::vector<double> prop(basis.mode_count());
    const auto alpha = basis.eigenvalues();
    for (std::size_t m = 0; m < prop.size(); ++m) prop[m] = std::exp(-alpha[m] * opt.dt);
    double running = 0.0;
    std::size_t next = 0;
    for (std::size_t k = 1; k <= K; ++k) {
      noise.sample(opt.dt, rng, dW, ws);
      if (phi.empty()) {
        for (std::size_t i = 0; i < P; ++i) z[i] += dW[i];
      } else {
        for (std::size_t i = 0; i < P; ++i) z[i] += phi[i] * dW[i];
      }
      basis.to_spectral(z, coeffs, ws.transform);
      for (std::size_t m = 0; m < coeffs.size(); ++m) coeffs[m] *= prop[m];
      basis.to_grid(coeffs, z, ws.transform);
      for (double v : z) running = std::max(running, std::abs(v));
      while (next < nT && stop_step[next] == k) {
        sup_p[next * opt.paths + path] = std::pow(running, opt.p);
        ++next;
      }
    }
    z2[path] = z[probe_index] * z[probe_index];
  });

  for (std::size_t j = 0; j < nT; ++j)
    r.moments.push_back(stats::median_of_means(
        std::span<const double>(sup_p.data() + j * opt.paths, opt.paths), opt.batches));
  const bool all_zero = std::all_of(r.moments.begin(), r.moments.end(), [](double m) { return m == 0.0; });
  if (all_zero) {
    // Z = 0 identically: the moment bound holds trivially and there is no slope.
    r.fitted_slope = std::numeric_limits<double>::quiet_NaN();
    r.fitted_C = 0.0;
    r.pass = true;
  } else if (std::any_of(r.moments.begin(), r.moments.end(), [](double m) { return !(m > 0.0); })) {
    r.fitted_slope = std::numeric_limits<double>::quiet_NaN();
    r.fitted_C = 0.0;
    r.pass = false;
  } else {
    const auto fit = stats::fit_power_law(r.T_grid, r.moments);
    r.fitted_slope = fit.slope;
    r.fitted_C = std::exp(fit.intercept);
    r.pass = r.fitted_slope >= r.theoretical_exponent - r.slope_tolerance;
  }

  const auto var = stats::mean_estimate(z2);
  r.variance = var.mean;
  r.variance_se = var.standard_error;
  r.variance_oracle = std::numeric_limits<double>::quiet_NaN();
  if (const auto* s = std::get_if<SpectralKernel>(&noise.spec().kernel); s && phi_is_one) {
    const auto w = spectral_weights(*s, basis);
    const auto alpha = basis.eigenvalues();
    const double T = static_cast<double>(K) * opt.dt;
    double v = 0.0;
    for (std::size_t m = 0; m < w.size(); ++m) {
      const double e = basis.mode_function(m, r.probe_point);
      const double g = alpha[m] > 0.0 ? (1.0 - std::exp(-2.0 * alpha[m] * T)) / (2.0 * alpha[m]) : T;
      v += w[m] * g * e * e;
    }
    r.variance_oracle = v;
  }
  return r;
}

}  // namespace shelab
