#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "shelab/integrator.hpp"
#include "shelab/noise.hpp"

namespace shelab {

enum class DoublingDirection { up, down, censored };
std::string to_string(DoublingDirection d);

/// One segment [rho_n, rho_{n+1}] of the doubling sequence: the sup-norm sits
/// at level 2^m at rho_n and leaves for 2^{m+1} (up) or 2^{m-1} (down), or the
/// record ends first (censored).
struct DoublingEvent {
  std::size_t index = 0;
  int level = 0;
  DoublingDirection direction = DoublingDirection::censored;
  double rho_start = 0.0;
  double rho_end = 0.0;
  double q_segment = 0.0;  // Q(rho_{n+1}) - Q(rho_n)
  std::size_t start_sample = 0;
  std::size_t end_sample = 0;
  bool fast = false;  // up event completed within T_m (see annotate_fast)
};

struct DoublingSummary {
  std::vector<DoublingEvent> events;
  int m0 = 1;
  std::size_t up_events = 0;
  std::size_t down_events = 0;
  std::size_t up_events_above_m0 = 0;  // up events leaving a level m > m0
};

/// Replays a sup-norm series. rho_0 is the first time the series sits at a
/// dyadic level 2^m, m >= 1. From level m >= 2 the next event is the first
/// sample >= 2^{m+1} or <= 2^{m-1}; from level 1 only >= 4 counts. A sample
/// that jumps several levels emits one zero-length event per level crossed,
/// in order, so successive levels always differ by one.
DoublingSummary detect_doubling(std::span<const double> t, std::span<const double> sup_norm,
                                std::span<const double> Q, int m0);
DoublingSummary detect_doubling(const TrajectoryRecord& record, int m0);

/// CSV columns n,m,direction,rho_start,rho_end,Q_segment.
void write_doubling_csv(const DoublingSummary& summary, std::ostream& out);

/// T_m = (C M / 2^{m-2})^{1/beta}. Throws when T_m >= 1, which happens below m0.
double doubling_window(double mass_bound, int level, double beta, double c_fit);

/// m0 = ceil(log2(C M)) + 2, the smallest level floor with T_m < 1 above it.
int doubling_level_floor(double mass_bound, double c_fit);

/// Marks up events with level > m0 that completed within T_m as fast.
void annotate_fast(DoublingSummary& summary, double mass_bound, double beta, double c_fit);

struct DoobEntry {
  double M = 0.0;
  double exceed_fraction = 0.0;
  double bound = 0.0;  // |u0|_{L1} / M
  double standard_error = 0.0;
  double margin_se = 0.0;  // (bound - fraction) / se; +inf when se = 0 and fraction <= bound
  bool pass = false;       // fraction <= bound + 3 se
};

struct DoobReport {
  double l1_initial = 0.0;
  std::size_t paths = 0;
  std::vector<DoobEntry> entries;
  bool pass = true;
};

/// Empirical P(sup_{t<=T} |u(t)|_{L1} > M) against |u0|_{L1} / M.
DoobReport doob_check(std::span<const double> max_l1, double l1_initial,
                      std::span<const double> mass_grid);

struct QVReport {
  double M = 0.0;
  double mean_Q = 0.0;
  double standard_error = 0.0;
  double bound = 0.0;  // M^2
  double margin_se = 0.0;
  std::size_t paths = 0;
  bool pass = false;  // mean <= M^2 + 3 se
};

/// Mean of Q at the stopping time (tau_M^I capped by T and tau_n) against M^2.
QVReport qv_bound_check(std::span<const double> q_at_stop, double mass_bound);

struct MartingaleReport {
  double l1_initial = 0.0;
  double mean_final = 0.0;
  double standard_error = 0.0;
  double deviation_se = 0.0;
  bool pass = false;  // |mean - L1(0)| < 3 se
};

MartingaleReport martingale_mean_check(std::span<const double> final_l1, double l1_initial);

struct MomentProbeReport {
  double p = 0.0;
  double beta = 0.0;
  double eta = 0.0;
  bool admissible = false;
  std::vector<double> T_grid;
  std::vector<double> moments;  // median-of-means estimate of E sup|Z|^p
  double fitted_slope = 0.0;
  double fitted_C = 0.0;
  double theoretical_exponent = 0.0;  // (1 - eta)(p - 2)/2 - 2 beta
  double slope_tolerance = 0.15;
  bool pass = false;  // fitted_slope >= theoretical_exponent - tolerance
  std::size_t paths = 0;
  std::size_t batches = 32;
  double dt = 0.0;
  // Pointwise variance of Z(T_max, x) at the grid point nearest the center.
  Point probe_point{0.0, 0.0, 0.0};
  double variance = 0.0;
  double variance_se = 0.0;
  double variance_oracle = 0.0;  // spectral kernel, phi = 1 only; NaN otherwise
};

/// (1 + beta)/p < (1 - eta)/2 - beta/(p - 2).
bool moment_order_admissible(double p, double beta, double eta);

struct MomentProbeOptions {
  double p = 20.0;
  std::vector<double> T_grid;
  std::size_t paths = 2048;
  std::size_t batches = 32;
  double dt = 1e-5;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  double slope_tolerance = 0.15;
};

/// Simulates Z = S(dt)[Z + phi dW] from Z = 0 and measures E sup_{t<=T}
/// sup_x |Z|^p on each T. `phi` holds grid values (empty means phi = 1).
/// Throws for an inadmissible p.
MomentProbeReport convolution_moment_probe(const NoiseModel& noise, std::span<const double> phi,
                                           const MomentProbeOptions& options);

}  // namespace shelab
