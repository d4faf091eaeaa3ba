#include "shelab/domain.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "shelab/error.hpp"

namespace shelab {
namespace {

// The FFTW planner is not re-entrant.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::size_t ipow(std::size_t base, int exp) {
  std::size_t r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

// Wavenumber of a per-axis slot, defined for every slot index including the
// ones beyond the retained set (used for tail sums).
double slot_wavenumber(Boundary b, double length, std::size_t slot) {
  const double base = std::numbers::pi / length;
  switch (b) {
    case Boundary::dirichlet:
      return base * static_cast<double>(slot + 1);
    case Boundary::neumann:
      return base * static_cast<double>(slot);
    case Boundary::periodic:
      return 2.0 * base * static_cast<double>((slot + 1) / 2);
  }
  return 0.0;
}

}  // namespace

std::string to_string(Boundary b) {
  switch (b) {
    case Boundary::periodic:
      return "periodic";
    case Boundary::neumann:
      return "neumann";
    case Boundary::dirichlet:
      return "dirichlet";
  }
  return "unknown";
}

Boundary parse_boundary(const std::string& name) {
  if (name == "periodic") return Boundary::periodic;
  if (name == "neumann") return Boundary::neumann;
  if (name == "dirichlet") return Boundary::dirichlet;
  fail(ErrorCode::config, "domain.boundary: expected periodic|neumann|dirichlet, got '" +
                              name + "'");
}

void DomainSpec::validate() const {
  if (dimension < 1 || dimension > 3)
    fail(ErrorCode::config, "domain.dimension: unsupported dimension " +
                                std::to_string(dimension) + " (need 1 <= d <= 3)");
  if (!(length > 0.0) || !std::isfinite(length))
    fail(ErrorCode::config, "domain.length: side length must be positive");
  if (grid < 8)
    fail(ErrorCode::config, "domain.grid: need n >= 8 points per axis");
  if (!is_power_of_two(grid))
    fail(ErrorCode::config, "domain.grid: n must be a power of two");
  const std::size_t cutoff = mode_cutoff();
  if (cutoff > grid)
    fail(ErrorCode::config, "domain.modes: mode cutoff N = " + std::to_string(cutoff) +
                                " exceeds grid resolution n = " + std::to_string(grid));
}

struct SpectralBasis::Plans {
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;
  ~Plans() {
    std::lock_guard lock(planner_mutex());
    if (forward) fftw_destroy_plan(forward);
    if (backward) fftw_destroy_plan(backward);
  }
};

SpectralBasis::SpectralBasis(const DomainSpec& spec) : spec_(spec) {
  spec_.validate();
  const int d = spec_.dimension;
  const std::size_t n = spec_.grid;
  cutoff_ = spec_.mode_cutoff();
  points_ = ipow(n, d);
  spacing_ = spec_.length / static_cast<double>(n);
  cell_volume_ = std::pow(spacing_, d);

  const double L = spec_.length;
  const double c0 = 1.0 / std::sqrt(L);
  const double c1 = std::sqrt(2.0 / L);
  const double nn = static_cast<double>(n);

  wavenumber_.resize(cutoff_);
  axis_fwd_.resize(cutoff_);
  axis_bwd_.resize(cutoff_);
  axis_pos_.resize(cutoff_);
  std::vector<double> axis_weight(cutoff_, 1.0);
  for (std::size_t s = 0; s < cutoff_; ++s) {
    wavenumber_[s] = slot_wavenumber(spec_.boundary, L, s);
    double bwd = 0.0;
    double roundtrip = 2.0 * nn;  // REDFT10/01 and RODFT10/01 pairs
    switch (spec_.boundary) {
      case Boundary::neumann:
        axis_pos_[s] = s;
        bwd = (s == 0) ? c0 : 0.5 * c1;
        break;
      case Boundary::dirichlet:
        axis_pos_[s] = s;
        bwd = (s == n - 1) ? c1 : 0.5 * c1;
        if (s == n - 1) axis_weight[s] = 2.0;
        break;
      case Boundary::periodic: {
        roundtrip = nn;  // R2HC/HC2R pair
        const std::size_t m = (s + 1) / 2;
        if (s == 0) {
          axis_pos_[s] = 0;
          bwd = c0;
        } else if (s == n - 1) {
          axis_pos_[s] = n / 2;
          bwd = c1;
          axis_weight[s] = 2.0;
        } else if (s % 2 == 1) {
          axis_pos_[s] = m;
          bwd = 0.5 * c1;
        } else {
          axis_pos_[s] = n - m;
          bwd = -0.5 * c1;
        }
        break;
      }
    }
    axis_bwd_[s] = bwd;
    axis_fwd_[s] = 1.0 / (roundtrip * bwd);
  }

  const std::size_t modes = ipow(cutoff_, d);
  eigenvalues_.resize(modes);
  mode_pos_.resize(modes);
  mode_fwd_.resize(modes);
  mode_bwd_.resize(modes);
  weight_.resize(modes);
  for (std::size_t m = 0; m < modes; ++m) {
    const auto slots = mode_slots(m);
    double lambda = 0.0, fwd = 1.0, bwd = 1.0, w = 1.0;
    std::size_t pos = 0;
    for (int i = 0; i < d; ++i) {
      const std::size_t s = slots[i];
      lambda += wavenumber_[s] * wavenumber_[s];
      fwd *= axis_fwd_[s];
      bwd *= axis_bwd_[s];
      w *= axis_weight[s];
      pos = pos * n + axis_pos_[s];
    }
    eigenvalues_[m] = lambda;
    mode_pos_[m] = pos;
    mode_fwd_[m] = fwd;
    mode_bwd_[m] = bwd;
    weight_[m] = w;
  }
}

SpectralBasis::~SpectralBasis() = default;

const SpectralBasis::Plans& SpectralBasis::plans() const {
  std::call_once(plans_once_, [this] {
    auto p = std::make_unique<Plans>();
    const int d = spec_.dimension;
    int dims[3];
    fftw_r2r_kind fwd_kind[3], bwd_kind[3];
    for (int i = 0; i < d; ++i) {
      dims[i] = static_cast<int>(spec_.grid);
      switch (spec_.boundary) {
        case Boundary::neumann:
          fwd_kind[i] = FFTW_REDFT10;
          bwd_kind[i] = FFTW_REDFT01;
          break;
        case Boundary::dirichlet:
          fwd_kind[i] = FFTW_RODFT10;
          bwd_kind[i] = FFTW_RODFT01;
          break;
        case Boundary::periodic:
          fwd_kind[i] = FFTW_R2HC;
          bwd_kind[i] = FFTW_HC2R;
          break;
      }
    }
    std::lock_guard lock(planner_mutex());
    double* a = fftw_alloc_real(points_);
    double* b = fftw_alloc_real(points_);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    p->forward = fftw_plan_r2r(d, dims, a, b, fwd_kind, flags);
    p->backward = fftw_plan_r2r(d, dims, a, b, bwd_kind, flags);
    fftw_free(a);
    fftw_free(b);
    if (!p->forward || !p->backward)
      fail(ErrorCode::numerical, "FFTW planning failed");
    plans_ = std::move(p);
  });
  return *plans_;
}

double SpectralBasis::grid_coordinate(std::size_t j) const {
  const double offset = spec_.boundary == Boundary::periodic ? 0.0 : 0.5;
  return (static_cast<double>(j) + offset) * spacing_;
}

Point SpectralBasis::grid_point(std::size_t flat) const {
  Point x{0.0, 0.0, 0.0};
  const std::size_t n = spec_.grid;
  for (int i = spec_.dimension - 1; i >= 0; --i) {
    x[i] = grid_coordinate(flat % n);
    flat /= n;
  }
  return x;
}

Point SpectralBasis::center() const {
  Point x{0.0, 0.0, 0.0};
  for (int i = 0; i < spec_.dimension; ++i) x[i] = 0.5 * spec_.length;
  return x;
}

double SpectralBasis::axis_eigenfunction(std::size_t slot, double x) const {
  const double L = spec_.length;
  const double c1 = std::sqrt(2.0 / L);
  const double kappa = slot_wavenumber(spec_.boundary, L, slot);
  switch (spec_.boundary) {
    case Boundary::dirichlet:
      return c1 * std::sin(kappa * x);
    case Boundary::neumann:
      return slot == 0 ? 1.0 / std::sqrt(L) : c1 * std::cos(kappa * x);
    case Boundary::periodic:
      if (slot == 0) return 1.0 / std::sqrt(L);
      // Slot n-1 of a full basis is the Nyquist cosine (odd slot).
      return (slot % 2 == 1) ? c1 * std::cos(kappa * x) : c1 * std::sin(kappa * x);
  }
  return 0.0;
}

double SpectralBasis::axis_unit_integral(std::size_t slot) const {
  const double L = spec_.length;
  const double c1 = std::sqrt(2.0 / L);
  switch (spec_.boundary) {
    case Boundary::dirichlet: {
      const std::size_t k = slot + 1;
      return (k % 2 == 1) ? c1 * 2.0 * L / (std::numbers::pi * static_cast<double>(k))
                          : 0.0;
    }
    case Boundary::neumann:
    case Boundary::periodic:
      return slot == 0 ? std::sqrt(L) : 0.0;
  }
  return 0.0;
}

double SpectralBasis::axis_sup_norm() const { return std::sqrt(2.0 / spec_.length); }

std::vector<double> SpectralBasis::sorted_eigenvalues() const {
  std::vector<double> v = eigenvalues_;
  std::sort(v.begin(), v.end());
  return v;
}

std::array<std::size_t, 3> SpectralBasis::mode_slots(std::size_t mode) const {
  std::array<std::size_t, 3> s{0, 0, 0};
  for (int i = spec_.dimension - 1; i >= 0; --i) {
    s[i] = mode % cutoff_;
    mode /= cutoff_;
  }
  return s;
}

MultiIndex SpectralBasis::mode_index(std::size_t mode) const {
  const auto s = mode_slots(mode);
  MultiIndex k;
  for (int i = 0; i < spec_.dimension; ++i)
    k.k[i] = static_cast<int>(s[i]) + (spec_.boundary == Boundary::dirichlet ? 1 : 0);
  return k;
}

std::size_t SpectralBasis::mode_of(const MultiIndex& k) const {
  const int offset = spec_.boundary == Boundary::dirichlet ? 1 : 0;
  std::size_t mode = 0;
  for (int i = 0; i < spec_.dimension; ++i) {
    const int slot = k.k[i] - offset;
    if (slot < 0 || static_cast<std::size_t>(slot) >= cutoff_)
      fail(ErrorCode::invalid_argument,
           "mode index component " + std::to_string(k.k[i]) + " outside retained range for " +
               to_string(spec_.boundary) + " basis with cutoff " + std::to_string(cutoff_));
    mode = mode * cutoff_ + static_cast<std::size_t>(slot);
  }
  return mode;
}

void SpectralBasis::check_point(const Point& x) const {
  for (int i = 0; i < spec_.dimension; ++i)
    if (!(x[i] >= 0.0 && x[i] <= spec_.length))
      fail(ErrorCode::invalid_argument, "point outside the closed box");
}

double SpectralBasis::mode_function(std::size_t mode, const Point& x) const {
  const auto s = mode_slots(mode);
  double v = 1.0;
  for (int i = 0; i < spec_.dimension; ++i) v *= axis_eigenfunction(s[i], x[i]);
  return v;
}

double SpectralBasis::eigenfunction(const MultiIndex& k, const Point& x) const {
  check_point(x);
  return mode_function(mode_of(k), x);
}

double SpectralBasis::unit_integral(std::size_t mode) const {
  const auto s = mode_slots(mode);
  double v = 1.0;
  for (int i = 0; i < spec_.dimension; ++i) v *= axis_unit_integral(s[i]);
  return v;
}

void SpectralBasis::to_spectral(std::span<const double> grid, std::span<double> coeffs,
                                TransformScratch& scratch) const {
  if (grid.size() != points_ || coeffs.size() != mode_count())
    fail(ErrorCode::invalid_argument, "to_spectral: size mismatch with basis");
  scratch.in.resize(points_);
  scratch.out.resize(points_);
  std::copy(grid.begin(), grid.end(), scratch.in.begin());
  fftw_execute_r2r(plans().forward, scratch.in.data(), scratch.out.data());
  const std::size_t modes = mode_count();
  for (std::size_t m = 0; m < modes; ++m) coeffs[m] = scratch.out[mode_pos_[m]] * mode_fwd_[m];
}

void SpectralBasis::to_grid(std::span<const double> coeffs, std::span<double> grid,
                            TransformScratch& scratch) const {
  if (grid.size() != points_ || coeffs.size() != mode_count())
    fail(ErrorCode::invalid_argument, "to_grid: size mismatch with basis");
  scratch.in.assign(points_, 0.0);
  const std::size_t modes = mode_count();
  for (std::size_t m = 0; m < modes; ++m) scratch.in[mode_pos_[m]] = coeffs[m] * mode_bwd_[m];
  fftw_execute_r2r(plans().backward, scratch.in.data(), grid.data());
}

SpectralField SpectralBasis::to_spectral(const GridField& field) const {
  if (field.basis.get() != this)
    fail(ErrorCode::invalid_argument, "to_spectral: field belongs to another basis");
  SpectralField out{field.basis, std::vector<double>(mode_count())};
  TransformScratch scratch;
  to_spectral(field.values, out.coefficients, scratch);
  return out;
}

GridField SpectralBasis::to_grid(const SpectralField& field) const {
  if (field.basis.get() != this)
    fail(ErrorCode::invalid_argument, "to_grid: field belongs to another basis");
  GridField out{field.basis, std::vector<double>(points_), false};
  TransformScratch scratch;
  to_grid(field.coefficients, out.values, scratch);
  return out;
}

double SpectralBasis::integrate(std::span<const double> grid) const {
  double s = 0.0;
  for (double v : grid) s += v;
  return s * cell_volume_;
}

double GridField::spacing() const { return basis ? basis->spacing() : 0.0; }

void GridField::check() const {
  double sup = 0.0, lo = 0.0;
  for (double v : values) {
    if (!std::isfinite(v)) fail(ErrorCode::numerical, "grid field has non-finite values");
    sup = std::max(sup, std::abs(v));
    lo = std::min(lo, v);
  }
  if (nonnegative && lo < -1e-12 * std::max(1.0, sup))
    fail(ErrorCode::numerical, "grid field flagged nonnegative has minimum " + std::to_string(lo));
}

TransformScratch make_scratch(const SpectralBasis& basis) {
  return TransformScratch{std::vector<double>(basis.point_count()),
                          std::vector<double>(basis.point_count())};
}

void semigroup_apply(const SpectralBasis& basis, std::span<double> coeffs, double t) {
  if (t < 0.0) fail(ErrorCode::invalid_argument, "semigroup_apply: negative time");
  if (coeffs.size() != basis.mode_count())
    fail(ErrorCode::invalid_argument, "semigroup_apply: size mismatch with basis");
  if (t == 0.0) return;
  const auto alpha = basis.eigenvalues();
  for (std::size_t m = 0; m < coeffs.size(); ++m) coeffs[m] *= std::exp(-alpha[m] * t);
}

SpectralField semigroup_apply(const SpectralField& field, double t) {
  SpectralField out = field;
  semigroup_apply(*field.basis, out.coefficients, t);
  return out;
}

namespace {

// Sum over slots >= cutoff of exp(-kappa^2 t) * weight(slot), continued until
// the terms underflow relative to the running total.
template <class W>
double axis_tail(const SpectralBasis& basis, double t, W&& weight) {
  double tail = 0.0;
  for (std::size_t s = basis.mode_cutoff();; ++s) {
    const double kappa = slot_wavenumber(basis.boundary(), basis.length(), s);
    const double e = std::exp(-kappa * kappa * t);
    const double term = e * weight(s);
    tail += term;
    if (e < 1e-300 || (kappa * kappa * t > 1.0 && term <= 1e-17 * tail)) break;
  }
  return tail;
}

}  // namespace

SeriesValue heat_kernel_eval(const SpectralBasis& basis, double t, const Point& x,
                             const Point& y) {
  if (!(t > 0.0))
    fail(ErrorCode::invalid_argument, "heat_kernel_eval: t must be positive (series diverges on the diagonal at t = 0)");
  const int d = basis.dimension();
  const double sup2 = 2.0 / basis.length();
  double value = 1.0, kept = 1.0, full = 1.0;
  for (int i = 0; i < d; ++i) {
    double g = 0.0, abs_sum = 0.0;
    for (std::size_t s = 0; s < basis.mode_cutoff(); ++s) {
      const double kappa = basis.axis_wavenumber(s);
      const double e = std::exp(-kappa * kappa * t);
      g += e * basis.axis_eigenfunction(s, x[i]) * basis.axis_eigenfunction(s, y[i]);
      abs_sum += e * sup2;
    }
    value *= g;
    kept *= abs_sum;
    full *= abs_sum + axis_tail(basis, t, [&](std::size_t) { return sup2; });
  }
  return {value, full - kept};
}

double heat_kernel_diagonal_sup(const SpectralBasis& basis, double t) {
  if (!(t > 0.0)) fail(ErrorCode::invalid_argument, "heat_kernel_diagonal_sup: t must be positive");
  // The truncated kernel is a tensor product, so the diagonal sup factorizes.
  const double L = basis.length();
  std::vector<double> candidates;
  for (std::size_t j = 0; j < basis.grid_size(); ++j) candidates.push_back(basis.grid_coordinate(j));
  const int fine = 512;
  for (int j = 0; j <= fine; ++j) candidates.push_back(L * j / fine);
  double best = 0.0;
  for (double xi : candidates) {
    double g = 0.0;
    for (std::size_t s = 0; s < basis.mode_cutoff(); ++s) {
      const double kappa = basis.axis_wavenumber(s);
      const double decay = std::exp(-kappa * kappa * t);
      if (decay < 1e-20) break;  // wavenumbers are nondecreasing in the slot
      const double e = basis.axis_eigenfunction(s, xi);
      g += decay * e * e;
    }
    best = std::max(best, g);
  }
  return std::pow(best, basis.dimension());
}

SeriesValue dirichlet_mass(const SpectralBasis& basis, double t, const Point& x) {
  if (basis.boundary() != Boundary::dirichlet)
    fail(ErrorCode::invalid_argument,
         "dirichlet_mass: identically 1 under periodic/Neumann conditions; only defined for Dirichlet");
  if (!(t > 0.0)) fail(ErrorCode::invalid_argument, "dirichlet_mass: t must be positive");
  const int d = basis.dimension();
  const double sup = basis.axis_sup_norm();
  double value = 1.0, kept = 1.0, full = 1.0;
  for (int i = 0; i < d; ++i) {
    if (!(x[i] >= 0.0 && x[i] <= basis.length()))
      fail(ErrorCode::invalid_argument, "dirichlet_mass: point outside the closed box");
    double g = 0.0, abs_sum = 0.0;
    for (std::size_t s = 0; s < basis.mode_cutoff(); ++s) {
      const double kappa = basis.axis_wavenumber(s);
      const double e = std::exp(-kappa * kappa * t);
      const double c = basis.axis_unit_integral(s);
      g += e * basis.axis_eigenfunction(s, x[i]) * c;
      abs_sum += e * sup * std::abs(c);
    }
    const double L = basis.length();
    const double tail = axis_tail(basis, t, [&](std::size_t s) {
      const double k = static_cast<double>(s + 1);
      return sup * sup * 2.0 * L / (std::numbers::pi * k);
    });
    value *= g;
    kept *= abs_sum;
    full *= abs_sum + tail;
  }
  return {value, full - kept};
}

}  // namespace shelab
