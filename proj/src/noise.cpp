#include "shelab/noise.hpp"

#include <Eigen/Eigenvalues>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "shelab/error.hpp"
#include "shelab/stats.hpp"

namespace shelab {
namespace {

constexpr std::size_t kRieszMaxPoints = 4096;
constexpr std::size_t kPairBudget = std::size_t{1} << 16;

double unit_sphere_area(int d) {
  switch (d) {
    case 1:
      return 2.0;
    case 2:
      return 2.0 * std::numbers::pi;
    default:
      return 4.0 * std::numbers::pi;
  }
}

// Integral over [0,1]^{dim} of f(t) for dim in {0, 1, 2}.
template <class F>
double cube_integral(int dim, F&& f) {
  using boost::math::quadrature::gauss_kronrod;
  constexpr double tol = 1e-12;
  switch (dim) {
    case 0:
      return f(0.0, 0.0);
    case 1:
      return gauss_kronrod<double, 31>::integrate([&](double a) { return f(a, 0.0); }, 0.0,
                                                  1.0, 12, tol);
    default:
      return gauss_kronrod<double, 31>::integrate(
          [&](double a) {
            return gauss_kronrod<double, 31>::integrate([&](double b) { return f(a, b); }, 0.0,
                                                        1.0, 12, tol);
          },
          0.0, 1.0, 12, tol);
  }
}

double reflect_into(double x, double L) {
  double y = std::fmod(std::abs(x), 2.0 * L);
  return y > L ? 2.0 * L - y : y;
}

double wrap_into(double x, double L) { return x - L * std::floor(x / L); }

}  // namespace

std::string CovarianceSpec::variant_name() const {
  if (std::holds_alternative<RieszKernel>(kernel)) return "riesz";
  if (std::holds_alternative<SpectralKernel>(kernel)) return "spectral";
  return "white";
}

void CovarianceSpec::validate(const DomainSpec& domain) const {
  const int d = domain.dimension;
  if (const auto* r = std::get_if<RieszKernel>(&kernel)) {
    const double hi = std::min(2.0, 0.5 * d);
    if (!(r->alpha > 0.0 && r->alpha < hi))
      fail(ErrorCode::config, "noise.alpha: Riesz kernel requires 0 < alpha < min{2, d/2} = " +
                                  std::to_string(hi) + ", got " + std::to_string(r->alpha));
  } else if (const auto* s = std::get_if<SpectralKernel>(&kernel)) {
    if (!(s->theta > 0.0))
      fail(ErrorCode::config, "noise.theta: spectral kernel requires theta > 0");
    if (!(s->theta > 0.5 * d - 1.0))
      fail(ErrorCode::config, "noise.theta: spectral kernel requires theta > d/2 - 1 = " +
                                  std::to_string(0.5 * d - 1.0));
    if (!(s->shift >= 0.0))
      fail(ErrorCode::config, "noise.shift: spectral kernel requires a >= 0");
    if (domain.boundary != Boundary::dirichlet && !(s->shift > 0.0))
      fail(ErrorCode::config,
           "noise.shift: a > 0 required for periodic/Neumann conditions (alpha_0 = 0)");
  } else {
    if (d != 1)
      fail(ErrorCode::config, "noise.kernel: white-noise mode is only available for d = 1");
  }
}

KernelParams raw_kernel_params(const CovarianceSpec& spec, int d) {
  KernelParams p;
  p.beta = 0.5 * d;
  if (const auto* r = std::get_if<RieszKernel>(&spec.kernel)) {
    p.eta = 0.5 * r->alpha;
  } else if (const auto* s = std::get_if<SpectralKernel>(&spec.kernel)) {
    p.eta = std::max(0.5 * d - s->theta, 0.0);
  } else {
    p.eta = 0.5;
  }
  return p;
}

KernelParams kernel_params(const CovarianceSpec& spec, int d) {
  const KernelParams p = raw_kernel_params(spec, d);
  if (!(p.eta > 0.0 && p.eta < 1.0))
    fail(ErrorCode::invalid_argument,
         "kernel_params: eta = " + std::to_string(p.eta) +
             " outside (0, 1); the kernel is outside the decay assumption's scope");
  return p;
}

double critical_exponent(double beta, double eta) {
  if (!(beta > 0.0)) fail(ErrorCode::invalid_argument, "critical_exponent: beta must be positive");
  if (!(eta > 0.0 && eta < 1.0))
    fail(ErrorCode::invalid_argument, "critical_exponent: eta must lie in (0, 1)");
  return 1.0 + (1.0 - eta) / (2.0 * beta);
}

std::vector<double> spectral_weights(const SpectralKernel& kernel, const SpectralBasis& basis) {
  const double g = std::tgamma(kernel.theta);
  std::vector<double> w(basis.mode_count());
  const auto alpha = basis.eigenvalues();
  for (std::size_t m = 0; m < w.size(); ++m) {
    const double base = kernel.shift + alpha[m];
    if (!(base > 0.0))
      fail(ErrorCode::config, "spectral kernel: a + alpha_k must be positive for every mode");
    w[m] = g * std::pow(base, -kernel.theta);
  }
  return w;
}

SeriesValue kernel_eval(const CovarianceSpec& spec, const SpectralBasis& basis, const Point& x,
                        const Point& y) {
  spec.validate(basis.spec());
  const int d = basis.dimension();
  for (int i = 0; i < d; ++i)
    if (!(x[i] >= 0.0 && x[i] <= basis.length() && y[i] >= 0.0 && y[i] <= basis.length()))
      fail(ErrorCode::invalid_argument, "kernel_eval: point outside the closed box");

  if (const auto* r = std::get_if<RieszKernel>(&spec.kernel)) {
    double dist2 = 0.0;
    for (int i = 0; i < d; ++i) dist2 += (x[i] - y[i]) * (x[i] - y[i]);
    if (dist2 == 0.0)
      fail(ErrorCode::invalid_argument, "kernel_eval: Riesz kernel is singular on the diagonal");
    return {std::pow(dist2, -0.5 * r->alpha), 0.0};
  }
  if (spec.is_white())
    fail(ErrorCode::invalid_argument, "kernel_eval: white noise has no pointwise covariance");

  const auto& s = std::get<SpectralKernel>(spec.kernel);
  const std::size_t N = basis.mode_cutoff();
  std::vector<double> ex(d * N), ey(d * N);
  for (int i = 0; i < d; ++i)
    for (std::size_t k = 0; k < N; ++k) {
      ex[i * N + k] = basis.axis_eigenfunction(k, x[i]);
      ey[i * N + k] = basis.axis_eigenfunction(k, y[i]);
    }
  const auto w = spectral_weights(s, basis);
  double value = 0.0;
  for (std::size_t m = 0; m < w.size(); ++m) {
    const auto slots = basis.mode_slots(m);
    double prod = w[m];
    for (int i = 0; i < d; ++i) prod *= ex[i * N + slots[i]] * ey[i * N + slots[i]];
    value += prod;
  }

  // Integral estimate of the discarded modes, |xi| >= kappa_N, with the mode
  // density (L/pi)^d on the positive orthant and sup|e_k|^2 = (2/L)^d.
  double tail = std::numeric_limits<double>::infinity();
  const double L = basis.length();
  if (2.0 * s.theta > d) {
    double kappa_n = 0.0;
    switch (basis.boundary()) {
      case Boundary::dirichlet:
        kappa_n = std::numbers::pi * static_cast<double>(N + 1) / L;
        break;
      case Boundary::neumann:
        kappa_n = std::numbers::pi * static_cast<double>(N) / L;
        break;
      case Boundary::periodic:
        kappa_n = 2.0 * std::numbers::pi * static_cast<double>((N + 1) / 2) / L;
        break;
    }
    const double density = std::pow(L / std::numbers::pi, d) * unit_sphere_area(d) / std::pow(2.0, d);
    tail = std::pow(2.0 / L, d) * std::tgamma(s.theta) * density *
           std::pow(kappa_n, d - 2.0 * s.theta) / (2.0 * s.theta - d);
  }
  return {value, tail};
}

double riesz_cell_average(double alpha, int d) {
  require(alpha > 0.0 && alpha < d, "riesz_cell_average: need 0 < alpha < d");
  const double angular = cube_integral(d - 1, [&](double a, double b) {
    double r2 = 1.0 + a * a + (d == 3 ? b * b : 0.0);
    return std::pow(r2, -0.5 * alpha);
  });
  return std::pow(2.0, d) * d * std::pow(0.5, d - alpha) / (d - alpha) * angular;
}

double double_integral(const CovarianceSpec& spec, const SpectralBasis& basis) {
  spec.validate(basis.spec());
  const int d = basis.dimension();
  if (spec.is_white())
    fail(ErrorCode::invalid_argument,
         "double_integral: white noise has no finite double integral");
  if (const auto* r = std::get_if<RieszKernel>(&spec.kernel)) {
    const double alpha = r->alpha;
    const double L = basis.length();
    // int int f(x - y) = 2^d int_{[0,L]^d} f(z) prod (L - z_i) dz, split into d
    // pyramids by the largest coordinate z = r (1, t), t in [0,1]^{d-1}. The r
    // integral of r^{d-1-alpha} times a polynomial is done in closed form.
    const double angular = cube_integral(d - 1, [&](double a, double b) {
      std::vector<double> t;
      if (d >= 2) t.push_back(a);
      if (d == 3) t.push_back(b);
      std::vector<double> poly{L, -1.0};  // (L - r)
      for (double ti : t) {
        std::vector<double> next(poly.size() + 1, 0.0);
        for (std::size_t j = 0; j < poly.size(); ++j) {
          next[j] += poly[j] * L;
          next[j + 1] -= poly[j] * ti;
        }
        poly = std::move(next);
      }
      double radial = 0.0;
      for (std::size_t j = 0; j < poly.size(); ++j) {
        const double e = d - alpha + static_cast<double>(j);
        radial += poly[j] * std::pow(L, e) / e;
      }
      double r2 = 1.0;
      for (double ti : t) r2 += ti * ti;
      return std::pow(r2, -0.5 * alpha) * radial;
    });
    return std::pow(2.0, d) * d * angular;
  }
  const auto& s = std::get<SpectralKernel>(spec.kernel);
  const auto w = spectral_weights(s, basis);
  double total = 0.0;
  for (std::size_t m = 0; m < w.size(); ++m) {
    const double c = basis.unit_integral(m);
    if (c != 0.0) total += w[m] * c * c;
  }
  return total;
}

DecayReport verify_decay(const CovarianceSpec& spec, const SpectralBasis& basis,
                         std::span<const double> t_grid, double max_residual) {
  spec.validate(basis.spec());
  if (t_grid.size() < 2) fail(ErrorCode::invalid_argument, "verify_decay: need at least two times");
  for (double t : t_grid)
    if (!(t > 0.0 && t <= 0.1))
      fail(ErrorCode::invalid_argument,
           "verify_decay: t-grid must lie in (0, 0.1]; for larger t the decay is exponential "
           "(spectral gap), not power-law");

  const int d = basis.dimension();
  DecayReport report;
  report.variant = spec.variant_name();
  report.dimension = d;
  report.t_grid.assign(t_grid.begin(), t_grid.end());
  report.expected_eta = raw_kernel_params(spec, d).eta;
  const Point x = basis.center();

  if (const auto* s = std::get_if<SpectralKernel>(&spec.kernel)) {
    report.parameter = s->theta;
    report.shift = s->shift;
    const auto w = spectral_weights(*s, basis);
    std::vector<double> e2(w.size());
    for (std::size_t m = 0; m < w.size(); ++m) {
      const double e = basis.mode_function(m, x);
      e2[m] = w[m] * e * e;
    }
    const auto alpha = basis.eigenvalues();
    for (double t : t_grid) {
      double f = 0.0;
      for (std::size_t m = 0; m < w.size(); ++m)
        if (e2[m] != 0.0) f += e2[m] * std::exp(-2.0 * alpha[m] * t);
      report.values.push_back(f);
    }
  } else if (spec.is_white()) {
    report.parameter = 0.0;
    for (double t : t_grid) report.values.push_back(heat_kernel_eval(basis, 2.0 * t, x, x).value);
  } else {
    const auto& r = std::get<RieszKernel>(spec.kernel);
    report.parameter = r.alpha;
    report.literature_backed = true;
    const double L = basis.length();
    const bool periodic = basis.boundary() == Boundary::periodic;
    constexpr std::size_t samples = 200000;
    for (std::size_t ti = 0; ti < t_grid.size(); ++ti) {
      const double t = t_grid[ti];
      RandomStream rng(0x5eedULL, ti);
      const double sd = std::sqrt(2.0 * t);
      double acc = 0.0;
      for (std::size_t k = 0; k < samples; ++k) {
        double dist2 = 0.0;
        for (int i = 0; i < d; ++i) {
          double y1 = x[i] + sd * rng.normal();
          double y2 = x[i] + sd * rng.normal();
          y1 = periodic ? wrap_into(y1, L) : reflect_into(y1, L);
          y2 = periodic ? wrap_into(y2, L) : reflect_into(y2, L);
          dist2 += (y1 - y2) * (y1 - y2);
        }
        acc += std::pow(dist2, -0.5 * r.alpha);
      }
      report.values.push_back(acc / samples);
    }
  }

  const auto fit = stats::fit_power_law(report.t_grid, report.values);
  report.fitted_slope = fit.slope;
  report.fitted_C = std::exp(fit.intercept);
  report.residual = fit.rms_residual;
  if (report.residual > max_residual)
    fail(ErrorCode::numerical, "verify_decay: log-log fit residual " +
                                   std::to_string(report.residual) +
                                   " too large; not in a power-law regime");
  return report;
}

NoiseModel::NoiseModel(CovarianceSpec spec, std::shared_ptr<const SpectralBasis> basis)
    : spec_(std::move(spec)), basis_(std::move(basis)) {
  require(basis_ != nullptr, "NoiseModel: null basis");
  spec_.validate(basis_->spec());
  const std::size_t P = basis_->point_count();

  if (const auto* s = std::get_if<SpectralKernel>(&spec_.kernel)) {
    const auto w = spectral_weights(*s, *basis_);
    lambda_.resize(w.size());
    lambda2_.resize(w.size());
    for (std::size_t m = 0; m < w.size(); ++m) {
      lambda_[m] = std::sqrt(w[m]);
      const double q = basis_->quadrature_weight(m);
      lambda2_[m] = w[m] * q * q;
    }
    return;
  }
  if (spec_.is_white()) return;

  const auto& r = std::get<RieszKernel>(spec_.kernel);
  if (P > kRieszMaxPoints)
    fail(ErrorCode::config, "Riesz sampler supports at most " + std::to_string(kRieszMaxPoints) +
                                " grid points (dense factorization)");
  const int d = basis_->dimension();
  const double h = basis_->spacing();
  Eigen::MatrixXd C(P, P);
  const double diag = riesz_cell_average(r.alpha, d) * std::pow(h, -r.alpha);
  for (std::size_t i = 0; i < P; ++i) {
    const Point xi = basis_->grid_point(i);
    C(i, i) = diag;
    for (std::size_t j = i + 1; j < P; ++j) {
      const Point xj = basis_->grid_point(j);
      double dist2 = 0.0;
      for (int k = 0; k < d; ++k) dist2 += (xi[k] - xj[k]) * (xi[k] - xj[k]);
      C(i, j) = C(j, i) = std::pow(dist2, -0.5 * r.alpha);
    }
  }
  const double jitter = 1e-10 * C.trace() / static_cast<double>(P);
  C.diagonal().array() += jitter;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(C);
  if (eig.info() != Eigen::Success)
    fail(ErrorCode::numerical, "Riesz covariance factorization failed; alpha too singular for this resolution");
  Eigen::VectorXd ev = eig.eigenvalues();
  double total = 0.0, clipped = 0.0;
  for (Eigen::Index k = 0; k < ev.size(); ++k) {
    total += std::abs(ev[k]);
    if (ev[k] < 0.0) {
      clipped += -ev[k];
      ev[k] = 0.0;
    }
  }
  clipped_fraction_ = total > 0.0 ? clipped / total : 0.0;
  if (clipped_fraction_ > 1e-3)
    fail(ErrorCode::numerical, "Riesz covariance is not PSD after regularization (clipped fraction " +
                                   std::to_string(clipped_fraction_) +
                                   "); alpha too singular for this resolution");
  const Eigen::MatrixXd& V = eig.eigenvectors();
  const Eigen::MatrixXd root = V * ev.cwiseSqrt().asDiagonal() * V.transpose();
  const Eigen::MatrixXd cov = V * ev.asDiagonal() * V.transpose();
  root_.resize(P * P);
  cov_.resize(P * P);
  for (std::size_t i = 0; i < P; ++i)
    for (std::size_t j = 0; j < P; ++j) {
      root_[i * P + j] = root(i, j);
      cov_[i * P + j] = cov(i, j);
    }

  if (P * P > kPairBudget) {
    RandomStream rng(0x9a1e5ULL, P);
    pair_i_.resize(kPairBudget);
    pair_j_.resize(kPairBudget);
    for (std::size_t k = 0; k < kPairBudget; ++k) {
      pair_i_[k] = static_cast<std::uint32_t>(rng.bits() % P);
      pair_j_[k] = static_cast<std::uint32_t>(rng.bits() % P);
    }
  }
}

NoiseWorkspace NoiseModel::make_workspace() const {
  NoiseWorkspace ws;
  ws.transform = make_scratch(*basis_);
  ws.normals.resize(std::max(basis_->point_count(), basis_->mode_count()));
  ws.coeffs.resize(basis_->mode_count());
  return ws;
}

void NoiseModel::sample(double dt, RandomStream& rng, std::span<double> out,
                        NoiseWorkspace& ws) const {
  if (!(dt >= 0.0)) fail(ErrorCode::invalid_argument, "sample: negative time step");
  const std::size_t P = basis_->point_count();
  if (out.size() != P) fail(ErrorCode::invalid_argument, "sample: size mismatch with basis");
  if (dt == 0.0) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  const double sdt = std::sqrt(dt);
  if (!lambda_.empty()) {
    const std::size_t M = lambda_.size();
    ws.coeffs.resize(M);
    for (std::size_t m = 0; m < M; ++m) ws.coeffs[m] = sdt * lambda_[m] * rng.normal();
    basis_->to_grid(ws.coeffs, out, ws.transform);
    return;
  }
  if (spec_.is_white()) {
    const double scale = std::sqrt(dt / basis_->cell_volume());
    for (double& v : out) v = scale * rng.normal();
    return;
  }
  ws.normals.resize(P);
  rng.fill_normal(std::span<double>(ws.normals.data(), P));
  for (std::size_t i = 0; i < P; ++i) {
    const double* row = root_.data() + i * P;
    double acc = 0.0;
    for (std::size_t j = 0; j < P; ++j) acc += row[j] * ws.normals[j];
    out[i] = sdt * acc;
  }
}

NoiseIncrement NoiseModel::sample_increment(double dt, RandomStream& rng) const {
  NoiseIncrement inc;
  inc.field = GridField{basis_, std::vector<double>(basis_->point_count()), false};
  inc.dt = dt;
  auto ws = make_workspace();
  sample(dt, rng, inc.field.values, ws);
  return inc;
}

double NoiseModel::quadratic_form(std::span<const double> s, NoiseWorkspace& ws) const {
  const std::size_t P = basis_->point_count();
  if (s.size() != P) fail(ErrorCode::invalid_argument, "quadratic_form: size mismatch with basis");
  const double hd = basis_->cell_volume();
  if (!lambda_.empty()) {
    ws.coeffs.resize(lambda2_.size());
    basis_->to_spectral(s, ws.coeffs, ws.transform);
    double q = 0.0;
    for (std::size_t m = 0; m < lambda2_.size(); ++m) q += lambda2_[m] * ws.coeffs[m] * ws.coeffs[m];
    return q;
  }
  if (spec_.is_white()) {
    double q = 0.0;
    for (double v : s) q += v * v;
    return hd * q;
  }
  if (!pair_i_.empty()) {
    double q = 0.0;
    for (std::size_t k = 0; k < pair_i_.size(); ++k)
      q += cov_[pair_i_[k] * P + pair_j_[k]] * s[pair_i_[k]] * s[pair_j_[k]];
    return hd * hd * q * static_cast<double>(P) * static_cast<double>(P) /
           static_cast<double>(pair_i_.size());
  }
  double q = 0.0;
  for (std::size_t i = 0; i < P; ++i) {
    if (s[i] == 0.0) continue;
    const double* row = cov_.data() + i * P;
    double acc = 0.0;
    for (std::size_t j = 0; j < P; ++j) acc += row[j] * s[j];
    q += s[i] * acc;
  }
  return hd * hd * q;
}

double NoiseModel::covariance(std::size_t i, std::size_t j) const {
  const std::size_t P = basis_->point_count();
  require(i < P && j < P, "covariance: grid index out of range");
  if (!lambda_.empty()) {
    const Point xi = basis_->grid_point(i), xj = basis_->grid_point(j);
    double c = 0.0;
    for (std::size_t m = 0; m < lambda_.size(); ++m)
      c += lambda_[m] * lambda_[m] * basis_->mode_function(m, xi) * basis_->mode_function(m, xj);
    return c;
  }
  if (spec_.is_white()) return i == j ? 1.0 / basis_->cell_volume() : 0.0;
  return cov_[i * P + j];
}

}  // namespace shelab
