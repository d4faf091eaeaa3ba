#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "shelab/domain.hpp"
#include "shelab/rng.hpp"

namespace shelab {

/// Lambda(x, y) = |x - y|^(-alpha) restricted to the box.
struct RieszKernel {
  double alpha = 0.25;
};

/// Lambda(x, y) = Gamma(theta) sum_k (a + alpha_k)^(-theta) e_k(x) e_k(y).
struct SpectralKernel {
  double theta = 0.25;
  double shift = 0.0;  // a
};

/// Lambda = delta (d = 1 only). A reference mode outside the finite double
/// integral condition, used for cross-checks in the beta = eta = 1/2 regime.
struct WhiteKernel {};

using KernelVariant = std::variant<RieszKernel, SpectralKernel, WhiteKernel>;

struct CovarianceSpec {
  KernelVariant kernel = SpectralKernel{};

  static CovarianceSpec riesz(double alpha) { return {RieszKernel{alpha}}; }
  static CovarianceSpec spectral(double theta, double shift) {
    return {SpectralKernel{theta, shift}};
  }
  static CovarianceSpec white() { return {WhiteKernel{}}; }

  std::string variant_name() const;
  bool is_white() const { return std::holds_alternative<WhiteKernel>(kernel); }

  /// Parameter ranges for the given domain; throws Error(config) quoting the
  /// violated constraint. Does not require eta in (0, 1); kernel_params does.
  void validate(const DomainSpec& domain) const;
};

struct KernelParams {
  double beta = 0.0;  // sup G(t) <= C t^-beta
  double eta = 0.0;   // sup int int G G Lambda <= C t^-eta
};

/// Unchecked table values: beta = d/2; eta = alpha/2 (Riesz),
/// max(d/2 - theta, 0) (spectral), 1/2 (white, d = 1).
KernelParams raw_kernel_params(const CovarianceSpec& spec, int dimension);

/// Table values; throws Error(invalid_argument) when eta is outside (0, 1).
KernelParams kernel_params(const CovarianceSpec& spec, int dimension);

/// gamma_c = 1 + (1 - eta) / (2 beta).
double critical_exponent(double beta, double eta);

/// Lambda(x, y). Riesz is exact (throws on the diagonal); the spectral
/// variant is the truncated series with an estimate of the discarded tail
/// (infinite when theta <= d/2 and x = y). White noise has no pointwise value.
SeriesValue kernel_eval(const CovarianceSpec& spec, const SpectralBasis& basis,
                        const Point& x, const Point& y);

/// lambda_k^2 = Gamma(theta) (a + alpha_k)^(-theta) for every retained mode.
std::vector<double> spectral_weights(const SpectralKernel& kernel,
                                     const SpectralBasis& basis);

/// Mean of |z|^(-alpha) over a unit cell [-1/2, 1/2]^d.
double riesz_cell_average(double alpha, int dimension);

/// int_D int_D Lambda. Riesz: exact reduction to a smooth (d-1)-dimensional
/// integral. Spectral: sum lambda_k^2 <1, e_k>^2 over the retained modes.
/// White: throws (no finite double integral).
double double_integral(const CovarianceSpec& spec, const SpectralBasis& basis);

struct DecayReport {
  std::string variant;
  int dimension = 0;
  double parameter = 0.0;  // theta or alpha
  double shift = 0.0;
  std::vector<double> t_grid;
  std::vector<double> values;
  double fitted_slope = 0.0;
  double expected_eta = 0.0;
  double fitted_C = 0.0;
  double residual = 0.0;
  bool literature_backed = false;  // Riesz: checked only empirically
};

/// F(t) = sup_x int int G(t,x,y1) G(t,x,y2) Lambda(y1,y2) at the box center,
/// with a log-log fit. Spectral: exact series sum lambda_k^2 e^{-2 alpha_k t}
/// e_k(x)^2. White: G(2t, x, x). Riesz: Monte Carlo estimate of
/// E Lambda(Y1, Y2) with Y1, Y2 drawn from G(t, x, .) by reflected Brownian
/// paths. Throws for t outside (0, 0.1] (exponential regime) or a fit
/// residual above `max_residual` (non-power-law regime).
DecayReport verify_decay(const CovarianceSpec& spec, const SpectralBasis& basis,
                         std::span<const double> t_grid, double max_residual = 0.05);

/// One increment Delta W on the grid with covariance Lambda(x_i, x_j) dt.
struct NoiseIncrement {
  GridField field;
  double dt = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

/// Per-worker scratch for sampling and quadratic forms.
struct NoiseWorkspace {
  TransformScratch transform;
  std::vector<double> normals;
  std::vector<double> coeffs;
};

/// Precomputed sampler for a covariance on a basis grid. Immutable; shared.
class NoiseModel {
 public:
  NoiseModel(CovarianceSpec spec, std::shared_ptr<const SpectralBasis> basis);

  const CovarianceSpec& spec() const { return spec_; }
  const SpectralBasis& basis() const { return *basis_; }
  std::shared_ptr<const SpectralBasis> basis_ptr() const { return basis_; }

  NoiseWorkspace make_workspace() const;

  /// Writes an increment for time step dt into `out` (size point_count()).
  void sample(double dt, RandomStream& rng, std::span<double> out, NoiseWorkspace& ws) const;

  NoiseIncrement sample_increment(double dt, RandomStream& rng) const;

  /// h^{2d} sum_{ij} C_ij s_i s_j with C the sampled grid covariance. For the
  /// Riesz kernel on grids with more than 2^16 pairs, an unbiased estimate
  /// from a fixed random pair subset.
  double quadratic_form(std::span<const double> s, NoiseWorkspace& ws) const;

  /// Covariance of the sampled field between grid points i and j, per unit time.
  double covariance(std::size_t i, std::size_t j) const;

  /// Fraction of spectral mass removed by clipping negative eigenvalues
  /// (Riesz only; zero otherwise).
  double clipped_fraction() const { return clipped_fraction_; }

  bool subsampled_quadratic_form() const { return !pair_i_.empty(); }

 private:
  CovarianceSpec spec_;
  std::shared_ptr<const SpectralBasis> basis_;
  std::vector<double> lambda_;         // spectral: sqrt of weights per mode
  std::vector<double> lambda2_;        // spectral: weights times quadrature weight^2
  std::vector<double> root_;           // riesz: symmetric square root, row-major
  std::vector<double> cov_;            // riesz: root * root
  std::vector<std::uint32_t> pair_i_;  // riesz: subsampled pairs
  std::vector<std::uint32_t> pair_j_;
  double clipped_fraction_ = 0.0;
};

}  // namespace shelab
