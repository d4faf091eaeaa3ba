#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace shelab {

enum class Boundary { periodic, neumann, dirichlet };

std::string to_string(Boundary b);
Boundary parse_boundary(const std::string& name);

/// Box [0, L]^d with one boundary condition on every face.
///
/// Grids (h = L / n):
///   periodic   x_j = j h           (duplicated endpoint dropped)
///   neumann    x_j = (j + 1/2) h   (cell midpoints)
///   dirichlet  x_j = (j + 1/2) h   (boundary points, where u = 0, excluded)
struct DomainSpec {
  int dimension = 1;
  double length = std::numbers::pi;
  Boundary boundary = Boundary::neumann;
  std::size_t grid = 64;  // points per axis, power of two
  std::size_t modes = 0;  // mode cutoff per axis; 0 means `grid`

  std::size_t mode_cutoff() const { return modes == 0 ? grid : modes; }

  /// Throws Error(config) naming the violated constraint.
  void validate() const;
};

/// A point in the box; components beyond the dimension are ignored.
using Point = std::array<double, 3>;

/// Mode numbers per axis.
///   dirichlet: k_i >= 1, e = sqrt(2/L) sin(k pi x / L)
///   neumann:   k_i >= 0, e = sqrt(2/L) cos(k pi x / L) (1/sqrt(L) for k = 0)
///   periodic:  real slot index 0..N-1: 0 is the constant, slot 2m-1 is
///              cos(2 pi m x / L), slot 2m is sin(2 pi m x / L), and the last
///              slot n-1 (only when N = n) is the Nyquist cosine.
///              The wavenumber of slot s is 2 pi ceil(s/2) / L.
struct MultiIndex {
  std::array<int, 3> k{0, 0, 0};
};

class SpectralBasis;

/// Per-worker buffers for the fast transforms.
struct TransformScratch {
  std::vector<double> in;
  std::vector<double> out;
};

/// Coefficients over the retained mode set of a basis.
struct SpectralField {
  std::shared_ptr<const SpectralBasis> basis;
  std::vector<double> coefficients;
};

/// Values on the tensor grid of a basis.
struct GridField {
  std::shared_ptr<const SpectralBasis> basis;
  std::vector<double> values;
  bool nonnegative = false;

  double spacing() const;
  /// Finite values only; with `nonnegative` set also min >= -1e-12 max(1, sup).
  void check() const;
};

struct SeriesValue {
  double value = 0.0;
  double tail_bound = 0.0;  // bound on the discarded part of the series
};

/// Eigenpairs of the Laplacian on a box, with the heat semigroup and the fast
/// orthogonal transforms matched to the boundary condition.
///
/// Immutable after construction. FFTW plans are created on first transform
/// (under a process-wide planner lock) and executed on caller-owned scratch,
/// so one basis can be shared by any number of trajectory workers.
class SpectralBasis {
 public:
  explicit SpectralBasis(const DomainSpec& spec);
  ~SpectralBasis();
  SpectralBasis(const SpectralBasis&) = delete;
  SpectralBasis& operator=(const SpectralBasis&) = delete;

  const DomainSpec& spec() const { return spec_; }
  int dimension() const { return spec_.dimension; }
  Boundary boundary() const { return spec_.boundary; }
  double length() const { return spec_.length; }
  std::size_t grid_size() const { return spec_.grid; }
  std::size_t mode_cutoff() const { return cutoff_; }
  std::size_t point_count() const { return points_; }
  std::size_t mode_count() const { return eigenvalues_.size(); }
  double spacing() const { return spacing_; }
  double cell_volume() const { return cell_volume_; }

  double grid_coordinate(std::size_t j) const;
  Point grid_point(std::size_t flat) const;
  /// Box center.
  Point center() const;

  // Per-axis structure.
  double axis_wavenumber(std::size_t slot) const { return wavenumber_[slot]; }
  double axis_eigenfunction(std::size_t slot, double x) const;
  /// Exact <1, e_slot> on [0, L].
  double axis_unit_integral(std::size_t slot) const;
  /// sup_x |e_slot(x)|.
  double axis_sup_norm() const;

  // Tensor modes (row-major over slots, axis 0 slowest).
  std::span<const double> eigenvalues() const { return eigenvalues_; }
  double eigenvalue(std::size_t mode) const { return eigenvalues_[mode]; }
  std::vector<double> sorted_eigenvalues() const;
  std::array<std::size_t, 3> mode_slots(std::size_t mode) const;
  MultiIndex mode_index(std::size_t mode) const;
  /// Throws Error(invalid_argument) if k is outside the retained set.
  std::size_t mode_of(const MultiIndex& k) const;
  double eigenfunction(const MultiIndex& k, const Point& x) const;
  double mode_function(std::size_t mode, const Point& x) const;
  double unit_integral(std::size_t mode) const;
  /// Ratio between the grid inner product <f, e_k>_h and the transform
  /// coefficient of f; 1 except for Nyquist modes (2 per Nyquist axis).
  double quadrature_weight(std::size_t mode) const { return weight_[mode]; }

  // Transforms. Spans must be sized point_count() / mode_count().
  // to_grid is synthesis f(x_j) = sum_k c_k e_k(x_j); to_spectral is its exact
  // inverse (projection onto retained modes when N < n).
  void to_spectral(std::span<const double> grid, std::span<double> coeffs,
                   TransformScratch& scratch) const;
  void to_grid(std::span<const double> coeffs, std::span<double> grid,
               TransformScratch& scratch) const;
  SpectralField to_spectral(const GridField& field) const;
  GridField to_grid(const SpectralField& field) const;

  /// Grid samples of a function of position.
  template <class F>
  std::vector<double> sample(F&& f) const {
    std::vector<double> v(points_);
    for (std::size_t i = 0; i < points_; ++i) v[i] = f(grid_point(i));
    return v;
  }

  /// Trapezoid (midpoint for cell-centred grids) integral h^d sum_j f_j.
  double integrate(std::span<const double> grid) const;

 private:
  struct Plans;
  const Plans& plans() const;
  void check_point(const Point& x) const;

  DomainSpec spec_;
  std::size_t cutoff_;
  std::size_t points_;
  double spacing_;
  double cell_volume_;
  std::vector<double> wavenumber_;   // per slot
  std::vector<double> axis_fwd_;     // per slot forward scale
  std::vector<double> axis_bwd_;     // per slot backward scale
  std::vector<std::size_t> axis_pos_;  // per slot position in FFTW layout
  std::vector<double> eigenvalues_;  // per mode
  std::vector<std::size_t> mode_pos_;
  std::vector<double> mode_fwd_;
  std::vector<double> mode_bwd_;
  std::vector<double> weight_;
  mutable std::once_flag plans_once_;
  mutable std::unique_ptr<Plans> plans_;
};

/// Scratch sized for a basis.
TransformScratch make_scratch(const SpectralBasis& basis);

/// Multiplies each coefficient by exp(-alpha_k t). Throws for t < 0.
void semigroup_apply(const SpectralBasis& basis, std::span<double> coeffs,
                     double t);
SpectralField semigroup_apply(const SpectralField& field, double t);

/// Truncated G(t, x, y) = sum_k exp(-alpha_k t) e_k(x) e_k(y). The tail bound
/// sums exp(-alpha_k t) sup|e_k|^2 over the discarded modes. Throws for t <= 0.
SeriesValue heat_kernel_eval(const SpectralBasis& basis, double t,
                             const Point& x, const Point& y);

/// sup over a candidate set (grid points, faces, center) of G(t, x, x).
double heat_kernel_diagonal_sup(const SpectralBasis& basis, double t);

/// g(t, x) = int_D G(t, x, y) dy for Dirichlet conditions, from the exact
/// inner products <1, e_k>. Throws under periodic/Neumann conditions, where
/// it is identically 1.
SeriesValue dirichlet_mass(const SpectralBasis& basis, double t,
                           const Point& x);

}  // namespace shelab
