#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shelab/domain.hpp"
#include "shelab/noise.hpp"

namespace shelab {

/// sigma(u) = c u^gamma for u >= 0, zero for u < 0, clamped at the
/// truncation level: sigma_n(u) = sigma(min(u, n)).
struct SigmaSpec {
  double scale = 1.0;   // c
  double gamma = 1.5;   // growth exponent
  double truncation = 1024.0;  // sup-norm threshold n

  void validate() const;
};

double sigma_eval(const SigmaSpec& spec, double u);

enum class SigmaRegime {
  subcritical,  // gamma <= gamma_c
  explosive,    // gamma > gamma_c, conjectured explosive
  unclassified,  // gamma_c undefined (eta outside (0, 1))
};

SigmaRegime classify_sigma(const SigmaSpec& sigma, const CovarianceSpec& noise, int dimension);
std::string to_string(SigmaRegime r);

struct InitialCondition {
  enum class Kind { constant, eigenmode, file };
  Kind kind = Kind::constant;
  double value = 1.0;   // c0 for constant, amplitude for eigenmode
  MultiIndex mode{{1, 1, 1}};
  std::string path;             // file: source of `values`
  std::vector<double> values;   // file: grid values, row-major

  /// u0 on the basis grid. Eigenmode initial data is amplitude * max(e_k, 0).
  std::vector<double> build(const SpectralBasis& basis) const;
};

std::string to_string(InitialCondition::Kind k);

/// Everything a single trajectory depends on besides its seed.
struct TrajectoryConfig {
  DomainSpec domain;
  CovarianceSpec noise;
  SigmaSpec sigma;
  InitialCondition initial;
  double dt = 1e-4;
  double horizon = 0.1;       // T
  double mass_bound = 1e12;   // M in tau_M^I
  std::size_t record_stride = 1;

  void validate() const;
  /// Number of steps to reach the horizon.
  std::size_t step_count() const;
};

enum class StopFlag { none, tau_n, tau_M, horizon, failure };
std::string to_string(StopFlag f);
StopFlag parse_stop_flag(const std::string& s);

/// Discretized field plus running diagnostics.
struct SimState {
  std::vector<double> u;
  double t = 0.0;
  double I = 0.0;              // L^1 mass process
  double Q = 0.0;              // quadratic variation of I
  double clamped_mass = 0.0;   // mass added by negativity projection
  bool hit_tau_n = false;
  bool hit_tau_M = false;
  bool hit_horizon = false;
};

/// Per-worker buffers for `step`.
struct StepWorkspace {
  NoiseWorkspace noise;
  std::vector<double> sigma;
  std::vector<double> coeffs;
  std::vector<double> propagator;  // exp(-alpha_k dt), reused across steps
  double propagator_dt = -1.0;
};

StepWorkspace make_step_workspace(const NoiseModel& noise);

/// One exponential-Euler step u+ = S(dt)[u + sigma_n(u) dW], followed by the
/// projection u+ <- max(u+, 0) with the removed negative mass accumulated.
/// I and Q are advanced with the pre-step sigma values. Throws
/// Error(numerical) on non-finite output.
void step(SimState& state, double dt, std::span<const double> dW, const NoiseModel& noise,
          const SigmaSpec& sigma, StepWorkspace& ws);

struct TrajectoryRecord {
  std::uint64_t seed = 0;
  std::vector<std::size_t> step;
  std::vector<double> t;
  std::vector<double> sup_norm;
  std::vector<double> l1_norm;
  std::vector<double> I;
  std::vector<double> Q;
  std::vector<double> clamped_mass;
  StopFlag stop = StopFlag::none;
  double stop_time = 0.0;
  std::string failure;  // message when stop == failure

  std::size_t size() const { return t.size(); }
};

/// CSV with columns step,t,sup_norm,l1_norm,I,Q,clamped_mass,stop_flag.
/// The stop flag is "none" except on the last row.
void write_trajectory_csv(const TrajectoryRecord& record, std::ostream& out);

/// Shared immutable context for running trajectories of one configuration.
class Simulation {
 public:
  explicit Simulation(TrajectoryConfig config);

  const TrajectoryConfig& config() const { return config_; }
  const SpectralBasis& basis() const { return *basis_; }
  std::shared_ptr<const SpectralBasis> basis_ptr() const { return basis_; }
  const NoiseModel& noise() const { return *noise_; }
  std::shared_ptr<const NoiseModel> noise_ptr() const { return noise_; }
  std::span<const double> initial_field() const { return u0_; }
  double initial_mass() const;
  double initial_sup() const;

  /// Steps until min(T, tau_n, tau_M). Deterministic in (config, seed).
  /// Step failures end the record with stop == failure and the step index in
  /// the message; they are not thrown.
  TrajectoryRecord run(std::uint64_t seed) const;

 private:
  TrajectoryConfig config_;
  std::shared_ptr<const SpectralBasis> basis_;
  std::shared_ptr<const NoiseModel> noise_;
  std::vector<double> u0_;
};

TrajectoryRecord run_trajectory(const TrajectoryConfig& config, std::uint64_t seed);

}  // namespace shelab
