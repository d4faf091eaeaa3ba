#include "shelab/integrator.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "shelab/error.hpp"
#include "shelab/format.hpp"

namespace shelab {

void SigmaSpec::validate() const {
  if (!(scale >= 0.0) || !std::isfinite(scale))
    fail(ErrorCode::config, "sigma.scale: c must be finite and >= 0");
  if (!(gamma >= 1.0) || !std::isfinite(gamma))
    fail(ErrorCode::config, "sigma.gamma: need gamma >= 1 (locally Lipschitz sigma with sigma(0) = 0)");
  if (!(truncation > 0.0))
    fail(ErrorCode::config, "sigma.truncation: truncation level n must be positive");
}

double sigma_eval(const SigmaSpec& spec, double u) {
  if (!(u > 0.0)) return 0.0;
  return spec.scale * std::pow(std::min(u, spec.truncation), spec.gamma);
}

SigmaRegime classify_sigma(const SigmaSpec& sigma, const CovarianceSpec& noise, int dimension) {
  const KernelParams p = raw_kernel_params(noise, dimension);
  if (!(p.eta > 0.0 && p.eta < 1.0)) return SigmaRegime::unclassified;
  const double gc = critical_exponent(p.beta, p.eta);
  return sigma.gamma <= gc + 1e-12 ? SigmaRegime::subcritical : SigmaRegime::explosive;
}

std::string to_string(SigmaRegime r) {
  switch (r) {
    case SigmaRegime::subcritical:
      return "paper regime";
    case SigmaRegime::explosive:
      return "conjectured explosive regime";
    case SigmaRegime::unclassified:
      return "unclassified (eta outside (0,1))";
  }
  return "unknown";
}

std::string to_string(InitialCondition::Kind k) {
  switch (k) {
    case InitialCondition::Kind::constant:
      return "constant";
    case InitialCondition::Kind::eigenmode:
      return "eigenmode";
    case InitialCondition::Kind::file:
      return "file";
  }
  return "unknown";
}

std::vector<double> InitialCondition::build(const SpectralBasis& basis) const {
  const std::size_t P = basis.point_count();
  std::vector<double> u(P, 0.0);
  switch (kind) {
    case Kind::constant:
      if (!(value >= 0.0) || !std::isfinite(value))
        fail(ErrorCode::config, "run.initial_value: initial data must be nonnegative and bounded (u0 >= 0)");
      std::fill(u.begin(), u.end(), value);
      break;
    case Kind::eigenmode: {
      if (!(value >= 0.0) || !std::isfinite(value))
        fail(ErrorCode::config, "run.initial_value: eigenmode amplitude must be nonnegative");
      std::size_t m = 0;
      try {
        m = basis.mode_of(mode);
      } catch (const Error& e) {
        fail(ErrorCode::config, std::string("run.initial_mode: ") + e.what());
      }
      for (std::size_t i = 0; i < P; ++i)
        u[i] = value * std::max(basis.mode_function(m, basis.grid_point(i)), 0.0);
      break;
    }
    case Kind::file:
      if (values.size() != P)
        fail(ErrorCode::config, "run.initial_file: expected " + std::to_string(P) +
                                    " grid values, found " + std::to_string(values.size()));
      for (double v : values)
        if (!(v >= 0.0) || !std::isfinite(v))
          fail(ErrorCode::config, "run.initial_file: initial data must be nonnegative and bounded (u0 >= 0)");
      u = values;
      break;
  }
  return u;
}

void TrajectoryConfig::validate() const {
  domain.validate();
  noise.validate(domain);
  sigma.validate();
  if (!(dt > 0.0)) fail(ErrorCode::config, "run.dt: time step must be positive");
  if (!(horizon > 0.0)) fail(ErrorCode::config, "run.horizon: T must be positive");
  if (!(mass_bound > 0.0)) fail(ErrorCode::config, "run.mass_bound: M must be positive");
  if (record_stride < 1) fail(ErrorCode::config, "run.record_stride: must be >= 1");
}

std::size_t TrajectoryConfig::step_count() const {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(horizon / dt)));
}

std::string to_string(StopFlag f) {
  switch (f) {
    case StopFlag::none:
      return "none";
    case StopFlag::tau_n:
      return "tau_n";
    case StopFlag::tau_M:
      return "tau_M";
    case StopFlag::horizon:
      return "horizon";
    case StopFlag::failure:
      return "failure";
  }
  return "none";
}

StopFlag parse_stop_flag(const std::string& s) {
  if (s == "none") return StopFlag::none;
  if (s == "tau_n") return StopFlag::tau_n;
  if (s == "tau_M") return StopFlag::tau_M;
  if (s == "horizon") return StopFlag::horizon;
  if (s == "failure") return StopFlag::failure;
  fail(ErrorCode::io, "unknown stop flag '" + s + "'");
}

StepWorkspace make_step_workspace(const NoiseModel& noise) {
  StepWorkspace ws;
  ws.noise = noise.make_workspace();
  ws.sigma.resize(noise.basis().point_count());
  ws.coeffs.resize(noise.basis().mode_count());
  return ws;
}

void step(SimState& state, double dt, std::span<const double> dW, const NoiseModel& noise,
          const SigmaSpec& sigma, StepWorkspace& ws) {
  if (!(dt > 0.0)) fail(ErrorCode::invalid_argument, "step: dt must be positive");
  const SpectralBasis& basis = noise.basis();
  const std::size_t P = basis.point_count();
  if (state.u.size() != P || dW.size() != P)
    fail(ErrorCode::invalid_argument, "step: size mismatch with basis");
  const double hd = basis.cell_volume();

  ws.sigma.resize(P);
  double dI = 0.0;
  bool any = false;
  for (std::size_t j = 0; j < P; ++j) {
    const double s = sigma_eval(sigma, state.u[j]);
    ws.sigma[j] = s;
    dI += s * dW[j];
    any = any || s != 0.0;
  }
  dI *= hd;
  const double dQ = any ? dt * noise.quadratic_form(ws.sigma, ws.noise) : 0.0;

  for (std::size_t j = 0; j < P; ++j) state.u[j] += ws.sigma[j] * dW[j];

  if (ws.propagator_dt != dt) {
    const auto alpha = basis.eigenvalues();
    ws.propagator.resize(alpha.size());
    for (std::size_t m = 0; m < alpha.size(); ++m) ws.propagator[m] = std::exp(-alpha[m] * dt);
    ws.propagator_dt = dt;
  }
  ws.coeffs.resize(basis.mode_count());
  basis.to_spectral(state.u, ws.coeffs, ws.noise.transform);
  for (std::size_t m = 0; m < ws.coeffs.size(); ++m) ws.coeffs[m] *= ws.propagator[m];
  basis.to_grid(ws.coeffs, state.u, ws.noise.transform);

  double clipped = 0.0;
  for (double& v : state.u) {
    if (!std::isfinite(v))
      fail(ErrorCode::numerical, "non-finite field after step (dt too large for the current sup-norm)");
    if (v < 0.0) {
      clipped -= v;
      v = 0.0;
    }
  }
  state.clamped_mass += clipped * hd;
  state.I += dI;
  state.Q += dQ;
  state.t += dt;
}

void write_trajectory_csv(const TrajectoryRecord& r, std::ostream& out) {
  out << "step,t,sup_norm,l1_norm,I,Q,clamped_mass,stop_flag\n";
  for (std::size_t i = 0; i < r.size(); ++i) {
    const bool last = i + 1 == r.size();
    out << r.step[i] << ',' << format_double(r.t[i]) << ',' << format_double(r.sup_norm[i]) << ','
        << format_double(r.l1_norm[i]) << ',' << format_double(r.I[i]) << ','
        << format_double(r.Q[i]) << ',' << format_double(r.clamped_mass[i]) << ','
        << to_string(last ? r.stop : StopFlag::none) << '\n';
  }
}

Simulation::Simulation(TrajectoryConfig config) : config_(std::move(config)) {
  config_.validate();
  basis_ = std::make_shared<const SpectralBasis>(config_.domain);
  noise_ = std::make_shared<const NoiseModel>(config_.noise, basis_);
  u0_ = config_.initial.build(*basis_);
}

double Simulation::initial_mass() const { return basis_->integrate(u0_); }

double Simulation::initial_sup() const {
  double s = 0.0;
  for (double v : u0_) s = std::max(s, v);
  return s;
}

TrajectoryRecord Simulation::run(std::uint64_t seed) const {
  TrajectoryRecord rec;
  rec.seed = seed;
  const double hd = basis_->cell_volume();
  SimState state;
  state.u = u0_;
  state.I = initial_mass();

  auto record = [&](std::size_t k, double sup, double l1) {
    rec.step.push_back(k);
    rec.t.push_back(state.t);
    rec.sup_norm.push_back(sup);
    rec.l1_norm.push_back(l1);
    rec.I.push_back(state.I);
    rec.Q.push_back(state.Q);
    rec.clamped_mass.push_back(state.clamped_mass);
  };
  auto check_stop = [&](double sup) {
    if (sup >= config_.sigma.truncation) {
      state.hit_tau_n = true;
      return StopFlag::tau_n;
    }
    if (state.I > config_.mass_bound) {
      state.hit_tau_M = true;
      return StopFlag::tau_M;
    }
    return StopFlag::none;
  };

  const double sup0 = initial_sup();
  record(0, sup0, initial_mass());
  rec.stop = check_stop(sup0);
  if (rec.stop != StopFlag::none) return rec;

  const std::size_t K = config_.step_count();
  RandomStream rng(seed, 0);
  StepWorkspace ws = make_step_workspace(*noise_);
  std::vector<double> dW(basis_->point_count());
  for (std::size_t k = 1; k <= K; ++k) {
    try {
      noise_->sample(config_.dt, rng, dW, ws.noise);
      step(state, config_.dt, dW, *noise_, config_.sigma, ws);
    } catch (const Error& e) {
      rec.stop = StopFlag::failure;
      rec.stop_time = state.t;
      rec.failure = "step " + std::to_string(k) + ": " + e.what();
      return rec;
    }
    state.t = static_cast<double>(k) * config_.dt;
    double sup = 0.0, mass = 0.0;
    for (double v : state.u) {
      sup = std::max(sup, v);
      mass += v;
    }
    mass *= hd;
    StopFlag stop = check_stop(sup);
    if (stop == StopFlag::none && k == K) {
      state.hit_horizon = true;
      stop = StopFlag::horizon;
    }
    if (stop != StopFlag::none || k % config_.record_stride == 0) record(k, sup, mass);
    if (stop != StopFlag::none) {
      rec.stop = stop;
      rec.stop_time = state.t;
      break;
    }
  }
  return rec;
}

TrajectoryRecord run_trajectory(const TrajectoryConfig& config, std::uint64_t seed) {
  Simulation sim(config);
  TrajectoryRecord rec = sim.run(seed);
  if (rec.stop == StopFlag::failure) fail(ErrorCode::numerical, rec.failure);
  return rec;
}

}  // namespace shelab
