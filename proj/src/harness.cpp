#include "shelab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "shelab/error.hpp"
#include "shelab/format.hpp"
#include "shelab/parallel.hpp"
#include "shelab/stats.hpp"

namespace shelab {

namespace {

using json = nlohmann::ordered_json;

constexpr int kSchemaVersion = 1;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

const ConfigKey* find_key(const std::string& key) {
  for (const auto& k : config_keys())
    if (k.key == key) return &k;
  return nullptr;
}

class Reader {
 public:
  explicit Reader(const Settings& s) : s_(s) {}

  std::string str(const std::string& key) const {
    if (auto it = s_.find(key); it != s_.end()) return it->second;
    const ConfigKey* k = find_key(key);
    return k ? k->default_value : std::string();
  }
  bool has(const std::string& key) const { return s_.count(key) != 0; }

  double real(const std::string& key) const {
    const std::string v = str(key);
    double out = 0.0;
    if (v == "pi") return std::numbers::pi;
    if (!parse_double(v, out) || !std::isfinite(out))
      fail(ErrorCode::config, key + ": expected a finite number, got '" + v + "'");
    return out;
  }
  long long integer(const std::string& key) const {
    const std::string v = str(key);
    long long out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
      fail(ErrorCode::config, key + ": expected an integer, got '" + v + "'");
    return out;
  }
  std::size_t count(const std::string& key) const {
    const long long v = integer(key);
    if (v < 0) fail(ErrorCode::config, key + ": must be >= 0, got " + std::to_string(v));
    return static_cast<std::size_t>(v);
  }
  bool flag(const std::string& key) const {
    const std::string v = str(key);
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    fail(ErrorCode::config, key + ": expected true/false, got '" + v + "'");
  }

 private:
  const Settings& s_;
};

std::vector<double> read_initial_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::config, "run.initial_file: cannot open '" + path + "'");
  std::vector<double> values;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) {
      double v = 0.0;
      if (!parse_double(tok, v))
        fail(ErrorCode::config, "run.initial_file: " + path + ":" + std::to_string(lineno) +
                                    ": bad number '" + tok + "'");
      values.push_back(v);
    }
  }
  return values;
}

MultiIndex parse_mode(const std::string& text, int dimension) {
  MultiIndex m{{0, 0, 0}};
  std::string s = text;
  std::replace(s.begin(), s.end(), ',', ' ');
  std::istringstream in(s);
  int count = 0;
  int v = 0;
  while (in >> v) {
    if (count == 3) fail(ErrorCode::config, "run.initial_mode: at most three indices");
    m.k[count++] = v;
  }
  if (!in.eof()) fail(ErrorCode::config, "run.initial_mode: expected integers, got '" + text + "'");
  if (count == 0) fail(ErrorCode::config, "run.initial_mode: empty mode index");
  for (int i = count; i < dimension; ++i) m.k[i] = m.k[count - 1];
  return m;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

struct Fnv1a {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void add(std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  }
};

json exits_json(const std::vector<ThresholdExit>& exits) {
  json a = json::array();
  for (const auto& e : exits)
    a.push_back({{"level", e.level}, {"threshold", std::ldexp(1.0, e.level)}, {"count", e.count},
                 {"fraction", e.fraction}});
  return a;
}

json aggregates_to_json(const EnsembleAggregates& a) {
  json j;
  j["paths"] = a.paths;
  j["failures"] = a.failures;
  j["stopped"] = {{"tau_n", a.stopped_tau_n}, {"tau_M", a.stopped_tau_M}, {"horizon", a.stopped_horizon}};
  j["l1_initial"] = a.l1_initial;
  j["mass_bound"] = a.mass_bound;
  j["truncation"] = a.truncation;
  j["m0"] = a.m0;
  j["explosion_exit_fraction"] = a.explosion_exit_fraction;
  j["martingale"] = {{"mean_final_I", a.martingale.mean_final},
                     {"standard_error", a.martingale.standard_error},
                     {"deviation_se", a.martingale.deviation_se},
                     {"pass", a.martingale.pass}};
  json doob = json::array();
  for (const auto& e : a.doob.entries)
    doob.push_back({{"M", e.M}, {"exceed_fraction", e.exceed_fraction}, {"bound", e.bound},
                    {"standard_error", e.standard_error}, {"margin_se", e.margin_se}, {"pass", e.pass}});
  j["doob"] = doob;
  if (a.qv)
    j["qv"] = {{"M", a.qv->M}, {"mean_Q", a.qv->mean_Q}, {"standard_error", a.qv->standard_error},
               {"bound", a.qv->bound}, {"margin_se", a.qv->margin_se}, {"paths", a.qv->paths},
               {"pass", a.qv->pass}};
  else
    j["qv"] = nullptr;
  j["exits"] = exits_json(a.exits);
  j["mean_doubling_count"] = a.mean_doubling_count;
  j["mean_clamped_fraction"] = a.mean_clamped_fraction;
  return j;
}

json regime_to_json(const RegimeInfo& r) {
  json j;
  j["beta"] = r.beta;
  j["eta"] = r.eta;
  j["gamma"] = r.gamma;
  j["gamma_c"] = r.gamma_c ? json(*r.gamma_c) : json(nullptr);
  j["regime"] = to_string(r.regime);
  return j;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) fail(ErrorCode::io, "write failed for '" + path.string() + "'");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"domain.dimension", "1", "spatial dimension d (1..3)"},
      {"domain.length", "pi", "side length L of the box [0, L]^d"},
      {"domain.boundary", "neumann", "periodic | neumann | dirichlet"},
      {"domain.grid", "64", "grid points per axis (power of two, >= 8)"},
      {"domain.modes", "0", "mode cutoff per axis (0: same as the grid)"},
      {"noise.kernel", "spectral", "riesz | spectral | white"},
      {"noise.alpha", "0.25", "Riesz exponent, 0 < alpha < min(2, d/2)"},
      {"noise.theta", "0.25", "spectral decay exponent theta > max(0, d/2 - 1)"},
      {"noise.shift", "1", "spectral shift a >= 0 (a > 0 unless Dirichlet)"},
      {"sigma.scale", "1", "c in sigma(u) = c u^gamma"},
      {"sigma.gamma", "1.5", "growth exponent gamma >= 1"},
      {"sigma.truncation", "1024", "truncation level n_trunc (tau_n threshold)"},
      {"run.initial", "constant", "constant | eigenmode | file"},
      {"run.initial_value", "1", "constant value or eigenmode amplitude"},
      {"run.initial_mode", "1", "eigenmode index k (comma separated per axis)"},
      {"run.initial_file", "", "file of grid values (row-major, whitespace or commas)"},
      {"run.dt", "1e-4", "time step"},
      {"run.horizon", "0.1", "final time T"},
      {"run.mass_bound", "1e12", "M in tau_M (stop once I exceeds M)"},
      {"run.record_stride", "1", "record every k-th step"},
      {"run.paths", "100", "number of trajectories"},
      {"run.seed", "1", "base seed; trajectory i uses seed + i"},
      {"run.output", "shelab-out", "output directory"},
      {"run.workers", "0", "worker threads (0: hardware concurrency)"},
      {"run.save_trajectories", "false", "write per-trajectory CSVs"},
      {"run.max_failure_fraction", "0", "tolerated fraction of failed trajectories"},
      {"run.doubling_floor", "0", "m0 for doubling statistics (0: derived from M)"},
  };
  return keys;
}

std::size_t SimConfig::worker_count() const { return workers == 0 ? default_workers() : workers; }

Settings parse_settings(std::istream& in, const std::string& origin) {
  Settings s;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    const auto eq = body.find('=');
    if (eq == std::string::npos) fail(ErrorCode::config, where + ": expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (!find_key(key)) fail(ErrorCode::config, where + ": unknown key '" + key + "'");
    if (s.count(key)) fail(ErrorCode::config, where + ": duplicate key '" + key + "'");
    s[key] = value;
  }
  return s;
}

Settings read_settings_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::config, "cannot open config file '" + path + "'");
  return parse_settings(in, path);
}

void set_setting(Settings& settings, const std::string& key, const std::string& value) {
  if (!find_key(key)) fail(ErrorCode::config, "unknown key '" + key + "'");
  settings[key] = value;
}

SimConfig build_config(const Settings& settings) {
  const Reader r(settings);
  SimConfig c;
  auto& t = c.trajectory;

  t.domain.dimension = static_cast<int>(r.integer("domain.dimension"));
  t.domain.length = r.real("domain.length");
  t.domain.boundary = parse_boundary(r.str("domain.boundary"));
  t.domain.grid = r.count("domain.grid");
  t.domain.modes = r.count("domain.modes");

  const std::string kernel = r.str("noise.kernel");
  if (kernel == "riesz")
    t.noise = CovarianceSpec::riesz(r.real("noise.alpha"));
  else if (kernel == "spectral")
    t.noise = CovarianceSpec::spectral(r.real("noise.theta"), r.real("noise.shift"));
  else if (kernel == "white")
    t.noise = CovarianceSpec::white();
  else
    fail(ErrorCode::config, "noise.kernel: expected riesz|spectral|white, got '" + kernel + "'");

  t.sigma.scale = r.real("sigma.scale");
  t.sigma.gamma = r.real("sigma.gamma");
  t.sigma.truncation = r.real("sigma.truncation");

  const std::string init = r.str("run.initial");
  t.initial.value = r.real("run.initial_value");
  if (init == "constant") {
    t.initial.kind = InitialCondition::Kind::constant;
  } else if (init == "eigenmode") {
    t.initial.kind = InitialCondition::Kind::eigenmode;
    t.initial.mode = parse_mode(r.str("run.initial_mode"), t.domain.dimension);
  } else if (init == "file") {
    t.initial.kind = InitialCondition::Kind::file;
    t.initial.path = r.str("run.initial_file");
    if (t.initial.path.empty()) fail(ErrorCode::config, "run.initial_file: required for run.initial = file");
    t.initial.values = read_initial_file(t.initial.path);
  } else {
    fail(ErrorCode::config, "run.initial: expected constant|eigenmode|file, got '" + init + "'");
  }

  t.dt = r.real("run.dt");
  t.horizon = r.real("run.horizon");
  t.mass_bound = r.real("run.mass_bound");
  t.record_stride = r.count("run.record_stride");
  c.paths = r.count("run.paths");
  if (c.paths == 0) fail(ErrorCode::config, "run.paths: need at least one path");
  {
    const std::string v = r.str("run.seed");
    std::uint64_t seed = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), seed);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
      fail(ErrorCode::config, "run.seed: expected an unsigned integer, got '" + v + "'");
    c.seed = seed;
  }
  c.output_dir = r.str("run.output");
  c.workers = r.count("run.workers");
  c.save_trajectories = r.flag("run.save_trajectories");
  c.max_failure_fraction = r.real("run.max_failure_fraction");
  if (!(c.max_failure_fraction >= 0.0 && c.max_failure_fraction <= 1.0))
    fail(ErrorCode::config, "run.max_failure_fraction: must lie in [0, 1]");
  c.doubling_floor = static_cast<int>(r.integer("run.doubling_floor"));
  if (c.doubling_floor < 0) fail(ErrorCode::config, "run.doubling_floor: must be >= 0");

  t.validate();
  // Eager checks that otherwise only surface when the ensemble starts.
  SpectralBasis basis(t.domain);
  t.initial.build(basis);
  if (const auto* rz = std::get_if<RieszKernel>(&t.noise.kernel); rz && basis.point_count() > 4096)
    fail(ErrorCode::config, "domain.grid: Riesz sampler supports at most 4096 grid points, got " +
                                std::to_string(basis.point_count()));
  return c;
}

SimConfig parse_config(const std::string& path) { return build_config(read_settings_file(path)); }

Settings to_settings(const SimConfig& c) {
  const auto& t = c.trajectory;
  Settings s;
  s["domain.dimension"] = std::to_string(t.domain.dimension);
  s["domain.length"] = format_double(t.domain.length);
  s["domain.boundary"] = to_string(t.domain.boundary);
  s["domain.grid"] = std::to_string(t.domain.grid);
  s["domain.modes"] = std::to_string(t.domain.modes);
  s["noise.kernel"] = t.noise.variant_name();
  if (const auto* rz = std::get_if<RieszKernel>(&t.noise.kernel)) {
    s["noise.alpha"] = format_double(rz->alpha);
  } else if (const auto* sp = std::get_if<SpectralKernel>(&t.noise.kernel)) {
    s["noise.theta"] = format_double(sp->theta);
    s["noise.shift"] = format_double(sp->shift);
  }
  s["sigma.scale"] = format_double(t.sigma.scale);
  s["sigma.gamma"] = format_double(t.sigma.gamma);
  s["sigma.truncation"] = format_double(t.sigma.truncation);
  s["run.initial"] = to_string(t.initial.kind);
  s["run.initial_value"] = format_double(t.initial.value);
  if (t.initial.kind == InitialCondition::Kind::eigenmode) {
    std::string m;
    for (int i = 0; i < t.domain.dimension; ++i) m += (i ? "," : "") + std::to_string(t.initial.mode.k[i]);
    s["run.initial_mode"] = m;
  }
  if (t.initial.kind == InitialCondition::Kind::file) s["run.initial_file"] = t.initial.path;
  s["run.dt"] = format_double(t.dt);
  s["run.horizon"] = format_double(t.horizon);
  s["run.mass_bound"] = format_double(t.mass_bound);
  s["run.record_stride"] = std::to_string(t.record_stride);
  s["run.paths"] = std::to_string(c.paths);
  s["run.seed"] = std::to_string(c.seed);
  s["run.output"] = c.output_dir;
  s["run.workers"] = std::to_string(c.workers);
  s["run.save_trajectories"] = c.save_trajectories ? "true" : "false";
  s["run.max_failure_fraction"] = format_double(c.max_failure_fraction);
  s["run.doubling_floor"] = std::to_string(c.doubling_floor);
  return s;
}

std::string canonical_text(const SimConfig& config) {
  std::string out;
  for (const auto& [k, v] : to_settings(config)) out += k + " = " + v + "\n";
  return out;
}

std::string config_hash(const SimConfig& config) {
  Fnv1a h;
  for (const auto& [k, v] : to_settings(config)) {
    if (k == "run.workers" || k == "run.output") continue;
    h.add(k);
    h.add("=");
    h.add(v);
    h.add("\n");
  }
  for (double v : config.trajectory.initial.values) {
    h.add(format_double(v));
    h.add(",");
  }
  return hex64(h.h);
}

RegimeInfo regime_info(const SimConfig& config) {
  const auto& t = config.trajectory;
  const KernelParams p = raw_kernel_params(t.noise, t.domain.dimension);
  RegimeInfo r;
  r.beta = p.beta;
  r.eta = p.eta;
  r.gamma = t.sigma.gamma;
  if (p.eta > 0.0 && p.eta < 1.0) r.gamma_c = critical_exponent(p.beta, p.eta);
  r.regime = classify_sigma(t.sigma, t.noise, t.domain.dimension);
  return r;
}

EnsembleRow summarize(const TrajectoryRecord& rec, double l1_initial, int m0) {
  EnsembleRow row;
  row.seed = rec.seed;
  row.stop = rec.stop;
  if (rec.size() == 0) return row;
  row.stop_time = rec.stop == StopFlag::failure ? rec.stop_time : rec.t.back();
  row.max_sup_norm = *std::max_element(rec.sup_norm.begin(), rec.sup_norm.end());
  row.max_l1 = *std::max_element(rec.l1_norm.begin(), rec.l1_norm.end());
  row.final_I = rec.I.back();
  row.final_Q = rec.Q.back();
  row.clamped_fraction = l1_initial > 0.0 ? rec.clamped_mass.back() / l1_initial : 0.0;
  const auto d = detect_doubling(rec, m0);
  row.doubling_count = d.up_events + d.down_events;
  return row;
}

EnsembleAggregates aggregate_rows(const std::vector<EnsembleRow>& rows, double l1_initial,
                                  double mass_bound, double truncation, int m0) {
  EnsembleAggregates a;
  a.paths = rows.size();
  a.l1_initial = l1_initial;
  a.mass_bound = mass_bound;
  a.truncation = truncation;
  a.m0 = m0;
  std::vector<double> final_I, max_l1, q_final;
  double doubling = 0.0, clamped = 0.0;
  std::vector<const EnsembleRow*> done;
  for (const auto& r : rows) {
    switch (r.stop) {
      case StopFlag::failure:
        ++a.failures;
        continue;
      case StopFlag::tau_n:
        ++a.stopped_tau_n;
        break;
      case StopFlag::tau_M:
        ++a.stopped_tau_M;
        break;
      case StopFlag::horizon:
        ++a.stopped_horizon;
        break;
      case StopFlag::none:
        break;
    }
    done.push_back(&r);
    final_I.push_back(r.final_I);
    max_l1.push_back(r.max_l1);
    q_final.push_back(r.final_Q);
    doubling += static_cast<double>(r.doubling_count);
    clamped += r.clamped_fraction;
  }
  const double n = static_cast<double>(done.size());
  if (!done.empty()) {
    a.explosion_exit_fraction = static_cast<double>(a.stopped_tau_n) / n;
    a.mean_doubling_count = doubling / n;
    a.mean_clamped_fraction = clamped / n;
  }
  if (final_I.size() >= 2) a.martingale = martingale_mean_check(final_I, l1_initial);
  a.martingale.l1_initial = l1_initial;
  if (l1_initial > 0.0) {
    const std::vector<double> grid{2.0 * l1_initial, 4.0 * l1_initial, 8.0 * l1_initial};
    a.doob = doob_check(max_l1, l1_initial, grid);
  }
  if (q_final.size() >= 2) a.qv = qv_bound_check(q_final, mass_bound);
  const int top = truncation >= 2.0 ? static_cast<int>(std::floor(std::log2(truncation))) : 0;
  for (int m = 1; m <= top; ++m) {
    ThresholdExit e;
    e.level = m;
    const double thr = std::ldexp(1.0, m);
    for (const auto* r : done)
      if (r->max_sup_norm >= thr) ++e.count;
    e.fraction = done.empty() ? 0.0 : static_cast<double>(e.count) / n;
    a.exits.push_back(e);
  }
  return a;
}

HeatKernelFit fit_heat_kernel(const DomainSpec& domain) {
  static std::mutex cache_mutex;
  static std::vector<std::tuple<int, double, Boundary, HeatKernelFit>> cache;
  {
    std::lock_guard lock(cache_mutex);
    for (const auto& [d, L, b, fit] : cache)
      if (d == domain.dimension && L == domain.length && b == domain.boundary) return fit;
  }
  DomainSpec fine;
  fine.dimension = 1;
  fine.length = domain.length;
  fine.boundary = domain.boundary;
  fine.grid = 4096;
  const SpectralBasis basis(fine);
  HeatKernelFit out;
  out.t_grid = stats::log_spaced(1e-4, 1e-2, 9);
  for (double t : out.t_grid)
    out.values.push_back(std::pow(heat_kernel_diagonal_sup(basis, t), domain.dimension));
  out.fit = stats::fit_power_law(out.t_grid, out.values);
  out.beta = -out.fit.slope;
  out.c_fit = std::exp(out.fit.intercept);
  std::lock_guard lock(cache_mutex);
  cache.emplace_back(domain.dimension, domain.length, domain.boundary, out);
  return out;
}

int resolve_doubling_floor(const SimConfig& config) {
  if (config.doubling_floor > 0) return config.doubling_floor;
  const auto fit = fit_heat_kernel(config.trajectory.domain);
  return std::max(1, doubling_level_floor(config.trajectory.mass_bound, fit.c_fit));
}

EnsembleResult run_ensemble(const SimConfig& config, const TrajectoryObserver& observer) {
  const auto start = std::chrono::steady_clock::now();
  const Simulation sim(config.trajectory);
  const double l1_0 = sim.initial_mass();
  const int m0 = resolve_doubling_floor(config);

  EnsembleResult result;
  result.config_hash = config_hash(config);
  result.rows.resize(config.paths);
  std::vector<std::string> messages(config.paths);

  std::filesystem::path traj_dir;
  if (config.save_trajectories) {
    traj_dir = std::filesystem::path(config.output_dir) / "trajectories";
    std::filesystem::create_directories(traj_dir);
  }
  const std::size_t workers = config.worker_count();
  parallel_for(config.paths, workers, [&](std::size_t i) {
    const TrajectoryRecord rec = sim.run(config.seed + i);
    result.rows[i] = summarize(rec, l1_0, m0);
    if (rec.stop == StopFlag::failure)
      messages[i] = "seed " + std::to_string(rec.seed) + ": " + rec.failure;
    if (config.save_trajectories) {
      const std::string stem = "seed_" + std::to_string(rec.seed);
      std::ostringstream traj, dbl;
      write_trajectory_csv(rec, traj);
      write_doubling_csv(detect_doubling(rec, m0), dbl);
      write_text(traj_dir / (stem + ".csv"), traj.str());
      write_text(traj_dir / (stem + "_doubling.csv"), dbl.str());
    }
    if (observer) observer(i, rec);
  });
  for (auto& m : messages)
    if (!m.empty()) result.failure_messages.push_back(std::move(m));

  result.aggregates = aggregate_rows(result.rows, l1_0, config.trajectory.mass_bound,
                                     config.trajectory.sigma.truncation, m0);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.metrics.wall_seconds = wall;
  result.metrics.paths_per_second = wall > 0.0 ? static_cast<double>(config.paths) / wall : 0.0;
  result.metrics.workers = workers;
  return result;
}

void write_rows_csv(const EnsembleResult& result, std::ostream& out) {
  out << "# config_hash=" << result.config_hash << '\n';
  out << "seed,stop_flag,stop_time,max_sup_norm,max_l1,final_I,final_Q,clamped_fraction,doubling_count\n";
  for (const auto& r : result.rows)
    out << r.seed << ',' << to_string(r.stop) << ',' << format_double(r.stop_time) << ','
        << format_double(r.max_sup_norm) << ',' << format_double(r.max_l1) << ','
        << format_double(r.final_I) << ',' << format_double(r.final_Q) << ','
        << format_double(r.clamped_fraction) << ',' << r.doubling_count << '\n';
}

std::vector<EnsembleRow> read_rows_csv(std::istream& in, std::string& hash) {
  std::vector<EnsembleRow> rows;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("# config_hash=", 0) == 0) {
      hash = line.substr(14);
      continue;
    }
    if (!header) {
      if (line.rfind("seed,", 0) != 0) fail(ErrorCode::io, "rows.csv: missing header");
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string tok;
    while (std::getline(ls, tok, ',')) f.push_back(tok);
    if (f.size() != 9)
      fail(ErrorCode::io, "rows.csv:" + std::to_string(lineno) + ": expected 9 fields");
    EnsembleRow r;
    auto num = [&](const std::string& s) {
      double v = 0.0;
      if (!parse_double(s, v) && s != "inf" && s != "nan")
        fail(ErrorCode::io, "rows.csv:" + std::to_string(lineno) + ": bad number '" + s + "'");
      return v;
    };
    auto uint = [&](const std::string& s) {
      std::uint64_t v = 0;
      const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
      if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        fail(ErrorCode::io, "rows.csv:" + std::to_string(lineno) + ": bad integer '" + s + "'");
      return v;
    };
    r.seed = uint(f[0]);
    r.stop = parse_stop_flag(f[1]);
    r.stop_time = num(f[2]);
    r.max_sup_norm = num(f[3]);
    r.max_l1 = num(f[4]);
    r.final_I = num(f[5]);
    r.final_Q = num(f[6]);
    r.clamped_fraction = num(f[7]);
    r.doubling_count = uint(f[8]);
    rows.push_back(r);
  }
  return rows;
}

std::string aggregates_json(const EnsembleResult& result, const SimConfig& config) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "ensemble";
  j["config_hash"] = result.config_hash;
  json cfg = json::object();
  for (const auto& [k, v] : to_settings(config))
    if (k != "run.workers" && k != "run.output") cfg[k] = v;
  j["config"] = cfg;
  j["regime"] = regime_to_json(regime_info(config));
  j["aggregates"] = aggregates_to_json(result.aggregates);
  json fails = json::array();
  for (const auto& m : result.failure_messages) fails.push_back(m);
  j["failure_messages"] = fails;
  return j.dump(2) + "\n";
}

std::string metrics_json(const EnsembleResult& result) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "metrics";
  j["config_hash"] = result.config_hash;
  j["wall_seconds"] = result.metrics.wall_seconds;
  j["paths_per_second"] = result.metrics.paths_per_second;
  j["workers"] = result.metrics.workers;
  return j.dump(2) + "\n";
}

void write_ensemble(const EnsembleResult& result, const SimConfig& config) {
  const std::filesystem::path dir(config.output_dir);
  std::filesystem::create_directories(dir);
  std::ostringstream rows;
  write_rows_csv(result, rows);
  write_text(dir / "rows.csv", rows.str());
  write_text(dir / "ensemble.json", aggregates_json(result, config));
  write_text(dir / "metrics.json", metrics_json(result));
}

LoadedEnsemble load_ensemble(const std::string& dir) {
  const std::filesystem::path base(dir);
  LoadedEnsemble out;
  std::ifstream rows_in(base / "rows.csv");
  if (!rows_in) fail(ErrorCode::io, "cannot read '" + (base / "rows.csv").string() + "'");
  out.rows = read_rows_csv(rows_in, out.config_hash);
  json stored;
  try {
    stored = json::parse(read_text(base / "ensemble.json"));
  } catch (const json::exception& e) {
    fail(ErrorCode::io, std::string("ensemble.json: ") + e.what());
  }
  if (!stored.contains("aggregates") || !stored.contains("config_hash"))
    fail(ErrorCode::io, "ensemble.json: missing aggregates or config_hash");
  const json& agg = stored["aggregates"];
  try {
    const auto recomputed = aggregate_rows(out.rows, agg.at("l1_initial").get<double>(),
                                           agg.at("mass_bound").get<double>(),
                                           agg.at("truncation").get<double>(), agg.at("m0").get<int>());
    out.stored_aggregates = agg.dump(2);
    out.recomputed_aggregates = aggregates_to_json(recomputed).dump(2);
  } catch (const json::exception& e) {
    fail(ErrorCode::io, std::string("ensemble.json: ") + e.what());
  }
  out.consistent = stored["config_hash"].get<std::string>() == out.config_hash &&
                   out.stored_aggregates == out.recomputed_aggregates;
  return out;
}

SweepResult sweep_gamma(const SimConfig& config, const std::vector<double>& gammas,
                        const std::vector<int>& threshold_levels) {
  require(!gammas.empty(), "sweep_gamma: empty gamma grid");
  require(!threshold_levels.empty(), "sweep_gamma: empty threshold grid");
  for (int m : threshold_levels)
    if (m < 1 || std::ldexp(1.0, m) > config.trajectory.sigma.truncation)
      fail(ErrorCode::config, "sweep: threshold 2^" + std::to_string(m) +
                                  " must be >= 2 and <= sigma.truncation");
  SweepResult out;
  out.config_hash = config_hash(config);
  out.gammas = gammas;
  out.threshold_levels = threshold_levels;
  std::sort(out.threshold_levels.begin(), out.threshold_levels.end());
  out.paths = config.paths;
  out.m0 = resolve_doubling_floor(config);
  out.gamma_c = regime_info(config).gamma_c;

  for (double g : gammas) {
    SimConfig c = config;
    c.trajectory.sigma.gamma = g;
    c.trajectory.validate();
    std::vector<double> above(config.paths, 0.0);
    const int m0 = out.m0;
    const auto res = run_ensemble(c, [&](std::size_t i, const TrajectoryRecord& rec) {
      above[i] = static_cast<double>(detect_doubling(rec, m0).up_events_above_m0);
    });
    SweepCell cell;
    cell.gamma = g;
    cell.regime = regime_info(c).regime;
    cell.failures = res.aggregates.failures;
    const std::size_t done = config.paths - cell.failures;
    double total_above = 0.0;
    for (std::size_t i = 0; i < config.paths; ++i)
      if (res.rows[i].stop != StopFlag::failure) total_above += above[i];
    cell.mean_up_events_above_m0 = done ? total_above / static_cast<double>(done) : 0.0;
    cell.mean_clamped_fraction = res.aggregates.mean_clamped_fraction;
    for (int m : out.threshold_levels) {
      ThresholdExit e;
      e.level = m;
      const double thr = std::ldexp(1.0, m);
      for (const auto& r : res.rows)
        if (r.stop != StopFlag::failure && r.max_sup_norm >= thr) ++e.count;
      e.fraction = done ? static_cast<double>(e.count) / static_cast<double>(done) : 0.0;
      cell.exits.push_back(e);
      cell.exit_standard_error.push_back(stats::fraction_standard_error(e.fraction, done));
    }
    for (std::size_t k = 1; k < cell.exits.size(); ++k)
      out.monotone_in_threshold = out.monotone_in_threshold &&
                                  cell.exits[k].fraction <= cell.exits[k - 1].fraction;
    out.cells.push_back(std::move(cell));
  }
  return out;
}

std::string sweep_json(const SweepResult& r) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "sweep_gamma";
  j["config_hash"] = r.config_hash;
  j["paths"] = r.paths;
  j["gamma_c"] = r.gamma_c ? json(*r.gamma_c) : json(nullptr);
  j["m0"] = r.m0;
  j["threshold_levels"] = r.threshold_levels;
  j["monotone_in_threshold"] = r.monotone_in_threshold;
  json cells = json::array();
  for (const auto& c : r.cells) {
    json cj;
    cj["gamma"] = c.gamma;
    cj["regime"] = to_string(c.regime);
    cj["failures"] = c.failures;
    cj["mean_up_events_above_m0"] = c.mean_up_events_above_m0;
    cj["mean_clamped_fraction"] = c.mean_clamped_fraction;
    json ex = exits_json(c.exits);
    for (std::size_t k = 0; k < ex.size(); ++k) ex[k]["standard_error"] = c.exit_standard_error[k];
    cj["exits"] = ex;
    cells.push_back(cj);
  }
  j["cells"] = cells;
  return j.dump(2) + "\n";
}

void write_sweep_csv(const SweepResult& r, std::ostream& out) {
  out << "# config_hash=" << r.config_hash << '\n';
  out << "gamma,level,threshold,exit_fraction,standard_error,mean_up_events_above_m0,mean_clamped_fraction\n";
  for (const auto& c : r.cells)
    for (std::size_t k = 0; k < c.exits.size(); ++k)
      out << format_double(c.gamma) << ',' << c.exits[k].level << ','
          << format_double(std::ldexp(1.0, c.exits[k].level)) << ','
          << format_double(c.exits[k].fraction) << ',' << format_double(c.exit_standard_error[k])
          << ',' << format_double(c.mean_up_events_above_m0) << ',' << format_double(c.mean_clamped_fraction)
          << '\n';
}

std::string to_string(ClauseStatus s) {
  switch (s) {
    case ClauseStatus::pass:
      return "pass";
    case ClauseStatus::fail:
      return "fail";
    case ClauseStatus::inapplicable:
      return "inapplicable";
  }
  return "fail";
}

AssumptionReport verify_assumptions(const SimConfig& config) {
  const auto& t = config.trajectory;
  const int d = t.domain.dimension;
  AssumptionReport rep;
  rep.config_hash = config_hash(config);
  rep.regime = regime_info(config);

  {
    const auto fit = fit_heat_kernel(t.domain);
    rep.c_fit = fit.c_fit;
    auto& a = rep.heat_kernel;
    a.expected = 0.5 * d;
    a.fitted = fit.beta;
    const bool ok = std::abs(fit.beta - a.expected) <= 0.05;
    a.status = ok ? ClauseStatus::pass : ClauseStatus::fail;
    a.detail = "sup_x G(t,x,x) ~ C t^-beta on [1e-4, 1e-2]: beta_hat = " + format_double(fit.beta) +
               ", C = " + format_double(fit.c_fit) + ", table beta = " + format_double(a.expected);
  }

  {
    auto& b = rep.noise_decay;
    b.expected = raw_kernel_params(t.noise, d).eta;
    try {
      std::shared_ptr<const SpectralBasis> basis;
      if (std::holds_alternative<RieszKernel>(t.noise.kernel)) {
        basis = std::make_shared<const SpectralBasis>(t.domain);
      } else {
        DomainSpec fine = t.domain;
        fine.grid = d == 1 ? 4096 : (d == 2 ? 1024 : 128);
        fine.modes = 0;
        basis = std::make_shared<const SpectralBasis>(fine);
      }
      const double kmax = basis->axis_wavenumber(basis->mode_cutoff() - 1);
      const double lo = std::max(1e-4, 15.0 / (kmax * kmax));
      const auto grid = stats::log_spaced(lo, 1e-2, 9);
      const auto rpt = verify_decay(t.noise, *basis, grid);
      b.fitted = -rpt.fitted_slope;
      const bool in_range = b.expected > 0.0 && b.expected < 1.0;
      const bool close = std::abs(b.fitted - b.expected) <= 0.1;
      b.status = in_range && close ? ClauseStatus::pass : ClauseStatus::fail;
      b.detail = "eta_hat = " + format_double(b.fitted) + ", table eta = " + format_double(b.expected) +
                 " on t in [" + format_double(lo) + ", 1e-2]";
      if (!in_range) b.detail += "; eta in (0,1) fails";
      if (rpt.literature_backed) b.detail += "; Monte Carlo estimate, exponent from the literature table";
    } catch (const Error& e) {
      b.status = ClauseStatus::fail;
      b.detail = e.what();
      if (!(b.expected > 0.0 && b.expected < 1.0)) b.detail += "; eta in (0,1) fails";
    }
  }

  {
    auto& c = rep.double_integral;
    if (t.noise.is_white()) {
      c.status = ClauseStatus::inapplicable;
      c.detail = "delta kernel has no finite double integral";
    } else {
      const SpectralBasis basis(t.domain);
      const double v = double_integral(t.noise, basis);
      c.fitted = v;
      c.status = std::isfinite(v) && v > 0.0 ? ClauseStatus::pass : ClauseStatus::fail;
      c.detail = "int int Lambda = " + format_double(v);
    }
  }
  rep.all_pass = rep.heat_kernel.status != ClauseStatus::fail &&
                 rep.noise_decay.status != ClauseStatus::fail &&
                 rep.double_integral.status != ClauseStatus::fail;
  return rep;
}

std::string assumption_json(const AssumptionReport& r) {
  auto clause = [](const ClauseReport& c) {
    return json{{"status", to_string(c.status)}, {"fitted", c.fitted}, {"expected", c.expected},
                {"detail", c.detail}};
  };
  json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "assumptions";
  j["config_hash"] = r.config_hash;
  j["A_heat_kernel"] = clause(r.heat_kernel);
  j["B_noise_decay"] = clause(r.noise_decay);
  j["C_double_integral"] = clause(r.double_integral);
  j["C_fit"] = r.c_fit;
  j["regime"] = regime_to_json(r.regime);
  j["all_pass"] = r.all_pass;
  return j.dump(2) + "\n";
}

std::string probe_json(const MomentProbeReport& r, const std::string& hash) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "convolution_probe";
  j["config_hash"] = hash;
  j["p"] = r.p;
  j["beta"] = r.beta;
  j["eta"] = r.eta;
  j["admissible"] = r.admissible;
  j["T_grid"] = r.T_grid;
  j["moments"] = r.moments;
  j["fitted_slope"] = std::isfinite(r.fitted_slope) ? json(r.fitted_slope) : json(nullptr);
  j["fitted_C"] = r.fitted_C;
  j["theoretical_exponent"] = r.theoretical_exponent;
  j["slope_tolerance"] = r.slope_tolerance;
  j["pass"] = r.pass;
  j["paths"] = r.paths;
  j["batches"] = r.batches;
  j["dt"] = r.dt;
  j["probe_point"] = std::vector<double>(r.probe_point.begin(), r.probe_point.end());
  j["variance"] = r.variance;
  j["variance_se"] = r.variance_se;
  j["variance_oracle"] = std::isfinite(r.variance_oracle) ? json(r.variance_oracle) : json(nullptr);
  return j.dump(2) + "\n";
}

}  // namespace shelab
