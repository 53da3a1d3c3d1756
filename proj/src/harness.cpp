#include "flownav/harness.hpp"

#include "flownav/rng.hpp"

#include <json.hpp>

#include <Eigen/LU>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace flownav {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Config

namespace {

// Typed access to one JSON object; remembers which keys were read so that
// typos surface as errors instead of silently falling back to defaults.
class Section {
 public:
  Section(const json& j, std::string ctx) : j_(j), ctx_(std::move(ctx)) {
    if (!j_.is_object()) fail(ErrorCode::ConfigError, ctx_ + ": expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <class T>
  T get(const char* key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    return as<T>(key);
  }

  template <class T>
  T req(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) fail(ErrorCode::ConfigError, ctx_ + ": missing key '" + key + "'");
    return as<T>(key);
  }

  Vec2 vec2(const char* key, const Vec2& fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    const json& a = j_.at(key);
    if (!a.is_array() || a.size() != 2 || !a[0].is_number() || !a[1].is_number())
      fail(ErrorCode::ConfigError, ctx_ + "." + key + ": expected [x, y]");
    return {a[0].get<double>(), a[1].get<double>()};
  }

  Section sub(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) fail(ErrorCode::ConfigError, ctx_ + ": missing section '" + key + "'");
    return Section(j_.at(key), ctx_ + "." + key);
  }

  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) fail(ErrorCode::ConfigError, ctx_ + ": unknown key '" + it.key() + "'");
  }

 private:
  template <class T>
  T as(const char* key) const {
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw std::runtime_error("not a number");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<long long>() < 0))
          throw std::runtime_error("not a nonnegative integer");
      }
      return v.get<T>();
    } catch (const std::exception& e) {
      fail(ErrorCode::ConfigError, ctx_ + "." + key + ": " + e.what());
    }
  }

  const json& j_;
  std::string ctx_;
  std::set<std::string> seen_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

GridFlowMap load_fgm_checked(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) fail(ErrorCode::ConfigError, "referenced map file does not exist: " + p.string());
  return load_fgm(p.string());
}

FlowMap parse_flow(Section s, const std::filesystem::path& base) {
  const auto type = s.req<std::string>("type");
  if (type == "double_gyre") {
    DoubleGyreParams p;
    p.amplitude = s.get("amplitude", p.amplitude);
    p.epsilon = s.get("epsilon", p.epsilon);
    p.omega = s.get("omega", p.omega);
    p.length_scale = s.get("length_scale_m", p.length_scale);
    p.velocity_scale = s.get("velocity_scale_mps", p.velocity_scale);
    p.origin = s.vec2("origin_m", p.origin);
    s.done();
    return p;
  }
  if (type == "meander_jet") {
    MeanderJetParams p;
    p.mean_amplitude = s.get("mean_amplitude", p.mean_amplitude);
    p.phase_speed = s.get("phase_speed", p.phase_speed);
    p.wavenumber = s.get("wavenumber", p.wavenumber);
    p.meander_eps = s.get("meander_eps", p.meander_eps);
    p.meander_omega = s.get("meander_omega", p.meander_omega);
    p.length_scale = s.get("length_scale_m", p.length_scale);
    p.time_scale = s.get("time_scale_s", p.time_scale);
    p.velocity_scale = s.get("velocity_scale_mps", p.velocity_scale);
    p.origin = s.vec2("origin_m", p.origin);
    s.done();
    return p;
  }
  if (type == "fgm") {
    const auto path = resolve(base, s.req<std::string>("path"));
    s.done();
    return load_fgm_checked(path);
  }
  fail(ErrorCode::ConfigError, "flow.type must be double_gyre, meander_jet or fgm");
}

GridSpec parse_grid_spec(Section& s) {
  GridSpec g;
  g.origin = s.vec2("origin_m", g.origin);
  g.dx = s.req<double>("dx_m");
  g.dy = s.req<double>("dy_m");
  g.nx = s.req<std::size_t>("nx");
  g.ny = s.req<std::size_t>("ny");
  g.t0 = s.get("t0_s", 0.0);
  g.dt = s.get("dt_s", 3600.0);
  g.nt = s.get<std::size_t>("nt", 1);
  return g;
}

void parse_ks(Section& t, KsParams& k) {
  k.correlation_length = t.get("correlation_length_m", k.correlation_length);
  k.eta = t.get("eta_m", k.eta);
  k.n_modes = t.get<std::size_t>("n_modes", k.n_modes);
  k.large_scale_variance = t.get("large_scale_variance_m2ps2", k.large_scale_variance);
  k.kolmogorov_const = t.get("kolmogorov_const", k.kolmogorov_const);
}

ImuParams parse_imu(Section s) {
  const auto preset = s.get<std::string>("preset", "vn100");
  ImuParams p;
  if (preset == "vn100") p = ImuParams::vn100();
  else if (preset == "vn110_augmented") p = ImuParams::vn110_augmented();
  else if (preset == "none") p = ImuParams{};
  else fail(ErrorCode::ConfigError, "imu.preset must be vn100, vn110_augmented or none");
  p.rate_hz = s.get("rate_hz", p.rate_hz);
  p.accel_white_sd = s.get("accel_white_sd_mps2_per_sqrthz", p.accel_white_sd);
  p.accel_bias_sd = s.get("accel_bias_sd_mps2", p.accel_bias_sd);
  p.accel_tau = s.get("accel_tau_s", p.accel_tau);
  p.gyro_white_sd = s.get("gyro_white_sd_radps_per_sqrthz", p.gyro_white_sd);
  p.gyro_bias_sd = s.get("gyro_bias_sd_radps", p.gyro_bias_sd);
  p.gyro_tau = s.get("gyro_tau_s", p.gyro_tau);
  s.done();
  return p;
}

AdcpParams parse_adcp(Section s) {
  const auto preset = s.get<std::string>("preset", "rdi1200");
  AdcpParams p;
  if (preset == "rdi1200") p = AdcpParams::rdi1200();
  else if (preset != "none") fail(ErrorCode::ConfigError, "adcp.preset must be rdi1200 or none");
  p.rate_hz = s.get("rate_hz", p.rate_hz);
  p.white_sd = s.get("white_sd_mps", p.white_sd);
  p.bias_sd = s.get("bias_sd_mps", p.bias_sd);
  p.tau = s.get("tau_s", p.tau);
  s.done();
  return p;
}

void parse_estimator(Section s, ScenarioConfig& c) {
  c.n_particles = s.get<std::size_t>("n_particles", c.n_particles);
  const auto kind = s.get<std::string>("estimate", "mean");
  if (kind == "mean") c.estimator = EstimatorKind::Mean;
  else if (kind == "map") c.estimator = EstimatorKind::Map;
  else fail(ErrorCode::ConfigError, "estimator.estimate must be mean or map");
  c.mpf.resampling = s.get("resampling", c.mpf.resampling);
  c.mpf.resample_fraction = s.get("resample_fraction", c.mpf.resample_fraction);
  c.mpf.stochastic_position = s.get("stochastic_position", c.mpf.stochastic_position);
  c.mpf.position_jitter_var = s.get("position_jitter_var_m2", c.mpf.position_jitter_var);
  if (s.has("meas_sd_mps")) c.meas_sd = s.get("meas_sd_mps", 0.0);
  if (s.has("sigma_u_mps")) c.sigma_u = s.get("sigma_u_mps", 0.0);
  if (s.has("mutation")) {
    Section m = s.sub("mutation");
    MutationConfig& mc = c.mpf.mutation;
    mc.enabled = m.get("enabled", true);
    mc.trigger_sd = m.req<double>("trigger_sd_m");
    mc.jitter_var = m.req<double>("jitter_var_m2");
    const double vel = m.get("cov_inflation_vel_m2ps2", 0.0);
    const double psi = m.get("cov_inflation_psi_rad2", 0.0);
    const double uc = m.get("cov_inflation_uc_m2ps2", 0.0);
    mc.cov_inflation.setZero();
    mc.cov_inflation[kf::Vx] = mc.cov_inflation[kf::Vy] = vel;
    mc.cov_inflation[kf::Psi] = psi;
    mc.cov_inflation[kf::Ucx] = mc.cov_inflation[kf::Ucy] = uc;
    m.done();
  }
  if (s.has("heading_aiding")) {
    Section h = s.sub("heading_aiding");
    c.heading.enabled = h.get("enabled", true);
    c.heading.sigma = h.get("sigma_rad", c.heading.sigma);
    c.heading.rate_hz = h.get("rate_hz", c.heading.rate_hz);
    h.done();
  }
  s.done();
}

}  // namespace

NoiseConfig ScenarioConfig::filter_noise() const {
  const double var = turbulence_enabled ? turbulence.large_scale_variance : 0.0;
  NoiseConfig n = NoiseConfig::from_sensors(imu, adcp, turbulence.correlation_length, turbulence.k_c(),
                                            sigma_u ? *sigma_u : std::sqrt(var));
  if (meas_sd) n.R = Mat2::Identity() * (*meas_sd) * (*meas_sd);
  return n;
}

void ScenarioConfig::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorCode::ConfigError, m); };
  if (runs < 1) bad("runs must be >= 1");
  if (n_particles < 1) bad("estimator.n_particles must be >= 1");
  if (!(trajectory.dt > 0.0)) bad("trajectory.dt_s must be > 0");
  if (!(trajectory.speed > 0.0 && trajectory.turn_radius > 0.0)) bad("trajectory speed and turn radius must be > 0");
  if (trajectory.turn_radius > 0.5 * trajectory.leg_spacing) bad("trajectory.turn_radius_m exceeds half the leg spacing");
  try {
    imu.validate();
    adcp.validate();
    if (turbulence_enabled) turbulence.validate();
    if (decimation(trajectory.dt, imu.rate_hz) != 1) bad("imu.rate_hz must equal 1/trajectory.dt_s");
    decimation(trajectory.dt, adcp.rate_hz);
    if (heading.enabled) decimation(trajectory.dt, heading.rate_hz);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigError) throw;
    bad(e.what());
  }
  if (heading.enabled && !(heading.sigma > 0.0)) bad("heading_aiding.sigma_rad must be > 0");
  if (!(mpf.resample_fraction >= 0.0 && mpf.resample_fraction <= 1.0)) bad("resample_fraction must lie in [0, 1]");
  if (!(mpf.position_jitter_var >= 0.0)) bad("position_jitter_var_m2 must be >= 0");
  if (meas_sd && !(*meas_sd > 0.0)) bad("meas_sd_mps must be > 0");
  if (!meas_sd && !(adcp.white_sd > 0.0)) bad("adcp.white_sd_mps must be > 0 unless estimator.meas_sd_mps is set");
  if (!(init.pos_var >= 0.0 && init.vel_var >= 0.0 && init.psi_var >= 0.0)) bad("init variances must be >= 0");
}

ScenarioConfig parse_scenario(const std::string& text, const std::filesystem::path& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigError, std::string("scenario JSON: ") + e.what());
  }
  ScenarioConfig c;
  Section s(j, "scenario");
  s.get<std::string>("$schema", "");
  c.name = s.get<std::string>("name", c.name);
  c.seed = s.get<std::uint64_t>("seed", c.seed);
  c.runs = s.get<std::size_t>("runs", c.runs);
  const double duration = s.get("duration_s", c.trajectory.duration);
  c.output_dir = resolve(base, s.get<std::string>("output_dir", "out"));

  c.truth_flow = parse_flow(s.sub("flow"), base);

  if (s.has("map")) {
    Section m = s.sub("map");
    const auto source = m.req<std::string>("source");
    if (source == "truth") {
    } else if (source == "rasterize") {
      const GridSpec g = parse_grid_spec(m);
      try {
        c.nav_map = FlowMap(rasterize(c.truth_flow, g));
      } catch (const Error& e) {
        fail(ErrorCode::ConfigError, std::string("map: ") + e.what());
      }
    } else if (source == "fgm") {
      c.nav_map = FlowMap(load_fgm_checked(resolve(base, m.req<std::string>("path"))));
    } else {
      fail(ErrorCode::ConfigError, "map.source must be truth, rasterize or fgm");
    }
    m.done();
  }

  if (s.has("turbulence")) {
    Section t = s.sub("turbulence");
    c.turbulence_enabled = t.get("enabled", true);
    parse_ks(t, c.turbulence);
    t.done();
  }

  if (s.has("trajectory")) {
    Section t = s.sub("trajectory");
    LawnmowerSpec& l = c.trajectory;
    l.origin = t.vec2("origin_m", l.origin);
    l.leg_length = t.get("leg_length_m", l.leg_length);
    l.leg_spacing = t.get("leg_spacing_m", l.leg_spacing);
    l.n_legs = t.get<std::size_t>("n_legs", l.n_legs);
    l.speed = t.get("speed_mps", l.speed);
    l.turn_radius = t.get("turn_radius_m", l.turn_radius);
    l.perturb_amp = t.get("perturb_amp_m", l.perturb_amp);
    l.perturb_wavelength = t.get("perturb_wavelength_m", l.perturb_wavelength);
    l.leg_heading = t.get("leg_heading_rad", l.leg_heading);
    l.dt = t.get("dt_s", l.dt);
    t.done();
  }
  c.trajectory.duration = duration;

  if (s.has("imu")) c.imu = parse_imu(s.sub("imu"));
  if (s.has("adcp")) c.adcp = parse_adcp(s.sub("adcp"));
  if (s.has("estimator")) parse_estimator(s.sub("estimator"), c);

  if (s.has("init")) {
    Section i = s.sub("init");
    c.init.pos_var = i.get("pos_var_m2", c.init.pos_var);
    c.init.vel_var = i.get("vel_var_m2ps2", c.init.vel_var);
    c.init.psi_var = i.get("psi_var_rad2", c.init.psi_var);
    c.init.uc_var = i.get("uc_var_m2ps2", c.init.uc_var);
    i.done();
  }
  s.done();
  c.validate();
  return c;
}

KsParams parse_ks_params(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigError, std::string("KS JSON: ") + e.what());
  }
  KsParams k;
  Section s(j, "ks");
  parse_ks(s, k);
  k.seed = s.get<std::uint64_t>("seed", k.seed);
  s.done();
  try {
    k.validate();
  } catch (const Error& e) {
    fail(ErrorCode::ConfigError, e.what());
  }
  return k;
}

GridFlowMap ks_snapshot(const KsField& field, GridSpec spec, double t) {
  spec.t0 = t;
  spec.nt = 1;
  spec.validate();
  GridFlowMap g;
  g.spec = spec;
  g.u.resize(spec.nx * spec.ny);
  g.v.resize(spec.nx * spec.ny);
  for (std::size_t iy = 0; iy < spec.ny; ++iy)
    for (std::size_t ix = 0; ix < spec.nx; ++ix) {
      const Vec2 p = spec.origin + Vec2{ix * spec.dx, iy * spec.dy};
      const Vec2 u = ks_velocity(field, p, t);
      g.u[g.index(0, iy, ix)] = u.x();
      g.v[g.index(0, iy, ix)] = u.y();
    }
  return g;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::ConfigError, "cannot open scenario " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), path.parent_path().empty() ? "." : path.parent_path());
}

// ---------------------------------------------------------------------------
// Single run

std::vector<TruthRecord> scenario_truth(const ScenarioConfig& cfg) {
  return lawnmower_trajectory(cfg.trajectory);
}

double compute_udt(double error, double distance) {
  if (!(distance > 0.0)) fail(ErrorCode::InvalidArgument, "compute_udt: distance must be > 0");
  return error / distance;
}

std::vector<double> path_length(const std::vector<TruthRecord>& truth) {
  std::vector<double> s(truth.size(), 0.0);
  for (std::size_t k = 1; k < truth.size(); ++k) s[k] = s[k - 1] + (truth[k].p - truth[k - 1].p).norm();
  return s;
}

namespace {

Prior make_prior(const ScenarioConfig& cfg, const TruthRecord& x0, const NoiseConfig& n) {
  Prior pr;
  pr.p_mean = x0.p;
  pr.p_cov = Mat2::Identity() * cfg.init.pos_var;
  pr.kf_mean.setZero();
  pr.kf_mean.segment<2>(kf::Vx) = x0.v;
  pr.kf_mean[kf::Psi] = x0.psi;
  const double uc_var = cfg.init.uc_var >= 0.0 ? cfg.init.uc_var : n.sigma_u * n.sigma_u;
  KfVec d;
  d << cfg.init.vel_var, cfg.init.vel_var, cfg.init.psi_var,
       n.accel_bias_sd * n.accel_bias_sd, n.accel_bias_sd * n.accel_bias_sd,
       n.gyro_bias_sd * n.gyro_bias_sd,
       n.adcp_bias_sd * n.adcp_bias_sd, n.adcp_bias_sd * n.adcp_bias_sd,
       uc_var, uc_var;
  pr.kf_cov = d.asDiagonal();
  return pr;
}

}  // namespace

RunResult run_scenario(const ScenarioConfig& cfg, std::size_t run) {
  return run_scenario(cfg, run, scenario_truth(cfg));
}

namespace {
constexpr double kDivergenceFloor = 1.0;  // m
}  // namespace

RunResult run_scenario(const ScenarioConfig& cfg, std::size_t run, const std::vector<TruthRecord>& truth) {
  if (truth.size() < 2) fail(ErrorCode::InvalidArgument, "run_scenario: truth too short");
  const std::uint64_t r = run;
  auto seed_of = [&](Stream s) { return derive_seed(cfg.seed, {r, static_cast<std::uint64_t>(s)}); };

  const ImuLog imu = generate_imu_samples(truth, cfg.imu, seed_of(Stream::Imu));
  std::optional<KsField> ks;
  if (cfg.turbulence_enabled) {
    KsParams kp = cfg.turbulence;
    kp.seed = seed_of(Stream::Turbulence);
    ks = build_ks(kp);
  }
  const AdcpLog adcp = generate_adcp_samples(truth, cfg.truth_flow, ks ? &*ks : nullptr, cfg.adcp,
                                             seed_of(Stream::Adcp));
  const double dt = truth[1].t - truth[0].t;
  const std::size_t adcp_step = decimation(dt, cfg.adcp.rate_hz);

  HeadingLog headings;
  std::size_t heading_step = 0;
  if (cfg.heading.enabled) {
    heading_step = decimation(dt, cfg.heading.rate_hz);
    Rng hr(seed_of(Stream::Heading));
    for (std::size_t k = 0; k < truth.size(); k += heading_step)
      headings.push_back({truth[k].t, wrap_angle(truth[k].psi + cfg.heading.sigma * hr.normal())});
  }

  const TruthRecord& x0 = truth.front();
  const std::vector<Pose> dr =
      dead_reckon({x0.t, x0.p, x0.v, x0.psi}, imu, cfg.heading.enabled ? &headings : nullptr);

  const NoiseConfig noise = cfg.filter_noise();
  MpfConfig mc = cfg.mpf;
  mc.noise = noise;
  const Prior prior = make_prior(cfg, x0, noise);
  MarginalizedParticleFilter mpf(mc, prior, cfg.n_particles, seed_of(Stream::Filter));

  MpfConfig ec = mc;
  ec.stochastic_position = false;
  ec.resampling = false;
  ec.mutation.enabled = false;
  Prior ep = prior;
  ep.p_cov.setZero();
  MarginalizedParticleFilter ekf(ec, ep, 1, seed_of(Stream::ParticleInit));

  const std::vector<double> dist = path_length(truth);
  const FlowMap& map = cfg.map();

  RunResult res;
  res.run = run;
  res.ticks.reserve(truth.size() / adcp_step + 1);
  std::size_t streak = 0;
  bool diverged = false;

  for (std::size_t k = 0; k < truth.size(); ++k) {
    const TruthRecord& x = truth[k];
    const bool adcp_tick = k % adcp_step == 0;
    if (adcp_tick) {
      const Vec2& z = adcp[k / adcp_step].z;
      if (mpf.update(z, map, x.t).all_weights_zero) {
        ++res.weight_collapses;
        diverged = true;
      }
      ekf.update(z, map, x.t);
    }
    if (heading_step && k % heading_step == 0) {
      const double h = headings[k / heading_step].psi;
      mpf.heading_update(h, cfg.heading.sigma);
      ekf.heading_update(h, cfg.heading.sigma);
    }
    if (adcp_tick) {
      TickRecord rec;
      rec.t = x.t;
      rec.distance = dist[k];
      rec.truth_p = x.p;
      rec.truth_v = x.v;
      rec.truth_psi = x.psi;
      rec.dr_p = dr[k].p;
      rec.dr_v = dr[k].v;
      const Estimate e = ekf.estimate_mean();
      rec.ekf_p = e.p;
      rec.ekf_v = e.kf_mean.segment<2>(kf::Vx);
      rec.mpf = cfg.estimator == EstimatorKind::Map ? mpf.estimate_map() : mpf.estimate_mean();
      rec.pos_cov = mpf.position_covariance();
      rec.neff = mpf.neff();

      const double err = (rec.mpf.p - x.p).norm();
      // 1 m floor so a collapsed, noise-free swarm is not declared divergent.
      const double two_sigma = std::max(2.0 * std::sqrt(rec.pos_cov.trace()), kDivergenceFloor);
      streak = err > 10.0 * two_sigma ? streak + 1 : 0;
      if (streak >= 10) diverged = true;
      rec.diverged = diverged;
      res.ticks.push_back(rec);

      mpf.resample_if_needed();
      mpf.mutate();
    }
    if (k + 1 < truth.size()) {
      const double h = truth[k + 1].t - x.t;
      mpf.predict(imu[k], h);
      ekf.predict(imu[k], h);
    }
  }

  const TickRecord& last = res.ticks.back();
  res.distance = last.distance;
  res.dr_error = (last.dr_p - last.truth_p).norm();
  res.ekf_error = (last.ekf_p - last.truth_p).norm();
  res.mpf_error = (last.mpf.p - last.truth_p).norm();
  res.dr_udt = compute_udt(res.dr_error, res.distance);
  res.ekf_udt = compute_udt(res.ekf_error, res.distance);
  res.mpf_udt = compute_udt(res.mpf_error, res.distance);
  res.diverged = diverged;
  res.resamples = mpf.resample_count();
  res.mutations = mpf.mutation_count();
  return res;
}

// ---------------------------------------------------------------------------
// CRLB and Monte Carlo

CrlbTable scenario_crlb(const ScenarioConfig& cfg, const std::vector<TruthRecord>& truth) {
  const NoiseConfig n = cfg.filter_noise();
  Eigen::Matrix3d Q = Eigen::Matrix3d::Zero();
  Q.diagonal() << n.accel_var, n.accel_var, n.gyro_var;
  const CrlbMat P0 = crlb_default_p0(cfg.init.pos_var, cfg.init.vel_var, cfg.init.psi_var);
  const double period = 1.0 / cfg.adcp.rate_hz;
  const CrlbSequence seq = crlb_sequence(truth, cfg.map(), Q, n.R, P0, period);
  const std::size_t step = decimation(truth[1].t - truth[0].t, cfg.adcp.rate_hz);
  CrlbTable out;
  for (std::size_t k = 0; k < seq.times.size(); k += step) {
    out.t.push_back(seq.times[k]);
    const CrlbMat& P = seq.P_filt[k];
    out.sd.push_back({std::sqrt(P(0, 0)), std::sqrt(P(1, 1)), std::sqrt(P(2, 2)), std::sqrt(P(3, 3)),
                      std::sqrt(P(4, 4))});
  }
  return out;
}

namespace {

struct RunSeries {
  RunSummary summary;
  std::vector<double> ex, ey, ev2, var, nees;
};

RunSeries compact(const RunResult& r) {
  RunSeries s;
  s.summary = {r.run,      r.distance, r.dr_error,  r.ekf_error,        r.mpf_error, r.dr_udt,
               r.ekf_udt,  r.mpf_udt,  r.diverged,  r.weight_collapses, r.resamples, r.mutations};
  const std::size_t n = r.ticks.size();
  s.ex.resize(n);
  s.ey.resize(n);
  s.ev2.resize(n);
  s.var.resize(n);
  s.nees.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const TickRecord& t = r.ticks[i];
    const Vec2 e = t.mpf.p - t.truth_p;
    s.ex[i] = e.x();
    s.ey[i] = e.y();
    s.ev2[i] = (t.mpf.kf_mean.segment<2>(kf::Vx) - t.truth_v).squaredNorm();
    s.var[i] = t.pos_cov.trace();
    const Mat2 c = t.pos_cov + Mat2::Identity() * 1e-9;
    s.nees[i] = e.dot(c.inverse() * e);
  }
  return s;
}

// Wilson-Hilferty approximation of the chi-square quantile.
double chi2_quantile(double p, double dof) {
  double lo = -10.0, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p ? lo : hi) = mid;
  }
  const double z = 0.5 * (lo + hi);
  const double a = 2.0 / (9.0 * dof);
  return dof * std::pow(1.0 - a + z * std::sqrt(a), 3.0);
}

}  // namespace

Aggregate monte_carlo(const ScenarioConfig& cfg, std::size_t n_runs, std::size_t jobs) {
  if (n_runs < 1) fail(ErrorCode::InvalidArgument, "monte_carlo: n_runs must be >= 1");
  jobs = std::clamp<std::size_t>(jobs, 1, n_runs);
  const std::vector<TruthRecord> truth = scenario_truth(cfg);
  const CrlbTable crlb = scenario_crlb(cfg, truth);

  std::vector<RunSeries> series(n_runs);
  std::vector<std::exception_ptr> errors(n_runs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n_runs;) {
      try {
        series[i] = compact(run_scenario(cfg, i, truth));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  Aggregate a;
  const std::size_t n = series.front().ex.size();
  const double inv = 1.0 / static_cast<double>(n_runs);
  const double band_lo = chi2_quantile(0.005, 2.0 * n_runs) * inv;
  const double band_hi = chi2_quantile(0.995, 2.0 * n_runs) * inv;
  std::size_t in_band = 0, counted = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double sx = 0, sy = 0, sv = 0, svar = 0, snees = 0;
    for (const RunSeries& s : series) {
      sx += s.ex[i] * s.ex[i];
      sy += s.ey[i] * s.ey[i];
      sv += s.ev2[i];
      svar += s.var[i];
      snees += s.nees[i];
    }
    a.t.push_back(crlb.t[i]);
    a.rmse_px.push_back(std::sqrt(sx * inv));
    a.rmse_py.push_back(std::sqrt(sy * inv));
    a.rmse_pos.push_back(std::sqrt((sx + sy) * inv));
    a.rmse_vel.push_back(std::sqrt(sv * inv));
    a.two_sigma_pos.push_back(2.0 * std::sqrt(svar * inv));
    const auto& c = crlb.sd[i];
    a.crlb_pos.push_back(std::hypot(c[0], c[1]));
    a.crlb_vel.push_back(std::hypot(c[2], c[3]));
    if (crlb.t[i] >= 3600.0) {
      ++counted;
      const double m = snees * inv;
      if (m >= band_lo && m <= band_hi) ++in_band;
    }
  }
  a.nees_in_band = counted ? static_cast<double>(in_band) / static_cast<double>(counted) : 0.0;

  std::size_t div = 0;
  for (const RunSeries& s : series) {
    const RunSummary& r = s.summary;
    a.runs.push_back(r);
    a.mean_udt += r.mpf_udt * inv;
    a.mean_dr_udt += r.dr_udt * inv;
    a.mean_ekf_udt += r.ekf_udt * inv;
    a.mean_error += r.mpf_error * inv;
    a.mean_dr_error += r.dr_error * inv;
    a.mean_ekf_error += r.ekf_error * inv;
    div += r.diverged;
  }
  a.divergence_rate = static_cast<double>(div) * inv;
  return a;
}

// ---------------------------------------------------------------------------
// Output

namespace {

std::ofstream open_out(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) fail(ErrorCode::IoError, "cannot open " + p.string() + " for writing");
  return out;
}

std::string g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

void write_estimate_csv(const RunResult& r, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "t,px,py,vx,vy,psi,bax,bay,br,bzx,bzy,ucx,ucy,sd_pos,neff,diverged\n";
  for (const TickRecord& t : r.ticks) {
    out << g17(t.t) << ',' << g17(t.mpf.p.x()) << ',' << g17(t.mpf.p.y());
    for (int i = 0; i < kKfDim; ++i) out << ',' << g17(t.mpf.kf_mean[i]);
    out << ',' << g17(std::sqrt(t.pos_cov.trace())) << ',' << g17(t.neff) << ',' << (t.diverged ? 1 : 0) << '\n';
  }
}

void write_aggregate_csv(const Aggregate& a, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "t,rmse_px,rmse_py,rmse_pos,rmse_vel,two_sigma_pos,crlb_pos,crlb_vel\n";
  for (std::size_t i = 0; i < a.size(); ++i)
    out << g17(a.t[i]) << ',' << g17(a.rmse_px[i]) << ',' << g17(a.rmse_py[i]) << ',' << g17(a.rmse_pos[i]) << ','
        << g17(a.rmse_vel[i]) << ',' << g17(a.two_sigma_pos[i]) << ',' << g17(a.crlb_pos[i]) << ','
        << g17(a.crlb_vel[i]) << '\n';
}

Aggregate read_aggregate_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "t,rmse_px,rmse_py,rmse_pos,rmse_vel,two_sigma_pos,crlb_pos,crlb_vel")
    fail(ErrorCode::ParseError, path.string() + ":1: unexpected aggregate header");
  Aggregate a;
  std::vector<double>* cols[] = {&a.t,        &a.rmse_px,       &a.rmse_py,  &a.rmse_pos,
                                 &a.rmse_vel, &a.two_sigma_pos, &a.crlb_pos, &a.crlb_vel};
  for (std::size_t ln = 2; std::getline(in, line); ++ln) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t c = 0;
    for (; std::getline(ss, cell, ','); ++c) {
      if (c >= 8) break;
      try {
        std::size_t used = 0;
        cols[c]->push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        fail(ErrorCode::ParseError, path.string() + ":" + std::to_string(ln) + ": bad number '" + cell + "'");
      }
    }
    if (c != 8) fail(ErrorCode::ParseError, path.string() + ":" + std::to_string(ln) + ": expected 8 columns");
  }
  return a;
}

void write_runs_csv(const Aggregate& a, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "run,distance,dr_error,ekf_error,mpf_error,dr_udt,ekf_udt,mpf_udt,diverged,weight_collapses,resamples,"
         "mutations\n";
  for (const RunSummary& r : a.runs)
    out << r.run << ',' << g17(r.distance) << ',' << g17(r.dr_error) << ',' << g17(r.ekf_error) << ','
        << g17(r.mpf_error) << ',' << g17(r.dr_udt) << ',' << g17(r.ekf_udt) << ',' << g17(r.mpf_udt) << ','
        << (r.diverged ? 1 : 0) << ',' << r.weight_collapses << ',' << r.resamples << ',' << r.mutations << '\n';
}

void write_crlb_csv(const CrlbTable& c, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "t,sd_px,sd_py,sd_vx,sd_vy,sd_psi\n";
  for (std::size_t i = 0; i < c.t.size(); ++i) {
    out << g17(c.t[i]);
    for (double v : c.sd[i]) out << ',' << g17(v);
    out << '\n';
  }
}

std::string aggregate_summary_json(const ScenarioConfig& cfg, const Aggregate& a) {
  nlohmann::ordered_json j;
  j["name"] = cfg.name;
  j["seed"] = cfg.seed;
  j["runs"] = a.runs.size();
  j["n_particles"] = cfg.n_particles;
  j["mean_terminal_udt"] = a.mean_udt;
  j["mean_terminal_udt_dead_reckoning"] = a.mean_dr_udt;
  j["mean_terminal_udt_ekf"] = a.mean_ekf_udt;
  j["mean_terminal_error_m"] = a.mean_error;
  j["mean_terminal_error_dead_reckoning_m"] = a.mean_dr_error;
  j["mean_terminal_error_ekf_m"] = a.mean_ekf_error;
  j["divergence_rate"] = a.divergence_rate;
  j["nees_fraction_in_99pct_band"] = a.nees_in_band;
  if (a.size()) {
    j["final_rmse_pos_m"] = a.rmse_pos.back();
    j["final_crlb_pos_m"] = a.crlb_pos.back();
    j["final_two_sigma_pos_m"] = a.two_sigma_pos.back();
  }
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// SVG

std::vector<PlotSeries> aggregate_series(const Aggregate& a, const std::vector<std::string>& channels) {
  const std::pair<const char*, const std::vector<double>*> table[] = {
      {"rmse_px", &a.rmse_px},   {"rmse_py", &a.rmse_py},   {"rmse_pos", &a.rmse_pos},
      {"rmse_vel", &a.rmse_vel}, {"two_sigma_pos", &a.two_sigma_pos}, {"crlb_pos", &a.crlb_pos},
      {"crlb_vel", &a.crlb_vel}};
  std::vector<double> hours(a.t.size());
  std::transform(a.t.begin(), a.t.end(), hours.begin(), [](double t) { return t / 3600.0; });
  std::vector<PlotSeries> out;
  for (const std::string& name : channels) {
    auto it = std::find_if(std::begin(table), std::end(table), [&](const auto& e) { return name == e.first; });
    if (it == std::end(table)) fail(ErrorCode::InvalidArgument, "unknown aggregate channel '" + name + "'");
    out.push_back({name, hours, *it->second});
  }
  return out;
}

std::size_t write_svg_plot(const std::vector<PlotSeries>& series, const std::string& title,
                           const std::string& x_label, const std::string& y_label,
                           const std::filesystem::path& path) {
  constexpr double W = 800, H = 480, L = 70, R = 160, T = 40, B = 50;
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const PlotSeries& s : series)
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (!any) x0 = x1 = s.x[i], y0 = y1 = s.y[i], any = true;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  y0 = std::min(y0, 0.0);
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  auto out = open_out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  out << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5.0, yv = y0 + (y1 - y0) * i / 5.0;
    out << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << g17(std::round(xv * 100) / 100)
        << "</text>\n";
    out << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << g17(std::round(yv * 100) / 100)
        << "</text>\n";
  }
  out << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << x_label << "</text>\n";
  out << "<text transform=\"translate(16," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << y_label
      << "</text>\n";

  std::size_t drawn = 0;
  for (const PlotSeries& s : series) {
    const char* color = colors[drawn % std::size(colors)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) out << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    out << "\"/>\n";
    const double ly = T + 16 + 18.0 * static_cast<double>(drawn);
    out << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 34 << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << W - R + 40 << "\" y=\"" << ly + 4 << "\">" << s.label << "</text>\n";
    ++drawn;
  }
  out << "</svg>\n";
  return drawn;
}

}  // namespace flownav
