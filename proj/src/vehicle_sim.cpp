#include "flownav/vehicle_sim.hpp"

#include "flownav/rng.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace flownav {

ImuParams ImuParams::vn100() {
  ImuParams p;
  p.rate_hz = 10.0;
  p.accel_white_sd = 0.14 * units::mg;
  p.accel_bias_sd = 0.04 * units::mg;
  p.accel_tau = 300.0;
  p.gyro_white_sd = 0.0035 * units::deg_per_s;
  p.gyro_bias_sd = 10.0 * units::deg_per_hr;
  p.gyro_tau = 300.0;
  return p;
}

ImuParams ImuParams::vn110_augmented() {
  ImuParams p;
  p.rate_hz = 10.0;
  p.accel_white_sd = 0.04 * units::mg;
  p.accel_bias_sd = 10.0 * units::ug + 0.03999 * kStandardGravity;
  p.accel_tau = 300.0;
  p.gyro_white_sd = 3.24 * units::deg_per_hr;
  p.gyro_bias_sd = (1.0 + 59.0) * units::deg_per_hr;
  p.gyro_tau = 300.0;
  return p;
}

void ImuParams::validate() const {
  if (!(rate_hz > 0.0 && accel_tau > 0.0 && gyro_tau > 0.0))
    fail(ErrorCode::InvalidArgument, "IMU: rate and correlation times must be > 0");
  if (!(accel_white_sd >= 0.0 && accel_bias_sd >= 0.0 && gyro_white_sd >= 0.0 && gyro_bias_sd >= 0.0))
    fail(ErrorCode::InvalidArgument, "IMU: noise SDs must be >= 0");
}

AdcpParams AdcpParams::rdi1200() { return {1.0, 0.01, 0.01, 100.0}; }

void AdcpParams::validate() const {
  if (!(rate_hz > 0.0 && tau > 0.0)) fail(ErrorCode::InvalidArgument, "ADCP: rate and tau must be > 0");
  if (!(white_sd >= 0.0 && bias_sd >= 0.0)) fail(ErrorCode::InvalidArgument, "ADCP: noise SDs must be >= 0");
}

std::size_t decimation(double truth_dt, double rate_hz) {
  const double ratio = 1.0 / (rate_hz * truth_dt);
  const double n = std::round(ratio);
  if (n < 1.0 || std::abs(ratio - n) > 1e-6 * n)
    fail(ErrorCode::InvalidArgument, "sensor period must be an integer multiple of the truth step");
  return static_cast<std::size_t>(n);
}

// ---------------------------------------------------------------------------
// Lawn-mower path

namespace {

// Continuous heading profile of one path segment; psi is unwrapped.
struct Segment {
  double start, duration;
  double psi0;
  double rate = 0.0;        // constant turn rate (arcs)
  double wiggle_amp = 0.0;  // heading oscillation amplitude (legs)
  double wiggle_omega = 0.0;

  double heading(double t) const {
    const double tau = t - start;
    return psi0 + rate * tau + wiggle_amp * std::sin(wiggle_omega * tau);
  }
};

std::vector<Segment> plan(const LawnmowerSpec& s, double horizon) {
  const double V = s.speed, R = s.turn_radius;
  const double leg_time = s.leg_length / V;
  const double arc_time = 0.5 * kPi * R / V;
  const double cross_time = (s.leg_spacing - 2.0 * R) / V;
  const double n_waves = std::max(1.0, std::round(s.leg_length / s.perturb_wavelength));
  const double wave = s.leg_length / n_waves;

  std::vector<Segment> segs;
  double t = 0.0;
  double psi = s.leg_heading;
  for (std::size_t leg = 0; leg < s.n_legs && t < horizon; ++leg) {
    Segment l{t, leg_time, psi};
    if (s.perturb_amp > 0.0) {
      l.wiggle_amp = kPi * s.perturb_amp / wave;
      l.wiggle_omega = 2.0 * kPi * n_waves / leg_time;
    }
    segs.push_back(l);
    t += leg_time;
    if (leg + 1 == s.n_legs) break;
    const double turn = (leg % 2 == 0) ? 1.0 : -1.0;
    segs.push_back({t, arc_time, psi, turn * V / R});
    t += arc_time;
    psi += turn * 0.5 * kPi;
    if (cross_time > 0.0) {
      segs.push_back({t, cross_time, psi});
      t += cross_time;
    }
    segs.push_back({t, arc_time, psi, turn * V / R});
    t += arc_time;
    psi += turn * 0.5 * kPi;
  }
  if (t < horizon)
    fail(ErrorCode::SpecInfeasible, "lawn-mower plan ends before the requested duration");
  return segs;
}

}  // namespace

std::vector<TruthRecord> lawnmower_trajectory(const LawnmowerSpec& s) {
  if (!(s.speed > 0.0) || !(s.turn_radius > 0.0) || !(s.dt > 0.0) || !(s.duration > 0.0))
    fail(ErrorCode::InvalidArgument, "lawn-mower: speed, turn radius, dt and duration must be > 0");
  if (s.turn_radius > 0.5 * s.leg_spacing)
    fail(ErrorCode::SpecInfeasible, "lawn-mower: turn radius exceeds half the leg spacing");
  if (!(s.leg_length > 0.0) || s.n_legs < 1 || !(s.perturb_wavelength > 0.0) || s.perturb_amp < 0.0)
    fail(ErrorCode::InvalidArgument, "lawn-mower: invalid leg geometry");

  const std::size_t n = static_cast<std::size_t>(std::llround(s.duration / s.dt));
  const double horizon = static_cast<double>(n + 1) * s.dt;
  const std::vector<Segment> segs = plan(s, horizon);

  std::size_t seg = 0;
  auto heading_at = [&](double t) {
    while (seg + 1 < segs.size() && t >= segs[seg + 1].start) ++seg;
    return segs[seg].heading(t);
  };

  std::vector<double> psi(n + 2);
  for (std::size_t k = 0; k < n + 2; ++k) psi[k] = heading_at(static_cast<double>(k) * s.dt);

  auto velocity = [&](std::size_t k) { return Vec2{s.speed * std::cos(psi[k]), s.speed * std::sin(psi[k])}; };

  std::vector<TruthRecord> out(n + 1);
  Vec2 p = s.origin;
  for (std::size_t k = 0; k <= n; ++k) {
    TruthRecord& rec = out[k];
    rec.t = static_cast<double>(k) * s.dt;
    rec.p = p;
    rec.v = velocity(k);
    rec.psi = wrap_angle(psi[k]);
    rec.r = (psi[k + 1] - psi[k]) / s.dt;
    rec.a_body = rot_bn(psi[k]) * ((velocity(k + 1) - rec.v) / s.dt);
    p = p + rec.v * s.dt;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sensor streams

ImuLog generate_imu_samples(const std::vector<TruthRecord>& truth, const ImuParams& ip, std::uint64_t seed) {
  ip.validate();
  ImuLog log;
  if (truth.empty()) return log;
  const double truth_dt = truth.size() > 1 ? truth[1].t - truth[0].t : 1.0 / ip.rate_hz;
  const std::size_t step = decimation(truth_dt, ip.rate_hz);
  const double dt = 1.0 / ip.rate_hz;
  const double sa = ip.accel_white_sd * std::sqrt(ip.rate_hz);
  const double sr = ip.gyro_white_sd * std::sqrt(ip.rate_hz);

  Rng rng(seed);
  Vec2 ba{ip.accel_bias_sd * rng.normal(), ip.accel_bias_sd * rng.normal()};
  double br = ip.gyro_bias_sd * rng.normal();

  log.reserve(truth.size() / step + 1);
  for (std::size_t k = 0; k < truth.size(); k += step) {
    const TruthRecord& tr = truth[k];
    ImuSample s;
    s.t = tr.t;
    const double nax = rng.normal(), nay = rng.normal(), nr = rng.normal();
    s.a = tr.a_body + ba + Vec2{sa * nax, sa * nay};
    s.r = tr.r + br + sr * nr;
    log.push_back(s);
    ba.x() = gauss_markov_step(ba.x(), ip.accel_tau, ip.accel_bias_sd, dt, rng.normal());
    ba.y() = gauss_markov_step(ba.y(), ip.accel_tau, ip.accel_bias_sd, dt, rng.normal());
    br = gauss_markov_step(br, ip.gyro_tau, ip.gyro_bias_sd, dt, rng.normal());
  }
  return log;
}

AdcpLog generate_adcp_samples(const std::vector<TruthRecord>& truth, const FlowMap& mean_flow,
                              const KsField* turb, const AdcpParams& ap, std::uint64_t seed,
                              DomainPolicy policy) {
  ap.validate();
  AdcpLog log;
  if (truth.empty()) return log;
  const double truth_dt = truth.size() > 1 ? truth[1].t - truth[0].t : 1.0 / ap.rate_hz;
  const std::size_t step = decimation(truth_dt, ap.rate_hz);
  const double dt = 1.0 / ap.rate_hz;

  Rng rng(seed);
  Vec2 bz{ap.bias_sd * rng.normal(), ap.bias_sd * rng.normal()};
  log.reserve(truth.size() / step + 1);
  for (std::size_t k = 0; k < truth.size(); k += step) {
    const TruthRecord& tr = truth[k];
    Vec2 water = flow_velocity(mean_flow, tr.p, tr.t, policy);
    if (turb) water += ks_velocity(*turb, tr.p, tr.t);
    const double n1 = rng.normal(), n2 = rng.normal();
    AdcpSample s;
    s.t = tr.t;
    s.z = rot_bn(tr.psi) * (water - tr.v) + bz + ap.white_sd * Vec2{n1, n2};
    log.push_back(s);
    bz.x() = gauss_markov_step(bz.x(), ap.tau, ap.bias_sd, dt, rng.normal());
    bz.y() = gauss_markov_step(bz.y(), ap.tau, ap.bias_sd, dt, rng.normal());
  }
  return log;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot open " + path + " for writing");
  return out;
}

std::string g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::vector<std::vector<double>> read_rows(const std::string& path, std::size_t ncols, const std::string& header) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::ParseError, path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) fail(ErrorCode::ParseError, path + ":1: expected header '" + header + "'");
  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      char* end = nullptr;
      const double d = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) fail(ErrorCode::ParseError, path + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
      row.push_back(d);
    }
    if (row.size() != ncols)
      fail(ErrorCode::ParseError, path + ":" + std::to_string(lineno) + ": expected " + std::to_string(ncols) + " columns");
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

void write_truth_csv(const std::vector<TruthRecord>& truth, const std::string& path) {
  auto out = open_out(path);
  out << "t,px,py,vx,vy,psi,ax,ay,r\n";
  for (const auto& r : truth)
    out << g17(r.t) << ',' << g17(r.p.x()) << ',' << g17(r.p.y()) << ',' << g17(r.v.x()) << ',' << g17(r.v.y())
        << ',' << g17(r.psi) << ',' << g17(r.a_body.x()) << ',' << g17(r.a_body.y()) << ',' << g17(r.r) << '\n';
}

void write_imu_csv(const ImuLog& log, const std::string& path) {
  auto out = open_out(path);
  out << "t,ax,ay,r\n";
  for (const auto& s : log) out << g17(s.t) << ',' << g17(s.a.x()) << ',' << g17(s.a.y()) << ',' << g17(s.r) << '\n';
}

void write_adcp_csv(const AdcpLog& log, const std::string& path) {
  auto out = open_out(path);
  out << "t,zx,zy\n";
  for (const auto& s : log) out << g17(s.t) << ',' << g17(s.z.x()) << ',' << g17(s.z.y()) << '\n';
}

ImuLog read_imu_csv(const std::string& path) {
  ImuLog log;
  for (const auto& r : read_rows(path, 4, "t,ax,ay,r")) log.push_back({r[0], {r[1], r[2]}, r[3]});
  return log;
}

AdcpLog read_adcp_csv(const std::string& path) {
  AdcpLog log;
  for (const auto& r : read_rows(path, 3, "t,zx,zy")) log.push_back({r[0], {r[1], r[2]}});
  return log;
}

}  // namespace flownav
