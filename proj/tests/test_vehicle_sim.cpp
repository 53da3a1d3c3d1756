#include "flownav/vehicle_sim.hpp"
#include "flownav/rng.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>

using namespace flownav;

namespace {

std::vector<TruthRecord> static_truth(double seconds, double dt) {
  const auto n = static_cast<std::size_t>(std::llround(seconds / dt));
  std::vector<TruthRecord> out(n + 1);
  for (std::size_t k = 0; k <= n; ++k) out[k].t = static_cast<double>(k) * dt;
  return out;
}

// Overlapping Allan deviation of x sampled every tau0 at cluster length m.
double allan_dev(const std::vector<double>& x, double tau0, std::size_t m) {
  std::vector<double> theta(x.size() + 1, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) theta[i + 1] = theta[i] + x[i] * tau0;
  const double T = static_cast<double>(m) * tau0;
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i + 2 * m < theta.size(); ++i, ++n) {
    const double d = theta[i + 2 * m] - 2.0 * theta[i + m] + theta[i];
    acc += d * d;
  }
  return std::sqrt(acc / (2.0 * T * T * static_cast<double>(n)));
}

FlowMap uniform_flow(double u, double v) {
  GridFlowMap g;
  g.spec.origin = {-1e5, -1e5};
  g.spec.dx = g.spec.dy = 2e5;
  g.u.assign(4, u);
  g.v.assign(4, v);
  return g;
}

}  // namespace

TEST_CASE("straight unperturbed leg") {
  LawnmowerSpec s;
  s.n_legs = 1;
  s.perturb_amp = 0.0;
  s.duration = 3600.0;
  const auto tr = lawnmower_trajectory(s);
  for (const auto& r : tr) {
    CHECK(r.r == 0.0);
    CHECK(r.a_body.norm() == 0.0);
    CHECK(r.psi == 0.0);
  }
  CHECK(tr.back().p.x() == doctest::Approx(s.origin.x() + 1.5 * 3600.0).epsilon(1e-9));
  CHECK(tr.back().p.y() == s.origin.y());
}

TEST_CASE("turns obey circular-motion identities") {
  LawnmowerSpec s;
  s.perturb_amp = 0.0;
  s.leg_length = 300.0;
  s.duration = 1200.0;
  const auto tr = lawnmower_trajectory(s);
  int turning = 0;
  for (std::size_t k = 1; k + 1 < tr.size(); ++k) {
    const TruthRecord& r = tr[k];
    // Interior of an arc only; boundary ticks blend two segments.
    if (std::abs(tr[k - 1].r) < 1e-9 || std::abs(r.r) < 1e-9 || std::abs(tr[k + 1].r) < 1e-9) continue;
    ++turning;
    CHECK(std::abs(r.r) == doctest::Approx(s.speed / s.turn_radius).epsilon(1e-9));
    CHECK(r.a_body.norm() == doctest::Approx(s.speed * s.speed / s.turn_radius).epsilon(1e-6));
  }
  CHECK(turning > 100);
}

TEST_CASE("records re-integrate to themselves") {
  LawnmowerSpec s;
  const auto tr = lawnmower_trajectory(s);
  CHECK(tr.size() == 216001);
  Vec2 p = tr[0].p, v = tr[0].v;
  double psi = tr[0].psi, worst_p = 0.0, worst_psi = 0.0;
  for (std::size_t k = 0; k + 1 < tr.size(); ++k) {
    p += v * s.dt;
    v += rot_nb(psi) * tr[k].a_body * s.dt;
    psi += tr[k].r * s.dt;
    worst_p = std::max(worst_p, (p - tr[k + 1].p).norm());
    worst_psi = std::max(worst_psi, std::abs(wrap_angle(psi - tr[k + 1].psi)));
  }
  CHECK(worst_p < 0.5);
  CHECK(worst_psi < 1e-6);
}

TEST_CASE("headings stay wrapped and speed is constant") {
  LawnmowerSpec s;
  s.leg_heading = 3.0;
  s.duration = 7200.0;
  for (const auto& r : lawnmower_trajectory(s)) {
    CHECK(r.psi > -kPi);
    CHECK(r.psi <= kPi);
    CHECK(r.v.norm() == doctest::Approx(s.speed).epsilon(1e-12));
  }
}

TEST_CASE("infeasible geometry is rejected") {
  LawnmowerSpec s;
  s.turn_radius = 1'500.0;
  CHECK_THROWS_WITH_AS(lawnmower_trajectory(s), doctest::Contains("turn radius"), Error);
  try {
    lawnmower_trajectory(s);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SpecInfeasible);
  }
  s = LawnmowerSpec{};
  s.n_legs = 1;
  CHECK_THROWS_AS(lawnmower_trajectory(s), Error);  // one leg lasts 3.3 h
  s = LawnmowerSpec{};
  s.speed = 0.0;
  CHECK_THROWS_AS(lawnmower_trajectory(s), Error);
}

TEST_CASE("Gauss-Markov step limits") {
  CHECK(gauss_markov_step(2.0, 100.0, 0.0, 1.0, 0.7) == doctest::Approx(1.98));
  CHECK(gauss_markov_step(2.0, 1e300, 1.0, 0.1, 0.7) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("Gauss-Markov stationary SD over 1e7 steps") {
  Rng rng(77);
  const double sigma = 0.3, tau = 100.0, dt = 1.0;
  double b = sigma * rng.normal(), s2 = 0.0;
  const int n = 10'000'000;
  for (int i = 0; i < n; ++i) {
    b = gauss_markov_step(b, tau, sigma, dt, rng.normal());
    s2 += b * b;
  }
  // Forward Euler inflates the variance by 1/(1 - dt/2tau).
  CHECK(std::sqrt(s2 / n) == doctest::Approx(sigma).epsilon(0.05));
}

TEST_CASE("noise-free IMU equals the body-frame truth") {
  LawnmowerSpec s;
  s.duration = 600.0;
  const auto tr = lawnmower_trajectory(s);
  const auto log = generate_imu_samples(tr, ImuParams{}, 1);
  REQUIRE(log.size() == tr.size());
  for (std::size_t k = 0; k < tr.size(); ++k) {
    CHECK(log[k].a == tr[k].a_body);
    CHECK(log[k].r == tr[k].r);
  }
}

TEST_CASE("IMU decimates a finer truth") {
  LawnmowerSpec s;
  s.duration = 60.0;
  s.dt = 0.05;
  const auto log = generate_imu_samples(lawnmower_trajectory(s), ImuParams{}, 1);
  CHECK(log.size() == 601);
  CHECK(log[1].t == doctest::Approx(0.1));
}

TEST_CASE("accelerometer Allan floor sits at the bias instability") {
  const auto tr = static_truth(4.0 * 3600.0, 0.1);
  const ImuParams ip = ImuParams::vn100();
  const auto log = generate_imu_samples(tr, ip, 2024);
  std::vector<double> ax, ay;
  for (const auto& s : log) {
    ax.push_back(s.a.x());
    ay.push_back(s.a.y());
  }
  // The Gauss-Markov hump forms the flat region between the white-noise slope
  // and the long-term decay; read it as B = sigma_A / 0.664.
  double plateau = 0.0;
  for (std::size_t m = 1000; m <= 18000; m = m * 5 / 4) {
    const double da = allan_dev(ax, 0.1, m), db = allan_dev(ay, 0.1, m);
    plateau = std::max(plateau, std::sqrt(0.5 * (da * da + db * db)));
  }
  const double b = plateau / 0.664;
  MESSAGE("Allan plateau " << plateau / units::mg << " mg, B " << b / units::mg << " mg");
  CHECK(b > ip.accel_bias_sd / 1.5);
  CHECK(b < ip.accel_bias_sd * 1.5);
}

TEST_CASE("white noise mean obeys the CLT bound") {
  const auto tr = static_truth(1e5, 0.1);
  ImuParams ip;
  ip.accel_white_sd = 0.14 * units::mg;
  ip.gyro_white_sd = 0.0035 * units::deg_per_s;
  const auto log = generate_imu_samples(tr, ip, 9);
  REQUIRE(log.size() == 1'000'001);
  double mx = 0.0, mr = 0.0;
  for (const auto& s : log) {
    mx += s.a.x();
    mr += s.r;
  }
  const double n = static_cast<double>(log.size());
  CHECK(std::abs(mx / n) < 4.0 * ip.accel_white_sd * std::sqrt(ip.rate_hz) / std::sqrt(n));
  CHECK(std::abs(mr / n) < 4.0 * ip.gyro_white_sd * std::sqrt(ip.rate_hz) / std::sqrt(n));
}

TEST_CASE("ADCP trivial cases") {
  const FlowMap still = uniform_flow(0.0, 0.0);
  const auto rest = static_truth(10.0, 0.1);
  for (const auto& z : generate_adcp_samples(rest, still, nullptr, AdcpParams{}, 3)) CHECK(z.z.norm() == 0.0);

  LawnmowerSpec s;
  s.duration = 300.0;
  const auto tr = lawnmower_trajectory(s);
  const auto log = generate_adcp_samples(tr, still, nullptr, AdcpParams{}, 3);
  REQUIRE(log.size() == 301);
  for (std::size_t i = 0; i < log.size(); ++i) {
    const TruthRecord& r = tr[i * 10];
    CHECK((log[i].z + rot_bn(r.psi) * r.v).norm() < 1e-15);
  }
}

TEST_CASE("noise-free ADCP inverts to the water velocity") {
  KsParams kp;
  kp.seed = 5;
  const KsField ks = build_ks(kp);
  DoubleGyreParams g;
  g.length_scale = 10'000.0;
  g.origin = {0.0, -5'000.0};
  const FlowMap flow = g;
  LawnmowerSpec s;
  s.duration = 1800.0;
  const auto tr = lawnmower_trajectory(s);
  const auto log = generate_adcp_samples(tr, flow, &ks, AdcpParams{}, 8);
  for (std::size_t i = 0; i < log.size(); ++i) {
    const TruthRecord& r = tr[i * 10];
    const Vec2 water = rot_nb(r.psi) * log[i].z + r.v;
    const Vec2 expect = flow_velocity(flow, r.p, r.t) + ks_velocity(ks, r.p, r.t);
    CHECK((water - expect).norm() < 1e-12);
  }
}

TEST_CASE("streams are deterministic per seed") {
  LawnmowerSpec s;
  s.duration = 600.0;
  const auto tr = lawnmower_trajectory(s);
  const auto a = generate_imu_samples(tr, ImuParams::vn100(), 11);
  const auto b = generate_imu_samples(tr, ImuParams::vn100(), 11);
  const auto c = generate_imu_samples(tr, ImuParams::vn100(), 12);
  bool same = true, differ = false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    same = same && a[k].a == b[k].a && a[k].r == b[k].r;
    differ = differ || a[k].a != c[k].a;
  }
  CHECK(same);
  CHECK(differ);
}

TEST_CASE("CSV logs round-trip bit-exactly") {
  LawnmowerSpec s;
  s.duration = 60.0;
  const auto tr = lawnmower_trajectory(s);
  const auto imu = generate_imu_samples(tr, ImuParams::vn100(), 1);
  const auto adcp = generate_adcp_samples(tr, uniform_flow(0.1, 0.2), nullptr, AdcpParams::rdi1200(), 2);
  const auto dir = std::filesystem::temp_directory_path();
  const std::string ip = (dir / "flownav_imu_rt.csv").string(), ap = (dir / "flownav_adcp_rt.csv").string();
  write_imu_csv(imu, ip);
  write_adcp_csv(adcp, ap);
  const auto imu2 = read_imu_csv(ip);
  const auto adcp2 = read_adcp_csv(ap);
  REQUIRE(imu2.size() == imu.size());
  REQUIRE(adcp2.size() == adcp.size());
  for (std::size_t k = 0; k < imu.size(); ++k) CHECK((imu2[k].a == imu[k].a && imu2[k].r == imu[k].r && imu2[k].t == imu[k].t));
  for (std::size_t k = 0; k < adcp.size(); ++k) CHECK(adcp2[k].z == adcp[k].z);
  std::remove(ip.c_str());
  std::remove(ap.c_str());
  CHECK_THROWS_AS(read_imu_csv(ap), Error);
}

TEST_CASE("invalid sensor parameters") {
  const auto tr = static_truth(1.0, 0.1);
  ImuParams ip;
  ip.accel_tau = 0.0;
  CHECK_THROWS_AS(generate_imu_samples(tr, ip, 1), Error);
  ip = ImuParams{};
  ip.rate_hz = 3.0;
  CHECK_THROWS_AS(generate_imu_samples(tr, ip, 1), Error);
}
