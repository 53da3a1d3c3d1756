#include "flownav/estimator.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <random>

using namespace flownav;
using namespace flownav::kf;

namespace {

FlowMap uniform_flow(double u, double v) {
  GridFlowMap g;
  g.spec.origin = {-1e6, -1e6};
  g.spec.dx = g.spec.dy = 2e6;
  g.u.assign(4, u);
  g.v.assign(4, v);
  return g;
}

NoiseConfig paper_noise() {
  return NoiseConfig::from_sensors(ImuParams::vn100(), AdcpParams::rdi1200(), 200.0, 2 * kPi / 200.0, 0.01);
}

KfVec random_state(std::mt19937_64& g) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  KfVec x;
  x << 1.5 * u(g), 1.5 * u(g), 2.5 * u(g), 1e-3 * u(g), 1e-3 * u(g), 1e-4 * u(g), 0.02 * u(g), 0.02 * u(g),
      0.1 * u(g), 0.1 * u(g);
  // Keep |v| off zero so |v| is differentiable.
  for (int i : {Vx, Vy})
    if (std::abs(x[i]) < 0.1) x[i] = 0.1;
  return x;
}

KfMat random_psd(std::mt19937_64& g, double scale) {
  std::normal_distribution<double> n;
  KfMat a;
  for (int i = 0; i < kKfDim * kKfDim; ++i) a.data()[i] = n(g);
  return scale * a * a.transpose();
}

MarginalizedParticleFilter single(const KfVec& mean, const KfMat& cov, std::uint64_t seed = 1) {
  MpfConfig c;
  c.noise = paper_noise();
  c.stochastic_position = false;
  c.resampling = false;
  Prior pr;
  pr.kf_mean = mean;
  pr.kf_cov = cov;
  return MarginalizedParticleFilter(c, pr, 1, seed);
}

double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), 1e-300);
}

}  // namespace

TEST_CASE("process covariance blocks") {
  const NoiseConfig n = paper_noise();
  const double dt = 0.1;
  const KfMat Q = n.process_cov(dt);
  const ImuParams imu = ImuParams::vn100();
  // Per-step increment variances after G = dt I.
  CHECK(Q(Vx, Vx) * dt * dt == doctest::Approx(imu.accel_white_sd * imu.accel_white_sd * 10.0 * dt * dt));
  CHECK(Q(Bax, Bax) * dt * dt == doctest::Approx(2 * imu.accel_bias_sd * imu.accel_bias_sd * dt / 300.0));
  CHECK(Q(Br, Br) * dt * dt == doctest::Approx(2 * imu.gyro_bias_sd * imu.gyro_bias_sd * dt / 300.0));
  CHECK(Q(Bzx, Bzx) * dt * dt == doctest::Approx(2 * 1e-4 * dt / 100.0));
  CHECK(Q(Ucx, Ucx) * dt * dt == doctest::Approx(2 * (2 * kPi / 200.0) * 1e-4 * dt / 200.0));
  CHECK((Q - KfMat(Q.diagonal().asDiagonal())).norm() == 0.0);
}

TEST_CASE("F and G match central differences of the transition") {
  std::mt19937_64 g(1);
  const NoiseConfig n = paper_noise();
  const double dt = 0.1;
  for (int trial = 0; trial < 50; ++trial) {
    const KfVec x = random_state(g);
    const ImuSample imu{0.0, {0.01 * (trial % 5), -0.02}, 0.003};
    const KfJacobians j = kf_jacobians(x, imu, dt, n);
    KfMat fd;
    for (int c = 0; c < kKfDim; ++c) {
      const double h = 1e-6 * std::max(1.0, std::abs(x[c]));
      KfVec xp = x, xm = x;
      xp[c] += h;
      xm[c] -= h;
      KfVec d = kf_transition(xp, imu, dt, n) - kf_transition(xm, imu, dt, n);
      d[Psi] = wrap_angle(d[Psi]);
      fd.col(c) = d / (2 * h);
    }
    CHECK(rel_err(j.F, fd) < 1e-4);
    // Accelerometer and gyro noise enter as a_meas - n, r_meas - n.
    Eigen::Matrix<double, kKfDim, 3> fd_w;
    const double h = 1e-6;
    for (int c = 0; c < 3; ++c) {
      ImuSample p = imu, m = imu;
      if (c < 2) {
        p.a[c] -= h;
        m.a[c] += h;
      } else {
        p.r -= h;
        m.r += h;
      }
      KfVec d = kf_transition(x, p, dt, n) - kf_transition(x, m, dt, n);
      d[Psi] = wrap_angle(d[Psi]);
      fd_w.col(c) = d / (2 * h);
    }
    CHECK(rel_err(j.G.leftCols<3>(), fd_w) < 1e-4);
  }
}

TEST_CASE("H matches central differences of the measurement model") {
  std::mt19937_64 g(2);
  for (int trial = 0; trial < 50; ++trial) {
    const KfVec x = random_state(g);
    const Vec2 phi{0.3 * std::cos(trial), 0.2 * std::sin(trial)};
    const KfMeasJac H = measurement_jacobian(x, phi);
    KfMeasJac fd;
    for (int c = 0; c < kKfDim; ++c) {
      const double h = 1e-6;
      KfVec xp = x, xm = x;
      xp[c] += h;
      xm[c] -= h;
      fd.col(c) = (predicted_measurement(xp, phi) - predicted_measurement(xm, phi)) / (2 * h);
    }
    CHECK(rel_err(H, fd) < 1e-4);
  }
}

TEST_CASE("sparse covariance propagation equals the dense product") {
  std::mt19937_64 g(3);
  const NoiseConfig n = paper_noise();
  for (int trial = 0; trial < 20; ++trial) {
    const KfVec x = random_state(g);
    const ImuSample imu{0.0, {0.02, 0.01}, -0.001};
    KfMat P = random_psd(g, 1e-3);
    const KfJacobians j = kf_jacobians(x, imu, 0.1, n);
    const KfMat dense = j.F * P * j.F.transpose() + j.G * n.process_cov(0.1) * j.G.transpose();
    propagate_covariance(P, x, imu, 0.1, n);
    CHECK(rel_err(P, dense) < 1e-12);
  }
}

TEST_CASE("prior sampling") {
  MpfConfig c;
  Prior pr;
  pr.p_mean = {10.0, -5.0};
  MarginalizedParticleFilter one(c, pr, 1, 4);
  CHECK(one.particles()[0].pos == pr.p_mean);
  CHECK(one.particles()[0].weight == 1.0);

  pr.p_cov = Mat2{{100.0, 30.0}, {30.0, 50.0}};
  MarginalizedParticleFilter many(c, pr, 100000, 5);
  Vec2 m = Vec2::Zero();
  double ws = 0.0;
  for (const Particle& p : many.particles()) {
    m += p.pos;
    ws += p.weight;
  }
  m /= 1e5;
  CHECK(ws == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(m.x() - pr.p_mean.x()) < 4 * 10.0 / std::sqrt(1e5));
  CHECK(std::abs(m.y() - pr.p_mean.y()) < 4 * std::sqrt(50.0) / std::sqrt(1e5));
  CHECK_THROWS_AS(MarginalizedParticleFilter(c, pr, 0, 1), Error);
}

TEST_CASE("noise-free single particle follows the Euler truth") {
  LawnmowerSpec s;
  s.duration = 3600.0;
  const auto tr = lawnmower_trajectory(s);
  const auto imu = generate_imu_samples(tr, ImuParams{}, 1);
  MpfConfig c;
  c.noise = NoiseConfig{};
  c.stochastic_position = false;
  c.position_jitter_var = 0.0;
  Prior pr;
  pr.p_mean = tr[0].p;
  pr.kf_mean[Vx] = tr[0].v.x();
  pr.kf_mean[Vy] = tr[0].v.y();
  pr.kf_mean[Psi] = tr[0].psi;
  MarginalizedParticleFilter f(c, pr, 1, 1);
  double worst = 0.0;
  for (std::size_t k = 0; k + 1 < tr.size(); ++k) {
    f.predict(imu[k], s.dt);
    worst = std::max(worst, (f.particles()[0].pos - tr[k + 1].p).norm());
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("covariance trace grows under predict from rest") {
  std::mt19937_64 g(8);
  auto f = single(random_state(g), KfMat::Zero());
  double last = 0.0;
  for (int k = 0; k < 2000; ++k) {
    f.predict({0.0, {0.01, 0.0}, 0.001}, 0.1);
    const double tr = f.particles()[0].kf.cov.trace();
    CHECK(tr >= last);
    last = tr;
  }
}

TEST_CASE("turbulence estimate decays geometrically") {
  KfVec x = KfVec::Zero();
  x[Vx] = 1.2;
  x[Vy] = -0.7;
  x[Ucx] = 0.05;
  x[Ucy] = -0.03;
  auto f = single(x, KfMat::Zero());
  const int n = 500;
  for (int k = 0; k < n; ++k) f.predict({0.0, {0.0, 0.0}, 0.0}, 0.1);
  const KfVec& m = f.particles()[0].kf.mean;
  CHECK(m[Ucx] == doctest::Approx(0.05 * std::pow(1.0 - 1.2 * 0.1 / 200.0, n)).epsilon(1e-12));
  CHECK(m[Ucy] == doctest::Approx(-0.03 * std::pow(1.0 - 0.7 * 0.1 / 200.0, n)).epsilon(1e-12));
}

TEST_CASE("update with perfect prediction keeps uniform weights") {
  MpfConfig c;
  c.noise = paper_noise();
  Prior pr;
  pr.p_cov = Mat2::Identity() * 1e4;
  pr.kf_mean[Vx] = 1.0;
  pr.kf_cov = KfMat::Identity() * 1e-4;
  MarginalizedParticleFilter f(c, pr, 10, 3);
  const FlowMap map = uniform_flow(0.2, 0.1);
  const Vec2 z = predicted_measurement(pr.kf_mean, {0.2, 0.1});
  CHECK_FALSE(f.update(z, map, 0.0).all_weights_zero);
  for (const Particle& p : f.particles()) CHECK(p.weight == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("zero prior covariance leaves the KF untouched") {
  MpfConfig c;
  c.noise = paper_noise();
  Prior pr;
  pr.kf_mean[Vx] = 1.0;
  MarginalizedParticleFilter f(c, pr, 2, 3);
  f.particles()[1].kf.mean[Bzx] = 0.02;  // innovation -0.02 on x
  const FlowMap map = uniform_flow(0.0, 0.0);
  const Vec2 z = predicted_measurement(pr.kf_mean, Vec2::Zero());
  f.update(z, map, 0.0);
  CHECK(f.particles()[0].kf.mean == pr.kf_mean);
  CHECK(f.particles()[1].kf.mean[Bzx] == 0.02);
  const double r = c.noise.R(0, 0);
  const double ratio = f.particles()[0].weight / f.particles()[1].weight;
  CHECK(ratio == doctest::Approx(std::exp(0.5 * 0.02 * 0.02 / r)).epsilon(1e-12));
}

TEST_CASE("weight ratio follows the density ratio") {
  MpfConfig c;
  c.noise = paper_noise();
  Prior pr;
  pr.kf_mean[Vx] = 1.0;
  MarginalizedParticleFilter f(c, pr, 2, 3);
  const double pb = 3e-4;
  f.particles()[1].kf.cov(Bzx, Bzx) = pb;
  const Mat2 S1 = c.noise.R;
  Mat2 S2 = c.noise.R;
  S2(0, 0) += pb;
  // Mahalanobis distance 10 along x.
  f.particles()[1].kf.mean[Bzx] = 10.0 * std::sqrt(S2(0, 0));
  const Vec2 z = predicted_measurement(pr.kf_mean, Vec2::Zero());
  f.update(z, uniform_flow(0.0, 0.0), 0.0);
  const double ratio = f.particles()[0].weight / f.particles()[1].weight;
  CHECK(ratio == doctest::Approx(std::exp(50.0) * std::sqrt(S2.determinant() / S1.determinant())).epsilon(1e-9));
}

TEST_CASE("scaling R scales the log weight ratio") {
  auto log_ratio = [](double c_scale) {
    MpfConfig c;
    c.noise = paper_noise();
    c.noise.R *= c_scale;
    Prior pr;
    MarginalizedParticleFilter f(c, pr, 2, 3);
    f.particles()[1].kf.mean[Bzy] = 0.015;
    f.update(Vec2::Zero(), uniform_flow(0.0, 0.0), 0.0);
    return std::log(f.particles()[0].weight / f.particles()[1].weight);
  };
  CHECK(log_ratio(4.0) == doctest::Approx(log_ratio(1.0) / 4.0).epsilon(1e-12));
}

TEST_CASE("likelihood underflow flags divergence") {
  MpfConfig c;
  c.noise = paper_noise();
  Prior pr;
  MarginalizedParticleFilter f(c, pr, 4, 3);
  CHECK(f.update({50.0, 0.0}, uniform_flow(0.0, 0.0), 0.0).all_weights_zero);
  CHECK(f.diverged());
  for (const Particle& p : f.particles()) CHECK(p.weight == 0.25);
  CHECK_THROWS_AS(f.update({NAN, 0.0}, uniform_flow(0.0, 0.0), 0.0), Error);
}

TEST_CASE("heading update algebra") {
  KfMat P = KfMat::Identity() * 1e-4;
  P(Psi, Psi) = 4e-4;
  KfVec x = KfVec::Zero();
  x[Psi] = 0.3;
  auto f = single(x, P);
  f.heading_update(0.3, 0.01);
  CHECK(f.particles()[0].kf.mean == x);
  CHECK(f.particles()[0].kf.cov(Psi, Psi) == doctest::Approx(4e-4 * 1e-4 / (4e-4 + 1e-4)).epsilon(1e-12));

  const double eps = 1e-3;
  auto a = single(KfVec::Zero(), P), b = single(KfVec::Zero(), P);
  a.heading_update(kPi - eps, 0.02);
  b.heading_update(-kPi + eps, 0.02);
  CHECK(a.particles()[0].kf.mean[Psi] == doctest::Approx(-b.particles()[0].kf.mean[Psi]).epsilon(1e-12));

  // Scalar-KF fixed point: after n updates psi = m n P0 / (r + n P0).
  auto c = single(KfVec::Zero(), P);
  double prev = 0.0;
  for (int i = 1; i <= 200; ++i) {
    c.heading_update(2.0, 0.05);
    const double psi = c.particles()[0].kf.mean[Psi];
    CHECK(psi > prev);
    prev = psi;
  }
  CHECK(prev == doctest::Approx(2.0 * 200 * 4e-4 / (0.0025 + 200 * 4e-4)).epsilon(1e-10));
  for (int i = 0; i < 100000; ++i) c.heading_update(2.0, 0.05);
  CHECK(c.particles()[0].kf.mean[Psi] == doctest::Approx(2.0).epsilon(1e-3));
  CHECK_THROWS_AS(c.heading_update(0.0, 0.0), Error);
}

TEST_CASE("effective sample size") {
  const std::vector<double> u(8, 0.125), one{0.0, 1.0, 0.0}, tq{0.75, 0.25};
  CHECK(effective_sample_size(u) == doctest::Approx(8.0));
  CHECK(effective_sample_size(one) == 1.0);
  CHECK(effective_sample_size(tq) == doctest::Approx(1.6));
}

TEST_CASE("systematic resampling comb") {
  const std::vector<double> u(7, 1.0 / 7.0);
  for (double off : {0.0, 0.3, 0.999}) {
    const auto idx = systematic_indices(u, off);
    for (std::size_t i = 0; i < idx.size(); ++i) CHECK(idx[i] == i);
  }
  const std::vector<double> one{0.0, 0.0, 1.0, 0.0};
  for (std::size_t i : systematic_indices(one, 0.5)) CHECK(i == 2);
}

TEST_CASE("systematic offspring counts are unbiased") {
  const std::vector<double> w{0.05, 0.3, 0.15, 0.02, 0.48};
  const std::size_t n = w.size();
  const int seeds = 10000;
  std::vector<double> sum(n, 0.0), sum2(n, 0.0);
  for (int s = 0; s < seeds; ++s) {
    Rng rng(static_cast<std::uint64_t>(s));
    std::vector<double> cnt(n, 0.0);
    for (std::size_t i : systematic_indices(w, rng.uniform())) cnt[i] += 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      sum[i] += cnt[i];
      sum2[i] += cnt[i] * cnt[i];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double mean = sum[i] / seeds;
    const double var = std::max(sum2[i] / seeds - mean * mean, 1e-12);
    CHECK(std::abs(mean - n * w[i]) < 3.0 * std::sqrt(var / seeds) + 1e-12);
  }
}

TEST_CASE("resampling resets weights and copies the KF") {
  MpfConfig c;
  Prior pr;
  pr.p_cov = Mat2::Identity();
  MarginalizedParticleFilter f(c, pr, 4, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    f.particles()[i].weight = i == 1 ? 1.0 : 0.0;
    f.particles()[i].kf.mean[Bax] = static_cast<double>(i);
  }
  CHECK(f.resample_if_needed());
  for (const Particle& p : f.particles()) {
    CHECK(p.weight == 0.25);
    CHECK(p.kf.mean[Bax] == 1.0);
  }
  CHECK_FALSE(f.resample_if_needed());
}

TEST_CASE("mutation") {
  MpfConfig c;
  c.mutation.enabled = true;
  c.mutation.trigger_sd = 5.0;
  c.mutation.jitter_var = 0.0;
  Prior pr;
  pr.p_cov = Mat2::Identity() * 400.0;
  MarginalizedParticleFilter wide(c, pr, 50, 2);
  const auto before = wide.particles();
  CHECK_FALSE(wide.mutate());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(wide.particles()[i].pos == before[i].pos);

  pr.p_cov = Mat2::Identity();
  MarginalizedParticleFilter tight(c, pr, 50, 2);
  const auto t0 = tight.particles();
  CHECK(tight.mutate());
  for (std::size_t i = 0; i < t0.size(); ++i) CHECK(tight.particles()[i].pos == t0[i].pos);

  // Radial SD after mutation: sqrt(SD_pre^2 + 2 jitter_var).
  c.mutation.jitter_var = 9.0;
  double acc = 0.0, expect = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    MarginalizedParticleFilter f(c, pr, 50, 100 + trial);
    const double pre = f.swarm_sd();
    f.mutate();
    acc += f.swarm_sd();
    expect += std::sqrt(pre * pre + 2.0 * c.mutation.jitter_var);
  }
  CHECK(acc / expect == doctest::Approx(1.0).epsilon(0.10));
}

TEST_CASE("point estimates") {
  MpfConfig c;
  Prior pr;
  pr.p_mean = {3.0, 4.0};
  pr.kf_mean[Psi] = 1.0;
  MarginalizedParticleFilter one(c, pr, 1, 1);
  CHECK(one.estimate_mean().p == pr.p_mean);
  CHECK(one.estimate_map().kf_mean == pr.kf_mean);

  MarginalizedParticleFilter two(c, pr, 2, 1);
  two.particles()[0].pos = {-7.0, 2.0};
  two.particles()[1].pos = {7.0, -2.0};
  two.particles()[0].kf.mean[Psi] = 179.0 * units::deg;
  two.particles()[1].kf.mean[Psi] = -179.0 * units::deg;
  const Estimate m = two.estimate_mean();
  CHECK(m.p.norm() < 1e-15);
  CHECK(std::abs(m.kf_mean[Psi]) == doctest::Approx(kPi).epsilon(1e-12));
  CHECK(two.estimate_map().p == Vec2{-7.0, 2.0});  // tie goes to the lowest index
  two.particles()[1].weight = 0.6;
  two.particles()[0].weight = 0.4;
  CHECK(two.estimate_map().p == Vec2{7.0, -2.0});
}

TEST_CASE("covariance stays healthy over many cycles") {
  LawnmowerSpec s;
  s.duration = 20000.0;
  const auto tr = lawnmower_trajectory(s);
  const auto imu = generate_imu_samples(tr, ImuParams::vn100(), 5);
  const FlowMap map = uniform_flow(0.1, -0.05);
  const auto adcp = generate_adcp_samples(tr, map, nullptr, AdcpParams::rdi1200(), 6);
  MpfConfig c;
  c.noise = paper_noise();
  Prior pr;
  pr.p_mean = tr[0].p;
  pr.kf_mean[Vx] = tr[0].v.x();
  pr.kf_mean[Vy] = tr[0].v.y();
  pr.kf_cov = KfMat::Identity() * 1e-6;
  MarginalizedParticleFilter f(c, pr, 3, 9);
  double worst = 0.0, wsum_err = 0.0;
  for (std::size_t k = 0; k + 1 < tr.size(); ++k) {
    if (k % 10 == 0) {
      f.update(adcp[k / 10].z, map, tr[k].t);
      double ws = 0.0;
      for (const Particle& p : f.particles()) ws += p.weight;
      wsum_err = std::max(wsum_err, std::abs(ws - 1.0));
      f.resample_if_needed();
    }
    f.predict(imu[k], s.dt);
    if (k % 1000 == 0)
      for (const Particle& p : f.particles()) {
        const Eigen::SelfAdjointEigenSolver<KfMat> es(p.kf.cov);
        worst = std::min(worst, es.eigenvalues().minCoeff());
        CHECK((p.kf.cov - p.kf.cov.transpose()).norm() == 0.0);
      }
  }
  CHECK(tr.size() == 200001);
  CHECK(worst >= -1e-9);
  CHECK(wsum_err < 1e-12);
}

TEST_CASE("dead reckoning") {
  const ImuLog still(1001, ImuSample{0.0, Vec2::Zero(), 0.0});
  ImuLog timed = still;
  for (std::size_t k = 0; k < timed.size(); ++k) timed[k].t = 0.1 * static_cast<double>(k);
  for (const Pose& p : dead_reckon({}, timed)) CHECK(p.p.norm() == 0.0);

  // Constant bias from rest: p = beta dt^2 n(n-1)/2 -> beta T^2 / 2.
  const double beta = 1e-3;
  ImuLog biased = timed;
  for (auto& s : biased) s.a = {beta, 0.0};
  const auto path = dead_reckon({}, biased);
  const double T = path.back().t;
  CHECK(path.back().p.x() == doctest::Approx(0.5 * beta * T * T).epsilon(0.01));

  LawnmowerSpec s;
  const auto tr = lawnmower_trajectory(s);
  const auto imu = generate_imu_samples(tr, ImuParams{}, 1);
  const auto dr = dead_reckon({0.0, tr[0].p, tr[0].v, tr[0].psi}, imu);
  CHECK((dr.back().p - tr.back().p).norm() < 0.5);

  HeadingLog h{{50.0, 1.0}};
  const auto aided = dead_reckon({}, timed, &h);
  CHECK(aided[499].psi == 0.0);
  CHECK(aided[500].psi == 1.0);
  CHECK_THROWS_AS(dead_reckon({0.0, {NAN, 0.0}, {}, 0.0}, timed), Error);
}
