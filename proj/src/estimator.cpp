#include "flownav/estimator.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <algorithm>
#include <limits>
#include <numeric>

namespace flownav {

KfMat NoiseConfig::process_cov(double dt) const {
  KfVec q;
  const double f = 1.0 / dt;
  q << accel_var, accel_var, gyro_var,
       2.0 * f * accel_bias_sd * accel_bias_sd / accel_tau, 2.0 * f * accel_bias_sd * accel_bias_sd / accel_tau,
       2.0 * f * gyro_bias_sd * gyro_bias_sd / gyro_tau,
       2.0 * f * adcp_bias_sd * adcp_bias_sd / adcp_tau, 2.0 * f * adcp_bias_sd * adcp_bias_sd / adcp_tau,
       2.0 * f * k_min * sigma_u * sigma_u / corr_length, 2.0 * f * k_min * sigma_u * sigma_u / corr_length;
  return q.asDiagonal();
}

NoiseConfig NoiseConfig::from_sensors(const ImuParams& imu, const AdcpParams& adcp, double corr_length,
                                      double k_min, double sigma_u) {
  NoiseConfig n;
  n.accel_var = imu.accel_white_sd * imu.accel_white_sd * imu.rate_hz;
  n.gyro_var = imu.gyro_white_sd * imu.gyro_white_sd * imu.rate_hz;
  n.accel_bias_sd = imu.accel_bias_sd;
  n.accel_tau = imu.accel_tau;
  n.gyro_bias_sd = imu.gyro_bias_sd;
  n.gyro_tau = imu.gyro_tau;
  n.adcp_bias_sd = adcp.bias_sd;
  n.adcp_tau = adcp.tau;
  n.corr_length = corr_length;
  n.k_min = k_min;
  n.sigma_u = sigma_u;
  n.R = Mat2::Identity() * adcp.white_sd * adcp.white_sd;
  return n;
}

// ---------------------------------------------------------------------------
// Model

namespace {
double sign(double x) { return (x > 0.0) - (x < 0.0); }
}  // namespace

KfVec kf_transition(const KfVec& x, const ImuSample& imu, double dt, const NoiseConfig& n) {
  using namespace kf;
  KfVec y = x;
  const double psi = x[Psi];
  const Vec2 v = x.segment<2>(Vx);
  const Vec2 acc = imu.a - x.segment<2>(Bax);
  y.segment<2>(Vx) = v + rot_nb(psi) * acc * dt;
  y[Psi] = wrap_angle(psi + (imu.r - x[Br]) * dt);
  y.segment<2>(Bax) *= 1.0 - dt / n.accel_tau;
  y[Br] *= 1.0 - dt / n.gyro_tau;
  y.segment<2>(Bzx) *= 1.0 - dt / n.adcp_tau;
  // Decay with the distance travelled through the eddies, hence |v|.
  y[Ucx] = (1.0 - std::abs(v.x()) * dt / n.corr_length) * x[Ucx];
  y[Ucy] = (1.0 - std::abs(v.y()) * dt / n.corr_length) * x[Ucy];
  return y;
}

KfJacobians kf_jacobians(const KfVec& x, const ImuSample& imu, double dt, const NoiseConfig& n) {
  using namespace kf;
  KfJacobians j;
  j.F.setIdentity();
  const double psi = x[Psi];
  const Vec2 acc = imu.a - x.segment<2>(Bax);
  j.F.block<2, 1>(Vx, Psi) = drot_nb(psi) * acc * dt;
  j.F.block<2, 2>(Vx, Bax) = -rot_nb(psi) * dt;
  j.F(Psi, Br) = -dt;
  j.F(Bax, Bax) = j.F(Bay, Bay) = 1.0 - dt / n.accel_tau;
  j.F(Br, Br) = 1.0 - dt / n.gyro_tau;
  j.F(Bzx, Bzx) = j.F(Bzy, Bzy) = 1.0 - dt / n.adcp_tau;
  j.F(Ucx, Vx) = -sign(x[Vx]) * x[Ucx] * dt / n.corr_length;
  j.F(Ucy, Vy) = -sign(x[Vy]) * x[Ucy] * dt / n.corr_length;
  j.F(Ucx, Ucx) = 1.0 - std::abs(x[Vx]) * dt / n.corr_length;
  j.F(Ucy, Ucy) = 1.0 - std::abs(x[Vy]) * dt / n.corr_length;

  j.G.setZero();
  j.G.block<2, 2>(Vx, Vx) = -rot_nb(psi) * dt;
  j.G(Psi, Psi) = -dt;
  for (int i = Bax; i < kKfDim; ++i) j.G(i, i) = dt;
  return j;
}

namespace {

// Coefficients of the sparse F; applied to one column at a time.
struct SparseF {
  Vec2 v_psi;
  Mat2 v_ba;
  double psi_br;
  double fa, fr, fz;
  Vec2 uc_v, uc_uc;

  SparseF(const KfVec& x, const ImuSample& imu, double dt, const NoiseConfig& n) {
    using namespace kf;
    const double psi = x[Psi];
    const Vec2 acc = imu.a - x.segment<2>(Bax);
    v_psi = drot_nb(psi) * acc * dt;
    v_ba = -rot_nb(psi) * dt;
    psi_br = -dt;
    fa = 1.0 - dt / n.accel_tau;
    fr = 1.0 - dt / n.gyro_tau;
    fz = 1.0 - dt / n.adcp_tau;
    uc_v = -Vec2{sign(x[Vx]) * x[Ucx], sign(x[Vy]) * x[Ucy]} * dt / n.corr_length;
    uc_uc = Vec2::Ones() - x.segment<2>(Vx).cwiseAbs() * dt / n.corr_length;
  }

  // Left-multiplies every column of M by F.
  void apply(KfMat& M) const {
    using namespace kf;
    for (int c = 0; c < kKfDim; ++c) {
      auto col = M.col(c);
      const double vx = col[Vx], vy = col[Vy], psi = col[Psi], bax = col[Bax], bay = col[Bay], br = col[Br];
      col[Ucx] = uc_v.x() * vx + uc_uc.x() * col[Ucx];
      col[Ucy] = uc_v.y() * vy + uc_uc.y() * col[Ucy];
      col[Vx] = vx + v_psi.x() * psi + v_ba(0, 0) * bax + v_ba(0, 1) * bay;
      col[Vy] = vy + v_psi.y() * psi + v_ba(1, 0) * bax + v_ba(1, 1) * bay;
      col[Psi] = psi + psi_br * br;
      col[Bax] = fa * bax;
      col[Bay] = fa * bay;
      col[Br] = fr * br;
      col[Bzx] *= fz;
      col[Bzy] *= fz;
    }
  }
};

void symmetrize(KfMat& P) { P = 0.5 * (P + P.transpose()).eval(); }

}  // namespace

void propagate_covariance(KfMat& P, const KfVec& x, const ImuSample& imu, double dt, const NoiseConfig& n) {
  using namespace kf;
  const SparseF F(x, imu, dt, n);
  F.apply(P);
  P.transposeInPlace();
  F.apply(P);
  // G Q G^T: rotated accelerometer block plus diagonal terms.
  const KfMat Q = n.process_cov(dt);
  const Mat2 Rn = rot_nb(x[Psi]);
  P.block<2, 2>(Vx, Vx) += dt * dt * Rn * Q.block<2, 2>(Vx, Vx) * Rn.transpose();
  for (int i = Psi; i < kKfDim; ++i) P(i, i) += dt * dt * Q(i, i);
  symmetrize(P);
}

Vec2 predicted_measurement(const KfVec& x, const Vec2& map_velocity) {
  using namespace kf;
  return rot_bn(x[Psi]) * (map_velocity + x.segment<2>(Ucx) - x.segment<2>(Vx)) + x.segment<2>(Bzx);
}

KfMeasJac measurement_jacobian(const KfVec& x, const Vec2& map_velocity) {
  using namespace kf;
  KfMeasJac H = KfMeasJac::Zero();
  const Mat2 Rbn = rot_bn(x[Psi]);
  H.block<2, 2>(0, Vx) = -Rbn;
  H.col(Psi) = drot_bn(x[Psi]) * (map_velocity + x.segment<2>(Ucx) - x.segment<2>(Vx));
  H.block<2, 2>(0, Bzx) = Mat2::Identity();
  H.block<2, 2>(0, Ucx) = Rbn;
  return H;
}

double effective_sample_size(std::span<const double> w) {
  double s = 0.0;
  for (double x : w) s += x * x;
  return 1.0 / s;
}

std::vector<std::size_t> systematic_indices(std::span<const double> w, double u) {
  const std::size_t n = w.size();
  std::vector<std::size_t> idx(n);
  if (n == 0) return idx;
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  const double scale = static_cast<double>(n) / total;
  // Cumulative offspring targets n*C_j; snap summation round-off onto integers
  // so that exact comb boundaries (e.g. uniform weights) behave as in exact arithmetic.
  auto target = [&](double partial) {
    const double c = partial * scale;
    const double r = std::round(c);
    return std::abs(c - r) < 1e-9 ? r : c;
  };
  double partial = w[0];
  double cum = target(partial);
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = static_cast<double>(i) + u;
    while (pos >= cum && j + 1 < n) {
      partial += w[++j];
      cum = target(partial);
    }
    idx[i] = j;
  }
  return idx;
}

// ---------------------------------------------------------------------------
// Filter

namespace {

Vec2 sample_gaussian(const Vec2& mean, const Mat2& cov, Rng& rng) {
  // 2x2 Cholesky tolerating singular covariances.
  const double l11 = std::sqrt(std::max(cov(0, 0), 0.0));
  const double l21 = l11 > 0.0 ? cov(1, 0) / l11 : 0.0;
  const double l22 = std::sqrt(std::max(cov(1, 1) - l21 * l21, 0.0));
  const double n1 = rng.normal(), n2 = rng.normal();
  return mean + Vec2{l11 * n1, l21 * n1 + l22 * n2};
}

bool psd_enough(const KfMat& P) {
  for (int i = 0; i < kKfDim; ++i)
    if (!(P(i, i) >= -1e-9) || !std::isfinite(P(i, i))) return false;
  return true;
}

}  // namespace

MarginalizedParticleFilter::MarginalizedParticleFilter(const MpfConfig& config, const Prior& prior,
                                                       std::size_t n_particles, std::uint64_t seed)
    : config_(config), rng_(seed) {
  if (n_particles < 1) fail(ErrorCode::InvalidArgument, "MPF needs at least one particle");
  if (!finite(prior.p_mean)) fail(ErrorCode::InvalidArgument, "MPF prior mean not finite");
  particles_.resize(n_particles);
  const double w = 1.0 / static_cast<double>(n_particles);
  for (Particle& p : particles_) {
    p.pos = sample_gaussian(prior.p_mean, prior.p_cov, rng_);
    p.weight = w;
    p.kf.mean = prior.kf_mean;
    p.kf.cov = prior.kf_cov;
  }
  scratch_.resize(n_particles);
}

void MarginalizedParticleFilter::predict(const ImuSample& imu, double dt) {
  if (!(dt > 0.0)) fail(ErrorCode::InvalidArgument, "predict: dt must be > 0");
  const NoiseConfig& n = config_.noise;
  const Mat2 jitter = Mat2::Identity() * config_.position_jitter_var;
  for (Particle& p : particles_) {
    const Vec2 v = p.kf.mean.segment<2>(kf::Vx);
    if (config_.stochastic_position) {
      const Mat2 cov = p.kf.cov.block<2, 2>(kf::Vx, kf::Vx) * dt * dt + jitter;
      p.pos = sample_gaussian(p.pos + v * dt, cov, rng_);
    } else {
      p.pos += v * dt;
    }
    propagate_covariance(p.kf.cov, p.kf.mean, imu, dt, n);
    p.kf.mean = kf_transition(p.kf.mean, imu, dt, n);
    if (!psd_enough(p.kf.cov))
      fail(ErrorCode::NumericalBreakdown, "KF covariance lost positive semi-definiteness in predict");
  }
}

UpdateResult MarginalizedParticleFilter::update(const Vec2& z, const FlowMap& map, double t) {
  if (!finite(z)) fail(ErrorCode::InvalidArgument, "update: non-finite measurement");
  const Mat2& R = config_.noise.R;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < particles_.size(); ++i) {
    Particle& p = particles_[i];
    const Vec2 phi = flow_velocity(map, p.pos, t, DomainPolicy::Clamp);
    const KfMeasJac H = measurement_jacobian(p.kf.mean, phi);
    const Eigen::Matrix<double, kKfDim, 2> PHt = p.kf.cov * H.transpose();
    Mat2 S = H * PHt + R;
    S = 0.5 * (S + S.transpose()).eval();
    const double det = S.determinant();
    const Vec2 e = z - predicted_measurement(p.kf.mean, phi);
    double loglik = -std::numeric_limits<double>::infinity();
    if (det > 0.0 && std::isfinite(det)) {
      const Mat2 Sinv = S.inverse();
      loglik = -0.5 * e.dot(Sinv * e) - 0.5 * std::log(det) - std::log(2.0 * kPi);
      const Eigen::Matrix<double, kKfDim, 2> K = PHt * Sinv;
      p.kf.mean += K * e;
      p.kf.mean[kf::Psi] = wrap_angle(p.kf.mean[kf::Psi]);
      p.kf.cov = ((KfMat::Identity() - K * H) * p.kf.cov).eval();
      symmetrize(p.kf.cov);
    }
    scratch_[i] = std::log(p.weight) + loglik;
    if (std::isfinite(scratch_[i])) best = std::max(best, scratch_[i]);
  }

  UpdateResult res;
  // Linear-domain product w * L underflows below ~exp(-745) for every particle.
  if (!(best > -745.0)) {
    res.all_weights_zero = true;
    diverged_ = true;
    const double w = 1.0 / static_cast<double>(particles_.size());
    for (Particle& p : particles_) p.weight = w;
    return res;
  }
  for (std::size_t i = 0; i < particles_.size(); ++i)
    particles_[i].weight = std::isfinite(scratch_[i]) ? std::exp(scratch_[i] - best) : 0.0;
  normalize();
  return res;
}

void MarginalizedParticleFilter::heading_update(double psi_meas, double sigma_psi) {
  if (!(sigma_psi > 0.0)) fail(ErrorCode::InvalidArgument, "heading_update: sigma must be > 0");
  const double r = sigma_psi * sigma_psi;
  for (Particle& p : particles_) {
    const double s = p.kf.cov(kf::Psi, kf::Psi) + r;
    const KfVec k = p.kf.cov.col(kf::Psi) / s;
    const double e = wrap_angle(psi_meas - p.kf.mean[kf::Psi]);
    p.kf.mean += k * e;
    p.kf.mean[kf::Psi] = wrap_angle(p.kf.mean[kf::Psi]);
    const Eigen::Matrix<double, 1, kKfDim> row = p.kf.cov.row(kf::Psi);
    p.kf.cov -= k * row;
    symmetrize(p.kf.cov);
  }
}

void MarginalizedParticleFilter::normalize() {
  double s = 0.0;
  for (const Particle& p : particles_) s += p.weight;
  for (Particle& p : particles_) p.weight /= s;
}

double MarginalizedParticleFilter::neff() const {
  double s = 0.0;
  for (const Particle& p : particles_) s += p.weight * p.weight;
  return 1.0 / s;
}

bool MarginalizedParticleFilter::resample_if_needed() {
  if (!config_.resampling || particles_.size() < 2) return false;
  if (neff() >= config_.resample_fraction * static_cast<double>(particles_.size())) return false;
  systematic_resample();
  return true;
}

void MarginalizedParticleFilter::systematic_resample() {
  for (std::size_t i = 0; i < particles_.size(); ++i) scratch_[i] = particles_[i].weight;
  const std::vector<std::size_t> idx = systematic_indices(scratch_, rng_.uniform());
  std::vector<Particle> next;
  next.reserve(particles_.size());
  const double w = 1.0 / static_cast<double>(particles_.size());
  for (std::size_t j : idx) {
    next.push_back(particles_[j]);
    next.back().weight = w;
  }
  particles_ = std::move(next);
  ++resamples_;
}

bool MarginalizedParticleFilter::mutate() {
  const MutationConfig& m = config_.mutation;
  if (!m.enabled || swarm_sd() >= m.trigger_sd) return false;
  const double sd = std::sqrt(std::max(m.jitter_var, 0.0));
  for (Particle& p : particles_) {
    if (sd > 0.0) {
      const double n1 = rng_.normal(), n2 = rng_.normal();
      p.pos += Vec2{sd * n1, sd * n2};
    }
    p.kf.cov.diagonal() += m.cov_inflation;
  }
  ++mutations_;
  return true;
}

Estimate MarginalizedParticleFilter::estimate_mean() const {
  Estimate e;
  double s = 0.0, c = 0.0;
  for (const Particle& p : particles_) {
    e.p += p.weight * p.pos;
    e.kf_mean += p.weight * p.kf.mean;
    s += p.weight * std::sin(p.kf.mean[kf::Psi]);
    c += p.weight * std::cos(p.kf.mean[kf::Psi]);
  }
  e.kf_mean[kf::Psi] = std::atan2(s, c);
  if (e.kf_mean[kf::Psi] == -kPi) e.kf_mean[kf::Psi] = kPi;
  return e;
}

Estimate MarginalizedParticleFilter::estimate_map() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < particles_.size(); ++i)
    if (particles_[i].weight > particles_[best].weight) best = i;
  return {particles_[best].pos, particles_[best].kf.mean};
}

Mat2 MarginalizedParticleFilter::position_covariance() const {
  Vec2 mean = Vec2::Zero();
  for (const Particle& p : particles_) mean += p.weight * p.pos;
  Mat2 c = Mat2::Zero();
  for (const Particle& p : particles_) {
    const Vec2 d = p.pos - mean;
    c += p.weight * d * d.transpose();
  }
  return c;
}

// ---------------------------------------------------------------------------
// Dead reckoning

std::vector<Pose> dead_reckon(const Pose& init, const ImuLog& imu, const HeadingLog* headings) {
  if (!finite(init.p) || !finite(init.v) || !std::isfinite(init.psi))
    fail(ErrorCode::InvalidArgument, "dead_reckon: non-finite initial pose");
  std::vector<Pose> out;
  out.reserve(imu.size());
  Pose s = init;
  std::size_t h = 0;
  for (std::size_t k = 0; k < imu.size(); ++k) {
    s.t = imu[k].t;
    if (headings) {
      while (h < headings->size() && (*headings)[h].t < s.t - 1e-9) ++h;
      if (h < headings->size() && std::abs((*headings)[h].t - s.t) <= 1e-9) s.psi = (*headings)[h].psi;
    }
    out.push_back(s);
    if (k + 1 == imu.size()) break;
    const double dt = imu[k + 1].t - imu[k].t;
    const Vec2 p = s.p + s.v * dt;
    const Vec2 v = s.v + rot_nb(s.psi) * imu[k].a * dt;
    s.psi = wrap_angle(s.psi + imu[k].r * dt);
    s.p = p;
    s.v = v;
  }
  return out;
}

}  // namespace flownav
