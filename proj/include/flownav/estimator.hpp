#pragma once

#include "flownav/core.hpp"
#include "flownav/flowfields.hpp"
#include "flownav/rng.hpp"
#include "flownav/vehicle_sim.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace flownav {

inline constexpr int kKfDim = 10;
using KfVec = Eigen::Matrix<double, kKfDim, 1>;
using KfMat = Eigen::Matrix<double, kKfDim, kKfDim>;
using KfMeasJac = Eigen::Matrix<double, 2, kKfDim>;

// Layout of the conditionally Gaussian substate.
namespace kf {
enum Index : int { Vx = 0, Vy = 1, Psi = 2, Bax = 3, Bay = 4, Br = 5, Bzx = 6, Bzy = 7, Ucx = 8, Ucy = 9 };
}

struct KfState {
  KfVec mean = KfVec::Zero();
  KfMat cov = KfMat::Zero();
};

/// Filter-side noise model. Per-step increment variances are built so that
/// G Q G^T reproduces the simulated sensors' discrete statistics.
struct NoiseConfig {
  double accel_var = 0.0;      // per-sample accelerometer white variance, (m/s^2)^2
  double gyro_var = 0.0;       // per-sample gyro white variance, (rad/s)^2
  double accel_bias_sd = 0.0, accel_tau = 300.0;
  double gyro_bias_sd = 0.0, gyro_tau = 300.0;
  double adcp_bias_sd = 0.0, adcp_tau = 100.0;
  double corr_length = 200.0;  // L_c, m
  double k_min = 2.0 * kPi / 200.0;
  double sigma_u = 0.0;        // m/s
  Mat2 R = Mat2::Identity() * 1e-4;

  /// Driving covariance Q for a propagation step of length dt (diagonal).
  KfMat process_cov(double dt) const;

  static NoiseConfig from_sensors(const ImuParams& imu, const AdcpParams& adcp, double corr_length,
                                  double k_min, double sigma_u);
};

struct MutationConfig {
  bool enabled = false;
  double trigger_sd = 0.0;   // m, radial swarm SD threshold
  double jitter_var = 0.0;   // m^2 per axis
  KfVec cov_inflation = KfVec::Zero();
};

struct MpfConfig {
  NoiseConfig noise;
  bool stochastic_position = true;
  double position_jitter_var = 0.01;  // m^2 per axis per propagation step
  bool resampling = true;
  double resample_fraction = 0.5;     // resample when N_eff < fraction * N_p
  MutationConfig mutation;
};

struct Particle {
  Vec2 pos = Vec2::Zero();
  double weight = 1.0;
  KfState kf;
};

struct Prior {
  Vec2 p_mean = Vec2::Zero();
  Mat2 p_cov = Mat2::Zero();
  KfVec kf_mean = KfVec::Zero();
  KfMat kf_cov = KfMat::Zero();
};

struct Estimate {
  Vec2 p = Vec2::Zero();
  KfVec kf_mean = KfVec::Zero();
};

// --- model pieces (shared by the filter and its tests) -----------------------

/// Nonlinear propagation of the KF mean over one IMU step.
KfVec kf_transition(const KfVec& x, const ImuSample& imu, double dt, const NoiseConfig& noise);

struct KfJacobians {
  KfMat F;
  Eigen::Matrix<double, kKfDim, kKfDim> G;
};

/// Dense F and G of the linearized KF propagation at x.
KfJacobians kf_jacobians(const KfVec& x, const ImuSample& imu, double dt, const NoiseConfig& noise);

/// In-place P <- F P F^T + G Q G^T using the sparsity of F.
void propagate_covariance(KfMat& P, const KfVec& x, const ImuSample& imu, double dt, const NoiseConfig& noise);

/// Predicted water-relative velocity in the body frame given the map velocity.
Vec2 predicted_measurement(const KfVec& x, const Vec2& map_velocity);

KfMeasJac measurement_jacobian(const KfVec& x, const Vec2& map_velocity);

double effective_sample_size(std::span<const double> weights);

/// Systematic resampling: indices of the selected ancestors for normalized
/// weights, using a single uniform offset u in [0, 1).
std::vector<std::size_t> systematic_indices(std::span<const double> weights, double u);

// --- filter -----------------------------------------------------------------

struct UpdateResult {
  bool all_weights_zero = false;
};

class MarginalizedParticleFilter {
 public:
  MarginalizedParticleFilter(const MpfConfig& config, const Prior& prior, std::size_t n_particles,
                             std::uint64_t seed);

  /// Propagates every particle with one IMU sample over dt.
  void predict(const ImuSample& imu, double dt);

  /// ADCP update at time t against the navigation map, then weight normalization.
  UpdateResult update(const Vec2& z, const FlowMap& map, double t);

  void heading_update(double psi_meas, double sigma_psi);

  /// Resamples when N_eff drops below the configured fraction; returns true if it did.
  bool resample_if_needed();
  void systematic_resample();

  /// Dithers the swarm when its radial SD is below the trigger; returns true if applied.
  bool mutate();

  Estimate estimate_mean() const;
  Estimate estimate_map() const;
  Mat2 position_covariance() const;
  double swarm_sd() const { return std::sqrt(position_covariance().trace()); }
  double neff() const;

  const std::vector<Particle>& particles() const { return particles_; }
  std::vector<Particle>& particles() { return particles_; }
  const MpfConfig& config() const { return config_; }
  bool diverged() const { return diverged_; }
  void clear_divergence() { diverged_ = false; }
  std::size_t resample_count() const { return resamples_; }
  std::size_t mutation_count() const { return mutations_; }

 private:
  void normalize();

  MpfConfig config_;
  std::vector<Particle> particles_;
  Rng rng_;
  std::vector<double> scratch_;
  bool diverged_ = false;
  std::size_t resamples_ = 0, mutations_ = 0;
};

// --- dead reckoning -----------------------------------------------------------

struct Pose {
  double t = 0.0;
  Vec2 p = Vec2::Zero();
  Vec2 v = Vec2::Zero();
  double psi = 0.0;
};

struct HeadingSample {
  double t;
  double psi;
};
using HeadingLog = std::vector<HeadingSample>;

/// Forward-Euler integration of raw IMU samples. If headings are supplied, the
/// heading state is replaced by each measurement at its timestamp.
std::vector<Pose> dead_reckon(const Pose& init, const ImuLog& imu, const HeadingLog* headings = nullptr);

}  // namespace flownav
