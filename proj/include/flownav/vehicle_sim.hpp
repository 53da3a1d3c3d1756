#pragma once

#include "flownav/core.hpp"
#include "flownav/flowfields.hpp"
#include "flownav/turbulence.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace flownav {

namespace units {
inline constexpr double mg = 1e-3 * kStandardGravity;   // m/s^2
inline constexpr double ug = 1e-6 * kStandardGravity;   // m/s^2
inline constexpr double deg = kPi / 180.0;              // rad
inline constexpr double deg_per_s = deg;                // rad/s
inline constexpr double deg_per_hr = deg / 3600.0;      // rad/s
}  // namespace units

struct TruthRecord {
  double t = 0.0;
  Vec2 p = Vec2::Zero();
  Vec2 v = Vec2::Zero();
  double psi = 0.0;               // (-pi, pi]
  Vec2 a_body = Vec2::Zero();     // specific acceleration, body frame
  double r = 0.0;                 // yaw rate
};

struct ImuParams {
  double rate_hz = 10.0;
  double accel_white_sd = 0.0;  // m/s^2/sqrt(Hz)
  double accel_bias_sd = 0.0;   // m/s^2
  double accel_tau = 300.0;     // s
  double gyro_white_sd = 0.0;   // rad/s/sqrt(Hz)
  double gyro_bias_sd = 0.0;    // rad/s
  double gyro_tau = 300.0;      // s

  /// Automotive-grade MEMS unit used for the analytic-flow scenarios.
  static ImuParams vn100();
  /// Higher grade unit with bias stability augmented by misalignment terms.
  static ImuParams vn110_augmented();
  void validate() const;
};

struct AdcpParams {
  double rate_hz = 1.0;
  double white_sd = 0.0;  // m/s
  double bias_sd = 0.0;   // m/s
  double tau = 100.0;     // s

  static AdcpParams rdi1200();
  void validate() const;
};

struct LawnmowerSpec {
  Vec2 origin{1'000.0, -4'000.0};
  double leg_length = 18'000.0;
  double leg_spacing = 2'000.0;
  std::size_t n_legs = 6;
  double speed = 1.5;
  double turn_radius = 100.0;
  double perturb_amp = 20.0;          // peak lateral excursion on straight legs
  double perturb_wavelength = 1'000.0;
  double leg_heading = 0.0;           // heading of the first leg, rad
  double dt = 0.1;
  double duration = 6.0 * 3600.0;
};

struct ImuSample {
  double t;
  Vec2 a;
  double r;
};

struct AdcpSample {
  double t;
  Vec2 z;
};

using ImuLog = std::vector<ImuSample>;
using AdcpLog = std::vector<AdcpSample>;

/// Ground truth sampled every spec.dt from 0 to duration inclusive. Records are
/// an exact forward-Euler chain: p[k+1] = p[k] + v[k] dt,
/// v[k+1] = v[k] + R(psi[k]) a_body[k] dt, psi[k+1] = psi[k] + r[k] dt.
std::vector<TruthRecord> lawnmower_trajectory(const LawnmowerSpec& spec);

/// One first-order Gauss-Markov step with stationary SD sigma_b.
inline double gauss_markov_step(double b, double tau, double sigma_b, double dt, double noise) {
  return (1.0 - dt / tau) * b + std::sqrt(2.0 * sigma_b * sigma_b / (tau * dt)) * noise * dt;
}

ImuLog generate_imu_samples(const std::vector<TruthRecord>& truth, const ImuParams& params,
                            std::uint64_t seed);

/// turb may be null for a turbulence-free field.
AdcpLog generate_adcp_samples(const std::vector<TruthRecord>& truth, const FlowMap& mean_flow,
                              const KsField* turb, const AdcpParams& params, std::uint64_t seed,
                              DomainPolicy policy = DomainPolicy::Clamp);

/// Truth ticks per sensor sample for a sensor at rate_hz over truth spaced dt.
std::size_t decimation(double truth_dt, double rate_hz);

void write_truth_csv(const std::vector<TruthRecord>& truth, const std::string& path);
void write_imu_csv(const ImuLog& log, const std::string& path);
void write_adcp_csv(const AdcpLog& log, const std::string& path);
ImuLog read_imu_csv(const std::string& path);
AdcpLog read_adcp_csv(const std::string& path);

}  // namespace flownav
