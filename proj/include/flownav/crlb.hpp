#pragma once

#include "flownav/core.hpp"
#include "flownav/flowfields.hpp"
#include "flownav/vehicle_sim.hpp"

#include <Eigen/Core>

#include <vector>

namespace flownav {

// Reduced state [px, py, vx, vy, psi].
inline constexpr int kCrlbDim = 5;
using CrlbMat = Eigen::Matrix<double, kCrlbDim, kCrlbDim>;
using CrlbNoiseJac = Eigen::Matrix<double, kCrlbDim, 3>;
using CrlbMeasJac = Eigen::Matrix<double, 2, kCrlbDim>;

struct ReducedJacobians {
  CrlbMat F;
  CrlbNoiseJac G;
  CrlbMeasJac H;
};

/// Jacobians of the reduced system evaluated along the truth. Grid maps use the
/// exact bilinear gradient; analytic maps use flow_gradient's central difference.
ReducedJacobians reduced_jacobians(const TruthRecord& truth, const FlowMap& map, double dt);

struct CrlbSequence {
  std::vector<double> times;
  std::vector<CrlbMat> P_pred;
  std::vector<CrlbMat> P_filt;
};

/// Recursive parametric bound along truth. Q is diag(sigma_a^2, sigma_a^2,
/// sigma_r^2) in the same per-step convention as the filter. Measurement updates
/// happen at every truth record whose index is a multiple of the ADCP decimation;
/// between them P_filt equals P_pred.
CrlbSequence crlb_sequence(const std::vector<TruthRecord>& truth, const FlowMap& map,
                           const Eigen::Matrix3d& Q, const Mat2& R, const CrlbMat& P0,
                           double adcp_period);

/// Default initial bound matching the particle initialization spread.
CrlbMat crlb_default_p0(double pos_var = 1e6, double vel_var = 1e-6, double psi_var = 1e-8);

}  // namespace flownav
