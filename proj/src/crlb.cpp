#include "flownav/crlb.hpp"

#include <Eigen/LU>

#include <cmath>

namespace flownav {

ReducedJacobians reduced_jacobians(const TruthRecord& x, const FlowMap& map, double dt) {
  if (!finite(x.p) || !finite(x.v) || !std::isfinite(x.psi) || !finite(x.a_body))
    fail(ErrorCode::InvalidArgument, "reduced_jacobians: non-finite truth record");
  if (!(dt > 0.0)) fail(ErrorCode::InvalidArgument, "reduced_jacobians: dt must be > 0");

  ReducedJacobians j;
  j.F.setIdentity();
  j.F.block<2, 2>(0, 2) = Mat2::Identity() * dt;
  j.F.block<2, 1>(2, 4) = drot_nb(x.psi) * x.a_body * dt;

  j.G.setZero();
  j.G.block<2, 2>(2, 0) = -rot_nb(x.psi) * dt;
  j.G(4, 2) = -dt;

  const Mat2 grad = map.is_grid() ? grid_gradient(*map.grid(), x.p, x.t) : flow_gradient(map, x.p, x.t);
  const Vec2 phi = flow_velocity(map, x.p, x.t);
  const Mat2 Rbn = rot_bn(x.psi);
  j.H.block<2, 2>(0, 0) = Rbn * grad;
  j.H.block<2, 2>(0, 2) = -Rbn;
  j.H.col(4) = drot_bn(x.psi) * (phi - x.v);
  return j;
}

CrlbSequence crlb_sequence(const std::vector<TruthRecord>& truth, const FlowMap& map,
                           const Eigen::Matrix3d& Q, const Mat2& R, const CrlbMat& P0,
                           double adcp_period) {
  CrlbSequence seq;
  if (truth.empty()) return seq;
  const double dt = truth.size() > 1 ? truth[1].t - truth[0].t : adcp_period;
  const std::size_t step = decimation(dt, 1.0 / adcp_period);

  seq.times.reserve(truth.size());
  seq.P_pred.reserve(truth.size());
  seq.P_filt.reserve(truth.size());

  CrlbMat P = P0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    const ReducedJacobians j = reduced_jacobians(truth[k], map, dt);
    seq.times.push_back(truth[k].t);
    seq.P_pred.push_back(P);
    if (k % step == 0) {
      const Eigen::Matrix<double, kCrlbDim, 2> PHt = P * j.H.transpose();
      const Mat2 S = j.H * PHt + R;
      const double det = S.determinant();
      if (!(std::abs(det) > 0.0) || !std::isfinite(det))
        fail(ErrorCode::SingularInnovation, "CRLB innovation covariance is singular");
      P -= PHt * S.inverse() * PHt.transpose();
      P = 0.5 * (P + P.transpose()).eval();
    }
    seq.P_filt.push_back(P);
    P = j.F * P * j.F.transpose() + j.G * Q * j.G.transpose();
  }
  return seq;
}

CrlbMat crlb_default_p0(double pos_var, double vel_var, double psi_var) {
  CrlbMat P = CrlbMat::Zero();
  P.diagonal() << pos_var, pos_var, vel_var, vel_var, psi_var;
  return P;
}

}  // namespace flownav
