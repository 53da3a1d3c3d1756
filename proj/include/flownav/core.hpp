#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

namespace flownav {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kStandardGravity = 9.80665;  // m/s^2 per g

enum class ErrorCode {
  InvalidArgument = 1,
  OutOfDomain,
  ParseError,
  DimensionMismatch,
  SpecInfeasible,
  NumericalBreakdown,
  AllWeightsZero,
  ConfigError,
  IoError,
  SingularInnovation,
};

const char* to_string(ErrorCode code);

// All recoverable failures in the library are reported through this type; the
// C API maps the code one-to-one onto fn_status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  double w = std::remainder(a, 2.0 * kPi);  // [-pi, pi]
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

/// Body-to-navigation rotation for heading psi (counter-clockwise from +x).
inline Mat2 rot_nb(double psi) {
  const double c = std::cos(psi), s = std::sin(psi);
  Mat2 r;
  r << c, -s, s, c;
  return r;
}

/// d/dpsi of rot_nb.
inline Mat2 drot_nb(double psi) {
  const double c = std::cos(psi), s = std::sin(psi);
  Mat2 r;
  r << -s, -c, c, -s;
  return r;
}

inline Mat2 rot_bn(double psi) { return rot_nb(psi).transpose(); }
inline Mat2 drot_bn(double psi) { return drot_nb(psi).transpose(); }

inline bool finite(const Vec2& v) { return std::isfinite(v.x()) && std::isfinite(v.y()); }

}  // namespace flownav
