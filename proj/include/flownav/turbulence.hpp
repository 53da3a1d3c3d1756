#pragma once

#include "flownav/core.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace flownav {

/// Kinematic-simulation turbulence parameters.
struct KsParams {
  double correlation_length = 200.0;  // m, 2*pi/k_c
  double eta = 0.001;                 // m, 2*pi/k_eta
  std::size_t n_modes = 100;
  double large_scale_variance = 0.01;  // m^2/s^2
  double kolmogorov_const = 1.5;
  std::uint64_t seed = 0;

  double k_c() const { return 2.0 * kPi / correlation_length; }
  double k_eta() const { return 2.0 * kPi / eta; }
  void validate() const;
};

struct KsMode {
  double k;       // 1/m
  double dk;      // 1/m, quadrature width
  double omega;   // rad/s
  double a, b;    // m/s
  double phi;     // rad
  Vec2 a_vec, b_vec, k_vec;
};

/// Frozen set of KS modes. Immutable once built.
struct KsField {
  KsParams params;
  double dissipation = 0.0;  // m^2/s^3
  std::vector<KsMode> modes;

  bool operator==(const KsField& o) const;
};

/// E(k) = alpha eps^(2/3) k^(-5/3) on [k_c, k_eta], zero outside.
double kolmogorov_spectrum(double k, double eps, double k_c, double k_eta, double alpha);

double dissipation_rate(double variance, double k_c, double k_eta, double alpha);

KsField build_ks(const KsParams& params);

Vec2 ks_velocity(const KsField& field, const Vec2& p, double t);

/// Spatial Jacobian d(u,v)/d(x,y), summed per mode.
Mat2 ks_gradient(const KsField& field, const Vec2& p, double t);

std::string ks_to_json(const KsField& field);

}  // namespace flownav
