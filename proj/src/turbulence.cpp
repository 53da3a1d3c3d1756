#include "flownav/turbulence.hpp"

#include "flownav/rng.hpp"

#include <json.hpp>

namespace flownav {

void KsParams::validate() const {
  if (!(eta > 0.0 && eta < correlation_length))
    fail(ErrorCode::InvalidArgument, "KS: require 0 < eta < correlation_length");
  if (n_modes < 2) fail(ErrorCode::InvalidArgument, "KS: need at least 2 modes");
  if (!(large_scale_variance >= 0.0)) fail(ErrorCode::InvalidArgument, "KS: variance must be >= 0");
  if (!(kolmogorov_const > 0.0)) fail(ErrorCode::InvalidArgument, "KS: Kolmogorov constant must be > 0");
}

bool KsField::operator==(const KsField& o) const {
  if (dissipation != o.dissipation || modes.size() != o.modes.size()) return false;
  for (std::size_t i = 0; i < modes.size(); ++i) {
    const KsMode &x = modes[i], &y = o.modes[i];
    if (x.k != y.k || x.dk != y.dk || x.omega != y.omega || x.a != y.a || x.b != y.b || x.phi != y.phi)
      return false;
  }
  return true;
}

double kolmogorov_spectrum(double k, double eps, double k_c, double k_eta, double alpha) {
  if (!(k > 0.0)) fail(ErrorCode::InvalidArgument, "kolmogorov_spectrum: k must be > 0");
  if (k < k_c || k > k_eta) return 0.0;
  return alpha * std::cbrt(eps * eps) * std::pow(k, -5.0 / 3.0);
}

double dissipation_rate(double variance, double k_c, double k_eta, double alpha) {
  if (!(variance >= 0.0) || !(k_c < k_eta) || !(k_c > 0.0))
    fail(ErrorCode::InvalidArgument, "dissipation_rate: need variance >= 0 and 0 < k_c < k_eta");
  const double band = std::pow(k_c, -2.0 / 3.0) - std::pow(k_eta, -2.0 / 3.0);
  return std::pow(variance / alpha / band, 1.5);
}

KsField build_ks(const KsParams& params) {
  params.validate();
  KsField f;
  f.params = params;
  const double kc = params.k_c(), keta = params.k_eta(), alpha = params.kolmogorov_const;
  f.dissipation = dissipation_rate(params.large_scale_variance, kc, keta, alpha);

  const std::size_t n = params.n_modes;
  std::vector<double> k(n);
  const double ratio = params.correlation_length / params.eta;
  for (std::size_t i = 0; i < n; ++i)
    k[i] = kc * std::pow(ratio, static_cast<double>(i) / static_cast<double>(n - 1));
  k.front() = kc;
  k.back() = keta;

  f.modes.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    KsMode& m = f.modes[i];
    m.k = k[i];
    if (i == 0)
      m.dk = 0.5 * (k[1] - k[0]);
    else if (i == n - 1)
      m.dk = 0.5 * (k[n - 1] - k[n - 2]);
    else
      m.dk = 0.5 * (k[i + 1] - k[i - 1]);
    const double E = kolmogorov_spectrum(m.k, f.dissipation, kc, keta, alpha);
    m.omega = std::sqrt(m.k * m.k * m.k / alpha * E);
    m.a = std::sqrt(E * m.dk);
    m.b = m.a;
    m.phi = 2.0 * kPi * counter_uniform(params.seed, i);
    const double c = std::cos(m.phi), s = std::sin(m.phi);
    m.a_vec = {m.a * c, -m.a * s};
    m.b_vec = {-m.b * c, m.b * s};
    m.k_vec = {m.k * s, m.k * c};
    // Each mode must be solenoidal: amplitude vectors orthogonal to k.
    const double kscale = m.k * std::max(m.a, 1e-300);
    if (std::abs(m.a_vec.dot(m.k_vec)) > 1e-12 * kscale || std::abs(m.b_vec.dot(m.k_vec)) > 1e-12 * kscale)
      fail(ErrorCode::NumericalBreakdown, "KS mode not divergence-free");
  }
  return f;
}

Vec2 ks_velocity(const KsField& field, const Vec2& p, double t) {
  Vec2 u = Vec2::Zero();
  for (const KsMode& m : field.modes) {
    const double arg = m.k_vec.dot(p) + m.omega * t;
    u += m.a_vec * std::cos(arg) + m.b_vec * std::sin(arg);
  }
  return u;
}

Mat2 ks_gradient(const KsField& field, const Vec2& p, double t) {
  Mat2 g = Mat2::Zero();
  for (const KsMode& m : field.modes) {
    const double arg = m.k_vec.dot(p) + m.omega * t;
    g += (m.b_vec * std::cos(arg) - m.a_vec * std::sin(arg)) * m.k_vec.transpose();
  }
  return g;
}

std::string ks_to_json(const KsField& field) {
  nlohmann::ordered_json j;
  const KsParams& p = field.params;
  j["correlation_length_m"] = p.correlation_length;
  j["eta_m"] = p.eta;
  j["n_modes"] = p.n_modes;
  j["large_scale_variance_m2ps2"] = p.large_scale_variance;
  j["kolmogorov_const"] = p.kolmogorov_const;
  j["seed"] = p.seed;
  j["dissipation_m2ps3"] = field.dissipation;
  auto& modes = j["modes"] = nlohmann::ordered_json::array();
  for (const KsMode& m : field.modes) {
    modes.push_back({{"k_per_m", m.k},
                     {"dk_per_m", m.dk},
                     {"omega_radps", m.omega},
                     {"a_mps", m.a},
                     {"b_mps", m.b},
                     {"phi_rad", m.phi},
                     {"a_vec", {m.a_vec.x(), m.a_vec.y()}},
                     {"b_vec", {m.b_vec.x(), m.b_vec.y()}},
                     {"k_vec", {m.k_vec.x(), m.k_vec.y()}}});
  }
  return j.dump(2);
}

}  // namespace flownav
