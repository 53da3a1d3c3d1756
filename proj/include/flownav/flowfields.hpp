#pragma once

#include "flownav/core.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace flownav {

/// Time-dependent double gyre on the nondimensional box [0,2]x[0,1].
struct DoubleGyreParams {
  double amplitude = 1.5 / kPi;
  double epsilon = 0.3;
  double omega = 2.0 * kPi;
  double length_scale = 10'000.0;  // m
  double velocity_scale = 1.0;     // m/s; time scale is length/velocity
  Vec2 origin{0.0, -5'000.0};      // metric position of nondimensional (0,0)

  double time_scale() const { return length_scale / velocity_scale; }
  void validate() const;
};

/// Meandering jet (Bower-type stream function), nondimensional parameters plus
/// independent length, time and velocity scales.
struct MeanderJetParams {
  double mean_amplitude = 1.2;
  double phase_speed = 0.12;
  double wavenumber = 2.0 * kPi / 7.5;
  double meander_eps = 0.3;
  double meander_omega = 0.4;
  double length_scale = 1'000.0;  // m
  double time_scale = 0.03 * 86'400.0;  // s
  double velocity_scale = 1.5;    // m/s
  Vec2 origin{0.0, 0.0};

  void validate() const;
};

/// Geometry and time knots of a gridded map.
struct GridSpec {
  Vec2 origin{0.0, 0.0};
  double dx = 1.0, dy = 1.0;
  std::size_t nx = 2, ny = 2;
  double t0 = 0.0, dt = 1.0;
  std::size_t nt = 1;

  void validate() const;
  bool operator==(const GridSpec&) const = default;
};

/// Time-tagged gridded current map. Values are stored row-major per layer:
/// index = (it * ny + iy) * nx + ix.
struct GridFlowMap {
  GridSpec spec;
  std::vector<double> u, v;

  std::size_t index(std::size_t it, std::size_t iy, std::size_t ix) const {
    return (it * spec.ny + iy) * spec.nx + ix;
  }
  void validate() const;
  bool operator==(const GridFlowMap&) const = default;
};

enum class DomainPolicy { Clamp, Error };

class FlowMap {
 public:
  using Variant = std::variant<DoubleGyreParams, MeanderJetParams, GridFlowMap>;

  FlowMap(DoubleGyreParams p);
  FlowMap(MeanderJetParams p);
  FlowMap(GridFlowMap g);

  const Variant& variant() const { return v_; }
  bool is_grid() const { return std::holds_alternative<GridFlowMap>(v_); }
  const GridFlowMap* grid() const { return std::get_if<GridFlowMap>(&v_); }

  /// Characteristic length used for default finite-difference steps.
  double length_scale() const;

 private:
  Variant v_;
};

Vec2 double_gyre_velocity_nd(const Vec2& p_nd, double t_nd, const DoubleGyreParams& params);
double double_gyre_stream_nd(const Vec2& p_nd, double t_nd, const DoubleGyreParams& params);

Vec2 meander_jet_velocity_nd(const Vec2& p_nd, double t_nd, const MeanderJetParams& params);
double meander_jet_stream_nd(const Vec2& p_nd, double t_nd, const MeanderJetParams& params);

Vec2 grid_sample(const GridFlowMap& grid, const Vec2& p, double t,
                 DomainPolicy policy = DomainPolicy::Clamp);

/// Exact gradient of the trilinear interpolant (bilinear in space) at (p, t).
Mat2 grid_gradient(const GridFlowMap& grid, const Vec2& p, double t,
                   DomainPolicy policy = DomainPolicy::Clamp);

Vec2 flow_velocity(const FlowMap& map, const Vec2& p, double t,
                   DomainPolicy policy = DomainPolicy::Clamp);

/// Central-difference Jacobian [du/dx du/dy; dv/dx dv/dy]. Without an explicit
/// step, h = 0.01*min(dx,dy) for grids and 1e-4*L for analytic fields.
Mat2 flow_gradient(const FlowMap& map, const Vec2& p, double t,
                   std::optional<double> h = std::nullopt,
                   DomainPolicy policy = DomainPolicy::Clamp);

GridFlowMap rasterize(const FlowMap& map, const GridSpec& spec);

enum class FgmEncoding { Binary, Ascii };

GridFlowMap load_fgm(const std::string& path);
void save_fgm(const GridFlowMap& grid, const std::string& path,
              FgmEncoding encoding = FgmEncoding::Binary);

}  // namespace flownav
