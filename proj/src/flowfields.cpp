#include "flownav/flowfields.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace flownav {

void DoubleGyreParams::validate() const {
  if (!(length_scale > 0.0)) fail(ErrorCode::InvalidArgument, "double gyre: length_scale must be > 0");
  if (!(velocity_scale > 0.0)) fail(ErrorCode::InvalidArgument, "double gyre: velocity_scale must be > 0");
  if (!(epsilon >= 0.0 && epsilon < 0.5)) fail(ErrorCode::InvalidArgument, "double gyre: epsilon must be in [0, 0.5)");
}

void MeanderJetParams::validate() const {
  if (!(length_scale > 0.0 && time_scale > 0.0 && velocity_scale > 0.0))
    fail(ErrorCode::InvalidArgument, "meandering jet: scales must be > 0");
}

void GridSpec::validate() const {
  if (!(dx > 0.0 && dy > 0.0 && dt > 0.0)) fail(ErrorCode::InvalidArgument, "grid: dx, dy, dt must be > 0");
  if (nx < 2 || ny < 2) fail(ErrorCode::InvalidArgument, "grid: nx, ny must be >= 2");
  if (nt < 1) fail(ErrorCode::InvalidArgument, "grid: nt must be >= 1");
  if (!finite(origin) || !std::isfinite(t0)) fail(ErrorCode::InvalidArgument, "grid: non-finite origin");
}

void GridFlowMap::validate() const {
  spec.validate();
  const std::size_t n = spec.nx * spec.ny * spec.nt;
  if (u.size() != n || v.size() != n) fail(ErrorCode::DimensionMismatch, "grid: layer size mismatch");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(u[i]) || !std::isfinite(v[i])) fail(ErrorCode::InvalidArgument, "grid: non-finite value");
}

FlowMap::FlowMap(DoubleGyreParams p) : v_(p) { p.validate(); }
FlowMap::FlowMap(MeanderJetParams p) : v_(p) { p.validate(); }
FlowMap::FlowMap(GridFlowMap g) : v_(std::move(g)) { std::get<GridFlowMap>(v_).validate(); }

double FlowMap::length_scale() const {
  return std::visit(
      [](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, GridFlowMap>)
          return std::min(m.spec.dx, m.spec.dy);
        else
          return m.length_scale;
      },
      v_);
}

// ---------------------------------------------------------------------------
// Analytic fields

double double_gyre_stream_nd(const Vec2& p, double t, const DoubleGyreParams& g) {
  const double a = g.epsilon * std::sin(g.omega * t);
  const double b = 1.0 - 2.0 * a;
  const double f = a * p.x() * p.x() + b * p.x();
  return g.amplitude * std::sin(kPi * f) * std::sin(kPi * p.y());
}

Vec2 double_gyre_velocity_nd(const Vec2& p, double t, const DoubleGyreParams& g) {
  const double a = g.epsilon * std::sin(g.omega * t);
  const double b = 1.0 - 2.0 * a;
  const double f = a * p.x() * p.x() + b * p.x();
  const double dfdx = 2.0 * a * p.x() + b;
  return {-kPi * g.amplitude * std::sin(kPi * f) * std::cos(kPi * p.y()),
          kPi * g.amplitude * std::cos(kPi * f) * std::sin(kPi * p.y()) * dfdx};
}

double meander_jet_stream_nd(const Vec2& p, double t, const MeanderJetParams& j) {
  const double B = j.mean_amplitude + j.meander_eps * std::cos(j.meander_omega * t);
  const double th = j.wavenumber * (p.x() - j.phase_speed * t);
  const double c = std::cos(th);
  const double D = std::sqrt(1.0 + j.wavenumber * j.wavenumber * B * B * c * c);
  return 1.0 - std::tanh((p.y() - B * std::sin(th)) / D);
}

Vec2 meander_jet_velocity_nd(const Vec2& p, double t, const MeanderJetParams& j) {
  const double k = j.wavenumber;
  const double B = j.mean_amplitude + j.meander_eps * std::cos(j.meander_omega * t);
  const double th = k * (p.x() - j.phase_speed * t);
  const double c = std::cos(th), s = std::sin(th);
  const double D2 = 1.0 + k * k * B * B * c * c;
  const double D = std::sqrt(D2);
  const double dy = p.y() - B * s;
  const double eta = dy / D;
  const double ch = std::cosh(eta);
  // cosh overflows long before sech^2 stops being representable as zero
  const double sech2 = std::isfinite(ch) ? 1.0 / (ch * ch) : 0.0;
  // d(eta)/dx = -B k c / D + dy k^3 B^2 c s / D^3
  const double deta_dx = -B * k * c / D + dy * k * k * k * B * B * c * s / (D2 * D);
  return {sech2 / D, -sech2 * deta_dx};
}

// ---------------------------------------------------------------------------
// Grid interpolation

namespace {

struct Axis {
  std::size_t i0;
  double w;  // weight of node i0 + 1
};

// Locates fractional coordinate f on an axis with n nodes. Coordinates within
// a hair of a node snap onto it so that sampling at a knot returns the stored
// value bit-for-bit.
Axis locate(double f, std::size_t n, DomainPolicy policy, const char* axis) {
  const double r = std::round(f);
  if (std::abs(f - r) <= 1e-9 * std::max(1.0, std::abs(f))) f = r;
  const double hi = static_cast<double>(n - 1);
  if (f < 0.0 || f > hi || !std::isfinite(f)) {
    if (policy == DomainPolicy::Error) {
      std::ostringstream os;
      os << "grid query outside " << axis << " range (index " << f << " of [0, " << hi << "])";
      fail(ErrorCode::OutOfDomain, os.str());
    }
    f = std::clamp(std::isfinite(f) ? f : 0.0, 0.0, hi);
  }
  if (n == 1) return {0, 0.0};
  std::size_t i0 = static_cast<std::size_t>(std::floor(f));
  if (i0 >= n - 1) i0 = n - 2;
  return {i0, f - static_cast<double>(i0)};
}

struct Stencil {
  Axis x, y, t;
};

Stencil stencil(const GridFlowMap& g, const Vec2& p, double t, DomainPolicy policy) {
  const GridSpec& s = g.spec;
  return {locate((p.x() - s.origin.x()) / s.dx, s.nx, policy, "x"),
          locate((p.y() - s.origin.y()) / s.dy, s.ny, policy, "y"),
          locate((t - s.t0) / s.dt, s.nt, policy, "t")};
}

Vec2 bilinear(const GridFlowMap& g, std::size_t it, const Axis& ax, const Axis& ay) {
  const std::size_t i00 = g.index(it, ay.i0, ax.i0);
  const std::size_t i01 = i00 + 1;
  const std::size_t i10 = i00 + g.spec.nx;
  const std::size_t i11 = i10 + 1;
  const double w00 = (1.0 - ax.w) * (1.0 - ay.w), w01 = ax.w * (1.0 - ay.w);
  const double w10 = (1.0 - ax.w) * ay.w, w11 = ax.w * ay.w;
  return {w00 * g.u[i00] + w01 * g.u[i01] + w10 * g.u[i10] + w11 * g.u[i11],
          w00 * g.v[i00] + w01 * g.v[i01] + w10 * g.v[i10] + w11 * g.v[i11]};
}

Mat2 bilinear_gradient(const GridFlowMap& g, std::size_t it, const Axis& ax, const Axis& ay) {
  const std::size_t i00 = g.index(it, ay.i0, ax.i0);
  const std::size_t i01 = i00 + 1;
  const std::size_t i10 = i00 + g.spec.nx;
  const std::size_t i11 = i10 + 1;
  Mat2 m;
  auto row = [&](const std::vector<double>& f, int r) {
    m(r, 0) = ((1.0 - ay.w) * (f[i01] - f[i00]) + ay.w * (f[i11] - f[i10])) / g.spec.dx;
    m(r, 1) = ((1.0 - ax.w) * (f[i10] - f[i00]) + ax.w * (f[i11] - f[i01])) / g.spec.dy;
  };
  row(g.u, 0);
  row(g.v, 1);
  return m;
}

}  // namespace

Vec2 grid_sample(const GridFlowMap& g, const Vec2& p, double t, DomainPolicy policy) {
  const Stencil st = stencil(g, p, t, policy);
  const Vec2 a = bilinear(g, st.t.i0, st.x, st.y);
  if (g.spec.nt == 1 || st.t.w == 0.0) return a;
  const Vec2 b = bilinear(g, st.t.i0 + 1, st.x, st.y);
  if (st.t.w == 1.0) return b;
  return (1.0 - st.t.w) * a + st.t.w * b;
}

Mat2 grid_gradient(const GridFlowMap& g, const Vec2& p, double t, DomainPolicy policy) {
  const Stencil st = stencil(g, p, t, policy);
  const Mat2 a = bilinear_gradient(g, st.t.i0, st.x, st.y);
  if (g.spec.nt == 1 || st.t.w == 0.0) return a;
  return (1.0 - st.t.w) * a + st.t.w * bilinear_gradient(g, st.t.i0 + 1, st.x, st.y);
}

Vec2 flow_velocity(const FlowMap& map, const Vec2& p, double t, DomainPolicy policy) {
  return std::visit(
      [&](const auto& m) -> Vec2 {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, GridFlowMap>) {
          return grid_sample(m, p, t, policy);
        } else if constexpr (std::is_same_v<T, DoubleGyreParams>) {
          return m.velocity_scale *
                 double_gyre_velocity_nd((p - m.origin) / m.length_scale, t / m.time_scale(), m);
        } else {
          return m.velocity_scale *
                 meander_jet_velocity_nd((p - m.origin) / m.length_scale, t / m.time_scale, m);
        }
      },
      map.variant());
}

Mat2 flow_gradient(const FlowMap& map, const Vec2& p, double t, std::optional<double> h,
                   DomainPolicy policy) {
  const double step = h ? *h : (map.is_grid() ? 0.01 : 1e-4) * map.length_scale();
  if (!(step > 0.0)) fail(ErrorCode::InvalidArgument, "flow_gradient: step must be > 0");
  const Vec2 ex{step, 0.0}, ey{0.0, step};
  Mat2 m;
  m.col(0) = (flow_velocity(map, p + ex, t, policy) - flow_velocity(map, p - ex, t, policy)) / (2.0 * step);
  m.col(1) = (flow_velocity(map, p + ey, t, policy) - flow_velocity(map, p - ey, t, policy)) / (2.0 * step);
  return m;
}

GridFlowMap rasterize(const FlowMap& map, const GridSpec& spec) {
  spec.validate();
  GridFlowMap g;
  g.spec = spec;
  const std::size_t n = spec.nx * spec.ny * spec.nt;
  g.u.resize(n);
  g.v.resize(n);
  for (std::size_t it = 0; it < spec.nt; ++it) {
    const double t = spec.t0 + static_cast<double>(it) * spec.dt;
    for (std::size_t iy = 0; iy < spec.ny; ++iy) {
      for (std::size_t ix = 0; ix < spec.nx; ++ix) {
        const Vec2 p{spec.origin.x() + static_cast<double>(ix) * spec.dx,
                     spec.origin.y() + static_cast<double>(iy) * spec.dy};
        const Vec2 w = flow_velocity(map, p, t, DomainPolicy::Clamp);
        const std::size_t k = g.index(it, iy, ix);
        g.u[k] = w.x();
        g.v[k] = w.y();
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// FGM v1 container

namespace {

[[noreturn]] void parse_fail(const std::string& path, int line, const std::string& msg) {
  std::ostringstream os;
  os << path << ":" << line << ": " << msg;
  fail(ErrorCode::ParseError, os.str());
}

std::uint64_t to_le(std::uint64_t x) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((x >> (8 * i)) & 0xffULL) << (8 * (7 - i));
    return r;
  }
  return x;
}

}  // namespace

void save_fgm(const GridFlowMap& grid, const std::string& path, FgmEncoding encoding) {
  grid.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot open " + path + " for writing");
  const GridSpec& s = grid.spec;
  out << std::setprecision(17);
  out << "FGM 1\n";
  out << s.origin.x() << ' ' << s.origin.y() << ' ' << s.dx << ' ' << s.dy << ' ' << s.nx << ' ' << s.ny << '\n';
  out << s.t0 << ' ' << s.dt << ' ' << s.nt << '\n';
  const std::size_t layer = s.nx * s.ny;
  if (encoding == FgmEncoding::Binary) {
    out << "binary\n";
    auto put = [&](double d) {
      const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(d));
      char buf[8];
      std::memcpy(buf, &bits, 8);
      out.write(buf, 8);
    };
    for (std::size_t it = 0; it < s.nt; ++it) {
      for (std::size_t k = 0; k < layer; ++k) put(grid.u[it * layer + k]);
      for (std::size_t k = 0; k < layer; ++k) put(grid.v[it * layer + k]);
    }
  } else {
    out << "ascii\n";
    for (std::size_t k = 0; k < grid.u.size(); ++k) out << grid.u[k] << ' ' << grid.v[k] << '\n';
  }
  if (!out) fail(ErrorCode::IoError, "write failed for " + path);
}

GridFlowMap load_fgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);

  std::string line;
  auto next = [&](int lineno) -> std::istringstream {
    if (!std::getline(in, line)) parse_fail(path, lineno, "unexpected end of file in header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return std::istringstream(line);
  };

  {
    auto ls = next(1);
    std::string magic;
    int version = 0;
    if (!(ls >> magic >> version) || magic != "FGM" || version != 1)
      parse_fail(path, 1, "expected 'FGM 1', got '" + line + "'");
  }
  GridSpec s;
  {
    auto ls = next(2);
    double ox, oy;
    long long nx, ny;
    if (!(ls >> ox >> oy >> s.dx >> s.dy >> nx >> ny))
      parse_fail(path, 2, "expected 'origin_x origin_y dx dy nx ny'");
    if (nx < 2 || ny < 2) parse_fail(path, 2, "nx and ny must be >= 2");
    if (!(s.dx > 0.0 && s.dy > 0.0)) parse_fail(path, 2, "dx and dy must be > 0");
    s.origin = {ox, oy};
    s.nx = static_cast<std::size_t>(nx);
    s.ny = static_cast<std::size_t>(ny);
  }
  {
    auto ls = next(3);
    long long nt;
    if (!(ls >> s.t0 >> s.dt >> nt)) parse_fail(path, 3, "expected 't0 dt nt'");
    if (nt < 1) parse_fail(path, 3, "nt must be >= 1");
    if (!(s.dt > 0.0)) parse_fail(path, 3, "dt must be > 0");
    s.nt = static_cast<std::size_t>(nt);
  }
  std::string enc;
  {
    auto ls = next(4);
    ls >> enc;
    if (enc != "binary" && enc != "ascii") parse_fail(path, 4, "expected 'binary' or 'ascii', got '" + line + "'");
  }

  GridFlowMap g;
  g.spec = s;
  const std::size_t layer = s.nx * s.ny;
  const std::size_t expected = layer * s.nt;
  g.u.resize(expected);
  g.v.resize(expected);

  if (enc == "binary") {
    const std::streamoff payload_start = in.tellg();
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % 8 != 0) {
      std::ostringstream os;
      os << "truncated binary payload: " << bytes.size() << " bytes at offset " << payload_start
         << " is not a whole number of float64 values";
      parse_fail(path, 5, os.str());
    }
    if (bytes.size() != expected * 16) {
      std::ostringstream os;
      os << path << ": header declares " << s.nt << "x" << s.ny << "x" << s.nx << " = " << expected
         << " (u,v) pairs but payload holds " << bytes.size() / 8 << " values";
      fail(ErrorCode::DimensionMismatch, os.str());
    }
    std::size_t off = 0;
    auto get = [&]() {
      std::uint64_t bits;
      std::memcpy(&bits, bytes.data() + off, 8);
      off += 8;
      return std::bit_cast<double>(to_le(bits));
    };
    for (std::size_t it = 0; it < s.nt; ++it) {
      for (std::size_t k = 0; k < layer; ++k) g.u[it * layer + k] = get();
      for (std::size_t k = 0; k < layer; ++k) g.v[it * layer + k] = get();
    }
  } else {
    std::size_t count = 0;
    int lineno = 4;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      std::istringstream ls(line);
      double u, v;
      if (!(ls >> u >> v)) parse_fail(path, lineno, "expected 'u v' pair, got '" + line + "'");
      if (count < expected) {
        g.u[count] = u;
        g.v[count] = v;
      }
      ++count;
    }
    if (count != expected) {
      std::ostringstream os;
      os << path << ": header declares " << expected << " (u,v) pairs but payload holds " << count;
      fail(ErrorCode::DimensionMismatch, os.str());
    }
  }
  for (std::size_t k = 0; k < expected; ++k)
    if (!std::isfinite(g.u[k]) || !std::isfinite(g.v[k])) parse_fail(path, 5, "non-finite velocity in payload");
  return g;
}

}  // namespace flownav
