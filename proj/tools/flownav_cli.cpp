// Command-line front end over the flownav C API.
#include "flownav/flownav.h"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

struct CliError {
  int code;
};

void check(fn_status s) {
  if (s == FN_OK) return;
  std::fprintf(stderr, "flownav: %s: %s\n", fn_status_string(s), fn_last_error());
  throw CliError{s == FN_CONFIG_ERROR || s == FN_PARSE_ERROR ? kExitConfig : kExitFailure};
}

std::string output_dir(const fn_scenario* sc) {
  std::size_t n = 0;
  fn_scenario_output_dir(sc, nullptr, 0, &n);
  std::string s(n, '\0');
  check(fn_scenario_output_dir(sc, s.data(), n, &n));
  s.resize(n - 1);
  return s;
}

// Loads a scenario and applies FLOWNAV_SEED / --out overrides.
fn_scenario* open_scenario(const std::string& path, const std::string& out_dir) {
  fn_scenario* sc = nullptr;
  check(fn_scenario_load(path.c_str(), &sc));
  if (const char* env = std::getenv("FLOWNAV_SEED"); env && *env) {
    char* end = nullptr;
    const unsigned long long seed = std::strtoull(env, &end, 10);
    if (*end != '\0') {
      fn_scenario_free(sc);
      std::fprintf(stderr, "flownav: FLOWNAV_SEED must be an unsigned integer\n");
      throw CliError{kExitConfig};
    }
    check(fn_scenario_set_seed(sc, seed));
  }
  if (!out_dir.empty()) check(fn_scenario_set_output_dir(sc, out_dir.c_str()));
  return sc;
}

struct ScenarioHandle {
  fn_scenario* p;
  ~ScenarioHandle() { fn_scenario_free(p); }
};
struct MapHandle {
  fn_flowmap* p = nullptr;
  ~MapHandle() { fn_flowmap_free(p); }
};

struct GridOpts {
  std::vector<double> origin{0.0, 0.0};
  double dx = 0.0, dy = 0.0;
  std::size_t nx = 0, ny = 0;
  double t0 = 0.0, dt = 3600.0;
  std::size_t nt = 1;

  void add(CLI::App* app, bool with_time) {
    app->add_option("--origin", origin, "grid origin x y (m)")->expected(2);
    app->add_option("--dx", dx, "cell size along x (m)");
    app->add_option("--dy", dy, "cell size along y (m)");
    app->add_option("--nx", nx, "nodes along x");
    app->add_option("--ny", ny, "nodes along y");
    if (with_time) {
      app->add_option("--t0", t0, "first time knot (s)");
      app->add_option("--dt", dt, "time knot spacing (s)");
      app->add_option("--nt", nt, "number of time knots");
    }
  }
  bool given() const { return nx > 0 || ny > 0; }
  fn_grid_spec spec() const {
    return {origin[0], origin[1], dx, dy > 0.0 ? dy : dx, nx, ny > 0 ? ny : nx, t0, dt, nt};
  }
};

int cmd_simulate(const std::string& cfg, std::size_t run, const std::string& out, bool strict) {
  ScenarioHandle sc{open_scenario(cfg, "")};
  const std::string csv =
      out.empty() ? (std::filesystem::path(output_dir(sc.p)) / ("estimate_run" + std::to_string(run) + ".csv")).string()
                  : out;
  fn_run_summary s{};
  check(fn_simulate(sc.p, run, csv.c_str(), &s));
  std::printf("run %zu: distance %.1f m\n", run, s.distance_m);
  std::printf("  terminal error  mpf %.1f m  ekf %.1f m  dr %.1f m\n", s.mpf_error_m, s.ekf_error_m, s.dr_error_m);
  std::printf("  terminal UDT    mpf %.4f  ekf %.4f  dr %.4f\n", s.mpf_udt, s.ekf_udt, s.dr_udt);
  std::printf("  diverged %s\n  estimate %s\n", s.diverged ? "yes" : "no", csv.c_str());
  return strict && s.diverged ? kExitDiverged : kExitOk;
}

int cmd_montecarlo(const std::string& cfg, std::optional<std::size_t> runs, std::size_t jobs, const std::string& out,
                   bool strict, bool plot) {
  ScenarioHandle sc{open_scenario(cfg, out)};
  std::size_t n = 0;
  check(fn_scenario_runs(sc.p, &n));
  if (runs) n = *runs;
  fn_aggregate* agg = nullptr;
  check(fn_montecarlo(sc.p, n, jobs, &agg));
  fn_mc_summary s{};
  const fn_status st1 = fn_aggregate_summary(agg, &s);
  const fn_status st2 = fn_aggregate_write(agg, sc.p, nullptr);
  fn_aggregate_free(agg);
  check(st1);
  check(st2);
  const std::filesystem::path dir = output_dir(sc.p);
  if (plot) {
    check(fn_plot((dir / "aggregate.csv").c_str(), (dir / "position_rmse.svg").c_str(), nullptr));
    check(fn_plot((dir / "aggregate.csv").c_str(), (dir / "velocity_rmse.svg").c_str(), "rmse_vel,crlb_vel"));
  }
  std::printf("%zu runs\n", s.runs);
  std::printf("  mean terminal UDT    mpf %.4f  ekf %.4f  dr %.4f\n", s.mean_udt, s.mean_ekf_udt, s.mean_dr_udt);
  std::printf("  mean terminal error  mpf %.1f m  ekf %.1f m  dr %.1f m\n", s.mean_error_m, s.mean_ekf_error_m,
              s.mean_dr_error_m);
  std::printf("  final rmse %.1f m  crlb %.1f m\n", s.final_rmse_pos_m, s.final_crlb_pos_m);
  std::printf("  divergence rate %.3f  nees in band %.3f\n", s.divergence_rate, s.nees_in_band);
  std::printf("  output %s\n", dir.c_str());
  return strict && s.divergence_rate > 0.0 ? kExitDiverged : kExitOk;
}

int cmd_crlb(const std::string& cfg, const std::string& out) {
  ScenarioHandle sc{open_scenario(cfg, "")};
  const std::string path = out.empty() ? (std::filesystem::path(output_dir(sc.p)) / "crlb.csv").string() : out;
  check(fn_crlb(sc.p, path.c_str()));
  std::printf("%s\n", path.c_str());
  return kExitOk;
}

int cmd_ksgen(const std::string& params, const std::string& out, const std::string& fgm, const GridOpts& grid,
              double t) {
  std::ifstream in(params);
  if (!in) {
    std::fprintf(stderr, "flownav: cannot open %s\n", params.c_str());
    return kExitConfig;
  }
  std::stringstream text;
  text << in.rdbuf();
  fn_ks* ks = nullptr;
  check(fn_ks_from_json(text.str().c_str(), &ks));
  std::size_t n = 0;
  fn_ks_to_json(ks, nullptr, 0, &n);
  std::string json(n, '\0');
  fn_status st = fn_ks_to_json(ks, json.data(), n, &n);
  json.resize(n - 1);
  MapHandle snap;
  if (st == FN_OK && !fgm.empty()) {
    if (!grid.given()) {
      fn_ks_free(ks);
      std::fprintf(stderr, "flownav: --fgm needs --nx/--ny/--dx\n");
      return kExitConfig;
    }
    const fn_grid_spec spec = grid.spec();
    st = fn_ks_snapshot(ks, &spec, t, &snap.p);
  }
  fn_ks_free(ks);
  check(st);
  if (snap.p) check(fn_flowmap_save_fgm(snap.p, fgm.c_str(), 0));
  if (out.empty()) {
    std::printf("%s\n", json.c_str());
  } else {
    std::ofstream f(out);
    if (!(f << json << '\n')) {
      std::fprintf(stderr, "flownav: cannot write %s\n", out.c_str());
      return kExitFailure;
    }
  }
  return kExitOk;
}

int cmd_rasterize(const std::string& cfg, const std::string& out, const GridOpts& grid, bool ascii) {
  ScenarioHandle sc{open_scenario(cfg, "")};
  MapHandle map;
  check(fn_scenario_map(sc.p, &map.p));
  fn_grid_spec existing{};
  const bool is_grid = fn_flowmap_grid_spec(map.p, &existing) == FN_OK;
  if (!grid.given() && !is_grid) {
    std::fprintf(stderr, "flownav: analytic map needs --nx/--ny/--dx\n");
    return kExitConfig;
  }
  MapHandle raster;
  if (grid.given()) {
    const fn_grid_spec spec = grid.spec();
    check(fn_flowmap_rasterize(map.p, &spec, &raster.p));
  }
  check(fn_flowmap_save_fgm(raster.p ? raster.p : map.p, out.c_str(), ascii ? 1 : 0));
  std::printf("%s\n", out.c_str());
  return kExitOk;
}

int cmd_plot(const std::string& csv, const std::string& out, const std::string& channels) {
  check(fn_plot(csv.c_str(), out.c_str(), channels.empty() ? nullptr : channels.c_str()));
  std::printf("%s\n", out.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Current-aided inertial navigation toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", fn_version());

  std::string cfg, out, fgm, channels, input;
  std::size_t run = 0, jobs = 1, runs_value = 0;
  bool strict = false, ascii = false, plot = false;
  double snapshot_t = 0.0;
  GridOpts grid;

  auto* sim = app.add_subcommand("simulate", "run one scenario realization");
  sim->add_option("config", cfg, "scenario JSON")->required()->check(CLI::ExistingFile);
  sim->add_option("--run", run, "run index");
  sim->add_option("-o,--output", out, "estimate CSV path");
  sim->add_flag("--strict", strict, "exit with 3 if the filter diverged");

  auto* mc = app.add_subcommand("montecarlo", "Monte Carlo evaluation");
  mc->add_option("config", cfg, "scenario JSON")->required()->check(CLI::ExistingFile);
  auto* runs_opt = mc->add_option("--runs", runs_value, "number of runs")->check(CLI::PositiveNumber);
  mc->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  mc->add_option("-o,--output", out, "output directory");
  mc->add_flag("--strict", strict, "exit with 3 if any run diverged");
  mc->add_flag("--plot", plot, "also write SVG plots");

  auto* cr = app.add_subcommand("crlb", "parametric CRLB along the scenario trajectory");
  cr->add_option("config", cfg, "scenario JSON")->required()->check(CLI::ExistingFile);
  cr->add_option("-o,--output", out, "CSV path");

  auto* ks = app.add_subcommand("ksgen", "build a turbulence field and dump its modes");
  ks->add_option("params", input, "KS parameter JSON")->required()->check(CLI::ExistingFile);
  ks->add_option("-o,--output", out, "mode JSON path (default stdout)");
  ks->add_option("--fgm", fgm, "also write a snapshot grid to this FGM file");
  ks->add_option("--t", snapshot_t, "snapshot time (s)");
  grid.add(ks, false);

  auto* ras = app.add_subcommand("rasterize", "write the scenario's navigation map as FGM");
  ras->add_option("config", cfg, "scenario JSON")->required()->check(CLI::ExistingFile);
  ras->add_option("-o,--output", out, "FGM path")->required();
  ras->add_flag("--ascii", ascii, "ASCII payload");
  grid.add(ras, true);

  auto* pl = app.add_subcommand("plot", "SVG chart of an aggregate CSV");
  pl->add_option("aggregate", input, "aggregate CSV")->required()->check(CLI::ExistingFile);
  pl->add_option("-o,--output", out, "SVG path")->required();
  pl->add_option("--channels", channels, "comma-separated columns");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (sim->parsed()) return cmd_simulate(cfg, run, out, strict);
    if (mc->parsed())
      return cmd_montecarlo(cfg, runs_opt->count() ? std::optional(runs_value) : std::nullopt, jobs, out, strict,
                            plot);
    if (cr->parsed()) return cmd_crlb(cfg, out);
    if (ks->parsed()) return cmd_ksgen(input, out, fgm, grid, snapshot_t);
    if (ras->parsed()) return cmd_rasterize(cfg, out, grid, ascii);
    if (pl->parsed()) return cmd_plot(input, out, channels);
  } catch (const CliError& e) {
    return e.code;
  }
  return kExitFailure;
}
