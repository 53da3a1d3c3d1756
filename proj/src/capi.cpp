#include "flownav/flownav.h"

#include "flownav/harness.hpp"

#include <cstring>
#include <fstream>
#include <new>
#include <sstream>
#include <string>

using namespace flownav;

struct fn_flowmap {
  FlowMap map;
};
struct fn_ks {
  KsField field;
};
struct fn_scenario {
  ScenarioConfig cfg;
};
struct fn_aggregate {
  Aggregate agg;
};

namespace {

thread_local std::string g_last_error;

template <class F>
fn_status guard(F&& f) {
  try {
    f();
    g_last_error.clear();
    return FN_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return static_cast<fn_status>(static_cast<int>(e.code()));
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown error";
  }
  return FN_INTERNAL;
}

void need(const void* p, const char* what) {
  if (!p) fail(ErrorCode::InvalidArgument, std::string(what) + " is null");
}

GridSpec to_spec(const fn_grid_spec& s) {
  GridSpec g;
  g.origin = {s.origin_x, s.origin_y};
  g.dx = s.dx;
  g.dy = s.dy;
  g.nx = s.nx;
  g.ny = s.ny;
  g.t0 = s.t0;
  g.dt = s.dt;
  g.nt = s.nt;
  return g;
}

void copy_out(const std::string& s, char* buf, std::size_t cap, std::size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (!buf || cap < s.size() + 1) fail(ErrorCode::InvalidArgument, "buffer too small");
  std::memcpy(buf, s.c_str(), s.size() + 1);
}

}  // namespace

extern "C" {

const char* fn_version(void) { return "1.0.0"; }

const char* fn_status_string(fn_status s) {
  if (s == FN_OK) return "ok";
  if (s == FN_INTERNAL) return "internal error";
  if (s >= FN_INVALID_ARGUMENT && s <= FN_SINGULAR_INNOVATION) return to_string(static_cast<ErrorCode>(s));
  return "unknown status";
}

const char* fn_last_error(void) { return g_last_error.c_str(); }

fn_status fn_flowmap_load_fgm(const char* path, fn_flowmap** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new fn_flowmap{FlowMap(load_fgm(path))};
  });
}

fn_status fn_flowmap_save_fgm(const fn_flowmap* map, const char* path, int ascii) {
  return guard([&] {
    need(map, "map");
    need(path, "path");
    const GridFlowMap* g = map->map.grid();
    if (!g) fail(ErrorCode::InvalidArgument, "only grid maps can be saved");
    save_fgm(*g, path, ascii ? FgmEncoding::Ascii : FgmEncoding::Binary);
  });
}

fn_status fn_flowmap_rasterize(const fn_flowmap* map, const fn_grid_spec* spec, fn_flowmap** out) {
  return guard([&] {
    need(map, "map");
    need(spec, "spec");
    need(out, "out");
    *out = new fn_flowmap{FlowMap(rasterize(map->map, to_spec(*spec)))};
  });
}

fn_status fn_flowmap_velocity(const fn_flowmap* map, double x, double y, double t, double* u, double* v) {
  return guard([&] {
    need(map, "map");
    need(u, "u");
    need(v, "v");
    const Vec2 w = flow_velocity(map->map, {x, y}, t);
    *u = w.x();
    *v = w.y();
  });
}

fn_status fn_flowmap_grid_spec(const fn_flowmap* map, fn_grid_spec* out) {
  return guard([&] {
    need(map, "map");
    need(out, "out");
    const GridFlowMap* g = map->map.grid();
    if (!g) fail(ErrorCode::InvalidArgument, "map is analytic");
    const GridSpec& s = g->spec;
    *out = {s.origin.x(), s.origin.y(), s.dx, s.dy, s.nx, s.ny, s.t0, s.dt, s.nt};
  });
}

void fn_flowmap_free(fn_flowmap* map) { delete map; }

fn_status fn_ks_from_json(const char* params_json, fn_ks** out) {
  return guard([&] {
    need(params_json, "params_json");
    need(out, "out");
    *out = new fn_ks{build_ks(parse_ks_params(params_json))};
  });
}

fn_status fn_ks_velocity(const fn_ks* ks, double x, double y, double t, double* u, double* v) {
  return guard([&] {
    need(ks, "ks");
    need(u, "u");
    need(v, "v");
    const Vec2 w = ks_velocity(ks->field, {x, y}, t);
    *u = w.x();
    *v = w.y();
  });
}

fn_status fn_ks_to_json(const fn_ks* ks, char* buf, size_t cap, size_t* needed) {
  return guard([&] {
    need(ks, "ks");
    copy_out(ks_to_json(ks->field), buf, cap, needed);
  });
}

fn_status fn_ks_snapshot(const fn_ks* ks, const fn_grid_spec* spec, double t, fn_flowmap** out) {
  return guard([&] {
    need(ks, "ks");
    need(spec, "spec");
    need(out, "out");
    *out = new fn_flowmap{FlowMap(ks_snapshot(ks->field, to_spec(*spec), t))};
  });
}

void fn_ks_free(fn_ks* ks) { delete ks; }

fn_status fn_scenario_load(const char* path, fn_scenario** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new fn_scenario{load_scenario(path)};
  });
}

fn_status fn_scenario_set_seed(fn_scenario* sc, uint64_t seed) {
  return guard([&] {
    need(sc, "scenario");
    sc->cfg.seed = seed;
  });
}

fn_status fn_scenario_set_output_dir(fn_scenario* sc, const char* dir) {
  return guard([&] {
    need(sc, "scenario");
    need(dir, "dir");
    sc->cfg.output_dir = dir;
  });
}

fn_status fn_scenario_output_dir(const fn_scenario* sc, char* buf, size_t cap, size_t* needed) {
  return guard([&] {
    need(sc, "scenario");
    copy_out(sc->cfg.output_dir.string(), buf, cap, needed);
  });
}

fn_status fn_scenario_runs(const fn_scenario* sc, size_t* runs) {
  return guard([&] {
    need(sc, "scenario");
    need(runs, "runs");
    *runs = sc->cfg.runs;
  });
}

fn_status fn_scenario_map(const fn_scenario* sc, fn_flowmap** out) {
  return guard([&] {
    need(sc, "scenario");
    need(out, "out");
    *out = new fn_flowmap{sc->cfg.map()};
  });
}

void fn_scenario_free(fn_scenario* sc) { delete sc; }

fn_status fn_simulate(const fn_scenario* sc, size_t run, const char* estimate_csv, fn_run_summary* out) {
  return guard([&] {
    need(sc, "scenario");
    const RunResult r = run_scenario(sc->cfg, run);
    if (estimate_csv) write_estimate_csv(r, estimate_csv);
    if (out)
      *out = {r.distance, r.mpf_error, r.ekf_error, r.dr_error, r.mpf_udt, r.ekf_udt, r.dr_udt, r.diverged ? 1 : 0};
  });
}

fn_status fn_crlb(const fn_scenario* sc, const char* csv_path) {
  return guard([&] {
    need(sc, "scenario");
    need(csv_path, "csv_path");
    write_crlb_csv(scenario_crlb(sc->cfg, scenario_truth(sc->cfg)), csv_path);
  });
}

fn_status fn_montecarlo(const fn_scenario* sc, size_t runs, size_t jobs, fn_aggregate** out) {
  return guard([&] {
    need(sc, "scenario");
    need(out, "out");
    *out = new fn_aggregate{monte_carlo(sc->cfg, runs ? runs : sc->cfg.runs, jobs ? jobs : 1)};
  });
}

fn_status fn_aggregate_summary(const fn_aggregate* a, fn_mc_summary* out) {
  return guard([&] {
    need(a, "aggregate");
    need(out, "out");
    const Aggregate& g = a->agg;
    *out = {g.runs.size(), g.mean_udt, g.mean_ekf_udt, g.mean_dr_udt, g.mean_error, g.mean_ekf_error,
            g.mean_dr_error, g.divergence_rate, g.nees_in_band,
            g.size() ? g.rmse_pos.back() : 0.0, g.size() ? g.crlb_pos.back() : 0.0};
  });
}

fn_status fn_aggregate_write(const fn_aggregate* a, const fn_scenario* sc, const char* dir) {
  return guard([&] {
    need(a, "aggregate");
    need(sc, "scenario");
    const std::filesystem::path d = dir ? std::filesystem::path(dir) : sc->cfg.output_dir;
    write_aggregate_csv(a->agg, d / "aggregate.csv");
    write_runs_csv(a->agg, d / "runs.csv");
    std::ofstream js(d / "summary.json");
    if (!js) fail(ErrorCode::IoError, "cannot write summary.json");
    js << aggregate_summary_json(sc->cfg, a->agg) << '\n';
  });
}

void fn_aggregate_free(fn_aggregate* a) { delete a; }

fn_status fn_plot(const char* aggregate_csv, const char* svg_path, const char* channels) {
  return guard([&] {
    need(aggregate_csv, "aggregate_csv");
    need(svg_path, "svg_path");
    std::vector<std::string> ch;
    std::stringstream ss(channels ? channels : "rmse_pos,two_sigma_pos,crlb_pos");
    for (std::string c; std::getline(ss, c, ',');)
      if (!c.empty()) ch.push_back(c);
    const Aggregate a = read_aggregate_csv(aggregate_csv);
    write_svg_plot(aggregate_series(a, ch), "Position error", "time (h)", "m", svg_path);
  });
}

}  // extern "C"
