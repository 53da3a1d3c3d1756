#ifndef FLOWNAV_H
#define FLOWNAV_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  ifdef FLOWNAV_BUILDING
#    define FLOWNAV_API __declspec(dllexport)
#  else
#    define FLOWNAV_API __declspec(dllimport)
#  endif
#else
#  define FLOWNAV_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fn_status {
  FN_OK = 0,
  FN_INVALID_ARGUMENT = 1,
  FN_OUT_OF_DOMAIN = 2,
  FN_PARSE_ERROR = 3,
  FN_DIMENSION_MISMATCH = 4,
  FN_SPEC_INFEASIBLE = 5,
  FN_NUMERICAL_BREAKDOWN = 6,
  FN_ALL_WEIGHTS_ZERO = 7,
  FN_CONFIG_ERROR = 8,
  FN_IO_ERROR = 9,
  FN_SINGULAR_INNOVATION = 10,
  FN_INTERNAL = 99
} fn_status;

typedef struct fn_flowmap fn_flowmap;
typedef struct fn_ks fn_ks;
typedef struct fn_scenario fn_scenario;
typedef struct fn_aggregate fn_aggregate;

typedef struct fn_grid_spec {
  double origin_x, origin_y;
  double dx, dy;
  size_t nx, ny;
  double t0, dt;
  size_t nt;
} fn_grid_spec;

typedef struct fn_run_summary {
  double distance_m;
  double mpf_error_m, ekf_error_m, dr_error_m;
  double mpf_udt, ekf_udt, dr_udt;
  int diverged;
} fn_run_summary;

typedef struct fn_mc_summary {
  size_t runs;
  double mean_udt, mean_ekf_udt, mean_dr_udt;
  double mean_error_m, mean_ekf_error_m, mean_dr_error_m;
  double divergence_rate;
  double nees_in_band;
  double final_rmse_pos_m, final_crlb_pos_m;
} fn_mc_summary;

FLOWNAV_API const char* fn_version(void);
FLOWNAV_API const char* fn_status_string(fn_status s);
/* Message of the last failure on the calling thread; empty after success. */
FLOWNAV_API const char* fn_last_error(void);

/* Flow maps */
FLOWNAV_API fn_status fn_flowmap_load_fgm(const char* path, fn_flowmap** out);
FLOWNAV_API fn_status fn_flowmap_save_fgm(const fn_flowmap* map, const char* path, int ascii);
FLOWNAV_API fn_status fn_flowmap_rasterize(const fn_flowmap* map, const fn_grid_spec* spec, fn_flowmap** out);
FLOWNAV_API fn_status fn_flowmap_velocity(const fn_flowmap* map, double x, double y, double t,
                                          double* u, double* v);
FLOWNAV_API fn_status fn_flowmap_grid_spec(const fn_flowmap* map, fn_grid_spec* out);
FLOWNAV_API void fn_flowmap_free(fn_flowmap* map);

/* Kinematic-simulation turbulence */
FLOWNAV_API fn_status fn_ks_from_json(const char* params_json, fn_ks** out);
FLOWNAV_API fn_status fn_ks_velocity(const fn_ks* ks, double x, double y, double t, double* u, double* v);
/* Writes the mode table as JSON. If buf is too small, *needed holds the size
   including the terminator and FN_INVALID_ARGUMENT is returned. */
FLOWNAV_API fn_status fn_ks_to_json(const fn_ks* ks, char* buf, size_t cap, size_t* needed);
FLOWNAV_API fn_status fn_ks_snapshot(const fn_ks* ks, const fn_grid_spec* spec, double t, fn_flowmap** out);
FLOWNAV_API void fn_ks_free(fn_ks* ks);

/* Scenarios */
FLOWNAV_API fn_status fn_scenario_load(const char* path, fn_scenario** out);
FLOWNAV_API fn_status fn_scenario_set_seed(fn_scenario* sc, uint64_t seed);
FLOWNAV_API fn_status fn_scenario_set_output_dir(fn_scenario* sc, const char* dir);
FLOWNAV_API fn_status fn_scenario_output_dir(const fn_scenario* sc, char* buf, size_t cap, size_t* needed);
FLOWNAV_API fn_status fn_scenario_runs(const fn_scenario* sc, size_t* runs);
/* Navigation map of the scenario (a copy). */
FLOWNAV_API fn_status fn_scenario_map(const fn_scenario* sc, fn_flowmap** out);
FLOWNAV_API void fn_scenario_free(fn_scenario* sc);

/* One run; writes the per-tick estimate CSV when estimate_csv is non-null. */
FLOWNAV_API fn_status fn_simulate(const fn_scenario* sc, size_t run, const char* estimate_csv,
                                  fn_run_summary* out);
FLOWNAV_API fn_status fn_crlb(const fn_scenario* sc, const char* csv_path);

FLOWNAV_API fn_status fn_montecarlo(const fn_scenario* sc, size_t runs, size_t jobs, fn_aggregate** out);
FLOWNAV_API fn_status fn_aggregate_summary(const fn_aggregate* a, fn_mc_summary* out);
FLOWNAV_API fn_status fn_aggregate_write(const fn_aggregate* a, const fn_scenario* sc, const char* dir);
FLOWNAV_API void fn_aggregate_free(fn_aggregate* a);

/* Line chart of aggregate CSV columns; channels is comma separated, NULL for
   rmse_pos,two_sigma_pos,crlb_pos. */
FLOWNAV_API fn_status fn_plot(const char* aggregate_csv, const char* svg_path, const char* channels);

#ifdef __cplusplus
}
#endif

#endif
