#pragma once

#include "flownav/crlb.hpp"
#include "flownav/estimator.hpp"
#include "flownav/flowfields.hpp"
#include "flownav/turbulence.hpp"
#include "flownav/vehicle_sim.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace flownav {

enum class EstimatorKind { Mean, Map };

struct HeadingAiding {
  bool enabled = false;
  double sigma = 1e-3;    // rad
  double rate_hz = 1.0;
};

struct InitConfig {
  double pos_var = 1e6;      // m^2 per axis
  double vel_var = 1e-6;     // (m/s)^2
  double psi_var = 1e-8;     // rad^2
  double uc_var = -1.0;      // (m/s)^2; negative means use the turbulence variance
};

struct ScenarioConfig {
  std::string name = "scenario";
  std::uint64_t seed = 1;
  std::size_t runs = 20;

  FlowMap truth_flow = DoubleGyreParams{};
  std::optional<FlowMap> nav_map;          // defaults to truth_flow
  bool turbulence_enabled = true;
  KsParams turbulence;

  LawnmowerSpec trajectory;
  ImuParams imu = ImuParams::vn100();
  AdcpParams adcp = AdcpParams::rdi1200();

  std::size_t n_particles = 100;
  EstimatorKind estimator = EstimatorKind::Mean;
  MpfConfig mpf;                  // noise is filled from the sensors unless overridden
  std::optional<double> meas_sd;  // filter-side ADCP white SD override, m/s
  std::optional<double> sigma_u;  // filter-side turbulence SD override, m/s
  HeadingAiding heading;
  InitConfig init;

  std::filesystem::path output_dir = "out";

  const FlowMap& map() const { return nav_map ? *nav_map : truth_flow; }
  /// Filter noise model derived from the sensor and turbulence settings.
  NoiseConfig filter_noise() const;
  void validate() const;
};

/// Parses a JSON scenario. Relative paths resolve against base_dir. Any schema
/// violation raises ErrorCode::ConfigError.
ScenarioConfig parse_scenario(const std::string& json_text, const std::filesystem::path& base_dir = ".");
ScenarioConfig load_scenario(const std::filesystem::path& path);

/// KS parameters from a standalone JSON object (turbulence keys plus "seed").
KsParams parse_ks_params(const std::string& json_text);

/// Single time layer of a KS field sampled on a grid.
GridFlowMap ks_snapshot(const KsField& field, GridSpec spec, double t);

/// One record per ADCP tick.
struct TickRecord {
  double t = 0.0;
  double distance = 0.0;  // cumulative path length, m
  Vec2 truth_p = Vec2::Zero(), truth_v = Vec2::Zero();
  double truth_psi = 0.0;
  Vec2 dr_p = Vec2::Zero(), dr_v = Vec2::Zero();
  Vec2 ekf_p = Vec2::Zero(), ekf_v = Vec2::Zero();
  Estimate mpf;
  Mat2 pos_cov = Mat2::Zero();
  double neff = 0.0;
  bool diverged = false;
};

struct RunResult {
  std::size_t run = 0;
  std::vector<TickRecord> ticks;
  double distance = 0.0;
  double dr_error = 0.0, ekf_error = 0.0, mpf_error = 0.0;  // terminal, m
  double dr_udt = 0.0, ekf_udt = 0.0, mpf_udt = 0.0;
  bool diverged = false;
  std::size_t weight_collapses = 0;
  std::size_t resamples = 0, mutations = 0;
};

/// Truth shared by every run of a scenario.
std::vector<TruthRecord> scenario_truth(const ScenarioConfig& cfg);

RunResult run_scenario(const ScenarioConfig& cfg, std::size_t run_index);
RunResult run_scenario(const ScenarioConfig& cfg, std::size_t run_index, const std::vector<TruthRecord>& truth);

double compute_udt(double error, double distance);

/// Cumulative path length at every truth record.
std::vector<double> path_length(const std::vector<TruthRecord>& truth);

struct RunSummary {
  std::size_t run = 0;
  double distance = 0.0;
  double dr_error = 0.0, ekf_error = 0.0, mpf_error = 0.0;
  double dr_udt = 0.0, ekf_udt = 0.0, mpf_udt = 0.0;
  bool diverged = false;
  std::size_t weight_collapses = 0, resamples = 0, mutations = 0;
};

struct Aggregate {
  std::vector<double> t, rmse_px, rmse_py, rmse_pos, rmse_vel, two_sigma_pos, crlb_pos, crlb_vel;
  std::vector<RunSummary> runs;
  double mean_udt = 0.0, mean_dr_udt = 0.0, mean_ekf_udt = 0.0;
  double mean_error = 0.0, mean_dr_error = 0.0, mean_ekf_error = 0.0;
  double divergence_rate = 0.0;
  double nees_in_band = 0.0;  // fraction of ticks after the first hour

  std::size_t size() const { return t.size(); }
};

/// CRLB of the scenario sampled at ADCP ticks: {t, sd_px, sd_py, sd_vx, sd_vy, sd_psi}.
struct CrlbTable {
  std::vector<double> t;
  std::vector<std::array<double, 5>> sd;
};
CrlbTable scenario_crlb(const ScenarioConfig& cfg, const std::vector<TruthRecord>& truth);

/// Runs cfg.runs (or n_runs) Monte Carlo runs on `jobs` threads. Results do not
/// depend on jobs.
Aggregate monte_carlo(const ScenarioConfig& cfg, std::size_t n_runs, std::size_t jobs = 1);

void write_estimate_csv(const RunResult& r, const std::filesystem::path& path);
void write_aggregate_csv(const Aggregate& a, const std::filesystem::path& path);
Aggregate read_aggregate_csv(const std::filesystem::path& path);
void write_runs_csv(const Aggregate& a, const std::filesystem::path& path);
void write_crlb_csv(const CrlbTable& c, const std::filesystem::path& path);
std::string aggregate_summary_json(const ScenarioConfig& cfg, const Aggregate& a);

struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
};

/// Minimal line chart; returns the number of series drawn.
std::size_t write_svg_plot(const std::vector<PlotSeries>& series, const std::string& title,
                           const std::string& x_label, const std::string& y_label,
                           const std::filesystem::path& path);

/// Aggregate columns selected by name, hours on the x axis.
std::vector<PlotSeries> aggregate_series(const Aggregate& a, const std::vector<std::string>& channels);

}  // namespace flownav
