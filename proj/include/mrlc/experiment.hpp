#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrlc/ate.hpp"
#include "mrlc/frontend.hpp"
#include "mrlc/graph.hpp"
#include "mrlc/optimize.hpp"
#include "mrlc/oracle.hpp"
#include "mrlc/swarm.hpp"
#include "mrlc/world.hpp"

namespace mrlc {

/// Invalid or unreadable experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything that determines a run. `seed` drives the world and the oracle;
/// their own seed fields are overwritten.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  Formulation formulation = Formulation::kIndependentScales;
  SolverKind solver = SolverKind::kLevenbergMarquardt;
  ScaleInitMode scale_init = ScaleInitMode::kOdometryRatio;

  WorldConfig world;
  OracleConfig oracle;
  ConfidenceParams frontend;
  SolverConfig solver_config;
  GraphOptions graph_options;
  CommSchedule comm;
  bool final_rendezvous = true;
  std::size_t latent_bytes = kDefaultLatentBytes;

  /// Replay registrations from this table instead of the synthetic oracle.
  std::string registration_table;
  /// Directory for trajectories, graph, ledger and metrics; empty disables
  /// file output.
  std::string output_dir;
  /// Wall-clock solve time in the metrics. Off by default so that metrics
  /// files are reproducible byte for byte.
  bool record_timing = false;
  double ate_max_gap = 0.05;

  /// Throws ConfigError.
  void validate() const;
};

/// JSON text <-> config. Unknown keys and wrong types are ConfigErrors.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);

struct MetricsRow {
  std::string formulation;
  std::string solver;
  std::string scale_init;
  std::uint64_t seed = 0;
  double ate_m = 0.0;
  std::size_t n_loops = 0;
  std::optional<double> solve_ms;
  std::size_t bytes_total = 0;

  static std::string csv_header();
  std::string csv_row() const;
};

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);

struct ExperimentResult {
  MetricsRow metrics;
  World world;
  StampedTrajectories estimate;
  StampedTrajectories truth;
  AteResult ate;
  /// Final joint optimization, if one ran.
  std::optional<MergeOutcome> merge;
  BandwidthLedger ledger;
  std::vector<SwarmEvent> events;
  std::vector<RegistrationRecord> registrations;
  /// Set when the final optimization failed; outputs are partial.
  bool solver_failed = false;
  std::string failure;
};

/// Simulates the swarm end to end and evaluates it. When cfg.output_dir is
/// set, writes estimate_<robot>.tum, truth_<robot>.tum, graph.g2o,
/// ledger.csv, metrics.csv and registrations.csv there, plus a PARTIAL file
/// when the solver failed.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

void write_outputs(const ExperimentResult& result, const std::string& dir);

/// One run per combination, rows sorted by (formulation, solver, scale_init,
/// seed).
std::vector<MetricsRow> run_matrix(const ExperimentConfig& base,
                                   const std::vector<Formulation>& formulations,
                                   const std::vector<SolverKind>& solvers,
                                   const std::vector<ScaleInitMode>& scale_inits,
                                   const std::vector<std::uint64_t>& seeds);

struct SparsificationRow {
  int spacing = 1;
  std::size_t keyframes = 0;
  double ate_m = 0.0;
  std::size_t n_loops = 0;
  std::size_t descriptor_bytes = 0;
  std::size_t latent_bytes = 0;
  std::size_t bytes_total = 0;

  static std::string csv_header();
  std::string csv_row() const;
};

/// One run per keyframe spacing multiplier (applied to world.keyframe_every),
/// same seed. Spacings must be positive and strictly increasing.
std::vector<SparsificationRow> sparsification_sweep(const ExperimentConfig& cfg,
                                                    const std::vector<int>& spacings);

void write_sparsification_csv(std::ostream& out, const std::vector<SparsificationRow>& rows);

/// Offline loop detection over complete trajectories: every robot pair is
/// matched in both directions, the lower-id robot's keyframe is the query,
/// and registrations pass the ratio filter. Order: robot pair, then
/// (query, match).
std::vector<LoopClosure> detect_loops(const World& world, RegistrationOracle& oracle,
                                      const ConfidenceParams& params, ScaleInitMode mode);

/// Keyframe timestamps (ticks) of every robot.
std::map<int, std::vector<double>> keyframe_stamps(const World& world);

}  // namespace mrlc
