#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mrlc/graph.hpp"

namespace mrlc {

/// Chi-square 0.99 quantile with 6 degrees of freedom.
inline constexpr double kChi2Quantile99Dof6 = 16.811893829770927;

struct GncConfig {
  double mu_update_factor = 1.4;
  /// Squared-residual threshold separating TLS inliers from outliers.
  double inlier_cost_threshold = kChi2Quantile99Dof6;
  int max_outer_iterations = 100;
  /// Weights closer than this to 0 or 1 count as converged.
  double weight_tolerance = 1e-4;
};

struct SolverConfig {
  int max_iterations = 100;
  double initial_damping = 1e-4;
  double damping_up = 10.0;
  double damping_down = 0.1;
  double absolute_tolerance = 1e-20;
  double relative_tolerance = 1e-9;
  std::optional<GncConfig> gnc;

  /// Throws std::invalid_argument on non-positive tolerances or a GNC update
  /// factor <= 1.
  void validate() const;
};

struct SolveReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  /// Cost after every accepted LM step (initial cost first). For GNC, the
  /// weighted cost after each outer iteration.
  std::vector<double> cost_trace;
  double wall_time_ms = 0.0;
  /// One weight per loop factor, in graph order (GNC only).
  std::vector<double> loop_weights;
  bool converged = false;
  std::string message;

  static std::string csv_header() { return "cost,iterations,time_ms"; }
  std::string csv_row() const;
};

struct SolveResult {
  Values values;
  SolveReport report;
};

/// Throws GaugeError if some pose component has no prior factor.
void check_gauge(const FactorGraph& graph);

/// Levenberg-Marquardt over the graph. Pose steps are right-multiplicative
/// retractions, scale steps are additive; steps that make a scale
/// non-positive are halved and, failing that, rejected.
///
/// `weights` (one per factor) scale individual factor costs. `initial`
/// overrides the graph's values as starting point.
SolveResult solve_lm(const FactorGraph& graph, const SolverConfig& cfg,
                     const std::vector<double>* weights = nullptr,
                     const Values* initial = nullptr);

/// Graduated non-convexity with a truncated least-squares loss applied to
/// loop factors only. Uses cfg.gnc, or defaults when unset.
SolveResult solve_gnc(const FactorGraph& graph, const SolverConfig& cfg);

enum class SolverKind { kLevenbergMarquardt, kGnc };

std::string to_string(SolverKind kind);
SolverKind solver_from_string(const std::string& name);

SolveResult solve(const FactorGraph& graph, SolverKind kind, const SolverConfig& cfg);

}  // namespace mrlc
