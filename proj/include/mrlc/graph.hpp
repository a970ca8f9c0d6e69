#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mrlc/se3.hpp"
#include "mrlc/types.hpp"

namespace mrlc {

enum class VariableKind : std::uint8_t { kPose = 0, kScale = 1 };

/// Graph variable identifier. Ordered by (robot, kind, index), which is also
/// the column order used when assembling the normal equations.
struct VariableKey {
  VariableKind kind = VariableKind::kPose;
  int robot = 0;
  int index = 0;

  static VariableKey pose(int robot, int index) { return {VariableKind::kPose, robot, index}; }
  static VariableKey pose(const KeyframeId& id) { return pose(id.robot, id.index); }
  static VariableKey scale(int robot, int index) { return {VariableKind::kScale, robot, index}; }

  bool is_pose() const { return kind == VariableKind::kPose; }
  bool is_scale() const { return kind == VariableKind::kScale; }

  bool operator==(const VariableKey&) const = default;
  bool operator<(const VariableKey& o) const {
    if (robot != o.robot) return robot < o.robot;
    if (kind != o.kind) return kind < o.kind;
    return index < o.index;
  }
};

std::string to_string(const VariableKey& key);

/// 6x6 information matrix in tangent order [rotation; translation].
using InfoMatrix = Matrix6;

/// True when `info` is symmetric within 1e-12 and has strictly positive
/// eigenvalues.
bool is_valid_info(const InfoMatrix& info);

/// p * info. Throws std::invalid_argument unless 0 < p <= 1.
InfoMatrix apply_confidence(const InfoMatrix& info, double p);

struct PriorFactor {
  VariableKey key;
  Pose value;
  InfoMatrix info = InfoMatrix::Identity();
};

struct OdometryFactor {
  VariableKey from;
  VariableKey to;
  Pose measurement;
  InfoMatrix info = InfoMatrix::Identity();
};

/// Loop closure with a metric measurement. The effective information is
/// confidence * info.
struct LoopFactor {
  VariableKey from;
  VariableKey to;
  Pose measurement;
  InfoMatrix info = InfoMatrix::Identity();
  double confidence = 1.0;
};

/// Loop closure whose translation magnitude is an optimization variable:
/// measurement(s) = (rotation, s * direction).
struct ScaledLoopFactor {
  VariableKey from;
  VariableKey to;
  VariableKey scale;
  Rotation rotation;
  Vector3 direction = Vector3::UnitX();
  InfoMatrix info = InfoMatrix::Identity();
  double confidence = 1.0;
};

/// Ties two loop scales together: residual = s_second - s_first.
struct ScaleSmoothFactor {
  VariableKey first;
  VariableKey second;
  double info = 1.0;
};

using Factor =
    std::variant<PriorFactor, OdometryFactor, LoopFactor, ScaledLoopFactor, ScaleSmoothFactor>;

/// Current estimate of every variable.
struct Values {
  std::map<VariableKey, Pose> poses;
  std::map<VariableKey, double> scales;

  const Pose& pose(const VariableKey& key) const;
  double scale(const VariableKey& key) const;
  bool contains(const VariableKey& key) const;
  std::size_t dimension() const { return 6 * poses.size() + scales.size(); }
};

struct FactorGraph {
  Values values;
  std::vector<Factor> factors;
  /// Number of keyframes per robot.
  std::map<int, int> trajectory_lengths;

  /// Throws AssemblyError if a factor references an unknown variable.
  void check_keys() const;
  std::size_t loop_factor_count() const;
};

// ---------------------------------------------------------------------------
// Residuals and analytic Jacobians. Pose Jacobians are taken with respect to
// right perturbations T * exp(d); scale Jacobians with respect to s + ds.

struct LoopResidual {
  Twist error;
  Matrix6 h_from;
  Matrix6 h_to;
};

struct ScaledLoopResidual {
  Twist error;
  Matrix6 h_from;
  Matrix6 h_to;
  Twist h_scale;
};

struct ScaleSmoothResidual {
  double error = 0.0;
  double h_first = -1.0;
  double h_second = 1.0;
};

struct PriorResidual {
  Twist error;
  Matrix6 h;
};

/// log(measurement^{-1} * between(T_from, T_to)).
Twist residual_odometry(const OdometryFactor& f, const Values& est);
LoopResidual linearize_odometry(const OdometryFactor& f, const Values& est);

LoopResidual residual_loop(const LoopFactor& f, const Values& est);

/// Throws DomainError when the scale estimate is not positive.
ScaledLoopResidual residual_scaled_loop(const ScaledLoopFactor& f, const Values& est);

ScaleSmoothResidual residual_scale_smooth(const ScaleSmoothFactor& f, const Values& est);

PriorResidual residual_prior(const PriorFactor& f, const Values& est);

/// Closed-form pose Jacobians of the between error at zero error:
/// (-Adj(inv(T_from^{-1} T_to)), I). The exact Jacobians used by the
/// solver equal these pre-multiplied by Jr^{-1}(error).
std::pair<Matrix6, Matrix6> first_order_between_jacobians(const Pose& relative);

/// The first-order scale Jacobian [0; -direction]. It only matches the
/// derivative of the tangent-space error when the measured rotation is the
/// identity and the error is zero; the solver uses the exact form
/// -Jr^{-1}(e) * Adj(E^{-1}) * [0; R^T direction].
Twist first_order_scale_jacobian(const Vector3& direction);

// ---------------------------------------------------------------------------
// Generic access used by the solvers.

struct LinearizedFactor {
  Eigen::VectorXd error;
  Eigen::MatrixXd info;  // effective information, confidence applied
  std::vector<VariableKey> keys;
  std::vector<Eigen::MatrixXd> jacobians;  // one block per key
};

std::vector<VariableKey> factor_keys(const Factor& f);
bool is_loop_factor(const Factor& f);
LinearizedFactor linearize(const Factor& f, const Values& est);

/// e^T * info_eff * e
double factor_cost(const Factor& f, const Values& est);

/// Sum of factor costs. `weights`, when given, scales each factor's cost
/// (indexed like graph.factors).
double total_cost(const FactorGraph& graph, const Values& est,
                  const std::vector<double>* weights = nullptr);

// ---------------------------------------------------------------------------
// Graph construction.

enum class Formulation { kBase, kIndependentScales, kSmoothedScales, kSharedScale };

std::string to_string(Formulation f);
Formulation formulation_from_string(const std::string& name);

struct GraphOptions {
  InfoMatrix odometry_info = (Twist() << 100, 100, 100, 25, 25, 25).finished().asDiagonal();
  InfoMatrix loop_info = (Twist() << 25, 25, 25, 4, 4, 4).finished().asDiagonal();
  double scale_smooth_info = 10.0;
  InfoMatrix prior_info = InfoMatrix::Identity() * 1e6;
};

/// Per-robot odometry keyframe poses; index in the vector is the keyframe
/// ordinal.
using Trajectories = std::map<int, std::vector<Pose>>;

/// Assembles the multi-robot factor graph.
///
/// * kBase: LoopFactor with translation multiplied by loop.scale_init.
/// * kIndependentScales: one scale variable per loop.
/// * kSmoothedScales: as above plus a chain of ScaleSmoothFactors inside each
///   loop cluster, in (robot, index) order.
/// * kSharedScale: a single scale variable for every loop.
///
/// The lowest robot id is anchored by one prior at its first keyframe. Poses
/// found in `initial` are used as initial values; the remaining robots are
/// placed by chaining loop measurements from already placed robots.
FactorGraph build_graph(const Trajectories& odometry, const std::vector<LoopClosure>& loops,
                        Formulation formulation, const GraphOptions& options = {},
                        const Trajectories* initial = nullptr);

/// Scale variable key used for loop `ordinal` under the given formulation.
VariableKey loop_scale_key(const std::vector<LoopClosure>& loops, std::size_t ordinal,
                           Formulation formulation);

/// Poses per robot extracted from an estimate.
Trajectories extract_trajectories(const Values& values);

}  // namespace mrlc
