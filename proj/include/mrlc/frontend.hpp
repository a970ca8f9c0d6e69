#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mrlc/se3.hpp"
#include "mrlc/types.hpp"

namespace mrlc {

/// Unit-norm place descriptor.
class Descriptor {
 public:
  Descriptor() = default;
  /// Normalizes `v`. Throws std::invalid_argument for a zero vector.
  explicit Descriptor(const Eigen::VectorXd& v);

  const Eigen::VectorXd& vector() const { return v_; }
  Eigen::Index dim() const { return v_.size(); }
  double cosine(const Descriptor& other) const { return v_.dot(other.v_); }

 private:
  Eigen::VectorXd v_;
};

struct Keyframe {
  KeyframeId id;
  Pose odometry;
  Descriptor descriptor;
};

struct CandidateMatch {
  KeyframeId query;
  KeyframeId match;
  double similarity = 0.0;
};

struct ConfidenceParams {
  double k = 2.0;
  double ratio_threshold = 0.3;
  double similarity_threshold = 0.1;
};

/// Output of a registration between a loop pair. `relative` is the pose of
/// the second keyframe in the first one's frame, translation up to scale.
struct RegistrationResult {
  Pose relative;
  int loop_count = 0;
  int odom_count = 0;
  /// Registration translation of the query robot's own odometry pair, used
  /// for odometry-ratio scale initialization.
  std::optional<Vector3> odom_translation;
  /// Metric / registration scale when the oracle knows it (synthetic only).
  std::optional<double> true_scale;
};

/// For every keyframe in `own`, the most similar keyframe in `other`, kept when
/// the cosine similarity reaches params.similarity_threshold. Ties go to the
/// lowest (robot, index).
std::vector<CandidateMatch> match_descriptors(std::span<const Keyframe> own,
                                              std::span<const Keyframe> other,
                                              const ConfidenceParams& params);

/// loop_count / odom_count. Throws std::invalid_argument when odom_count <= 0.
double correspondence_ratio(int loop_count, int odom_count);

/// Logistic map of the correspondence ratio: 1 / (1 + exp(-k (r - 1))).
double confidence(double ratio, double k);

/// Keeps loops with ratio >= ratio_threshold (input order preserved) and sets
/// their ratio and confidence. Loops without a valid odometry pair are dropped.
std::vector<LoopClosure> filter_loops(const std::vector<LoopClosure>& loops,
                                      const ConfidenceParams& params);

struct ScaleInit {
  Vector3 translation = Vector3::Zero();
  double scale = 1.0;
  /// Set when the registered odometry translation was too short to be used.
  bool fallback = false;
};

/// Rescales a registered loop translation by ||odom metric|| / ||odom
/// registered||, assuming both registrations share one scale factor.
ScaleInit scale_init(const Vector3& odom_metric, const Vector3& odom_registered,
                     const Vector3& loop_translation);

/// Disjoint-set forest with path halving and union by size.
class UnionFind {
 public:
  explicit UnionFind(std::size_t n = 0);

  std::size_t add();
  std::size_t find(std::size_t x);
  void unite(std::size_t a, std::size_t b);
  std::size_t size() const { return parent_.size(); }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
};

/// True when two loops link the same robot pair with both endpoint gaps below
/// `max_gap` keyframes (orientation of the loops is normalized first).
bool loops_related(const LoopClosure& a, const LoopClosure& b, int max_gap = 10);

/// Connected components of the loops_related relation. Each loop's id is the
/// smallest input ordinal in its cluster.
std::vector<int> cluster_loops(const std::vector<LoopClosure>& loops, int max_gap = 10);

}  // namespace mrlc
