#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mrlc/frontend.hpp"
#include "mrlc/world.hpp"

namespace mrlc {

/// Stand-in for the image registration model. Given the keyframe of the
/// robot doing the decoding (`query`) and the other robot's keyframe
/// (`match`), returns the up-to-scale relative pose of `match` in `query`'s
/// frame plus correspondence counts, or nothing when registration fails.
///
/// The odometry pair used for the count ratio is (query.index - 1,
/// query.index), or (0, 1) for the first keyframe.
class RegistrationOracle {
 public:
  virtual ~RegistrationOracle() = default;
  virtual std::optional<RegistrationResult> register_loop(const KeyframeId& query,
                                                          const KeyframeId& match) = 0;
};

/// Index of the keyframe paired with `index` for the odometry correspondence
/// count.
int odometry_partner(int index);

enum class ScaleLaw { kConstant, kLogUniform };

struct OracleConfig {
  /// Tangent-space noise on inlier registrations (rad, m).
  double sigma_rot = 0.0;
  double sigma_trans = 0.0;
  double outlier_rate = 0.0;

  /// Hidden scale (metric / registered translation), drawn once per cluster.
  ScaleLaw scale_law = ScaleLaw::kLogUniform;
  double scale_value = 1.0;
  double scale_min = 0.2;
  double scale_max = 5.0;
  /// Log-std of the extra factor applied to the odometry-pair registration
  /// scale relative to the loop's scale. 0 means both share one scale.
  double odom_scale_jitter = 0.0;

  /// Poisson means of the correspondence counts.
  double inlier_count_mean = 120.0;
  double odom_count_mean = 150.0;
  double outlier_count_mean = 25.0;

  /// Image overlap ~ exp(-d^2 / (2 l^2)); inlier counts scale with it and
  /// registration fails below min_overlap.
  double overlap_length = 4.0;
  double min_overlap = 0.02;

  /// Outlier translations are uniform in [-box, box]^3.
  double outlier_box = 20.0;

  /// Keyframe gap used to group registrations into scale clusters.
  int cluster_gap = 10;

  std::uint64_t seed = 1;

  void validate() const;
};

/// Registration oracle driven by a synthetic world's ground truth.
///
/// Results are cached per (query, match). Noise and outlier draws depend only
/// on (seed, query, match); hidden scale clusters are formed online in query
/// order with the same gap rule as cluster_loops.
class SyntheticOracle : public RegistrationOracle {
 public:
  SyntheticOracle(const World& world, OracleConfig cfg);

  std::optional<RegistrationResult> register_loop(const KeyframeId& query,
                                                  const KeyframeId& match) override;

  /// Ground truth about a pair that has been registered.
  bool is_outlier(const KeyframeId& query, const KeyframeId& match) const;
  std::optional<double> hidden_scale(const KeyframeId& query, const KeyframeId& match) const;

  /// Metric ground-truth relative pose of `match` in `query`'s frame.
  Pose true_relative(const KeyframeId& query, const KeyframeId& match) const;

  const OracleConfig& config() const { return cfg_; }

 private:
  struct Entry {
    std::optional<RegistrationResult> result;
    bool outlier = false;
    std::optional<double> scale;
  };

  double cluster_scale(const KeyframeId& query, const KeyframeId& match);

  const World& world_;
  OracleConfig cfg_;
  std::map<std::pair<KeyframeId, KeyframeId>, Entry> cache_;
  /// Inlier registrations in query order with their scale cluster.
  std::vector<LoopClosure> clustered_;
  std::vector<std::size_t> cluster_of_;
  /// Per cluster (creation order): canonical cluster and its scale.
  std::vector<std::size_t> cluster_label_;
  std::vector<double> cluster_scales_;
};

/// One row of the registration replay table.
struct RegistrationRecord {
  KeyframeId query;
  KeyframeId match;
  Pose relative;
  int loop_count = 0;
  int odom_count = 0;
};

/// Replays precomputed registrations from a CSV table with header
///   robot_a,index_a,robot_b,index_b,qx,qy,qz,qw,tx,ty,tz,loop_count,odom_count
/// Rows with robot_a == robot_b and adjacent indices describe odometry-pair
/// registrations and supply the translation for odometry-ratio scale
/// initialization. Unknown pairs fail.
class FileOracle : public RegistrationOracle {
 public:
  explicit FileOracle(std::vector<RegistrationRecord> records);
  static FileOracle load(const std::string& path);
  static FileOracle parse(std::istream& in);

  std::optional<RegistrationResult> register_loop(const KeyframeId& query,
                                                  const KeyframeId& match) override;

  const std::vector<RegistrationRecord>& records() const { return records_; }

 private:
  std::vector<RegistrationRecord> records_;
  std::map<std::pair<KeyframeId, KeyframeId>, std::size_t> index_;
};

/// Forwards to another oracle and keeps every successful registration, plus
/// one row per odometry pair (relative rotation unknown, written as the
/// identity), in call order.
class RecordingOracle : public RegistrationOracle {
 public:
  explicit RecordingOracle(RegistrationOracle& inner) : inner_(inner) {}

  std::optional<RegistrationResult> register_loop(const KeyframeId& query,
                                                  const KeyframeId& match) override;

  const std::vector<RegistrationRecord>& records() const { return records_; }

 private:
  RegistrationOracle& inner_;
  std::vector<RegistrationRecord> records_;
  std::map<std::pair<KeyframeId, KeyframeId>, std::size_t> seen_;
};

void write_registrations(std::ostream& out, const std::vector<RegistrationRecord>& records);

}  // namespace mrlc
