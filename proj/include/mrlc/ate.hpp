#pragma once

#include <string>
#include <vector>

#include "mrlc/io.hpp"
#include "mrlc/se3.hpp"

namespace mrlc {

enum class Alignment { kNone, kSE3 };

std::string to_string(Alignment a);
Alignment alignment_from_string(const std::string& name);

struct AteResult {
  double rmse = 0.0;
  /// Translation error of every associated pose, robots in id order.
  std::vector<double> errors;
  /// Transform applied to the estimate before measuring errors.
  Pose alignment;
};

/// Absolute trajectory error over all robots present in both sets.
///
/// Every estimated pose is paired with the truth pose of the same robot at
/// the nearest timestamp, when that is at most `max_gap` away. With kSE3 a
/// single rigid transform, fitted in closed form to all pairs at once, maps
/// the estimate onto the truth. Throws std::invalid_argument when nothing is
/// associated.
AteResult compute_ate(const StampedTrajectories& estimate, const StampedTrajectories& truth,
                      Alignment align, double max_gap = 0.05);

}  // namespace mrlc
