#pragma once

#include <compare>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrlc/se3.hpp"

namespace mrlc {

/// (robot, keyframe ordinal) handle for a keyframe.
struct KeyframeId {
  int robot = 0;
  int index = 0;

  auto operator<=>(const KeyframeId&) const = default;
};

std::string to_string(const KeyframeId& id);

/// An inter-robot (or intra-robot) loop closure as produced by the front-end.
///
/// `measured` is the registration output, whose translation is only known up
/// to scale. `scale_init` multiplies that translation to obtain the metric
/// initial guess.
struct LoopClosure {
  KeyframeId from;
  KeyframeId to;
  Pose measured;
  int loop_count = 0;
  int odom_count = 1;
  double ratio = 0.0;
  double confidence = 1.0;
  double scale_init = 1.0;
  bool scale_fallback = false;
  int cluster = -1;
};

/// Thrown when factor graph assembly references something that is missing.
class AssemblyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when a graph has a connected component without a gauge anchor.
class GaugeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when a variable leaves its domain (e.g. a non-positive scale).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace mrlc
