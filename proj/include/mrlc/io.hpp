#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "mrlc/graph.hpp"
#include "mrlc/se3.hpp"

namespace mrlc {

/// Thrown on malformed input files.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StampedTrajectory {
  std::vector<double> stamps;
  std::vector<Pose> poses;
};

using StampedTrajectories = std::map<int, StampedTrajectory>;

/// Attaches stamps to every robot's poses; pose i gets stamp i. Throws
/// std::invalid_argument when a robot is missing from `stamps` or has more
/// poses than stamps.
StampedTrajectories stamp(const Trajectories& poses, const std::map<int, std::vector<double>>& stamps);

// ---------------------------------------------------------------------------
// TUM text: "timestamp tx ty tz qx qy qz qw" per line; '#' starts a comment.

void write_tum(std::ostream& out, const StampedTrajectory& trajectory);
/// Throws ParseError on malformed lines or non-increasing timestamps.
StampedTrajectory read_tum(std::istream& in);

void save_tum(const std::string& path, const StampedTrajectory& trajectory);
StampedTrajectory load_tum(const std::string& path);

// ---------------------------------------------------------------------------
// Extended g2o text. One record per line, keys written as robot/index,
// numbers with 17 significant digits, info matrices as the upper triangle
// (row-major) of the 6x6 matrix in g2o order [translation; rotation]:
//
//   VERTEX_SE3:QUAT   key x y z qx qy qz qw
//   VERTEX_SCALE      key s
//   FIX               key x y z qx qy qz qw info[21]
//   EDGE_SE3:QUAT     from to x y z qx qy qz qw info[21]              (odometry)
//   EDGE_SE3:QUAT     from to x y z qx qy qz qw info[21] confidence   (loop)
//   EDGE_SE3_SCALED   from to scale qx qy qz qw dx dy dz info[21] confidence
//   EDGE_SCALE_SMOOTH first second info
//
// Vertices are written in key order, factors in graph order.

void write_g2o(std::ostream& out, const FactorGraph& graph);
/// Throws ParseError on malformed records and AssemblyError on unknown keys.
FactorGraph read_g2o(std::istream& in);

void save_g2o(const std::string& path, const FactorGraph& graph);
FactorGraph load_g2o(const std::string& path);

/// "%.17g"; parses back to the identical double.
std::string format_double(double v);

}  // namespace mrlc
