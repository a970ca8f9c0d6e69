#include "mrlc/ate.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mrlc {

std::string to_string(Alignment a) { return a == Alignment::kNone ? "none" : "se3"; }

Alignment alignment_from_string(const std::string& name) {
  if (name == "none") return Alignment::kNone;
  if (name == "se3") return Alignment::kSE3;
  throw std::invalid_argument("unknown alignment '" + name + "'");
}

namespace {

// Index of the truth stamp nearest to t; ties go to the earlier stamp.
std::size_t nearest(const std::vector<double>& stamps, double t) {
  const auto it = std::lower_bound(stamps.begin(), stamps.end(), t);
  if (it == stamps.begin()) return 0;
  if (it == stamps.end()) return stamps.size() - 1;
  const auto before = it - 1;
  return static_cast<std::size_t>((t - *before <= *it - t ? before : it) - stamps.begin());
}

}  // namespace

AteResult compute_ate(const StampedTrajectories& estimate, const StampedTrajectories& truth,
                      Alignment align, double max_gap) {
  if (!(max_gap >= 0.0)) throw std::invalid_argument("max_gap must be >= 0");
  std::vector<Vector3> est_points;
  std::vector<Vector3> truth_points;
  for (const auto& [robot, est] : estimate) {
    auto it = truth.find(robot);
    if (it == truth.end() || it->second.stamps.empty()) continue;
    const StampedTrajectory& gt = it->second;
    for (std::size_t i = 0; i < est.poses.size(); ++i) {
      const std::size_t j = nearest(gt.stamps, est.stamps.at(i));
      if (std::abs(gt.stamps[j] - est.stamps[i]) > max_gap) continue;
      est_points.push_back(est.poses[i].translation());
      truth_points.push_back(gt.poses[j].translation());
    }
  }
  if (est_points.empty()) throw std::invalid_argument("no associated poses for ATE");

  AteResult result;
  if (align == Alignment::kSE3) {
    const auto n = static_cast<Eigen::Index>(est_points.size());
    Eigen::Matrix3Xd src(3, n);
    Eigen::Matrix3Xd dst(3, n);
    for (Eigen::Index k = 0; k < n; ++k) {
      src.col(k) = est_points[static_cast<std::size_t>(k)];
      dst.col(k) = truth_points[static_cast<std::size_t>(k)];
    }
    result.alignment = Pose::from_matrix(Eigen::umeyama(src, dst, false));
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < est_points.size(); ++k) {
    const double e = (result.alignment * est_points[k] - truth_points[k]).norm();
    result.errors.push_back(e);
    sum += e * e;
  }
  result.rmse = std::sqrt(sum / static_cast<double>(est_points.size()));
  return result;
}

}  // namespace mrlc
