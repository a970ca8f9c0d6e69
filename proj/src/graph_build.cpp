#include <algorithm>
#include <numeric>
#include <set>

#include "mrlc/frontend.hpp"
#include "mrlc/graph.hpp"

namespace mrlc {

std::string to_string(Formulation f) {
  switch (f) {
    case Formulation::kBase:
      return "base";
    case Formulation::kIndependentScales:
      return "independent_scales";
    case Formulation::kSmoothedScales:
      return "smoothed_scales";
    case Formulation::kSharedScale:
      return "shared_scale";
  }
  return "unknown";
}

Formulation formulation_from_string(const std::string& name) {
  if (name == "base") return Formulation::kBase;
  if (name == "independent_scales" || name == "IS") return Formulation::kIndependentScales;
  if (name == "smoothed_scales" || name == "SS") return Formulation::kSmoothedScales;
  if (name == "shared_scale" || name == "shared") return Formulation::kSharedScale;
  throw std::invalid_argument("unknown formulation '" + name + "'");
}

VariableKey loop_scale_key(const std::vector<LoopClosure>& loops, std::size_t ordinal,
                           Formulation formulation) {
  switch (formulation) {
    case Formulation::kIndependentScales:
    case Formulation::kSmoothedScales:
      return VariableKey::scale(loops.at(ordinal).from.robot, static_cast<int>(ordinal));
    case Formulation::kSharedScale: {
      int robot = loops.at(ordinal).from.robot;
      for (const LoopClosure& l : loops) robot = std::min({robot, l.from.robot, l.to.robot});
      return VariableKey::scale(robot, 0);
    }
    case Formulation::kBase:
      break;
  }
  throw std::invalid_argument("base formulation has no scale variables");
}

namespace {

Pose metric_measurement(const LoopClosure& loop) {
  return Pose(loop.measured.rotation(), loop.scale_init * loop.measured.translation());
}

// Initial pose of every keyframe: supplied estimates first, then robots
// reached through loop measurements, most confident loops first.
Trajectories place_robots(const Trajectories& odometry, const std::vector<LoopClosure>& loops,
                          const Trajectories* initial) {
  Trajectories placed;
  if (initial) {
    for (const auto& [robot, poses] : *initial) {
      auto odom_it = odometry.find(robot);
      if (odom_it == odometry.end() || poses.empty()) continue;
      const std::vector<Pose>& odom = odom_it->second;
      std::vector<Pose> out(odom.size());
      const std::size_t known = std::min(poses.size(), odom.size());
      for (std::size_t i = 0; i < known; ++i) out[i] = poses[i];
      for (std::size_t i = known; i < odom.size(); ++i) {
        out[i] = out[i - 1] * between(odom[i - 1], odom[i]);
      }
      placed[robot] = std::move(out);
    }
  }
  if (placed.empty() && !odometry.empty()) {
    placed[odometry.begin()->first] = odometry.begin()->second;
  }

  std::vector<std::size_t> order(loops.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return loops[a].confidence > loops[b].confidence;
  });

  bool progress = true;
  while (progress) {
    progress = false;
    for (std::size_t k : order) {
      const LoopClosure& loop = loops[k];
      const bool from_placed = placed.count(loop.from.robot) > 0;
      const bool to_placed = placed.count(loop.to.robot) > 0;
      if (from_placed == to_placed) continue;
      const Pose m = metric_measurement(loop);
      const KeyframeId anchor = from_placed ? loop.from : loop.to;
      const KeyframeId target = from_placed ? loop.to : loop.from;
      const Pose anchor_pose = placed.at(anchor.robot).at(anchor.index);
      const Pose target_pose = from_placed ? anchor_pose * m : anchor_pose * m.inverse();
      const std::vector<Pose>& odom = odometry.at(target.robot);
      const Pose align = target_pose * odom.at(target.index).inverse();
      std::vector<Pose> out;
      out.reserve(odom.size());
      for (const Pose& p : odom) out.push_back(align * p);
      placed[target.robot] = std::move(out);
      progress = true;
    }
  }
  for (const auto& [robot, odom] : odometry) {
    if (!placed.count(robot)) placed[robot] = odom;
  }
  return placed;
}

}  // namespace

FactorGraph build_graph(const Trajectories& odometry, const std::vector<LoopClosure>& loops,
                        Formulation formulation, const GraphOptions& options,
                        const Trajectories* initial) {
  if (odometry.empty()) throw AssemblyError("no trajectories given");

  auto known = [&](const KeyframeId& id) {
    auto it = odometry.find(id.robot);
    return it != odometry.end() && id.index >= 0 &&
           id.index < static_cast<int>(it->second.size());
  };
  for (std::size_t k = 0; k < loops.size(); ++k) {
    for (const KeyframeId& id : {loops[k].from, loops[k].to}) {
      if (!known(id)) {
        throw AssemblyError("loop " + std::to_string(k) + " references unknown keyframe " +
                            to_string(id));
      }
    }
  }

  FactorGraph graph;
  const Trajectories start = place_robots(odometry, loops, initial);
  for (const auto& [robot, poses] : odometry) {
    graph.trajectory_lengths[robot] = static_cast<int>(poses.size());
    const std::vector<Pose>& init = start.at(robot);
    for (std::size_t i = 0; i < poses.size(); ++i) {
      graph.values.poses[VariableKey::pose(robot, static_cast<int>(i))] = init[i];
    }
  }

  const int anchor_robot = odometry.begin()->first;
  if (odometry.begin()->second.empty()) {
    throw AssemblyError("anchor robot " + std::to_string(anchor_robot) + " has no keyframes");
  }
  const VariableKey anchor = VariableKey::pose(anchor_robot, 0);
  graph.factors.push_back(PriorFactor{anchor, graph.values.poses.at(anchor), options.prior_info});

  for (const auto& [robot, poses] : odometry) {
    for (std::size_t i = 1; i < poses.size(); ++i) {
      graph.factors.push_back(OdometryFactor{VariableKey::pose(robot, static_cast<int>(i - 1)),
                                             VariableKey::pose(robot, static_cast<int>(i)),
                                             between(poses[i - 1], poses[i]),
                                             options.odometry_info});
    }
  }

  if (formulation == Formulation::kSharedScale && !loops.empty()) {
    std::vector<double> inits;
    for (const LoopClosure& l : loops) inits.push_back(l.scale_init);
    std::sort(inits.begin(), inits.end());
    graph.values.scales[loop_scale_key(loops, 0, formulation)] = inits[(inits.size() - 1) / 2];
  }

  for (std::size_t k = 0; k < loops.size(); ++k) {
    const LoopClosure& loop = loops[k];
    const VariableKey from = VariableKey::pose(loop.from);
    const VariableKey to = VariableKey::pose(loop.to);
    if (formulation == Formulation::kBase) {
      graph.factors.push_back(
          LoopFactor{from, to, metric_measurement(loop), options.loop_info, loop.confidence});
      continue;
    }
    const VariableKey scale = loop_scale_key(loops, k, formulation);
    if (formulation != Formulation::kSharedScale) graph.values.scales[scale] = loop.scale_init;
    graph.factors.push_back(ScaledLoopFactor{from, to, scale, loop.measured.rotation(),
                                             loop.measured.translation(), options.loop_info,
                                             loop.confidence});
  }

  if (formulation == Formulation::kSmoothedScales) {
    const std::vector<int> clusters = cluster_loops(loops);
    std::map<int, std::vector<std::size_t>> members;
    for (std::size_t k = 0; k < loops.size(); ++k) members[clusters[k]].push_back(k);
    for (auto& [cluster, ordinals] : members) {
      std::stable_sort(ordinals.begin(), ordinals.end(), [&](std::size_t a, std::size_t b) {
        return std::tie(loops[a].from, loops[a].to) < std::tie(loops[b].from, loops[b].to);
      });
      for (std::size_t m = 1; m < ordinals.size(); ++m) {
        graph.factors.push_back(ScaleSmoothFactor{loop_scale_key(loops, ordinals[m - 1], formulation),
                                                  loop_scale_key(loops, ordinals[m], formulation),
                                                  options.scale_smooth_info});
      }
    }
  }
  return graph;
}

Trajectories extract_trajectories(const Values& values) {
  Trajectories out;
  for (const auto& [key, pose] : values.poses) {
    std::vector<Pose>& poses = out[key.robot];
    if (static_cast<int>(poses.size()) <= key.index) poses.resize(key.index + 1);
    poses[key.index] = pose;
  }
  return out;
}

}  // namespace mrlc
