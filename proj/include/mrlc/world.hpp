#pragma once

#include <cstdint>
#include <vector>

#include "mrlc/frontend.hpp"
#include "mrlc/graph.hpp"
#include "mrlc/se3.hpp"

namespace mrlc {

/// Synthetic multi-robot scenario: robots drive along a shared rounded
/// rectangle route with different start points, directions and lateral
/// offsets, so that their trajectories partially overlap.
struct WorldConfig {
  int robots = 3;
  /// Simulation length; robots advance `step_length` meters per tick.
  int ticks = 120;
  double step_length = 1.0;
  /// A keyframe is taken every `keyframe_every` ticks.
  int keyframe_every = 1;

  double route_width = 50.0;
  double route_height = 35.0;
  double corner_radius = 5.0;
  /// Odd robots drive the route backwards (opposite viewpoints).
  bool alternate_direction = true;
  /// Lateral separation between neighbouring robot lanes (m).
  double lane_spacing = 1.5;

  int descriptor_dim = 512;
  /// Place similarity ~ exp(-d^2 / (2 l^2)) for keyframes d meters apart.
  double descriptor_length_scale = 4.0;
  double descriptor_noise = 0.2;

  /// Per-keyframe odometry noise (rad, m) and a constant yaw drift (rad per
  /// keyframe).
  double odom_sigma_rot = 0.0;
  double odom_sigma_trans = 0.0;
  double odom_yaw_bias = 0.0;

  std::uint64_t seed = 1;

  void validate() const;
};

struct RobotTrack {
  int id = 0;
  /// Ground-truth pose at every tick.
  std::vector<Pose> truth_per_tick;
  /// Tick of every keyframe.
  std::vector<int> keyframe_ticks;
  std::vector<Pose> truth;
  /// Odometry poses, starting at the identity.
  std::vector<Pose> odometry;
  std::vector<Descriptor> descriptors;

  Keyframe keyframe(int index) const;
};

struct World {
  WorldConfig config;
  std::vector<RobotTrack> robots;

  const RobotTrack& robot(int id) const { return robots.at(static_cast<std::size_t>(id)); }
  Trajectories odometry() const;
  Trajectories truth() const;
};

World generate_world(const WorldConfig& cfg);

/// Mixes a seed with further integers into an independent 64-bit seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                       std::uint64_t c = 0);

}  // namespace mrlc
