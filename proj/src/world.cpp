#include "mrlc/world.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace mrlc {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  // splitmix64 finalizer applied to each word in turn.
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(seed);
  h = mix(h ^ a);
  h = mix(h ^ b);
  h = mix(h ^ c);
  return h;
}

void WorldConfig::validate() const {
  if (robots < 1) throw std::invalid_argument("world needs at least one robot");
  if (ticks < 2) throw std::invalid_argument("world needs at least two ticks");
  if (keyframe_every < 1) throw std::invalid_argument("keyframe_every must be >= 1");
  if (!(step_length > 0.0)) throw std::invalid_argument("step_length must be > 0");
  if (!(corner_radius > 0.0) || route_width <= 2 * corner_radius ||
      route_height <= 2 * corner_radius) {
    throw std::invalid_argument("route must be larger than its corners");
  }
  if (descriptor_dim < 1) throw std::invalid_argument("descriptor_dim must be >= 1");
  if (!(descriptor_length_scale > 0.0)) {
    throw std::invalid_argument("descriptor_length_scale must be > 0");
  }
}

Keyframe RobotTrack::keyframe(int index) const {
  const auto i = static_cast<std::size_t>(index);
  return Keyframe{{id, index}, odometry.at(i), descriptors.at(i)};
}

Trajectories World::odometry() const {
  Trajectories out;
  for (const RobotTrack& r : robots) out[r.id] = r.odometry;
  return out;
}

Trajectories World::truth() const {
  Trajectories out;
  for (const RobotTrack& r : robots) out[r.id] = r.truth;
  return out;
}

namespace {

struct RoutePoint {
  Eigen::Vector2d position;
  double heading;
};

class Route {
 public:
  explicit Route(const WorldConfig& cfg)
      : w_(cfg.route_width), h_(cfg.route_height), r_(cfg.corner_radius) {
    straight_w_ = w_ - 2 * r_;
    straight_h_ = h_ - 2 * r_;
    arc_ = 0.5 * std::numbers::pi * r_;
    perimeter_ = 2 * straight_w_ + 2 * straight_h_ + 4 * arc_;
  }

  double perimeter() const { return perimeter_; }

  RoutePoint at(double s) const {
    s = std::fmod(s, perimeter_);
    if (s < 0) s += perimeter_;
    const double hw = 0.5 * w_;
    const double hh = 0.5 * h_;
    // Segments counter-clockwise from the left end of the bottom edge.
    const double lengths[8] = {straight_w_, arc_, straight_h_, arc_,
                               straight_w_, arc_, straight_h_, arc_};
    const Eigen::Vector2d starts[4] = {{-hw + r_, -hh}, {hw, -hh + r_}, {hw - r_, hh}, {-hw, hh - r_}};
    const Eigen::Vector2d centers[4] = {
        {hw - r_, -hh + r_}, {hw - r_, hh - r_}, {-hw + r_, hh - r_}, {-hw + r_, -hh + r_}};
    for (int seg = 0; seg < 8; ++seg) {
      if (s <= lengths[seg] || seg == 7) {
        const int side = seg / 2;
        const double base_heading = 0.5 * std::numbers::pi * side;
        if (seg % 2 == 0) {
          const Eigen::Vector2d dir(std::cos(base_heading), std::sin(base_heading));
          return {starts[side] + s * dir, base_heading};
        }
        const double psi = base_heading + s / r_;
        return {centers[side] + r_ * Eigen::Vector2d(std::sin(psi), -std::cos(psi)), psi};
      }
      s -= lengths[seg];
    }
    return {starts[0], 0.0};
  }

 private:
  double w_, h_, r_;
  double straight_w_, straight_h_, arc_, perimeter_;
};

Pose route_pose(const Route& route, double s, double lane, bool reversed) {
  const RoutePoint p = route.at(s);
  const Eigen::Vector2d left(-std::sin(p.heading), std::cos(p.heading));
  const Eigen::Vector2d xy = p.position + lane * left;
  const double z = 0.3 * std::sin(s / 6.0);
  const double yaw = p.heading + (reversed ? std::numbers::pi : 0.0);
  const double pitch = 0.03 * std::sin(s / 5.0);
  const double roll = 0.02 * std::cos(s / 7.0);
  const Eigen::Quaterniond q = Eigen::AngleAxisd(yaw, Vector3::UnitZ()) *
                               Eigen::AngleAxisd(pitch, Vector3::UnitY()) *
                               Eigen::AngleAxisd(roll, Vector3::UnitX());
  return Pose(Rotation(q), Vector3(xy.x(), xy.y(), z));
}

class PlaceEncoder {
 public:
  PlaceEncoder(int dim, double length_scale, std::uint64_t seed)
      : frequencies_(dim, 3), phases_(dim) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0 / length_scale);
    std::uniform_real_distribution<double> uniform(0.0, 2.0 * std::numbers::pi);
    for (int i = 0; i < dim; ++i) {
      for (int j = 0; j < 3; ++j) frequencies_(i, j) = normal(rng);
      phases_[i] = uniform(rng);
    }
  }

  Eigen::VectorXd encode(const Vector3& position) const {
    Eigen::VectorXd f = frequencies_ * position + phases_;
    return f.array().cos().matrix().normalized();
  }

 private:
  Eigen::MatrixXd frequencies_;
  Eigen::VectorXd phases_;
};

}  // namespace

World generate_world(const WorldConfig& cfg) {
  cfg.validate();
  World world;
  world.config = cfg;
  const Route route(cfg);
  const PlaceEncoder encoder(cfg.descriptor_dim, cfg.descriptor_length_scale, mix_seed(cfg.seed, 1));

  for (int r = 0; r < cfg.robots; ++r) {
    RobotTrack track;
    track.id = r;
    const double start = route.perimeter() * r / cfg.robots;
    const bool reversed = cfg.alternate_direction && (r % 2 == 1);
    const double direction = reversed ? -1.0 : 1.0;
    const double lane = (r - 0.5 * (cfg.robots - 1)) * cfg.lane_spacing;
    for (int t = 0; t < cfg.ticks; ++t) {
      track.truth_per_tick.push_back(
          route_pose(route, start + direction * t * cfg.step_length, lane, reversed));
    }

    std::mt19937_64 descriptor_rng(mix_seed(cfg.seed, 2, static_cast<std::uint64_t>(r)));
    std::mt19937_64 odom_rng(mix_seed(cfg.seed, 3, static_cast<std::uint64_t>(r)));
    std::normal_distribution<double> normal(0.0, 1.0);
    const double noise_scale = cfg.descriptor_noise / std::sqrt(static_cast<double>(cfg.descriptor_dim));

    for (int t = 0; t < cfg.ticks; t += cfg.keyframe_every) {
      const Pose truth = track.truth_per_tick[static_cast<std::size_t>(t)];
      track.keyframe_ticks.push_back(t);
      track.truth.push_back(truth);

      Eigen::VectorXd d = encoder.encode(truth.translation());
      for (Eigen::Index i = 0; i < d.size(); ++i) d[i] += noise_scale * normal(descriptor_rng);
      track.descriptors.emplace_back(d);

      if (track.odometry.empty()) {
        track.odometry.push_back(Pose::identity());
      } else {
        const Pose step = between(track.truth[track.truth.size() - 2], truth);
        Twist noise;
        for (int i = 0; i < 3; ++i) noise[i] = cfg.odom_sigma_rot * normal(odom_rng);
        for (int i = 3; i < 6; ++i) noise[i] = cfg.odom_sigma_trans * normal(odom_rng);
        noise[2] += cfg.odom_yaw_bias;
        track.odometry.push_back(track.odometry.back() * step * exp(noise));
      }
    }
    world.robots.push_back(std::move(track));
  }
  return world;
}

}  // namespace mrlc
