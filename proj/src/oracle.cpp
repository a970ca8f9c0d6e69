#include "mrlc/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>

namespace mrlc {

int odometry_partner(int index) { return index > 0 ? index - 1 : 1; }

void OracleConfig::validate() const {
  if (sigma_rot < 0.0 || sigma_trans < 0.0) throw std::invalid_argument("noise sigmas must be >= 0");
  if (outlier_rate < 0.0 || outlier_rate > 1.0) {
    throw std::invalid_argument("outlier_rate must lie in [0, 1]");
  }
  if (scale_law == ScaleLaw::kConstant && !(scale_value > 0.0)) {
    throw std::invalid_argument("scale_value must be > 0");
  }
  if (scale_law == ScaleLaw::kLogUniform && !(scale_min > 0.0 && scale_max >= scale_min)) {
    throw std::invalid_argument("scale range must satisfy 0 < min <= max");
  }
  if (!(inlier_count_mean > 0.0 && odom_count_mean > 0.0 && outlier_count_mean > 0.0)) {
    throw std::invalid_argument("count means must be > 0");
  }
  if (!(overlap_length > 0.0)) throw std::invalid_argument("overlap_length must be > 0");
  if (!(outlier_box > 0.0)) throw std::invalid_argument("outlier_box must be > 0");
}

namespace {

std::uint64_t key_word(const KeyframeId& id) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(id.robot)) << 32) |
         static_cast<std::uint32_t>(id.index);
}

double draw_scale(const OracleConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double u = uniform(rng);
  if (cfg.scale_law == ScaleLaw::kConstant) return cfg.scale_value;
  const double lo = std::log(cfg.scale_min);
  const double hi = std::log(cfg.scale_max);
  return std::exp(lo + u * (hi - lo));
}

int draw_count(double mean, std::mt19937_64& rng) {
  std::poisson_distribution<int> poisson(std::max(mean, 1e-9));
  return poisson(rng);
}

bool valid_keyframe(const World& world, const KeyframeId& id) {
  return id.robot >= 0 && id.robot < static_cast<int>(world.robots.size()) && id.index >= 0 &&
         id.index < static_cast<int>(world.robot(id.robot).truth.size());
}

}  // namespace

SyntheticOracle::SyntheticOracle(const World& world, OracleConfig cfg)
    : world_(world), cfg_(std::move(cfg)) {
  cfg_.validate();
}

Pose SyntheticOracle::true_relative(const KeyframeId& query, const KeyframeId& match) const {
  return between(world_.robot(query.robot).truth.at(query.index),
                 world_.robot(match.robot).truth.at(match.index));
}

double SyntheticOracle::cluster_scale(const KeyframeId& query, const KeyframeId& match) {
  LoopClosure pair;
  pair.from = query;
  pair.to = match;
  std::vector<std::size_t> labels;
  for (std::size_t e = 0; e < clustered_.size(); ++e) {
    if (loops_related(pair, clustered_[e], cfg_.cluster_gap)) {
      labels.push_back(cluster_label_[cluster_of_[e]]);
    }
  }
  std::size_t chosen;
  if (labels.empty()) {
    chosen = cluster_scales_.size();
    std::mt19937_64 rng(mix_seed(cfg_.seed, 7, chosen));
    cluster_label_.push_back(chosen);
    cluster_scales_.push_back(draw_scale(cfg_, rng));
  } else {
    chosen = *std::min_element(labels.begin(), labels.end());
    for (std::size_t& label : cluster_label_) {
      if (std::find(labels.begin(), labels.end(), label) != labels.end()) label = chosen;
    }
  }
  clustered_.push_back(pair);
  cluster_of_.push_back(chosen);
  return cluster_scales_[chosen];
}

std::optional<RegistrationResult> SyntheticOracle::register_loop(const KeyframeId& query,
                                                                 const KeyframeId& match) {
  const auto key = std::make_pair(query, match);
  if (auto it = cache_.find(key); it != cache_.end()) return it->second.result;
  Entry& entry = cache_[key];
  if (!valid_keyframe(world_, query) || !valid_keyframe(world_, match)) return std::nullopt;

  // Every draw happens unconditionally and in a fixed order, so the stream of
  // a pair does not depend on the configuration's rates.
  std::mt19937_64 rng(mix_seed(cfg_.seed, key_word(query), key_word(match)));
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double u_outlier = uniform(rng);
  Twist noise;
  for (int i = 0; i < 3; ++i) noise[i] = cfg_.sigma_rot * normal(rng);
  for (int i = 3; i < 6; ++i) noise[i] = cfg_.sigma_trans * normal(rng);
  const double jitter = std::exp(cfg_.odom_scale_jitter * normal(rng));
  const Eigen::Quaterniond random_q(normal(rng), normal(rng), normal(rng), normal(rng));
  Vector3 random_t;
  for (int i = 0; i < 3; ++i) random_t[i] = cfg_.outlier_box * (2.0 * uniform(rng) - 1.0);
  const double outlier_odom_scale = draw_scale(cfg_, rng);
  const int odom_count = std::max(1, draw_count(cfg_.odom_count_mean, rng));

  const Pose relative = true_relative(query, match);
  const double distance = relative.translation().norm();
  const double overlap =
      std::exp(-distance * distance / (2.0 * cfg_.overlap_length * cfg_.overlap_length));
  if (overlap < cfg_.min_overlap) return std::nullopt;

  RegistrationResult result;
  result.odom_count = odom_count;
  double odom_scale;
  if (u_outlier < cfg_.outlier_rate) {
    entry.outlier = true;
    result.relative = Pose(Rotation(random_q), random_t);
    result.loop_count = draw_count(cfg_.outlier_count_mean, rng);
    odom_scale = outlier_odom_scale;
  } else {
    const double scale = cluster_scale(query, match);
    const Pose noisy = relative * exp(noise);
    result.relative = Pose(noisy.rotation(), noisy.translation() / scale);
    result.loop_count = draw_count(cfg_.inlier_count_mean * overlap, rng);
    result.true_scale = scale;
    entry.scale = scale;
    odom_scale = scale * jitter;
  }

  const RobotTrack& track = world_.robot(query.robot);
  const int partner = odometry_partner(query.index);
  if (partner >= 0 && partner < static_cast<int>(track.truth.size())) {
    const int lo = std::min(partner, query.index);
    const int hi = std::max(partner, query.index);
    const Vector3 odom_t = between(track.truth[lo], track.truth[hi]).translation();
    result.odom_translation = odom_t / odom_scale;
  }
  entry.result = result;
  return result;
}

bool SyntheticOracle::is_outlier(const KeyframeId& query, const KeyframeId& match) const {
  auto it = cache_.find({query, match});
  return it != cache_.end() && it->second.outlier;
}

std::optional<double> SyntheticOracle::hidden_scale(const KeyframeId& query,
                                                    const KeyframeId& match) const {
  auto it = cache_.find({query, match});
  if (it == cache_.end()) return std::nullopt;
  return it->second.scale;
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kRegistrationHeader =
    "robot_a,index_a,robot_b,index_b,qx,qy,qz,qw,tx,ty,tz,loop_count,odom_count";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

FileOracle::FileOracle(std::vector<RegistrationRecord> records) : records_(std::move(records)) {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    index_[{records_[i].query, records_[i].match}] = i;
  }
}

FileOracle FileOracle::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open registration table " + path);
  return parse(in);
}

FileOracle FileOracle::parse(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kRegistrationHeader) {
    throw std::runtime_error(std::string("registration table must start with header '") +
                             kRegistrationHeader + "'");
  }
  std::vector<RegistrationRecord> records;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv(line);
    if (cells.size() != 13) {
      throw std::runtime_error("registration table line " + std::to_string(line_no) +
                               ": expected 13 fields");
    }
    try {
      RegistrationRecord r;
      r.query = {std::stoi(cells[0]), std::stoi(cells[1])};
      r.match = {std::stoi(cells[2]), std::stoi(cells[3])};
      const Eigen::Quaterniond q(std::stod(cells[7]), std::stod(cells[4]), std::stod(cells[5]),
                                 std::stod(cells[6]));
      r.relative = Pose(Rotation(q), Vector3(std::stod(cells[8]), std::stod(cells[9]),
                                             std::stod(cells[10])));
      r.loop_count = std::stoi(cells[11]);
      r.odom_count = std::stoi(cells[12]);
      records.push_back(r);
    } catch (const std::logic_error&) {
      throw std::runtime_error("registration table line " + std::to_string(line_no) +
                               ": malformed number");
    }
  }
  return FileOracle(std::move(records));
}

std::optional<RegistrationResult> FileOracle::register_loop(const KeyframeId& query,
                                                            const KeyframeId& match) {
  RegistrationResult result;
  if (auto it = index_.find({query, match}); it != index_.end()) {
    const RegistrationRecord& r = records_[it->second];
    result.relative = r.relative;
    result.loop_count = r.loop_count;
    result.odom_count = r.odom_count;
  } else if (auto rit = index_.find({match, query}); rit != index_.end()) {
    const RegistrationRecord& r = records_[rit->second];
    result.relative = r.relative.inverse();
    result.loop_count = r.loop_count;
    result.odom_count = r.odom_count;
  } else {
    return std::nullopt;
  }
  const KeyframeId partner{query.robot, odometry_partner(query.index)};
  for (const auto& [a, b] : {std::pair{partner, query}, std::pair{query, partner}}) {
    if (auto it = index_.find({a, b}); it != index_.end()) {
      result.odom_translation = records_[it->second].relative.translation();
      break;
    }
  }
  return result;
}

std::optional<RegistrationResult> RecordingOracle::register_loop(const KeyframeId& query,
                                                                 const KeyframeId& match) {
  std::optional<RegistrationResult> result = inner_.register_loop(query, match);
  if (!result) return result;
  auto remember = [&](const RegistrationRecord& r) {
    if (seen_.emplace(std::make_pair(r.query, r.match), records_.size()).second) {
      records_.push_back(r);
    }
  };
  remember({query, match, result->relative, result->loop_count, result->odom_count});
  if (result->odom_translation) {
    const int partner = odometry_partner(query.index);
    const KeyframeId lo{query.robot, std::min(partner, query.index)};
    const KeyframeId hi{query.robot, std::max(partner, query.index)};
    remember({lo, hi, Pose(Rotation(), *result->odom_translation), result->odom_count,
              result->odom_count});
  }
  return result;
}

void write_registrations(std::ostream& out, const std::vector<RegistrationRecord>& records) {
  out << kRegistrationHeader << '\n';
  out << std::setprecision(17);
  for (const RegistrationRecord& r : records) {
    const Eigen::Quaterniond& q = r.relative.rotation().quaternion();
    const Vector3& t = r.relative.translation();
    out << r.query.robot << ',' << r.query.index << ',' << r.match.robot << ',' << r.match.index
        << ',' << q.x() << ',' << q.y() << ',' << q.z() << ',' << q.w() << ',' << t.x() << ','
        << t.y() << ',' << t.z() << ',' << r.loop_count << ',' << r.odom_count << '\n';
  }
}

}  // namespace mrlc
