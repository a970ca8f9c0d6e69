#include "mrlc/io.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

namespace mrlc {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

StampedTrajectories stamp(const Trajectories& poses,
                          const std::map<int, std::vector<double>>& stamps) {
  StampedTrajectories out;
  for (const auto& [robot, list] : poses) {
    auto it = stamps.find(robot);
    if (it == stamps.end()) {
      throw std::invalid_argument("no timestamps for robot " + std::to_string(robot));
    }
    if (it->second.size() < list.size()) {
      throw std::invalid_argument("robot " + std::to_string(robot) + " has more poses than stamps");
    }
    out[robot].poses = list;
    out[robot].stamps.assign(it->second.begin(),
                             it->second.begin() + static_cast<std::ptrdiff_t>(list.size()));
  }
  return out;
}

namespace {

double parse_double(const std::string& token, int line_no) {
  const char* begin = token.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    throw ParseError("line " + std::to_string(line_no) + ": bad number '" + token + "'");
  }
  return v;
}

std::vector<std::string> tokens_of(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string t;
  while (ss >> t) out.push_back(t);
  return out;
}

void write_pose(std::ostream& out, const Pose& p) {
  const Vector3& t = p.translation();
  const Eigen::Quaterniond& q = p.rotation().quaternion();
  for (double v : {t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w()}) out << ' ' << format_double(v);
}

Pose read_pose(const std::vector<std::string>& tok, std::size_t at, int line_no) {
  double v[7];
  for (int i = 0; i < 7; ++i) v[i] = parse_double(tok[at + static_cast<std::size_t>(i)], line_no);
  const Eigen::Quaterniond q(v[6], v[3], v[4], v[5]);
  if (!(q.norm() > 0.0)) throw ParseError("line " + std::to_string(line_no) + ": zero quaternion");
  return Pose(Rotation(q), Vector3(v[0], v[1], v[2]));
}

}  // namespace

void write_tum(std::ostream& out, const StampedTrajectory& trajectory) {
  if (trajectory.stamps.size() != trajectory.poses.size()) {
    throw std::invalid_argument("stamp and pose counts differ");
  }
  for (std::size_t i = 0; i < trajectory.poses.size(); ++i) {
    out << format_double(trajectory.stamps[i]);
    write_pose(out, trajectory.poses[i]);
    out << '\n';
  }
}

StampedTrajectory read_tum(std::istream& in) {
  StampedTrajectory out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::vector<std::string> tok = tokens_of(line);
    if (tok.empty() || tok[0][0] == '#') continue;
    if (tok.size() != 8) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 8 fields");
    }
    const double t = parse_double(tok[0], line_no);
    if (!out.stamps.empty() && !(t > out.stamps.back())) {
      throw ParseError("line " + std::to_string(line_no) + ": timestamps must increase");
    }
    out.stamps.push_back(t);
    out.poses.push_back(read_pose(tok, 1, line_no));
  }
  return out;
}

void save_tum(const std::string& path, const StampedTrajectory& trajectory) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_tum(out, trajectory);
}

StampedTrajectory load_tum(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_tum(in);
}

// ---------------------------------------------------------------------------

namespace {

// g2o orders the tangent as [translation; rotation].
int to_g2o(int i) { return i < 3 ? i + 3 : i - 3; }

std::string key_token(const VariableKey& k) {
  return std::to_string(k.robot) + "/" + std::to_string(k.index);
}

VariableKey parse_key(const std::string& token, VariableKind kind, int line_no) {
  const auto slash = token.find('/');
  try {
    if (slash == std::string::npos) throw std::invalid_argument("no slash");
    std::size_t used_r = 0;
    std::size_t used_i = 0;
    const std::string rs = token.substr(0, slash);
    const std::string is = token.substr(slash + 1);
    const int robot = std::stoi(rs, &used_r);
    const int index = std::stoi(is, &used_i);
    if (used_r != rs.size() || used_i != is.size()) throw std::invalid_argument("trailing");
    return {kind, robot, index};
  } catch (const std::logic_error&) {
    throw ParseError("line " + std::to_string(line_no) + ": bad key '" + token + "'");
  }
}

void write_info(std::ostream& out, const InfoMatrix& info) {
  for (int r = 0; r < 6; ++r) {
    for (int c = r; c < 6; ++c) out << ' ' << format_double(info(to_g2o(r), to_g2o(c)));
  }
}

InfoMatrix read_info(const std::vector<std::string>& tok, std::size_t at, int line_no) {
  InfoMatrix info;
  for (int r = 0; r < 6; ++r) {
    for (int c = r; c < 6; ++c) {
      const double v = parse_double(tok[at++], line_no);
      info(to_g2o(r), to_g2o(c)) = v;
      info(to_g2o(c), to_g2o(r)) = v;
    }
  }
  return info;
}

void expect_fields(const std::vector<std::string>& tok, std::size_t n, int line_no) {
  if (tok.size() != n) {
    throw ParseError("line " + std::to_string(line_no) + ": " + tok[0] + " expects " +
                     std::to_string(n - 1) + " fields, got " + std::to_string(tok.size() - 1));
  }
}

}  // namespace

void write_g2o(std::ostream& out, const FactorGraph& graph) {
  for (const auto& [key, pose] : graph.values.poses) {
    out << "VERTEX_SE3:QUAT " << key_token(key);
    write_pose(out, pose);
    out << '\n';
  }
  for (const auto& [key, s] : graph.values.scales) {
    out << "VERTEX_SCALE " << key_token(key) << ' ' << format_double(s) << '\n';
  }
  for (const Factor& factor : graph.factors) {
    std::visit(
        [&](const auto& f) {
          using T = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<T, PriorFactor>) {
            out << "FIX " << key_token(f.key);
            write_pose(out, f.value);
            write_info(out, f.info);
          } else if constexpr (std::is_same_v<T, OdometryFactor>) {
            out << "EDGE_SE3:QUAT " << key_token(f.from) << ' ' << key_token(f.to);
            write_pose(out, f.measurement);
            write_info(out, f.info);
          } else if constexpr (std::is_same_v<T, LoopFactor>) {
            out << "EDGE_SE3:QUAT " << key_token(f.from) << ' ' << key_token(f.to);
            write_pose(out, f.measurement);
            write_info(out, f.info);
            out << ' ' << format_double(f.confidence);
          } else if constexpr (std::is_same_v<T, ScaledLoopFactor>) {
            out << "EDGE_SE3_SCALED " << key_token(f.from) << ' ' << key_token(f.to) << ' '
                << key_token(f.scale);
            const Eigen::Quaterniond& q = f.rotation.quaternion();
            for (double v : {q.x(), q.y(), q.z(), q.w(), f.direction.x(), f.direction.y(),
                             f.direction.z()}) {
              out << ' ' << format_double(v);
            }
            write_info(out, f.info);
            out << ' ' << format_double(f.confidence);
          } else if constexpr (std::is_same_v<T, ScaleSmoothFactor>) {
            out << "EDGE_SCALE_SMOOTH " << key_token(f.first) << ' ' << key_token(f.second) << ' '
                << format_double(f.info);
          }
          out << '\n';
        },
        factor);
  }
}

FactorGraph read_g2o(std::istream& in) {
  FactorGraph graph;
  std::string line;
  int line_no = 0;
  constexpr auto kPose = VariableKind::kPose;
  constexpr auto kScale = VariableKind::kScale;
  while (std::getline(in, line)) {
    ++line_no;
    const std::vector<std::string> tok = tokens_of(line);
    if (tok.empty() || tok[0][0] == '#') continue;
    const std::string& tag = tok[0];
    if (tag == "VERTEX_SE3:QUAT") {
      expect_fields(tok, 9, line_no);
      const VariableKey key = parse_key(tok[1], kPose, line_no);
      if (!graph.values.poses.emplace(key, read_pose(tok, 2, line_no)).second) {
        throw ParseError("line " + std::to_string(line_no) + ": duplicate vertex");
      }
      int& n = graph.trajectory_lengths[key.robot];
      n = std::max(n, key.index + 1);
    } else if (tag == "VERTEX_SCALE") {
      expect_fields(tok, 3, line_no);
      const VariableKey key = parse_key(tok[1], kScale, line_no);
      if (!graph.values.scales.emplace(key, parse_double(tok[2], line_no)).second) {
        throw ParseError("line " + std::to_string(line_no) + ": duplicate vertex");
      }
    } else if (tag == "FIX") {
      expect_fields(tok, 30, line_no);
      graph.factors.push_back(PriorFactor{parse_key(tok[1], kPose, line_no),
                                          read_pose(tok, 2, line_no), read_info(tok, 9, line_no)});
    } else if (tag == "EDGE_SE3:QUAT") {
      if (tok.size() != 31 && tok.size() != 32) expect_fields(tok, 31, line_no);
      const VariableKey from = parse_key(tok[1], kPose, line_no);
      const VariableKey to = parse_key(tok[2], kPose, line_no);
      const Pose m = read_pose(tok, 3, line_no);
      const InfoMatrix info = read_info(tok, 10, line_no);
      if (tok.size() == 31) {
        graph.factors.push_back(OdometryFactor{from, to, m, info});
      } else {
        graph.factors.push_back(LoopFactor{from, to, m, info, parse_double(tok[31], line_no)});
      }
    } else if (tag == "EDGE_SE3_SCALED") {
      expect_fields(tok, 33, line_no);
      ScaledLoopFactor f;
      f.from = parse_key(tok[1], kPose, line_no);
      f.to = parse_key(tok[2], kPose, line_no);
      f.scale = parse_key(tok[3], kScale, line_no);
      double v[7];
      for (int i = 0; i < 7; ++i) v[i] = parse_double(tok[4 + static_cast<std::size_t>(i)], line_no);
      f.rotation = Rotation(Eigen::Quaterniond(v[3], v[0], v[1], v[2]));
      f.direction = Vector3(v[4], v[5], v[6]);
      f.info = read_info(tok, 11, line_no);
      f.confidence = parse_double(tok[32], line_no);
      graph.factors.push_back(f);
    } else if (tag == "EDGE_SCALE_SMOOTH") {
      expect_fields(tok, 4, line_no);
      graph.factors.push_back(ScaleSmoothFactor{parse_key(tok[1], kScale, line_no),
                                                parse_key(tok[2], kScale, line_no),
                                                parse_double(tok[3], line_no)});
    } else {
      throw ParseError("line " + std::to_string(line_no) + ": unknown record '" + tag + "'");
    }
  }
  graph.check_keys();
  return graph;
}

void save_g2o(const std::string& path, const FactorGraph& graph) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_g2o(out, graph);
}

FactorGraph load_g2o(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_g2o(in);
}

}  // namespace mrlc
