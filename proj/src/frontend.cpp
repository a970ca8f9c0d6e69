#include "mrlc/frontend.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace mrlc {

Descriptor::Descriptor(const Eigen::VectorXd& v) {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw std::invalid_argument("descriptor must be a finite non-zero vector");
  }
  v_ = v / n;
}

std::vector<CandidateMatch> match_descriptors(std::span<const Keyframe> own,
                                              std::span<const Keyframe> other,
                                              const ConfidenceParams& params) {
  std::vector<CandidateMatch> out;
  if (other.empty()) return out;
  for (const Keyframe& query : own) {
    const Keyframe* best = nullptr;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (const Keyframe& candidate : other) {
      const double sim = query.descriptor.cosine(candidate.descriptor);
      if (sim > best_sim || (sim == best_sim && best && candidate.id < best->id)) {
        best_sim = sim;
        best = &candidate;
      }
    }
    if (best && best_sim >= params.similarity_threshold) {
      out.push_back({query.id, best->id, best_sim});
    }
  }
  return out;
}

double correspondence_ratio(int loop_count, int odom_count) {
  if (odom_count <= 0) {
    throw std::invalid_argument("odometry pair has no correspondences (count " +
                                std::to_string(odom_count) + ")");
  }
  return static_cast<double>(loop_count) / static_cast<double>(odom_count);
}

double confidence(double ratio, double k) { return 1.0 / (1.0 + std::exp(-k * (ratio - 1.0))); }

std::vector<LoopClosure> filter_loops(const std::vector<LoopClosure>& loops,
                                      const ConfidenceParams& params) {
  std::vector<LoopClosure> out;
  out.reserve(loops.size());
  for (const LoopClosure& loop : loops) {
    if (loop.odom_count <= 0) continue;
    const double r = correspondence_ratio(loop.loop_count, loop.odom_count);
    if (r < params.ratio_threshold) continue;
    LoopClosure kept = loop;
    kept.ratio = r;
    kept.confidence = confidence(r, params.k);
    out.push_back(kept);
  }
  return out;
}

ScaleInit scale_init(const Vector3& odom_metric, const Vector3& odom_registered,
                     const Vector3& loop_translation) {
  const double registered = odom_registered.norm();
  if (registered < 1e-9) return {loop_translation, 1.0, true};
  const double s = odom_metric.norm() / registered;
  return {s * loop_translation, s, false};
}

// ---------------------------------------------------------------------------

UnionFind::UnionFind(std::size_t n) : parent_(n), size_(n, 1) {
  std::iota(parent_.begin(), parent_.end(), std::size_t{0});
}

std::size_t UnionFind::add() {
  parent_.push_back(parent_.size());
  size_.push_back(1);
  return parent_.size() - 1;
}

std::size_t UnionFind::find(std::size_t x) {
  while (parent_[x] != x) {
    parent_[x] = parent_[parent_[x]];
    x = parent_[x];
  }
  return x;
}

void UnionFind::unite(std::size_t a, std::size_t b) {
  a = find(a);
  b = find(b);
  if (a == b) return;
  if (size_[a] < size_[b]) std::swap(a, b);
  parent_[b] = a;
  size_[a] += size_[b];
}

bool loops_related(const LoopClosure& a, const LoopClosure& b, int max_gap) {
  KeyframeId b_from = b.from;
  KeyframeId b_to = b.to;
  if (a.from.robot != b_from.robot) std::swap(b_from, b_to);
  if (a.from.robot != b_from.robot || a.to.robot != b_to.robot) return false;
  return std::abs(a.from.index - b_from.index) < max_gap &&
         std::abs(a.to.index - b_to.index) < max_gap;
}

std::vector<int> cluster_loops(const std::vector<LoopClosure>& loops, int max_gap) {
  const std::size_t n = loops.size();
  UnionFind uf(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (loops_related(loops[i], loops[j], max_gap)) uf.unite(i, j);
    }
  }
  std::vector<int> smallest(n, -1);
  std::vector<int> ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t root = uf.find(i);
    if (smallest[root] < 0) smallest[root] = static_cast<int>(i);
    ids[i] = smallest[root];
  }
  return ids;
}

}  // namespace mrlc
