#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "mrlc/oracle.hpp"
#include "mrlc/world.hpp"

namespace mrlc {
namespace {

WorldConfig small_world(std::uint64_t seed = 1) {
  WorldConfig wc;
  wc.seed = seed;
  wc.ticks = 60;
  wc.descriptor_dim = 64;
  return wc;
}

// Every cross-robot pair close enough to register.
std::vector<std::pair<KeyframeId, KeyframeId>> nearby_pairs(const World& w, double max_dist) {
  std::vector<std::pair<KeyframeId, KeyframeId>> out;
  for (const RobotTrack& a : w.robots) {
    for (const RobotTrack& b : w.robots) {
      if (a.id >= b.id) continue;
      for (int i = 0; i < static_cast<int>(a.truth.size()); ++i) {
        for (int j = 0; j < static_cast<int>(b.truth.size()); ++j) {
          if ((a.truth[i].translation() - b.truth[j].translation()).norm() < max_dist) {
            out.push_back({{a.id, i}, {b.id, j}});
          }
        }
      }
    }
  }
  return out;
}

TEST(World, ValidationErrors) {
  WorldConfig wc;
  wc.robots = 0;
  EXPECT_THROW(generate_world(wc), std::invalid_argument);
  wc = {};
  wc.keyframe_every = 0;
  EXPECT_THROW(generate_world(wc), std::invalid_argument);
  wc = {};
  wc.corner_radius = 30.0;
  EXPECT_THROW(generate_world(wc), std::invalid_argument);
}

TEST(World, Structure) {
  WorldConfig wc = small_world();
  wc.keyframe_every = 4;
  const World w = generate_world(wc);
  ASSERT_EQ(w.robots.size(), 3u);
  for (const RobotTrack& r : w.robots) {
    EXPECT_EQ(r.truth_per_tick.size(), 60u);
    EXPECT_EQ(r.truth.size(), 15u);
    EXPECT_EQ(r.keyframe_ticks[3], 12);
    EXPECT_LT(tangent_distance(r.odometry.front(), Pose::identity()), 1e-15);
    for (const Descriptor& d : r.descriptors) EXPECT_NEAR(d.vector().norm(), 1.0, 1e-12);
    // Noise-free odometry reproduces every truth increment.
    for (std::size_t i = 1; i < r.truth.size(); ++i) {
      EXPECT_LT(tangent_distance(between(r.odometry[i - 1], r.odometry[i]),
                                 between(r.truth[i - 1], r.truth[i])),
                1e-9);
    }
  }
}

TEST(World, DeterministicAndSeedSensitive) {
  WorldConfig wc = small_world();
  wc.odom_sigma_trans = 0.05;
  const World a = generate_world(wc);
  const World b = generate_world(wc);
  wc.seed = 2;
  const World c = generate_world(wc);
  EXPECT_EQ(a.robots[1].odometry.back().matrix(), b.robots[1].odometry.back().matrix());
  EXPECT_EQ(a.robots[2].descriptors[7].vector(), b.robots[2].descriptors[7].vector());
  EXPECT_NE(a.robots[1].odometry.back().matrix(), c.robots[1].odometry.back().matrix());
  EXPECT_NE(mix_seed(1, 2), mix_seed(2, 1));
  EXPECT_EQ(mix_seed(7, 1, 2, 3), mix_seed(7, 1, 2, 3));
}

TEST(World, NearbyPlacesHaveSimilarDescriptors) {
  const World w = generate_world(small_world());
  const auto close = nearby_pairs(w, 2.5);
  ASSERT_FALSE(close.empty());
  double close_sim = 0.0;
  for (const auto& [a, b] : close) {
    close_sim += w.robot(a.robot).descriptors[a.index].cosine(w.robot(b.robot).descriptors[b.index]);
  }
  close_sim /= static_cast<double>(close.size());
  EXPECT_GT(close_sim, 0.8);
  // Opposite sides of the route.
  EXPECT_LT(w.robot(0).descriptors[0].cosine(w.robot(0).descriptors[40]), 0.3);
}

// ---------------------------------------------------------------------------

TEST(OracleConfig, Validation) {
  OracleConfig oc;
  EXPECT_NO_THROW(oc.validate());
  oc.outlier_rate = 1.5;
  EXPECT_THROW(oc.validate(), std::invalid_argument);
  oc = {};
  oc.scale_min = 0.0;
  EXPECT_THROW(oc.validate(), std::invalid_argument);
  oc = {};
  oc.sigma_rot = -1.0;
  EXPECT_THROW(oc.validate(), std::invalid_argument);
}

TEST(Oracle, OdometryPartner) {
  EXPECT_EQ(odometry_partner(0), 1);
  EXPECT_EQ(odometry_partner(1), 0);
  EXPECT_EQ(odometry_partner(17), 16);
}

TEST(Oracle, NoiseFreeUnitScaleIsExact) {
  const World w = generate_world(small_world());
  OracleConfig oc;
  oc.scale_law = ScaleLaw::kConstant;
  SyntheticOracle oracle(w, oc);
  int checked = 0;
  for (const auto& [q, m] : nearby_pairs(w, 5.0)) {
    const auto r = oracle.register_loop(q, m);
    ASSERT_TRUE(r.has_value());
    EXPECT_LT(tangent_distance(r->relative, oracle.true_relative(q, m)), 1e-12);
    EXPECT_EQ(r->true_scale, 1.0);
    ASSERT_TRUE(r->odom_translation.has_value());
    const int p = odometry_partner(q.index);
    const Vector3 odom = between(w.robot(q.robot).truth[std::min(p, q.index)],
                                 w.robot(q.robot).truth[std::max(p, q.index)])
                             .translation();
    EXPECT_LT((*r->odom_translation - odom).norm(), 1e-12);
    ++checked;
  }
  EXPECT_GT(checked, 20);
}

TEST(Oracle, HiddenScaleDividesTranslation) {
  const World w = generate_world(small_world());
  SyntheticOracle oracle(w, OracleConfig{});
  for (const auto& [q, m] : nearby_pairs(w, 5.0)) {
    const auto r = oracle.register_loop(q, m);
    ASSERT_TRUE(r.has_value());
    const double s = *r->true_scale;
    EXPECT_GE(s, 0.2);
    EXPECT_LE(s, 5.0);
    EXPECT_EQ(oracle.hidden_scale(q, m), s);
    const Pose truth = oracle.true_relative(q, m);
    EXPECT_LT((s * r->relative.translation() - truth.translation()).norm(), 1e-9);
    // With no jitter the odometry pair shares the loop's scale.
    const int p = odometry_partner(q.index);
    const Vector3 odom = between(w.robot(q.robot).truth[std::min(p, q.index)],
                                 w.robot(q.robot).truth[std::max(p, q.index)])
                             .translation();
    EXPECT_LT((s * *r->odom_translation - odom).norm(), 1e-9);
  }
}

TEST(Oracle, ClustersShareOneScale) {
  const World w = generate_world(small_world());
  SyntheticOracle oracle(w, OracleConfig{});
  std::vector<LoopClosure> loops;
  std::vector<double> scales;
  for (const auto& [q, m] : nearby_pairs(w, 5.0)) {
    const auto r = oracle.register_loop(q, m);
    LoopClosure l;
    l.from = q;
    l.to = m;
    loops.push_back(l);
    scales.push_back(*r->true_scale);
  }
  const std::vector<int> clusters = cluster_loops(loops);
  std::set<int> distinct(clusters.begin(), clusters.end());
  ASSERT_GE(distinct.size(), 2u);
  for (std::size_t k = 0; k < loops.size(); ++k) {
    EXPECT_EQ(scales[k], scales[static_cast<std::size_t>(clusters[k])]);
  }
}

TEST(Oracle, FarPairsFail) {
  const World w = generate_world(small_world());
  SyntheticOracle oracle(w, OracleConfig{});
  EXPECT_FALSE(oracle.register_loop({0, 0}, {0, 40}).has_value());
  EXPECT_FALSE(oracle.register_loop({0, 0}, {1, 999}).has_value());
  EXPECT_FALSE(oracle.register_loop({7, 0}, {1, 0}).has_value());
}

TEST(Oracle, DeterministicAndOrderIndependentOutliers) {
  const World w = generate_world(small_world());
  OracleConfig oc;
  oc.outlier_rate = 0.3;
  oc.sigma_rot = 0.01;
  oc.sigma_trans = 0.05;
  oc.seed = 42;
  const auto pairs = nearby_pairs(w, 8.0);
  SyntheticOracle forward(w, oc);
  SyntheticOracle again(w, oc);
  SyntheticOracle backward(w, oc);
  for (const auto& [q, m] : pairs) {
    const auto a = forward.register_loop(q, m);
    const auto b = again.register_loop(q, m);
    ASSERT_EQ(a.has_value(), b.has_value());
    if (!a) continue;
    EXPECT_EQ(a->relative.matrix(), b->relative.matrix());
    EXPECT_EQ(a->loop_count, b->loop_count);
    EXPECT_EQ(a->odom_count, b->odom_count);
    // Cached: a repeated call returns the same result.
    EXPECT_EQ(forward.register_loop(q, m)->relative.matrix(), a->relative.matrix());
  }
  for (auto it = pairs.rbegin(); it != pairs.rend(); ++it) backward.register_loop(it->first, it->second);
  std::size_t outliers = 0;
  for (const auto& [q, m] : pairs) {
    EXPECT_EQ(forward.is_outlier(q, m), backward.is_outlier(q, m));
    outliers += forward.is_outlier(q, m) ? 1 : 0;
  }
  const double rate = static_cast<double>(outliers) / static_cast<double>(pairs.size());
  EXPECT_NEAR(rate, 0.3, 0.1);
}

TEST(Oracle, OutliersAreFarFromTruth) {
  const World w = generate_world(small_world());
  const auto pairs = nearby_pairs(w, 10.0);
  ASSERT_FALSE(pairs.empty());
  OracleConfig oc;
  oc.outlier_rate = 1.0;
  oc.scale_law = ScaleLaw::kConstant;
  std::size_t samples = 0;
  std::size_t far = 0;
  for (std::uint64_t seed = 1; samples < 10000; ++seed) {
    oc.seed = seed;
    SyntheticOracle oracle(w, oc);
    for (const auto& [q, m] : pairs) {
      const auto r = oracle.register_loop(q, m);
      if (!r) continue;
      EXPECT_TRUE(oracle.is_outlier(q, m));
      EXPECT_FALSE(r->true_scale.has_value());
      const double err = (r->relative.translation() - oracle.true_relative(q, m).translation()).norm();
      far += err > 2.0 ? 1 : 0;
      ++samples;
    }
  }
  EXPECT_GE(static_cast<double>(far) / static_cast<double>(samples), 0.99);
}

TEST(Oracle, InlierRatiosSitAboveOutlierRatios) {
  const World w = generate_world(small_world());
  OracleConfig oc;
  oc.outlier_rate = 0.5;
  SyntheticOracle oracle(w, oc);
  double inlier = 0.0, outlier = 0.0;
  int n_in = 0, n_out = 0;
  for (const auto& [q, m] : nearby_pairs(w, 2.0)) {
    const auto r = oracle.register_loop(q, m);
    ASSERT_TRUE(r.has_value());
    const double ratio = correspondence_ratio(r->loop_count, r->odom_count);
    if (oracle.is_outlier(q, m)) {
      outlier += ratio;
      ++n_out;
    } else {
      inlier += ratio;
      ++n_in;
    }
  }
  ASSERT_GT(n_in, 0);
  ASSERT_GT(n_out, 0);
  EXPECT_GT(inlier / n_in, 0.3);
  EXPECT_LT(outlier / n_out, 0.3);
}

// ---------------------------------------------------------------------------

TEST(FileOracle, RoundTripAndReverseLookup) {
  std::vector<RegistrationRecord> records{
      {{0, 3}, {1, 5}, exp((Twist() << 0.1, -0.2, 0.3, 1.0, 2.0, -0.5).finished()), 90, 120},
      {{0, 2}, {0, 3}, Pose(Rotation(), Vector3(0.4, 0.0, 0.0)), 120, 120}};
  std::stringstream ss;
  write_registrations(ss, records);
  FileOracle oracle = FileOracle::parse(ss);
  ASSERT_EQ(oracle.records().size(), 2u);
  EXPECT_LT(tangent_distance(oracle.records()[0].relative, records[0].relative), 1e-15);

  const auto fwd = oracle.register_loop({0, 3}, {1, 5});
  ASSERT_TRUE(fwd.has_value());
  EXPECT_EQ(fwd->loop_count, 90);
  EXPECT_EQ(fwd->odom_count, 120);
  ASSERT_TRUE(fwd->odom_translation.has_value());
  EXPECT_EQ(*fwd->odom_translation, Vector3(0.4, 0.0, 0.0));
  EXPECT_FALSE(fwd->true_scale.has_value());

  const auto rev = oracle.register_loop({1, 5}, {0, 3});
  ASSERT_TRUE(rev.has_value());
  EXPECT_LT(tangent_distance(rev->relative, records[0].relative.inverse()), 1e-12);
  EXPECT_FALSE(rev->odom_translation.has_value());
  EXPECT_FALSE(oracle.register_loop({0, 1}, {1, 1}).has_value());
}

TEST(FileOracle, MalformedTables) {
  std::stringstream no_header("0,1,1,1,0,0,0,1,0,0,0,1,1\n");
  EXPECT_THROW(FileOracle::parse(no_header), std::runtime_error);
  std::stringstream short_row(
      "robot_a,index_a,robot_b,index_b,qx,qy,qz,qw,tx,ty,tz,loop_count,odom_count\n0,1,1\n");
  EXPECT_THROW(FileOracle::parse(short_row), std::runtime_error);
  std::stringstream bad_number(
      "robot_a,index_a,robot_b,index_b,qx,qy,qz,qw,tx,ty,tz,loop_count,odom_count\n"
      "0,1,1,x,0,0,0,1,0,0,0,1,1\n");
  EXPECT_THROW(FileOracle::parse(bad_number), std::runtime_error);
  EXPECT_THROW(FileOracle::load("/nonexistent/table.csv"), std::runtime_error);
}

TEST(RecordingOracle, ReplayReproducesRegistrations) {
  const World w = generate_world(small_world());
  OracleConfig oc;
  oc.outlier_rate = 0.2;
  oc.sigma_trans = 0.02;
  SyntheticOracle synthetic(w, oc);
  RecordingOracle recorder(synthetic);
  const auto pairs = nearby_pairs(w, 6.0);
  for (const auto& [q, m] : pairs) {
    recorder.register_loop(q, m);
    recorder.register_loop(q, m);
  }
  recorder.register_loop({0, 0}, {0, 40});  // fails, not recorded
  std::set<std::pair<KeyframeId, KeyframeId>> unique;
  for (const RegistrationRecord& r : recorder.records()) unique.insert({r.query, r.match});
  EXPECT_EQ(unique.size(), recorder.records().size());

  std::stringstream ss;
  write_registrations(ss, recorder.records());
  FileOracle replay = FileOracle::parse(ss);
  for (const auto& [q, m] : pairs) {
    const auto a = synthetic.register_loop(q, m);
    const auto b = replay.register_loop(q, m);
    ASSERT_TRUE(b.has_value());
    EXPECT_LT(tangent_distance(a->relative, b->relative), 1e-12);
    EXPECT_EQ(a->loop_count, b->loop_count);
    EXPECT_EQ(a->odom_count, b->odom_count);
    ASSERT_TRUE(b->odom_translation.has_value());
  }
}

}  // namespace
}  // namespace mrlc
