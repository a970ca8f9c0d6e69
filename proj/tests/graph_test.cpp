#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "mrlc/graph.hpp"
#include "mrlc/io.hpp"

namespace mrlc {
namespace {

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

  Twist twist(double rot, double trans) {
    std::normal_distribution<double> n(0.0, 1.0);
    Twist xi;
    for (int i = 0; i < 3; ++i) xi[i] = rot * n(rng_);
    for (int i = 3; i < 6; ++i) xi[i] = trans * n(rng_);
    return xi;
  }

  Pose pose() { return exp(twist(0.8, 5.0)); }

  InfoMatrix spd() {
    Matrix6 a = Matrix6::Random();
    return a * a.transpose() + Matrix6::Identity();
  }

 private:
  std::mt19937_64 rng_;
};

// Central differences of linearize(f).error with respect to every key of f.
std::vector<Eigen::MatrixXd> numeric_jacobians(const Factor& f, const Values& at, double h = 1e-6) {
  std::vector<Eigen::MatrixXd> out;
  for (const VariableKey& key : factor_keys(f)) {
    const int dim = key.is_pose() ? 6 : 1;
    const Eigen::Index rows = linearize(f, at).error.size();
    Eigen::MatrixXd jac(rows, dim);
    for (int c = 0; c < dim; ++c) {
      Values plus = at;
      Values minus = at;
      if (key.is_pose()) {
        Twist d = Twist::Zero();
        d[c] = h;
        plus.poses[key] = retract(at.pose(key), d);
        minus.poses[key] = retract(at.pose(key), -d);
      } else {
        plus.scales[key] += h;
        minus.scales[key] -= h;
      }
      jac.col(c) = (linearize(f, plus).error - linearize(f, minus).error) / (2 * h);
    }
    out.push_back(jac);
  }
  return out;
}

double relative_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric) {
  return (analytic - numeric).norm() / std::max(1.0, numeric.norm());
}

void expect_jacobians_match(const Factor& f, const Values& at) {
  const LinearizedFactor lin = linearize(f, at);
  const std::vector<Eigen::MatrixXd> numeric = numeric_jacobians(f, at);
  ASSERT_EQ(lin.jacobians.size(), numeric.size());
  for (std::size_t k = 0; k < numeric.size(); ++k) {
    EXPECT_LT(relative_error(lin.jacobians[k], numeric[k]), 1e-5) << "block " << k;
  }
}

const VariableKey kA = VariableKey::pose(0, 3);
const VariableKey kB = VariableKey::pose(1, 7);
const VariableKey kS = VariableKey::scale(0, 0);
const VariableKey kS2 = VariableKey::scale(0, 1);

// ---------------------------------------------------------------------------

TEST(VariableKey, OrderIsRobotKindIndex) {
  EXPECT_LT(VariableKey::pose(0, 9), VariableKey::scale(0, 0));
  EXPECT_LT(VariableKey::scale(0, 5), VariableKey::pose(1, 0));
  EXPECT_LT(VariableKey::pose(1, 2), VariableKey::pose(1, 3));
}

TEST(Info, Validity) {
  EXPECT_TRUE(is_valid_info(InfoMatrix::Identity()));
  InfoMatrix asym = InfoMatrix::Identity();
  asym(0, 1) = 1e-9;
  EXPECT_FALSE(is_valid_info(asym));
  InfoMatrix singular = InfoMatrix::Identity();
  singular(5, 5) = 0.0;
  EXPECT_FALSE(is_valid_info(singular));
}

TEST(Info, ApplyConfidence) {
  const InfoMatrix i6 = InfoMatrix::Identity();
  EXPECT_EQ(apply_confidence(i6, 1.0), i6);
  EXPECT_EQ(apply_confidence(i6, 0.5), 0.5 * i6);
  EXPECT_THROW(apply_confidence(i6, 0.0), std::invalid_argument);
  EXPECT_THROW(apply_confidence(i6, 1.5), std::invalid_argument);
  EXPECT_THROW(apply_confidence(i6, std::nan("")), std::invalid_argument);
}

TEST(Info, ConfidenceScalesEigenvaluesExactly) {
  Sampler s(1);
  for (int k = 0; k < 20; ++k) {
    const InfoMatrix info = s.spd();
    const double p = s.uniform(0.01, 1.0);
    const InfoMatrix scaled = apply_confidence(info, p);
    EXPECT_TRUE(is_valid_info(scaled));
    Eigen::SelfAdjointEigenSolver<InfoMatrix> a(info), b(scaled);
    EXPECT_TRUE(b.eigenvalues().isApprox(p * a.eigenvalues(), 1e-12));
  }
}

// ---------------------------------------------------------------------------

TEST(Residuals, OdometryZeroWhenConsistent) {
  Sampler s(2);
  const Pose a = s.pose();
  const Pose b = s.pose();
  Values v;
  v.poses[kA] = a;
  v.poses[kB] = b;
  EXPECT_LT(residual_odometry({kA, kB, between(a, b), InfoMatrix::Identity()}, v).norm(), 1e-12);
  v.poses[kB] = a;
  EXPECT_LT(residual_odometry({kA, kB, Pose::identity(), InfoMatrix::Identity()}, v).norm(), 1e-15);
}

TEST(Residuals, OdometryMatchesHomogeneousMatrixFormula) {
  Sampler s(3);
  for (int k = 0; k < 50; ++k) {
    const Pose a = s.pose();
    const Pose b = s.pose();
    const Pose m = s.pose();
    Values v;
    v.poses[kA] = a;
    v.poses[kB] = b;
    const Matrix4 e = m.matrix().inverse() * a.matrix().inverse() * b.matrix();
    const Twist expected = log(Pose::from_matrix(e));
    EXPECT_LT((residual_odometry({kA, kB, m, InfoMatrix::Identity()}, v) - expected).norm(), 1e-9);
  }
}

TEST(Residuals, MissingKeyIsAssemblyError) {
  Values v;
  v.poses[kA] = Pose::identity();
  EXPECT_THROW(residual_odometry({kA, kB, Pose::identity(), InfoMatrix::Identity()}, v),
               AssemblyError);
}

TEST(Residuals, LoopJacobiansAtConsistentEstimate) {
  Sampler s(4);
  const Pose a = s.pose();
  const Pose b = s.pose();
  Values v;
  v.poses[kA] = a;
  v.poses[kB] = b;
  const LoopFactor f{kA, kB, between(a, b), InfoMatrix::Identity(), 1.0};
  const LoopResidual r = residual_loop(f, v);
  EXPECT_LT(r.error.norm(), 1e-12);
  EXPECT_TRUE(r.h_to.isIdentity(1e-12));
  const auto [h_from, h_to] = first_order_between_jacobians(between(a, b));
  EXPECT_TRUE(r.h_from.isApprox(h_from, 1e-10));
  EXPECT_TRUE(h_from.isApprox(-adjoint(between(a, b).inverse()), 1e-12));
  EXPECT_TRUE(h_to.isIdentity(0.0));
  // The closed form is the derivative at this point.
  const std::vector<Eigen::MatrixXd> numeric = numeric_jacobians(f, v);
  EXPECT_LT(relative_error(h_from, numeric[0]), 1e-5);
  EXPECT_LT(relative_error(h_to, numeric[1]), 1e-5);
}

TEST(Residuals, ZeroInformationContributesNothing) {
  Sampler s(5);
  Values v;
  v.poses[kA] = s.pose();
  v.poses[kB] = s.pose();
  const Factor f = LoopFactor{kA, kB, s.pose(), InfoMatrix::Zero(), 1.0};
  EXPECT_EQ(factor_cost(f, v), 0.0);
}

TEST(Residuals, ConfidenceScalesCostLinearly) {
  Sampler s(6);
  Values v;
  v.poses[kA] = s.pose();
  v.poses[kB] = s.pose();
  const Pose m = s.pose();
  const InfoMatrix info = s.spd();
  const double full = factor_cost(LoopFactor{kA, kB, m, info, 1.0}, v);
  for (double p : {0.1, 0.25, 0.73}) {
    EXPECT_NEAR(factor_cost(LoopFactor{kA, kB, m, info, p}, v), p * full, 1e-12 * full);
  }
}

TEST(Residuals, SwappingEndpointsConjugatesLoopError) {
  Sampler s(7);
  for (int k = 0; k < 20; ++k) {
    const Pose a = s.pose();
    const Pose b = s.pose();
    Values v;
    v.poses[kA] = a;
    v.poses[kB] = b;
    const Pose m = between(a, b) * exp(s.twist(0.2, 0.5));
    const Twist e = residual_loop({kA, kB, m, InfoMatrix::Identity(), 1.0}, v).error;
    const Twist swapped =
        residual_loop({kB, kA, m.inverse(), InfoMatrix::Identity(), 1.0}, v).error;
    EXPECT_LT((swapped + adjoint(m) * e).norm(), 1e-9);
  }
}

TEST(Residuals, ScaledLoopZeroAtTrueScale) {
  Sampler s(8);
  const Pose a = s.pose();
  const Pose b = s.pose();
  const Pose rel = between(a, b);
  const double scale = 2.7;
  Values v;
  v.poses[kA] = a;
  v.poses[kB] = b;
  v.scales[kS] = scale;
  const ScaledLoopFactor f{kA, kB, kS, rel.rotation(), rel.translation() / scale,
                           InfoMatrix::Identity(), 1.0};
  EXPECT_LT(residual_scaled_loop(f, v).error.norm(), 1e-12);
}

TEST(Residuals, ScaledLoopAtUnitScaleReproducesLoop) {
  Sampler s(9);
  Values v;
  v.poses[kA] = s.pose();
  v.poses[kB] = s.pose();
  v.scales[kS] = 1.0;
  const Pose m = s.pose();
  const ScaledLoopResidual scaled = residual_scaled_loop(
      {kA, kB, kS, m.rotation(), m.translation(), InfoMatrix::Identity(), 1.0}, v);
  const LoopResidual plain = residual_loop({kA, kB, m, InfoMatrix::Identity(), 1.0}, v);
  EXPECT_LT((scaled.error - plain.error).norm(), 1e-14);
  EXPECT_TRUE(scaled.h_from.isApprox(plain.h_from, 1e-14));
  EXPECT_TRUE(scaled.h_to.isApprox(plain.h_to, 1e-14));
}

TEST(Residuals, ScaledLoopRejectsNonPositiveScale) {
  Values v;
  v.poses[kA] = Pose::identity();
  v.poses[kB] = Pose::identity();
  const ScaledLoopFactor f{kA, kB, kS, Rotation(), Vector3::UnitX(), InfoMatrix::Identity(), 1.0};
  for (double s : {0.0, -1.0}) {
    v.scales[kS] = s;
    EXPECT_THROW(residual_scaled_loop(f, v), DomainError);
  }
}

TEST(Residuals, FirstOrderScaleJacobian) {
  // With an identity measured rotation and zero error the closed form
  // [0; -direction] is the exact derivative.
  const Vector3 dir(0.3, -0.8, 0.5);
  const double scale = 1.7;
  Values v;
  v.poses[kA] = Pose::identity();
  v.poses[kB] = Pose(Rotation(), scale * dir);
  v.scales[kS] = scale;
  const Factor f = ScaledLoopFactor{kA, kB, kS, Rotation(), dir, InfoMatrix::Identity(), 1.0};
  const Eigen::MatrixXd numeric = numeric_jacobians(f, v)[2];
  const Twist closed = first_order_scale_jacobian(dir);
  EXPECT_LT(relative_error(closed, numeric), 1e-8);
  EXPECT_TRUE(closed.head<3>().isZero(0.0));
}

TEST(Residuals, FirstOrderScaleJacobianFailsForRotatedMeasurements) {
  // With a non-trivial measured rotation the closed form is off by R^T even
  // at zero error, so the solver relies on the exact form.
  Sampler s(10);
  const Pose a = s.pose();
  const Pose b = s.pose();
  const Pose rel = between(a, b);
  ASSERT_GT(rel.rotation().angle(), 0.3);
  Values v;
  v.poses[kA] = a;
  v.poses[kB] = b;
  v.scales[kS] = 1.0;
  const Factor f = ScaledLoopFactor{kA, kB, kS, rel.rotation(), rel.translation(),
                                    InfoMatrix::Identity(), 1.0};
  const Eigen::MatrixXd numeric = numeric_jacobians(f, v)[2];
  EXPECT_GT(relative_error(first_order_scale_jacobian(rel.translation()), numeric), 1e-2);
  EXPECT_LT(relative_error(linearize(f, v).jacobians[2], numeric), 1e-7);
}

TEST(Residuals, ScaleSmooth) {
  Values v;
  v.scales[kS] = 1.0;
  v.scales[kS2] = 1.5;
  const ScaleSmoothResidual r = residual_scale_smooth({kS, kS2, 10.0}, v);
  EXPECT_EQ(r.error, 0.5);
  EXPECT_EQ(r.h_first, -1.0);
  EXPECT_EQ(r.h_second, 1.0);
  const ScaleSmoothResidual swapped = residual_scale_smooth({kS2, kS, 10.0}, v);
  EXPECT_EQ(swapped.error, -0.5);
  EXPECT_EQ(factor_cost(ScaleSmoothFactor{kS, kS2, 10.0}, v),
            factor_cost(ScaleSmoothFactor{kS2, kS, 10.0}, v));
  EXPECT_EQ(factor_cost(ScaleSmoothFactor{kS, kS2, 10.0}, v), 2.5);
  v.scales[kS2] = 1.0;
  EXPECT_EQ(residual_scale_smooth({kS, kS2, 10.0}, v).error, 0.0);
}

// ---------------------------------------------------------------------------
// Jacobians against central differences at random linearization points.

class JacobianSuite : public ::testing::Test {
 protected:
  Sampler s{77};

  Values random_values() {
    Values v;
    v.poses[kA] = s.pose();
    v.poses[kB] = s.pose();
    v.scales[kS] = s.uniform(0.2, 5.0);
    v.scales[kS2] = s.uniform(0.2, 5.0);
    return v;
  }
};

TEST_F(JacobianSuite, Prior) {
  for (int k = 0; k < 100; ++k) {
    expect_jacobians_match(PriorFactor{kA, s.pose(), s.spd()}, random_values());
  }
}

TEST_F(JacobianSuite, Odometry) {
  for (int k = 0; k < 100; ++k) {
    expect_jacobians_match(OdometryFactor{kA, kB, s.pose(), s.spd()}, random_values());
  }
}

TEST_F(JacobianSuite, Loop) {
  for (int k = 0; k < 100; ++k) {
    expect_jacobians_match(LoopFactor{kA, kB, s.pose(), s.spd(), s.uniform(0.1, 1.0)},
                           random_values());
  }
}

TEST_F(JacobianSuite, ScaledLoop) {
  for (int k = 0; k < 100; ++k) {
    const Pose m = s.pose();
    expect_jacobians_match(ScaledLoopFactor{kA, kB, kS, m.rotation(), m.translation(), s.spd(),
                                            s.uniform(0.1, 1.0)},
                           random_values());
  }
}

TEST_F(JacobianSuite, ScaleSmooth) {
  for (int k = 0; k < 100; ++k) {
    expect_jacobians_match(ScaleSmoothFactor{kS, kS2, s.uniform(0.1, 20.0)}, random_values());
  }
}

// ---------------------------------------------------------------------------
// Graph construction

Trajectories straight_lines(int robots, int n) {
  Trajectories t;
  for (int r = 0; r < robots; ++r) {
    for (int i = 0; i < n; ++i) {
      t[r].push_back(Pose(Rotation::exp(Vector3(0, 0, 0.1 * i)), Vector3(i, 2.0 * r, 0)));
    }
  }
  return t;
}

LoopClosure make_loop(const Trajectories& truth, KeyframeId from, KeyframeId to, double scale) {
  LoopClosure l;
  l.from = from;
  l.to = to;
  const Pose rel = between(truth.at(from.robot).at(from.index), truth.at(to.robot).at(to.index));
  l.measured = Pose(rel.rotation(), rel.translation() / scale);
  l.scale_init = scale;
  l.loop_count = 100;
  l.odom_count = 100;
  l.ratio = 1.0;
  l.confidence = 0.5;
  return l;
}

template <typename T>
std::size_t count_factors(const FactorGraph& g) {
  std::size_t n = 0;
  for (const Factor& f : g.factors) n += std::holds_alternative<T>(f) ? 1 : 0;
  return n;
}

TEST(BuildGraph, BaseCounts) {
  const Trajectories t = straight_lines(2, 3);
  const FactorGraph g =
      build_graph(t, {make_loop(t, {0, 1}, {1, 2}, 1.0)}, Formulation::kBase);
  EXPECT_EQ(count_factors<OdometryFactor>(g), 4u);
  EXPECT_EQ(count_factors<LoopFactor>(g), 1u);
  EXPECT_EQ(count_factors<PriorFactor>(g), 1u);
  EXPECT_EQ(g.values.poses.size(), 6u);
  EXPECT_EQ(g.values.scales.size(), 0u);
  EXPECT_EQ(std::get<PriorFactor>(g.factors.front()).key, VariableKey::pose(0, 0));
  EXPECT_EQ(g.trajectory_lengths.at(1), 3);
}

TEST(BuildGraph, IndependentScalesCounts) {
  const Trajectories t = straight_lines(2, 3);
  const FactorGraph g =
      build_graph(t, {make_loop(t, {0, 1}, {1, 2}, 2.0)}, Formulation::kIndependentScales);
  EXPECT_EQ(count_factors<LoopFactor>(g), 0u);
  EXPECT_EQ(count_factors<ScaledLoopFactor>(g), 1u);
  EXPECT_EQ(g.values.scales.size(), 1u);
  EXPECT_EQ(g.values.scales.begin()->second, 2.0);
}

TEST(BuildGraph, SmoothedScalesChainWithinCluster) {
  const Trajectories t = straight_lines(2, 30);
  std::vector<LoopClosure> loops = {make_loop(t, {0, 5}, {1, 7}, 1.0),
                                    make_loop(t, {0, 1}, {1, 2}, 1.0),
                                    make_loop(t, {0, 9}, {1, 12}, 1.0),
                                    make_loop(t, {0, 25}, {1, 27}, 1.0)};
  const FactorGraph g = build_graph(t, loops, Formulation::kSmoothedScales);
  std::vector<std::pair<int, int>> links;
  for (const Factor& f : g.factors) {
    if (auto* s = std::get_if<ScaleSmoothFactor>(&f)) links.emplace_back(s->first.index, s->second.index);
  }
  // Cluster {0, 1, 2} chained in (from, to) order: loop 1, loop 0, loop 2.
  ASSERT_EQ(links.size(), 2u);
  EXPECT_EQ(links[0], std::make_pair(1, 0));
  EXPECT_EQ(links[1], std::make_pair(0, 2));
}

TEST(BuildGraph, SharedScaleHasOneVariable) {
  const Trajectories t = straight_lines(3, 10);
  std::vector<LoopClosure> loops = {make_loop(t, {0, 1}, {1, 2}, 3.0),
                                    make_loop(t, {1, 4}, {2, 4}, 1.0),
                                    make_loop(t, {0, 8}, {2, 1}, 2.0)};
  const FactorGraph g = build_graph(t, loops, Formulation::kSharedScale);
  ASSERT_EQ(g.values.scales.size(), 1u);
  EXPECT_EQ(g.values.scales.begin()->first, VariableKey::scale(0, 0));
  EXPECT_EQ(g.values.scales.begin()->second, 2.0);  // median of the initial scales
  EXPECT_EQ(count_factors<ScaledLoopFactor>(g), 3u);
}

TEST(BuildGraph, UnknownKeyframeIsReported) {
  const Trajectories t = straight_lines(2, 3);
  LoopClosure bad = make_loop(t, {0, 1}, {1, 2}, 1.0);
  bad.to.index = 9;
  try {
    build_graph(t, {bad}, Formulation::kBase);
    FAIL() << "expected AssemblyError";
  } catch (const AssemblyError& e) {
    EXPECT_NE(std::string(e.what()).find("(1,9)"), std::string::npos) << e.what();
  }
}

TEST(BuildGraph, ZeroCostAtGeneratingValues) {
  const Trajectories t = straight_lines(3, 20);
  std::vector<LoopClosure> loops = {make_loop(t, {0, 1}, {1, 2}, 0.5),
                                    make_loop(t, {0, 3}, {1, 4}, 0.5),
                                    make_loop(t, {1, 10}, {2, 12}, 4.0),
                                    make_loop(t, {0, 15}, {2, 5}, 1.5)};
  for (Formulation f : {Formulation::kBase, Formulation::kIndependentScales,
                        Formulation::kSmoothedScales}) {
    const FactorGraph g = build_graph(t, loops, f, {}, &t);
    EXPECT_LT(total_cost(g, g.values), 1e-18) << to_string(f);
  }
  for (LoopClosure& l : loops) {
    l.measured = Pose(l.measured.rotation(), l.measured.translation() * l.scale_init / 2.0);
    l.scale_init = 2.0;
  }
  const FactorGraph shared = build_graph(t, loops, Formulation::kSharedScale, {}, &t);
  EXPECT_LT(total_cost(shared, shared.values), 1e-18);
}

TEST(BuildGraph, PlacesUnanchoredRobotsThroughLoops) {
  Trajectories truth = straight_lines(2, 10);
  Trajectories odom;
  for (const auto& [r, poses] : truth) {
    for (const Pose& p : poses) odom[r].push_back(poses.front().inverse() * p);
  }
  const FactorGraph g = build_graph(odom, {make_loop(truth, {0, 4}, {1, 6}, 2.0)},
                                    Formulation::kIndependentScales);
  // Robot 1 is placed in robot 0's frame, so the graph starts at zero cost.
  EXPECT_LT(total_cost(g, g.values), 1e-18);
}

TEST(BuildGraph, Deterministic) {
  const Trajectories t = straight_lines(3, 20);
  std::vector<LoopClosure> loops = {make_loop(t, {0, 1}, {1, 2}, 0.5),
                                    make_loop(t, {1, 10}, {2, 12}, 4.0)};
  std::ostringstream a, b;
  write_g2o(a, build_graph(t, loops, Formulation::kSmoothedScales));
  write_g2o(b, build_graph(t, loops, Formulation::kSmoothedScales));
  EXPECT_EQ(a.str(), b.str());
}

TEST(BuildGraph, FormulationNames) {
  for (Formulation f : {Formulation::kBase, Formulation::kIndependentScales,
                        Formulation::kSmoothedScales, Formulation::kSharedScale}) {
    EXPECT_EQ(formulation_from_string(to_string(f)), f);
  }
  EXPECT_EQ(formulation_from_string("IS"), Formulation::kIndependentScales);
  EXPECT_THROW(formulation_from_string("sim3"), std::invalid_argument);
  EXPECT_THROW(loop_scale_key({LoopClosure{}}, 0, Formulation::kBase), std::invalid_argument);
}

}  // namespace
}  // namespace mrlc
