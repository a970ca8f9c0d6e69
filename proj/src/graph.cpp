#include "mrlc/graph.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <sstream>

namespace mrlc {

std::string to_string(const KeyframeId& id) {
  return "(" + std::to_string(id.robot) + "," + std::to_string(id.index) + ")";
}

std::string to_string(const VariableKey& key) {
  std::ostringstream os;
  os << (key.is_pose() ? "pose" : "scale") << "(" << key.robot << "," << key.index << ")";
  return os.str();
}

bool is_valid_info(const InfoMatrix& info) {
  if (!info.allFinite()) return false;
  if ((info - info.transpose()).cwiseAbs().maxCoeff() > 1e-12) return false;
  Eigen::SelfAdjointEigenSolver<InfoMatrix> solver(info, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff() > 0.0;
}

InfoMatrix apply_confidence(const InfoMatrix& info, double p) {
  if (!(p > 0.0 && p <= 1.0)) {
    throw std::invalid_argument("confidence must lie in (0, 1], got " + std::to_string(p));
  }
  return p * info;
}

const Pose& Values::pose(const VariableKey& key) const {
  auto it = poses.find(key);
  if (it == poses.end()) throw AssemblyError("missing pose variable " + to_string(key));
  return it->second;
}

double Values::scale(const VariableKey& key) const {
  auto it = scales.find(key);
  if (it == scales.end()) throw AssemblyError("missing scale variable " + to_string(key));
  return it->second;
}

bool Values::contains(const VariableKey& key) const {
  return key.is_pose() ? poses.count(key) > 0 : scales.count(key) > 0;
}

void FactorGraph::check_keys() const {
  for (const Factor& f : factors) {
    for (const VariableKey& key : factor_keys(f)) {
      if (!values.contains(key)) {
        throw AssemblyError("factor references unknown variable " + to_string(key));
      }
    }
  }
}

std::size_t FactorGraph::loop_factor_count() const {
  std::size_t n = 0;
  for (const Factor& f : factors) n += is_loop_factor(f) ? 1 : 0;
  return n;
}

// ---------------------------------------------------------------------------

namespace {

LoopResidual between_residual(const Pose& measurement, const Pose& from, const Pose& to) {
  const Pose relative = between(from, to);
  const Twist e = log(measurement.inverse() * relative);
  const Matrix6 jr_inv = right_jacobian_inverse(e);
  return {e, -jr_inv * adjoint(relative.inverse()), jr_inv};
}

}  // namespace

Twist residual_odometry(const OdometryFactor& f, const Values& est) {
  return log(f.measurement.inverse() * between(est.pose(f.from), est.pose(f.to)));
}

LoopResidual linearize_odometry(const OdometryFactor& f, const Values& est) {
  return between_residual(f.measurement, est.pose(f.from), est.pose(f.to));
}

LoopResidual residual_loop(const LoopFactor& f, const Values& est) {
  return between_residual(f.measurement, est.pose(f.from), est.pose(f.to));
}

ScaledLoopResidual residual_scaled_loop(const ScaledLoopFactor& f, const Values& est) {
  const double s = est.scale(f.scale);
  if (!(s > 0.0)) {
    throw DomainError("scale variable " + to_string(f.scale) + " must be positive");
  }
  const Pose measurement(f.rotation, s * f.direction);
  const Pose relative = between(est.pose(f.from), est.pose(f.to));
  const Pose error_pose = measurement.inverse() * relative;
  const Twist e = log(error_pose);
  const Matrix6 jr_inv = right_jacobian_inverse(e);

  // d measurement / ds as a right perturbation: (0, R^T t).
  Twist d_meas = Twist::Zero();
  d_meas.tail<3>() = f.rotation.inverse() * f.direction;

  ScaledLoopResidual out;
  out.error = e;
  out.h_from = -jr_inv * adjoint(relative.inverse());
  out.h_to = jr_inv;
  out.h_scale = -jr_inv * adjoint(error_pose.inverse()) * d_meas;
  return out;
}

ScaleSmoothResidual residual_scale_smooth(const ScaleSmoothFactor& f, const Values& est) {
  ScaleSmoothResidual out;
  out.error = est.scale(f.second) - est.scale(f.first);
  return out;
}

PriorResidual residual_prior(const PriorFactor& f, const Values& est) {
  const Twist e = log(f.value.inverse() * est.pose(f.key));
  return {e, right_jacobian_inverse(e)};
}

std::pair<Matrix6, Matrix6> first_order_between_jacobians(const Pose& relative) {
  return {-adjoint(relative.inverse()), Matrix6::Identity()};
}

Twist first_order_scale_jacobian(const Vector3& direction) {
  Twist h = Twist::Zero();
  h.tail<3>() = -direction;
  return h;
}

// ---------------------------------------------------------------------------

std::vector<VariableKey> factor_keys(const Factor& f) {
  return std::visit(
      [](const auto& x) -> std::vector<VariableKey> {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, PriorFactor>) {
          return {x.key};
        } else if constexpr (std::is_same_v<T, ScaledLoopFactor>) {
          return {x.from, x.to, x.scale};
        } else if constexpr (std::is_same_v<T, ScaleSmoothFactor>) {
          return {x.first, x.second};
        } else {
          return {x.from, x.to};
        }
      },
      f);
}

bool is_loop_factor(const Factor& f) {
  return std::holds_alternative<LoopFactor>(f) || std::holds_alternative<ScaledLoopFactor>(f);
}

LinearizedFactor linearize(const Factor& f, const Values& est) {
  LinearizedFactor out;
  out.keys = factor_keys(f);
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, PriorFactor>) {
          const PriorResidual r = residual_prior(x, est);
          out.error = r.error;
          out.info = x.info;
          out.jacobians = {r.h};
        } else if constexpr (std::is_same_v<T, OdometryFactor>) {
          const LoopResidual r = linearize_odometry(x, est);
          out.error = r.error;
          out.info = x.info;
          out.jacobians = {r.h_from, r.h_to};
        } else if constexpr (std::is_same_v<T, LoopFactor>) {
          const LoopResidual r = residual_loop(x, est);
          out.error = r.error;
          out.info = x.confidence * x.info;
          out.jacobians = {r.h_from, r.h_to};
        } else if constexpr (std::is_same_v<T, ScaledLoopFactor>) {
          const ScaledLoopResidual r = residual_scaled_loop(x, est);
          out.error = r.error;
          out.info = x.confidence * x.info;
          out.jacobians = {r.h_from, r.h_to, r.h_scale};
        } else {
          const ScaleSmoothResidual r = residual_scale_smooth(x, est);
          out.error = Eigen::VectorXd::Constant(1, r.error);
          out.info = Eigen::MatrixXd::Constant(1, 1, x.info);
          out.jacobians = {Eigen::MatrixXd::Constant(1, 1, r.h_first),
                           Eigen::MatrixXd::Constant(1, 1, r.h_second)};
        }
      },
      f);
  return out;
}

double factor_cost(const Factor& f, const Values& est) {
  return std::visit(
      [&](const auto& x) -> double {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, PriorFactor>) {
          const Twist e = log(x.value.inverse() * est.pose(x.key));
          return e.dot(x.info * e);
        } else if constexpr (std::is_same_v<T, OdometryFactor>) {
          const Twist e = residual_odometry(x, est);
          return e.dot(x.info * e);
        } else if constexpr (std::is_same_v<T, LoopFactor>) {
          const Twist e =
              log(x.measurement.inverse() * between(est.pose(x.from), est.pose(x.to)));
          return x.confidence * e.dot(x.info * e);
        } else if constexpr (std::is_same_v<T, ScaledLoopFactor>) {
          const double s = est.scale(x.scale);
          if (!(s > 0.0)) {
            throw DomainError("scale variable " + to_string(x.scale) + " must be positive");
          }
          const Pose measurement(x.rotation, s * x.direction);
          const Twist e = log(measurement.inverse() * between(est.pose(x.from), est.pose(x.to)));
          return x.confidence * e.dot(x.info * e);
        } else {
          const double e = est.scale(x.second) - est.scale(x.first);
          return x.info * e * e;
        }
      },
      f);
}

double total_cost(const FactorGraph& graph, const Values& est, const std::vector<double>* weights) {
  double cost = 0.0;
  for (std::size_t i = 0; i < graph.factors.size(); ++i) {
    const double c = factor_cost(graph.factors[i], est);
    cost += weights ? (*weights)[i] * c : c;
  }
  return cost;
}

}  // namespace mrlc
