#include "mrlc/optimize.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <chrono>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mrlc/frontend.hpp"

namespace mrlc {

void SolverConfig::validate() const {
  if (max_iterations < 0) throw std::invalid_argument("max_iterations must be >= 0");
  if (!(initial_damping > 0.0)) throw std::invalid_argument("initial_damping must be > 0");
  if (!(damping_up > 1.0) || !(damping_down > 0.0 && damping_down < 1.0)) {
    throw std::invalid_argument("damping factors must satisfy up > 1 and 0 < down < 1");
  }
  if (!(absolute_tolerance > 0.0) || !(relative_tolerance > 0.0)) {
    throw std::invalid_argument("tolerances must be > 0");
  }
  if (gnc) {
    if (!(gnc->mu_update_factor > 1.0)) throw std::invalid_argument("mu_update_factor must be > 1");
    if (!(gnc->inlier_cost_threshold > 0.0)) {
      throw std::invalid_argument("inlier_cost_threshold must be > 0");
    }
  }
}

std::string SolveReport::csv_row() const {
  std::ostringstream os;
  os << std::setprecision(17) << final_cost << ',' << iterations << ',' << std::setprecision(6)
     << wall_time_ms;
  return os.str();
}

std::string to_string(SolverKind kind) {
  return kind == SolverKind::kGnc ? "gnc" : "lm";
}

SolverKind solver_from_string(const std::string& name) {
  if (name == "lm" || name == "LM") return SolverKind::kLevenbergMarquardt;
  if (name == "gnc" || name == "GNC") return SolverKind::kGnc;
  throw std::invalid_argument("unknown solver '" + name + "'");
}

void check_gauge(const FactorGraph& graph) {
  std::map<VariableKey, std::size_t> index;
  for (const auto& [key, pose] : graph.values.poses) index.emplace(key, index.size());
  UnionFind uf(index.size());
  std::vector<bool> anchored(index.size(), false);
  for (const Factor& f : graph.factors) {
    std::vector<std::size_t> ids;
    for (const VariableKey& key : factor_keys(f)) {
      if (!key.is_pose()) continue;
      auto it = index.find(key);
      if (it == index.end()) throw AssemblyError("factor references unknown variable " + to_string(key));
      ids.push_back(it->second);
    }
    for (std::size_t i = 1; i < ids.size(); ++i) uf.unite(ids[0], ids[i]);
    if (std::holds_alternative<PriorFactor>(f)) anchored[ids[0]] = true;
  }
  std::vector<bool> root_anchored(index.size(), false);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (anchored[i]) root_anchored[uf.find(i)] = true;
  }
  for (const auto& [key, i] : index) {
    if (!root_anchored[uf.find(i)]) {
      throw GaugeError("pose component containing " + to_string(key) + " has no prior");
    }
  }
}

namespace {

using Clock = std::chrono::steady_clock;

struct Layout {
  std::map<VariableKey, Eigen::Index> offset;
  Eigen::Index dim = 0;
};

Layout make_layout(const Values& values) {
  // Poses and scales interleaved in VariableKey order.
  std::set<VariableKey> keys;
  for (const auto& [k, v] : values.poses) keys.insert(k);
  for (const auto& [k, v] : values.scales) keys.insert(k);
  Layout layout;
  for (const VariableKey& k : keys) {
    layout.offset[k] = layout.dim;
    layout.dim += k.is_pose() ? 6 : 1;
  }
  return layout;
}

struct NormalEquations {
  Eigen::SparseMatrix<double> hessian;
  Eigen::VectorXd gradient;
};

NormalEquations assemble(const FactorGraph& graph, const Values& values, const Layout& layout,
                         const std::vector<double>* weights) {
  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(layout.dim);
  for (std::size_t fi = 0; fi < graph.factors.size(); ++fi) {
    const double w = weights ? (*weights)[fi] : 1.0;
    if (w == 0.0) continue;
    const LinearizedFactor lin = linearize(graph.factors[fi], values);
    const Eigen::MatrixXd info = w * lin.info;
    const Eigen::VectorXd info_e = info * lin.error;
    for (std::size_t a = 0; a < lin.keys.size(); ++a) {
      const Eigen::Index oa = layout.offset.at(lin.keys[a]);
      const Eigen::MatrixXd jt_info = lin.jacobians[a].transpose() * info;
      g.segment(oa, lin.jacobians[a].cols()) += lin.jacobians[a].transpose() * info_e;
      for (std::size_t b = 0; b < lin.keys.size(); ++b) {
        const Eigen::Index ob = layout.offset.at(lin.keys[b]);
        const Eigen::MatrixXd block = jt_info * lin.jacobians[b];
        for (Eigen::Index r = 0; r < block.rows(); ++r) {
          for (Eigen::Index c = 0; c < block.cols(); ++c) {
            triplets.emplace_back(oa + r, ob + c, block(r, c));
          }
        }
      }
    }
  }
  NormalEquations ne;
  ne.hessian.resize(layout.dim, layout.dim);
  ne.hessian.setFromTriplets(triplets.begin(), triplets.end());
  ne.gradient = std::move(g);
  return ne;
}

Values apply_step(const Values& values, const Layout& layout, const Eigen::VectorXd& step) {
  Values out = values;
  for (auto& [key, pose] : out.poses) {
    pose = retract(pose, step.segment<6>(layout.offset.at(key)));
  }
  for (auto& [key, s] : out.scales) s += step[layout.offset.at(key)];
  return out;
}

bool scales_positive(const Values& values) {
  for (const auto& [key, s] : values.scales) {
    if (!(s > 0.0)) return false;
  }
  return true;
}

constexpr double kMaxDamping = 1e16;
constexpr double kMinDamping = 1e-12;
constexpr double kStepTolerance = 1e-12;

}  // namespace

SolveResult solve_lm(const FactorGraph& graph, const SolverConfig& cfg,
                     const std::vector<double>* weights, const Values* initial) {
  cfg.validate();
  graph.check_keys();
  check_gauge(graph);
  if (weights && weights->size() != graph.factors.size()) {
    throw std::invalid_argument("weights must have one entry per factor");
  }

  const auto start = Clock::now();
  SolveResult result;
  result.values = initial ? *initial : graph.values;
  SolveReport& report = result.report;

  const Layout layout = make_layout(result.values);
  double cost = total_cost(graph, result.values, weights);
  report.initial_cost = cost;
  report.cost_trace.push_back(cost);
  double lambda = cfg.initial_damping;

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
  bool pattern_ready = false;

  while (report.iterations < cfg.max_iterations) {
    if (cost < cfg.absolute_tolerance) {
      report.converged = true;
      report.message = "absolute tolerance reached";
      break;
    }
    NormalEquations ne = assemble(graph, result.values, layout, weights);
    bool accepted = false;
    bool stop = false;
    while (!accepted) {
      if (lambda > kMaxDamping) {
        report.converged = true;
        report.message = "no further decrease possible";
        stop = true;
        break;
      }
      Eigen::SparseMatrix<double> damped = ne.hessian;
      for (Eigen::Index i = 0; i < layout.dim; ++i) damped.coeffRef(i, i) += lambda;
      if (!pattern_ready) {
        solver.analyzePattern(damped);
        pattern_ready = true;
      }
      solver.factorize(damped);
      if (solver.info() != Eigen::Success) {
        lambda *= cfg.damping_up;
        continue;
      }
      Eigen::VectorXd step = solver.solve(-ne.gradient);
      if (solver.info() != Eigen::Success || !step.allFinite()) {
        lambda *= cfg.damping_up;
        continue;
      }

      Values candidate = apply_step(result.values, layout, step);
      for (int halving = 0; halving < 20 && !scales_positive(candidate); ++halving) {
        step *= 0.5;
        candidate = apply_step(result.values, layout, step);
      }
      if (!scales_positive(candidate)) {
        lambda *= cfg.damping_up;
        continue;
      }

      const double new_cost = total_cost(graph, candidate, weights);
      if (std::isfinite(new_cost) && new_cost < cost) {
        const double relative = (cost - new_cost) / cost;
        result.values = std::move(candidate);
        cost = new_cost;
        report.cost_trace.push_back(cost);
        ++report.iterations;
        lambda = std::max(lambda * cfg.damping_down, kMinDamping);
        accepted = true;
        if (relative < cfg.relative_tolerance) {
          report.converged = true;
          report.message = "relative tolerance reached";
          stop = true;
        } else if (step.norm() < kStepTolerance) {
          report.converged = true;
          report.message = "step tolerance reached";
          stop = true;
        }
      } else {
        lambda *= cfg.damping_up;
      }
    }
    if (stop) break;
  }
  if (!report.converged && report.message.empty()) report.message = "iteration limit reached";
  if (cost < cfg.absolute_tolerance && !report.converged) {
    report.converged = true;
    report.message = "absolute tolerance reached";
  }
  report.final_cost = cost;
  report.wall_time_ms =
      std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  return result;
}

SolveResult solve_gnc(const FactorGraph& graph, const SolverConfig& cfg) {
  const GncConfig gnc = cfg.gnc.value_or(GncConfig{});
  SolverConfig inner = cfg;
  inner.gnc = gnc;
  inner.validate();

  const auto start = Clock::now();
  std::vector<std::size_t> loop_ids;
  for (std::size_t i = 0; i < graph.factors.size(); ++i) {
    if (is_loop_factor(graph.factors[i])) loop_ids.push_back(i);
  }
  std::vector<double> weights(graph.factors.size(), 1.0);

  SolveResult result = solve_lm(graph, inner, &weights);
  int total_iterations = result.report.iterations;
  const double initial_cost = result.report.initial_cost;
  std::vector<double> trace{result.report.final_cost};

  auto residuals = [&](const Values& values) {
    std::vector<double> r2;
    r2.reserve(loop_ids.size());
    for (std::size_t id : loop_ids) r2.push_back(factor_cost(graph.factors[id], values));
    return r2;
  };

  const double c2 = gnc.inlier_cost_threshold;
  std::vector<double> r2 = residuals(result.values);
  double max_r2 = 0.0;
  for (double r : r2) max_r2 = std::max(max_r2, r);

  bool converged = result.report.converged;
  std::string message = "all loops within the inlier threshold";
  if (!loop_ids.empty() && max_r2 > c2) {
    double mu = c2 / (2.0 * max_r2 - c2);
    message = "outer iteration limit reached";
    for (int outer = 0; outer < gnc.max_outer_iterations; ++outer) {
      bool binary = true;
      for (std::size_t k = 0; k < loop_ids.size(); ++k) {
        double w;
        if (r2[k] >= (mu + 1.0) / mu * c2) {
          w = 0.0;
        } else if (r2[k] <= mu / (mu + 1.0) * c2) {
          w = 1.0;
        } else {
          w = std::sqrt(c2 * mu * (mu + 1.0) / r2[k]) - mu;
          w = std::clamp(w, 0.0, 1.0);
        }
        weights[loop_ids[k]] = w;
        if (w > gnc.weight_tolerance && w < 1.0 - gnc.weight_tolerance) binary = false;
      }
      const Values warm = result.values;
      result = solve_lm(graph, inner, &weights, &warm);
      total_iterations += result.report.iterations;
      trace.push_back(result.report.final_cost);
      r2 = residuals(result.values);
      converged = result.report.converged;
      if (binary) {
        message = "weights converged";
        break;
      }
      mu *= gnc.mu_update_factor;
    }
  }

  result.report.initial_cost = initial_cost;
  result.report.iterations = total_iterations;
  result.report.cost_trace = std::move(trace);
  result.report.converged = converged;
  result.report.message = message;
  result.report.loop_weights.clear();
  for (std::size_t id : loop_ids) result.report.loop_weights.push_back(weights[id]);
  result.report.wall_time_ms =
      std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  return result;
}

SolveResult solve(const FactorGraph& graph, SolverKind kind, const SolverConfig& cfg) {
  return kind == SolverKind::kGnc ? solve_gnc(graph, cfg) : solve_lm(graph, cfg);
}

}  // namespace mrlc
