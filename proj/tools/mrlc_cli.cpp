// Command-line front end: simulation runs, sweeps, ATE evaluation and graph
// file handling. Exit codes: 0 success, 1 runtime error, 2 configuration
// error, 3 solver failure.

#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mrlc/ate.hpp"
#include "mrlc/experiment.hpp"
#include "mrlc/io.hpp"
#include "mrlc/optimize.hpp"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitSolver = 3;

struct RunFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> formulation;
  std::optional<std::string> solver;
  std::optional<std::string> scale_init;
  std::optional<std::string> out;
  std::optional<int> robots;
  std::optional<int> ticks;
  std::optional<int> keyframe_every;
  std::optional<double> outlier_rate;
  std::optional<double> range;
  bool timing = false;
  bool print_config = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("-c,--config", config, "JSON experiment config");
    cmd->add_option("--seed", seed, "Random seed");
    cmd->add_option("--formulation", formulation,
                    "base | independent_scales | smoothed_scales | shared_scale");
    cmd->add_option("--solver", solver, "lm | gnc");
    cmd->add_option("--scale-init", scale_init, "ground_truth | raw_oracle | odometry_ratio");
    cmd->add_option("-o,--out", out, "Output directory");
    cmd->add_option("--robots", robots, "Number of robots");
    cmd->add_option("--ticks", ticks, "Simulation length");
    cmd->add_option("--keyframe-every", keyframe_every, "Keyframe spacing in ticks");
    cmd->add_option("--outlier-rate", outlier_rate, "Fraction of gross outlier registrations");
    cmd->add_option("--range", range, "Communication range (m)");
    cmd->add_flag("--timing", timing, "Record solve time in the metrics");
    cmd->add_flag("--print-config", print_config, "Print the effective config and exit");
  }

  // Config file first, explicit flags on top.
  mrlc::ExperimentConfig resolve() const {
    mrlc::ExperimentConfig cfg = config.empty() ? mrlc::ExperimentConfig{} : mrlc::load_config(config);
    try {
      if (seed) cfg.seed = *seed;
      if (formulation) cfg.formulation = mrlc::formulation_from_string(*formulation);
      if (solver) cfg.solver = mrlc::solver_from_string(*solver);
      if (scale_init) cfg.scale_init = mrlc::scale_init_from_string(*scale_init);
    } catch (const std::invalid_argument& e) {
      throw mrlc::ConfigError(e.what());
    }
    if (out) cfg.output_dir = *out;
    if (robots) cfg.world.robots = *robots;
    if (ticks) cfg.world.ticks = *ticks;
    if (keyframe_every) cfg.world.keyframe_every = *keyframe_every;
    if (outlier_rate) cfg.oracle.outlier_rate = *outlier_rate;
    if (range) cfg.comm.range = *range;
    if (timing) cfg.record_timing = true;
    cfg.validate();
    return cfg;
  }
};

template <typename T, typename Parse>
std::vector<T> parse_list(const std::vector<std::string>& names, Parse parse) {
  std::vector<T> out;
  try {
    for (const std::string& n : names) out.push_back(parse(n));
  } catch (const std::invalid_argument& e) {
    throw mrlc::ConfigError(e.what());
  }
  return out;
}

std::ostream* output_stream(const std::string& path, std::ofstream& file) {
  if (path.empty()) return &std::cout;
  file.open(path);
  if (!file) throw std::runtime_error("cannot write " + path);
  return &file;
}

int cmd_run(const RunFlags& flags, const std::optional<std::string>& table) {
  mrlc::ExperimentConfig cfg = flags.resolve();
  if (table) cfg.registration_table = *table;
  if (flags.print_config) {
    std::cout << mrlc::config_to_json(cfg) << '\n';
    return 0;
  }
  const mrlc::ExperimentResult result = mrlc::run_experiment(cfg);
  mrlc::write_metrics_csv(std::cout, {result.metrics});
  if (result.solver_failed) {
    std::cerr << "solver failure: " << result.failure << '\n';
    return kExitSolver;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-robot loop closing with up-to-scale registrations"};
  app.require_subcommand(1);

  RunFlags run_flags;
  CLI::App* run = app.add_subcommand("run", "Simulate one experiment and print its metrics row");
  run_flags.add_to(run);

  RunFlags sweep_flags;
  std::vector<std::string> formulations{"base", "independent_scales", "smoothed_scales",
                                        "shared_scale"};
  std::vector<std::string> solvers{"lm"};
  std::vector<std::string> scale_inits;
  std::vector<std::uint64_t> seeds;
  std::vector<int> spacings;
  std::string sweep_out;
  CLI::App* sweep = app.add_subcommand(
      "sweep", "Formulation/solver/scale-init matrix, or keyframe sparsification with --spacings");
  sweep_flags.add_to(sweep);
  sweep->add_option("--formulations", formulations)->delimiter(',');
  sweep->add_option("--solvers", solvers)->delimiter(',');
  sweep->add_option("--scale-inits", scale_inits, "Defaults to the config's mode")->delimiter(',');
  sweep->add_option("--seeds", seeds, "Defaults to the config's seed")->delimiter(',');
  sweep->add_option("--spacings", spacings, "Keyframe spacing multipliers")->delimiter(',');
  sweep->add_option("--csv", sweep_out, "Write the table here instead of stdout");

  std::vector<std::string> estimate_files;
  std::vector<std::string> truth_files;
  std::string align = "se3";
  double max_gap = 0.05;
  CLI::App* ate = app.add_subcommand(
      "ate", "ATE between TUM trajectories; the i-th estimate and truth files belong to robot i");
  ate->add_option("--estimate", estimate_files)->required();
  ate->add_option("--truth", truth_files)->required();
  ate->add_option("--align", align, "se3 | none");
  ate->add_option("--max-gap", max_gap, "Maximum timestamp gap for association");

  std::string graph_in;
  std::string graph_out;
  std::optional<std::string> graph_solver;
  CLI::App* graph = app.add_subcommand("graph", "Inspect, optimize or rewrite a graph file");
  graph->add_option("input", graph_in)->required();
  graph->add_option("-o,--output", graph_out, "Write the (optimized) graph here");
  graph->add_option("--solve", graph_solver, "lm | gnc");

  RunFlags replay_flags;
  std::string table;
  CLI::App* replay = app.add_subcommand(
      "oracle-replay", "Run an experiment with registrations replayed from a table");
  replay_flags.add_to(replay);
  replay->add_option("--table", table, "Registration CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_flags, std::nullopt);
    if (*replay) return cmd_run(replay_flags, table);

    if (*sweep) {
      const mrlc::ExperimentConfig cfg = sweep_flags.resolve();
      std::ofstream file;
      std::ostream* out = output_stream(sweep_out, file);
      if (!spacings.empty()) {
        mrlc::write_sparsification_csv(*out, mrlc::sparsification_sweep(cfg, spacings));
        return 0;
      }
      const auto fs = parse_list<mrlc::Formulation>(formulations, mrlc::formulation_from_string);
      const auto ss = parse_list<mrlc::SolverKind>(solvers, mrlc::solver_from_string);
      auto inits = parse_list<mrlc::ScaleInitMode>(scale_inits, mrlc::scale_init_from_string);
      if (inits.empty()) inits.push_back(cfg.scale_init);
      if (seeds.empty()) seeds.push_back(cfg.seed);
      mrlc::write_metrics_csv(*out, mrlc::run_matrix(cfg, fs, ss, inits, seeds));
      return 0;
    }

    if (*ate) {
      if (estimate_files.size() != truth_files.size()) {
        throw mrlc::ConfigError("--estimate and --truth need the same number of files");
      }
      mrlc::Alignment alignment;
      try {
        alignment = mrlc::alignment_from_string(align);
      } catch (const std::invalid_argument& e) {
        throw mrlc::ConfigError(e.what());
      }
      mrlc::StampedTrajectories est;
      mrlc::StampedTrajectories gt;
      for (std::size_t i = 0; i < estimate_files.size(); ++i) {
        est[static_cast<int>(i)] = mrlc::load_tum(estimate_files[i]);
        gt[static_cast<int>(i)] = mrlc::load_tum(truth_files[i]);
      }
      const mrlc::AteResult r = mrlc::compute_ate(est, gt, alignment, max_gap);
      std::cout << "ate_m," << mrlc::format_double(r.rmse) << "\npairs," << r.errors.size()
                << '\n';
      return 0;
    }

    if (*graph) {
      mrlc::FactorGraph g = mrlc::load_g2o(graph_in);
      std::size_t loops = g.loop_factor_count();
      std::cout << "poses," << g.values.poses.size() << "\nscales," << g.values.scales.size()
                << "\nfactors," << g.factors.size() << "\nloop_factors," << loops << "\ncost,"
                << mrlc::format_double(mrlc::total_cost(g, g.values)) << '\n';
      if (graph_solver) {
        mrlc::SolverKind kind;
        try {
          kind = mrlc::solver_from_string(*graph_solver);
        } catch (const std::invalid_argument& e) {
          throw mrlc::ConfigError(e.what());
        }
        mrlc::SolveResult result = mrlc::solve(g, kind, mrlc::SolverConfig{});
        std::cout << "final_cost," << mrlc::format_double(result.report.final_cost)
                  << "\niterations," << result.report.iterations << '\n';
        g.values = std::move(result.values);
      }
      if (!graph_out.empty()) mrlc::save_g2o(graph_out, g);
      return 0;
    }
  } catch (const mrlc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const mrlc::GaugeError& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return kExitSolver;
  } catch (const mrlc::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
