#include "mrlc/experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <tuple>

#include "mrlc/io.hpp"

namespace mrlc {

using nlohmann::json;

void ExperimentConfig::validate() const {
  try {
    world.validate();
    oracle.validate();
    solver_config.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(frontend.k > 0.0)) throw ConfigError("frontend.k must be > 0");
  if (frontend.ratio_threshold < 0.0) throw ConfigError("frontend.ratio_threshold must be >= 0");
  if (comm.mode == CommSchedule::Mode::kGeometric && !(comm.range >= 0.0)) {
    throw ConfigError("comm.range must be >= 0");
  }
  for (const Contact& c : comm.contacts) {
    if (c.a < 0 || c.b < 0 || c.a >= world.robots || c.b >= world.robots || c.a == c.b) {
      throw ConfigError("contact references an invalid robot pair");
    }
  }
  for (const InfoMatrix* info : {&graph_options.odometry_info, &graph_options.loop_info,
                                 &graph_options.prior_info}) {
    if (!is_valid_info(*info)) throw ConfigError("information matrices must be positive definite");
  }
  if (!(graph_options.scale_smooth_info > 0.0)) {
    throw ConfigError("scale_smooth_info must be > 0");
  }
  if (!(ate_max_gap >= 0.0)) throw ConfigError("ate_max_gap must be >= 0");
}

// ---------------------------------------------------------------------------
// JSON

namespace {

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  template <typename T, typename Parse>
  void read_enum(const char* key, T& out, Parse parse) {
    std::string name;
    if (!j_.contains(key)) return;
    read(key, name);
    try {
      out = parse(name);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  void read_diagonal(const char* key, InfoMatrix& out) {
    if (!j_.contains(key)) return;
    std::vector<double> diag;
    read(key, diag);
    if (diag.size() != 6) throw ConfigError(where(key) + ": expected 6 diagonal entries");
    out = Twist(Eigen::Map<const Twist>(diag.data())).asDiagonal();
  }

  std::optional<Section> child(const char* key) {
    if (!j_.contains(key)) return std::nullopt;
    used_.insert(key);
    return Section(j_.at(key), where(key));
  }

  const json& raw(const char* key) {
    used_.insert(key);
    return j_.at(key);
  }
  bool has(const char* key) const { return j_.contains(key); }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!used_.contains(item.key())) throw ConfigError("unknown key " + where(item.key()));
    }
  }

  std::string where(const std::string& key = "") const {
    return key.empty() ? path_ : path_ + "." + key;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

ScaleLaw scale_law_from_string(const std::string& name) {
  if (name == "log_uniform") return ScaleLaw::kLogUniform;
  if (name == "constant") return ScaleLaw::kConstant;
  throw std::invalid_argument("unknown scale law '" + name + "'");
}

std::string to_string(ScaleLaw law) {
  return law == ScaleLaw::kLogUniform ? "log_uniform" : "constant";
}

CommSchedule::Mode comm_mode_from_string(const std::string& name) {
  if (name == "geometric") return CommSchedule::Mode::kGeometric;
  if (name == "explicit") return CommSchedule::Mode::kExplicit;
  throw std::invalid_argument("unknown comm mode '" + name + "'");
}

std::vector<double> diagonal(const InfoMatrix& m) {
  std::vector<double> out(6);
  for (int i = 0; i < 6; ++i) out[static_cast<std::size_t>(i)] = m(i, i);
  return out;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  Section root(j, "config");
  root.read("seed", cfg.seed);
  root.read_enum("formulation", cfg.formulation, formulation_from_string);
  root.read_enum("solver", cfg.solver, solver_from_string);
  root.read_enum("scale_init", cfg.scale_init, scale_init_from_string);

  if (auto w = root.child("world")) {
    WorldConfig& c = cfg.world;
    w->read("robots", c.robots);
    w->read("ticks", c.ticks);
    w->read("step_length", c.step_length);
    w->read("keyframe_every", c.keyframe_every);
    w->read("route_width", c.route_width);
    w->read("route_height", c.route_height);
    w->read("corner_radius", c.corner_radius);
    w->read("alternate_direction", c.alternate_direction);
    w->read("lane_spacing", c.lane_spacing);
    w->read("descriptor_dim", c.descriptor_dim);
    w->read("descriptor_length_scale", c.descriptor_length_scale);
    w->read("descriptor_noise", c.descriptor_noise);
    w->read("odom_sigma_rot", c.odom_sigma_rot);
    w->read("odom_sigma_trans", c.odom_sigma_trans);
    w->read("odom_yaw_bias", c.odom_yaw_bias);
    w->finish();
  }
  if (auto o = root.child("oracle")) {
    OracleConfig& c = cfg.oracle;
    o->read("sigma_rot", c.sigma_rot);
    o->read("sigma_trans", c.sigma_trans);
    o->read("outlier_rate", c.outlier_rate);
    o->read_enum("scale_law", c.scale_law, scale_law_from_string);
    o->read("scale_value", c.scale_value);
    o->read("scale_min", c.scale_min);
    o->read("scale_max", c.scale_max);
    o->read("odom_scale_jitter", c.odom_scale_jitter);
    o->read("inlier_count_mean", c.inlier_count_mean);
    o->read("odom_count_mean", c.odom_count_mean);
    o->read("outlier_count_mean", c.outlier_count_mean);
    o->read("overlap_length", c.overlap_length);
    o->read("min_overlap", c.min_overlap);
    o->read("outlier_box", c.outlier_box);
    o->read("cluster_gap", c.cluster_gap);
    o->finish();
  }
  if (auto f = root.child("frontend")) {
    f->read("k", cfg.frontend.k);
    f->read("ratio_threshold", cfg.frontend.ratio_threshold);
    f->read("similarity_threshold", cfg.frontend.similarity_threshold);
    f->finish();
  }
  if (auto s = root.child("solver_config")) {
    SolverConfig& c = cfg.solver_config;
    s->read("max_iterations", c.max_iterations);
    s->read("initial_damping", c.initial_damping);
    s->read("damping_up", c.damping_up);
    s->read("damping_down", c.damping_down);
    s->read("absolute_tolerance", c.absolute_tolerance);
    s->read("relative_tolerance", c.relative_tolerance);
    if (auto g = s->child("gnc")) {
      GncConfig gnc;
      g->read("mu_update_factor", gnc.mu_update_factor);
      g->read("inlier_cost_threshold", gnc.inlier_cost_threshold);
      g->read("max_outer_iterations", gnc.max_outer_iterations);
      g->read("weight_tolerance", gnc.weight_tolerance);
      g->finish();
      c.gnc = gnc;
    }
    s->finish();
  }
  if (auto g = root.child("graph")) {
    g->read_diagonal("odometry_info", cfg.graph_options.odometry_info);
    g->read_diagonal("loop_info", cfg.graph_options.loop_info);
    g->read_diagonal("prior_info", cfg.graph_options.prior_info);
    g->read("scale_smooth_info", cfg.graph_options.scale_smooth_info);
    g->finish();
  }
  if (auto c = root.child("comm")) {
    c->read_enum("mode", cfg.comm.mode, comm_mode_from_string);
    c->read("range", cfg.comm.range);
    c->read("final_rendezvous", cfg.final_rendezvous);
    if (c->has("contacts")) {
      std::vector<std::array<int, 3>> contacts;
      c->read("contacts", contacts);
      for (const auto& [tick, a, b] : contacts) cfg.comm.contacts.push_back({tick, a, b});
    }
    c->finish();
  }
  root.read("latent_bytes", cfg.latent_bytes);
  root.read("registration_table", cfg.registration_table);
  root.read("output_dir", cfg.output_dir);
  root.read("record_timing", cfg.record_timing);
  root.read("ate_max_gap", cfg.ate_max_gap);
  root.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  const WorldConfig& w = cfg.world;
  const OracleConfig& o = cfg.oracle;
  const SolverConfig& s = cfg.solver_config;
  json j;
  j["seed"] = cfg.seed;
  j["formulation"] = to_string(cfg.formulation);
  j["solver"] = to_string(cfg.solver);
  j["scale_init"] = to_string(cfg.scale_init);
  j["world"] = {{"robots", w.robots},
                {"ticks", w.ticks},
                {"step_length", w.step_length},
                {"keyframe_every", w.keyframe_every},
                {"route_width", w.route_width},
                {"route_height", w.route_height},
                {"corner_radius", w.corner_radius},
                {"alternate_direction", w.alternate_direction},
                {"lane_spacing", w.lane_spacing},
                {"descriptor_dim", w.descriptor_dim},
                {"descriptor_length_scale", w.descriptor_length_scale},
                {"descriptor_noise", w.descriptor_noise},
                {"odom_sigma_rot", w.odom_sigma_rot},
                {"odom_sigma_trans", w.odom_sigma_trans},
                {"odom_yaw_bias", w.odom_yaw_bias}};
  j["oracle"] = {{"sigma_rot", o.sigma_rot},
                 {"sigma_trans", o.sigma_trans},
                 {"outlier_rate", o.outlier_rate},
                 {"scale_law", to_string(o.scale_law)},
                 {"scale_value", o.scale_value},
                 {"scale_min", o.scale_min},
                 {"scale_max", o.scale_max},
                 {"odom_scale_jitter", o.odom_scale_jitter},
                 {"inlier_count_mean", o.inlier_count_mean},
                 {"odom_count_mean", o.odom_count_mean},
                 {"outlier_count_mean", o.outlier_count_mean},
                 {"overlap_length", o.overlap_length},
                 {"min_overlap", o.min_overlap},
                 {"outlier_box", o.outlier_box},
                 {"cluster_gap", o.cluster_gap}};
  j["frontend"] = {{"k", cfg.frontend.k},
                   {"ratio_threshold", cfg.frontend.ratio_threshold},
                   {"similarity_threshold", cfg.frontend.similarity_threshold}};
  j["solver_config"] = {{"max_iterations", s.max_iterations},
                        {"initial_damping", s.initial_damping},
                        {"damping_up", s.damping_up},
                        {"damping_down", s.damping_down},
                        {"absolute_tolerance", s.absolute_tolerance},
                        {"relative_tolerance", s.relative_tolerance}};
  if (s.gnc) {
    j["solver_config"]["gnc"] = {{"mu_update_factor", s.gnc->mu_update_factor},
                                 {"inlier_cost_threshold", s.gnc->inlier_cost_threshold},
                                 {"max_outer_iterations", s.gnc->max_outer_iterations},
                                 {"weight_tolerance", s.gnc->weight_tolerance}};
  }
  j["graph"] = {{"odometry_info", diagonal(cfg.graph_options.odometry_info)},
                {"loop_info", diagonal(cfg.graph_options.loop_info)},
                {"prior_info", diagonal(cfg.graph_options.prior_info)},
                {"scale_smooth_info", cfg.graph_options.scale_smooth_info}};
  json contacts = json::array();
  for (const Contact& c : cfg.comm.contacts) contacts.push_back({c.tick, c.a, c.b});
  j["comm"] = {{"mode", cfg.comm.mode == CommSchedule::Mode::kGeometric ? "geometric" : "explicit"},
               {"range", cfg.comm.range},
               {"final_rendezvous", cfg.final_rendezvous},
               {"contacts", contacts}};
  j["latent_bytes"] = cfg.latent_bytes;
  j["registration_table"] = cfg.registration_table;
  j["output_dir"] = cfg.output_dir;
  j["record_timing"] = cfg.record_timing;
  j["ate_max_gap"] = cfg.ate_max_gap;
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Metrics

std::string MetricsRow::csv_header() {
  return "formulation,solver,scale_init,seed,ate_m,n_loops,solve_ms,bytes_total";
}

std::string MetricsRow::csv_row() const {
  std::ostringstream out;
  out << formulation << ',' << solver << ',' << scale_init << ',' << seed << ','
      << format_double(ate_m) << ',' << n_loops << ',' << (solve_ms ? format_double(*solve_ms) : "")
      << ',' << bytes_total;
  return out.str();
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << MetricsRow::csv_header() << '\n';
  for (const MetricsRow& r : rows) out << r.csv_row() << '\n';
}

std::string SparsificationRow::csv_header() {
  return "spacing,keyframes,ate_m,n_loops,descriptor_bytes,latent_bytes,bytes_total";
}

std::string SparsificationRow::csv_row() const {
  std::ostringstream out;
  out << spacing << ',' << keyframes << ',' << format_double(ate_m) << ',' << n_loops << ','
      << descriptor_bytes << ',' << latent_bytes << ',' << bytes_total;
  return out.str();
}

void write_sparsification_csv(std::ostream& out, const std::vector<SparsificationRow>& rows) {
  out << SparsificationRow::csv_header() << '\n';
  for (const SparsificationRow& r : rows) out << r.csv_row() << '\n';
}

// ---------------------------------------------------------------------------

std::map<int, std::vector<double>> keyframe_stamps(const World& world) {
  std::map<int, std::vector<double>> out;
  for (const RobotTrack& r : world.robots) {
    out[r.id].assign(r.keyframe_ticks.begin(), r.keyframe_ticks.end());
  }
  return out;
}

std::vector<LoopClosure> detect_loops(const World& world, RegistrationOracle& oracle,
                                      const ConfidenceParams& params, ScaleInitMode mode) {
  std::vector<std::vector<Keyframe>> keyframes;
  for (const RobotTrack& r : world.robots) {
    std::vector<Keyframe>& list = keyframes.emplace_back();
    for (int i = 0; i < static_cast<int>(r.truth.size()); ++i) list.push_back(r.keyframe(i));
  }
  std::vector<LoopClosure> registered;
  for (std::size_t a = 0; a < keyframes.size(); ++a) {
    for (std::size_t b = a + 1; b < keyframes.size(); ++b) {
      std::set<CandidatePair> pairs;
      for (const CandidateMatch& m : match_descriptors(keyframes[a], keyframes[b], params)) {
        pairs.insert({m.query, m.match});
      }
      for (const CandidateMatch& m : match_descriptors(keyframes[b], keyframes[a], params)) {
        pairs.insert({m.match, m.query});
      }
      const std::vector<Pose>& odometry = world.robots[a].odometry;
      for (const CandidatePair& p : pairs) {
        const std::optional<RegistrationResult> result = oracle.register_loop(p.lower, p.higher);
        if (!result || result->odom_count <= 0) continue;
        registered.push_back(loop_from_registration(
            p, *result, odometry_pair_translation(odometry, p.lower.index), mode));
      }
    }
  }
  return filter_loops(registered, params);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult result;
  WorldConfig world_cfg = cfg.world;
  world_cfg.seed = cfg.seed;
  result.world = generate_world(world_cfg);
  const World& world = result.world;

  std::unique_ptr<RegistrationOracle> oracle;
  if (cfg.registration_table.empty()) {
    OracleConfig oracle_cfg = cfg.oracle;
    oracle_cfg.seed = mix_seed(cfg.seed, 5);
    oracle = std::make_unique<SyntheticOracle>(world, oracle_cfg);
  } else {
    try {
      oracle = std::make_unique<FileOracle>(FileOracle::load(cfg.registration_table));
    } catch (const std::runtime_error& e) {
      throw ConfigError(e.what());
    }
  }
  RecordingOracle recorder(*oracle);

  SwarmConfig swarm_cfg;
  swarm_cfg.agent.frontend = cfg.frontend;
  swarm_cfg.agent.scale_init = cfg.scale_init;
  swarm_cfg.agent.latent_bytes = cfg.latent_bytes;
  swarm_cfg.agent.formulation = cfg.formulation;
  swarm_cfg.agent.solver = cfg.solver;
  swarm_cfg.agent.solver_config = cfg.solver_config;
  swarm_cfg.agent.graph_options = cfg.graph_options;
  swarm_cfg.schedule = cfg.comm;
  swarm_cfg.final_rendezvous = cfg.final_rendezvous;

  SwarmSimulator sim(world, recorder, swarm_cfg);
  result.events = sim.run();
  result.ledger = sim.ledger();
  result.merge = sim.last_merge();
  result.registrations = recorder.records();
  if (result.merge && result.merge->failed) {
    result.solver_failed = true;
    result.failure = result.merge->message;
  }

  const auto stamps = keyframe_stamps(world);
  result.estimate = stamp(sim.final_estimate(), stamps);
  result.truth = stamp(world.truth(), stamps);
  result.ate = compute_ate(result.estimate, result.truth, Alignment::kSE3, cfg.ate_max_gap);

  MetricsRow& m = result.metrics;
  m.formulation = to_string(cfg.formulation);
  m.solver = to_string(cfg.solver);
  m.scale_init = to_string(cfg.scale_init);
  m.seed = cfg.seed;
  m.ate_m = result.ate.rmse;
  m.n_loops = result.merge ? result.merge->loops : 0;
  if (cfg.record_timing && result.merge) m.solve_ms = result.merge->report.wall_time_ms;
  m.bytes_total = result.ledger.total_bytes();

  if (!cfg.output_dir.empty()) write_outputs(result, cfg.output_dir);
  return result;
}

void write_outputs(const ExperimentResult& result, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path root(dir);
  auto open = [&](const std::string& name) {
    std::ofstream out(root / name);
    if (!out) throw std::runtime_error("cannot write " + (root / name).string());
    return out;
  };
  for (const auto& [robot, trajectory] : result.estimate) {
    auto out = open("estimate_" + std::to_string(robot) + ".tum");
    write_tum(out, trajectory);
  }
  for (const auto& [robot, trajectory] : result.truth) {
    auto out = open("truth_" + std::to_string(robot) + ".tum");
    write_tum(out, trajectory);
  }
  {
    auto out = open("graph.g2o");
    if (result.merge) write_g2o(out, result.merge->graph);
  }
  {
    auto out = open("ledger.csv");
    result.ledger.write_csv(out);
  }
  {
    auto out = open("metrics.csv");
    write_metrics_csv(out, {result.metrics});
  }
  {
    auto out = open("registrations.csv");
    write_registrations(out, result.registrations);
  }
  const fs::path partial = root / "PARTIAL";
  if (result.solver_failed) {
    auto out = open("PARTIAL");
    out << result.failure << '\n';
  } else if (fs::exists(partial)) {
    fs::remove(partial);
  }
}

std::vector<MetricsRow> run_matrix(const ExperimentConfig& base,
                                   const std::vector<Formulation>& formulations,
                                   const std::vector<SolverKind>& solvers,
                                   const std::vector<ScaleInitMode>& scale_inits,
                                   const std::vector<std::uint64_t>& seeds) {
  struct Keyed {
    std::tuple<Formulation, SolverKind, ScaleInitMode, std::uint64_t> key;
    MetricsRow row;
  };
  std::vector<Keyed> runs;
  for (Formulation f : formulations) {
    for (SolverKind s : solvers) {
      for (ScaleInitMode init : scale_inits) {
        for (std::uint64_t seed : seeds) {
          ExperimentConfig cfg = base;
          cfg.formulation = f;
          cfg.solver = s;
          cfg.scale_init = init;
          cfg.seed = seed;
          cfg.output_dir.clear();
          runs.push_back({{f, s, init, seed}, run_experiment(cfg).metrics});
        }
      }
    }
  }
  std::stable_sort(runs.begin(), runs.end(),
                   [](const Keyed& a, const Keyed& b) { return a.key < b.key; });
  std::vector<MetricsRow> rows;
  for (Keyed& k : runs) rows.push_back(std::move(k.row));
  return rows;
}

std::vector<SparsificationRow> sparsification_sweep(const ExperimentConfig& cfg,
                                                    const std::vector<int>& spacings) {
  if (spacings.empty()) throw ConfigError("no spacings given");
  for (std::size_t i = 0; i < spacings.size(); ++i) {
    if (spacings[i] < 1 || (i > 0 && spacings[i] <= spacings[i - 1])) {
      throw ConfigError("spacings must be positive and strictly increasing");
    }
  }
  std::vector<SparsificationRow> rows;
  for (int spacing : spacings) {
    ExperimentConfig run = cfg;
    run.world.keyframe_every = cfg.world.keyframe_every * spacing;
    run.output_dir.clear();
    const ExperimentResult r = run_experiment(run);
    SparsificationRow row;
    row.spacing = spacing;
    for (const RobotTrack& t : r.world.robots) row.keyframes += t.truth.size();
    row.ate_m = r.metrics.ate_m;
    row.n_loops = r.metrics.n_loops;
    row.descriptor_bytes = r.ledger.total(MessageType::kDescriptorBatch).bytes;
    row.latent_bytes = r.ledger.total(MessageType::kLatentShare).bytes;
    row.bytes_total = r.metrics.bytes_total;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace mrlc
