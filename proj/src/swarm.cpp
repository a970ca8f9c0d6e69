#include "mrlc/swarm.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <ostream>
#include <stdexcept>

namespace mrlc {

std::string to_string(MessageType type) {
  switch (type) {
    case MessageType::kDescriptorBatch: return "descriptor_batch";
    case MessageType::kLatentShare: return "latent_share";
    case MessageType::kLoopAnnounce: return "loop_announce";
    case MessageType::kGraphShare: return "graph_share";
    case MessageType::kEstimateBroadcast: return "estimate_broadcast";
  }
  return "unknown";
}

std::size_t SwarmMessage::size_bytes() const {
  struct Visitor {
    std::size_t operator()(const DescriptorBatch& m) const {
      std::size_t bytes = kDescriptorBatchHeaderBytes;
      for (const auto& [index, d] : m.entries) {
        bytes += 4 * static_cast<std::size_t>(d.dim()) + kDescriptorEntryHeaderBytes;
      }
      return bytes;
    }
    std::size_t operator()(const LatentShare& m) const {
      return kLatentShareHeaderBytes + m.size_bytes;
    }
    std::size_t operator()(const LoopAnnounce&) const { return kLoopRecordBytes; }
    std::size_t operator()(const GraphShare& m) const {
      return kGraphShareHeaderBytes + 64 * m.odometry.size() + kLoopRecordBytes * m.loops.size();
    }
    std::size_t operator()(const EstimateBroadcast& m) const {
      std::size_t bytes = 0;
      for (const auto& [robot, poses] : m.poses) {
        bytes += kTrajectoryHeaderBytes + kPoseRecordBytes * poses.size();
      }
      return bytes;
    }
  };
  return std::visit(Visitor{}, payload);
}

// ---------------------------------------------------------------------------

void BandwidthLedger::record(const SwarmMessage& message) {
  LedgerEntry& e = entries_[{message.sender, message.recipient, message.type()}];
  ++e.count;
  e.bytes += message.size_bytes();
}

void BandwidthLedger::record_failure(int decoder, int peer) { ++failures_[{decoder, peer}]; }

LedgerEntry BandwidthLedger::total(MessageType type) const {
  LedgerEntry sum;
  for (const auto& [key, e] : entries_) {
    if (std::get<2>(key) != type) continue;
    sum.count += e.count;
    sum.bytes += e.bytes;
  }
  return sum;
}

std::size_t BandwidthLedger::total_bytes() const {
  std::size_t sum = 0;
  for (const auto& [key, e] : entries_) sum += e.bytes;
  return sum;
}

std::size_t BandwidthLedger::total_failures() const {
  std::size_t sum = 0;
  for (const auto& [key, n] : failures_) sum += n;
  return sum;
}

void BandwidthLedger::write_csv(std::ostream& out) const {
  out << "pair,type,count,bytes\n";
  for (const auto& [key, e] : entries_) {
    out << std::get<0>(key) << "->" << std::get<1>(key) << ',' << to_string(std::get<2>(key))
        << ',' << e.count << ',' << e.bytes << '\n';
  }
  for (const auto& [pair, n] : failures_) {
    out << pair.first << "->" << pair.second << ",registration_failure," << n << ",0\n";
  }
}

// ---------------------------------------------------------------------------

std::string to_string(ScaleInitMode mode) {
  switch (mode) {
    case ScaleInitMode::kGroundTruth: return "ground_truth";
    case ScaleInitMode::kRawOracle: return "raw_oracle";
    case ScaleInitMode::kOdometryRatio: return "odometry_ratio";
  }
  return "unknown";
}

ScaleInitMode scale_init_from_string(const std::string& name) {
  if (name == "ground_truth") return ScaleInitMode::kGroundTruth;
  if (name == "raw_oracle") return ScaleInitMode::kRawOracle;
  if (name == "odometry_ratio") return ScaleInitMode::kOdometryRatio;
  throw std::invalid_argument("unknown scale init mode '" + name + "'");
}

// ---------------------------------------------------------------------------

std::optional<Vector3> odometry_pair_translation(const std::vector<Pose>& odometry, int index) {
  const int partner = odometry_partner(index);
  const int n = static_cast<int>(odometry.size());
  if (index < 0 || index >= n || partner < 0 || partner >= n) return std::nullopt;
  const auto lo = static_cast<std::size_t>(std::min(index, partner));
  const auto hi = static_cast<std::size_t>(std::max(index, partner));
  return between(odometry[lo], odometry[hi]).translation();
}

LoopClosure loop_from_registration(const CandidatePair& pair, const RegistrationResult& result,
                                   const std::optional<Vector3>& odom_metric, ScaleInitMode mode) {
  LoopClosure loop;
  loop.from = pair.lower;
  loop.to = pair.higher;
  loop.measured = result.relative;
  loop.loop_count = result.loop_count;
  loop.odom_count = result.odom_count;
  switch (mode) {
    case ScaleInitMode::kGroundTruth:
      loop.scale_init = result.true_scale.value_or(1.0);
      loop.scale_fallback = !result.true_scale.has_value();
      break;
    case ScaleInitMode::kRawOracle:
      break;
    case ScaleInitMode::kOdometryRatio:
      if (odom_metric && result.odom_translation) {
        const ScaleInit init =
            scale_init(*odom_metric, *result.odom_translation, loop.measured.translation());
        loop.scale_init = init.scale;
        loop.scale_fallback = init.fallback;
      } else {
        loop.scale_fallback = true;
      }
      break;
  }
  return loop;
}

// ---------------------------------------------------------------------------

void BestMatchTable::offer(Query& q, const KeyframeId& id, const Descriptor& d) {
  const double sim = q.descriptor.cosine(d);
  if (!q.best || sim > q.similarity || (sim == q.similarity && id < *q.best)) {
    q.best = id;
    q.similarity = sim;
  }
}

void BestMatchTable::add_query(const KeyframeId& id, const Descriptor& d) {
  Query q{id, d, std::nullopt, 0.0};
  for (const auto& [tid, td] : targets_) offer(q, tid, td);
  queries_.push_back(std::move(q));
}

void BestMatchTable::add_target(const KeyframeId& id, const Descriptor& d) {
  for (Query& q : queries_) offer(q, id, d);
  targets_.emplace_back(id, d);
}

std::vector<CandidateMatch> BestMatchTable::matches(double threshold) const {
  std::vector<CandidateMatch> out;
  for (const Query& q : queries_) {
    if (q.best && q.similarity >= threshold) out.push_back({q.id, *q.best, q.similarity});
  }
  return out;
}

// ---------------------------------------------------------------------------

int elect_optimizer(const std::vector<int>& robots) {
  if (robots.empty()) throw std::invalid_argument("cannot elect from an empty set");
  return *std::min_element(robots.begin(), robots.end());
}

RobotAgent::RobotAgent(int id, AgentConfig cfg) : id_(id), cfg_(std::move(cfg)) {}

void RobotAgent::add_keyframe(const Keyframe& kf) {
  if (kf.id.robot != id_ || kf.id.index != static_cast<int>(own_.size())) {
    throw std::invalid_argument("keyframes must be added in order by their own robot");
  }
  own_.push_back(kf);
  own_odometry_.push_back(kf.odometry);
}

std::optional<SwarmMessage> RobotAgent::descriptor_batch_for(int peer) {
  PeerTables& tables = peers_[peer];
  if (tables.sent >= own_.size()) return std::nullopt;
  DescriptorBatch batch{id_, {}};
  for (std::size_t i = tables.sent; i < own_.size(); ++i) {
    batch.entries.emplace_back(own_[i].id.index, own_[i].descriptor);
    // The tables only ever contain what both sides know.
    tables.own_to_peer.add_query(own_[i].id, own_[i].descriptor);
    tables.peer_to_own.add_target(own_[i].id, own_[i].descriptor);
  }
  tables.sent = own_.size();
  return SwarmMessage{id_, peer, std::move(batch)};
}

std::vector<CandidatePair> RobotAgent::candidates_with(int peer) const {
  std::set<CandidatePair> pairs;
  auto it = peers_.find(peer);
  if (it == peers_.end()) return {};
  auto orient = [&](const CandidateMatch& m) {
    return m.query.robot < m.match.robot ? CandidatePair{m.query, m.match}
                                         : CandidatePair{m.match, m.query};
  };
  const double threshold = cfg_.frontend.similarity_threshold;
  for (const CandidateMatch& m : it->second.own_to_peer.matches(threshold)) pairs.insert(orient(m));
  for (const CandidateMatch& m : it->second.peer_to_own.matches(threshold)) pairs.insert(orient(m));
  std::vector<CandidatePair> out;
  const auto done = processed_.find(peer);
  for (const CandidatePair& p : pairs) {
    if (done != processed_.end() && done->second.contains(p)) continue;
    out.push_back(p);
  }
  return out;
}

std::vector<SwarmMessage> RobotAgent::share_latents(int peer) {
  if (peer > id_) throw std::logic_error("latents are shared by the higher-id robot");
  std::vector<SwarmMessage> out;
  std::set<int>& sent = latents_sent_[peer];
  for (const CandidatePair& p : candidates_with(peer)) {
    processed_[peer].insert(p);
    const int index = p.higher.index;
    encoded_.insert(index);
    if (!sent.insert(index).second) continue;
    const std::uint64_t handle =
        (static_cast<std::uint64_t>(static_cast<std::uint32_t>(id_)) << 32) |
        static_cast<std::uint32_t>(index);
    out.push_back({id_, peer, LatentShare{id_, index, handle, cfg_.latent_bytes}});
  }
  return out;
}

RobotAgent::RegistrationOutcome RobotAgent::register_candidates(int peer,
                                                                RegistrationOracle& oracle) {
  if (peer < id_) throw std::logic_error("registration runs on the lower-id robot");
  RegistrationOutcome outcome;
  const std::set<int>& held = latents_held_[peer];
  std::vector<LoopClosure> registered;
  for (const CandidatePair& p : candidates_with(peer)) {
    processed_[peer].insert(p);
    if (!held.contains(p.higher.index)) {
      throw std::logic_error("missing latent for keyframe " + to_string(p.higher));
    }
    encoded_.insert(p.lower.index);
    const std::optional<RegistrationResult> result = oracle.register_loop(p.lower, p.higher);
    if (!result || result->odom_count <= 0) {
      ++outcome.failures;
      continue;
    }
    registered.push_back(loop_from_registration(
        p, *result, odometry_pair_translation(own_odometry_, p.lower.index), cfg_.scale_init));
  }
  outcome.accepted = filter_loops(registered, cfg_.frontend);
  outcome.rejected = registered.size() - outcome.accepted.size();
  for (const LoopClosure& loop : outcome.accepted) {
    add_loop(loop);
    outcome.announces.push_back({id_, peer, LoopAnnounce{loop}});
  }
  return outcome;
}

void RobotAgent::add_loop(const LoopClosure& loop) {
  if (loop_keys_.insert({loop.from, loop.to}).second) loops_.push_back(loop);
}

std::optional<SwarmMessage> RobotAgent::graph_share_for(int elected) {
  if (elected == id_) return std::nullopt;
  std::size_t& shared = odometry_shared_[elected];
  auto& loops_sent = loops_shared_[elected];
  GraphShare share{id_, static_cast<int>(shared), {}, {}};
  for (std::size_t i = shared; i < own_.size(); ++i) share.odometry.push_back(own_[i].odometry);
  for (const LoopClosure& loop : loops_) {
    if (loop.from.robot == elected || loop.to.robot == elected) continue;
    if (loops_sent.insert({loop.from, loop.to}).second) share.loops.push_back(loop);
  }
  if (share.odometry.empty() && share.loops.empty()) return std::nullopt;
  shared = own_.size();
  return SwarmMessage{id_, elected, std::move(share)};
}

void RobotAgent::receive(const SwarmMessage& message) {
  if (message.recipient != id_) throw std::logic_error("message delivered to the wrong robot");
  const int from = message.sender;
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, DescriptorBatch>) {
          PeerTables& tables = peers_[from];
          for (const auto& [index, d] : m.entries) {
            const KeyframeId id{m.robot, index};
            tables.own_to_peer.add_target(id, d);
            tables.peer_to_own.add_query(id, d);
          }
        } else if constexpr (std::is_same_v<T, LatentShare>) {
          latents_held_[from].insert(m.index);
        } else if constexpr (std::is_same_v<T, LoopAnnounce>) {
          add_loop(m.loop);
        } else if constexpr (std::is_same_v<T, GraphShare>) {
          std::vector<Pose>& odom = peer_odometry_[m.robot];
          if (m.first_index != static_cast<int>(odom.size())) {
            throw std::logic_error("graph share out of sequence");
          }
          odom.insert(odom.end(), m.odometry.begin(), m.odometry.end());
          for (const LoopClosure& loop : m.loops) add_loop(loop);
        } else if constexpr (std::is_same_v<T, EstimateBroadcast>) {
          estimate_ = m.poses;
        }
      },
      message.payload);
}

Trajectories RobotAgent::known_odometry() const {
  Trajectories out = {};
  out[id_] = own_odometry_;
  for (const auto& [robot, poses] : peer_odometry_) out[robot] = poses;
  return out;
}

Trajectories RobotAgent::estimate() const {
  const Trajectories odometry = known_odometry();
  Trajectories out = estimate_;
  if (!out.contains(id_)) out[id_] = odometry.at(id_);
  for (auto& [robot, poses] : out) {
    auto it = odometry.find(robot);
    if (it == odometry.end() || poses.empty()) continue;
    const std::vector<Pose>& odom = it->second;
    for (std::size_t i = poses.size(); i < odom.size(); ++i) {
      poses.push_back(poses.back() * between(odom[i - 1], odom[i]));
    }
  }
  return out;
}

std::size_t RobotAgent::latent_shares_sent() const {
  std::size_t n = 0;
  for (const auto& [peer, sent] : latents_sent_) n += sent.size();
  return n;
}

MergeOutcome RobotAgent::merge_and_broadcast(const std::vector<int>& component, bool force) {
  MergeOutcome outcome;
  const Trajectories odometry = known_odometry();
  const std::set<int> members(component.begin(), component.end());
  auto usable = [&](const KeyframeId& k) {
    auto it = odometry.find(k.robot);
    return members.contains(k.robot) && it != odometry.end() && k.index >= 0 &&
           k.index < static_cast<int>(it->second.size());
  };

  // Robots reachable from this one through known loops.
  std::set<int> merged{id_};
  std::deque<int> frontier{id_};
  while (!frontier.empty()) {
    const int r = frontier.front();
    frontier.pop_front();
    for (const LoopClosure& loop : loops_) {
      if (!usable(loop.from) || !usable(loop.to)) continue;
      int other = -1;
      if (loop.from.robot == r) other = loop.to.robot;
      if (loop.to.robot == r) other = loop.from.robot;
      if (other >= 0 && merged.insert(other).second) frontier.push_back(other);
    }
  }
  for (const LoopClosure& loop : loops_) {
    if (usable(loop.from) && usable(loop.to) && merged.contains(loop.from.robot) &&
        merged.contains(loop.to.robot)) {
      outcome.graph_loops.push_back(loop);
    }
  }
  outcome.merged_robots.assign(merged.begin(), merged.end());
  outcome.loops = outcome.graph_loops.size();
  if (!force && (merged.size() < 2 || outcome.loops <= loops_at_last_solve_)) {
    outcome.message = "no new loops";
    return outcome;
  }

  Trajectories graph_odometry;
  Trajectories initial;
  for (int r : merged) {
    graph_odometry[r] = odometry.at(r);
    // A previous estimate is only a consistent initial guess when it shares
    // this robot's gauge, i.e. when it contains this robot.
    if (estimate_.contains(id_)) {
      if (auto it = estimate_.find(r); it != estimate_.end()) initial[r] = it->second;
    }
  }

  outcome.solved = true;
  try {
    outcome.graph = build_graph(graph_odometry, outcome.graph_loops, cfg_.formulation,
                                cfg_.graph_options, initial.empty() ? nullptr : &initial);
    SolveResult result = solve(outcome.graph, cfg_.solver, cfg_.solver_config);
    outcome.report = result.report;
    if (!std::isfinite(result.report.final_cost)) throw std::runtime_error("non-finite cost");
    outcome.values = result.values;
    EstimateBroadcast broadcast{extract_trajectories(result.values)};
    for (int r : component) {
      if (r != id_) outcome.broadcasts.push_back({id_, r, broadcast});
    }
    estimate_ = std::move(broadcast.poses);
    loops_at_last_solve_ = outcome.loops;
    outcome.message = result.report.message;
  } catch (const std::exception& e) {
    outcome.failed = true;
    outcome.broadcasts.clear();
    outcome.message = e.what();
  }
  return outcome;
}

// ---------------------------------------------------------------------------

SwarmSimulator::SwarmSimulator(const World& world, RegistrationOracle& oracle, SwarmConfig cfg)
    : world_(world), oracle_(oracle), cfg_(std::move(cfg)) {
  cfg_.agent.solver_config.validate();
  for (const RobotTrack& track : world_.robots) agents_.emplace_back(track.id, cfg_.agent);
}

void SwarmSimulator::deliver(std::vector<SwarmMessage> messages) {
  std::stable_sort(messages.begin(), messages.end(), [](const auto& x, const auto& y) {
    return std::tuple(x.sender, x.recipient, x.type()) < std::tuple(y.sender, y.recipient, y.type());
  });
  for (const SwarmMessage& m : messages) {
    ledger_.record(m);
    agents_.at(static_cast<std::size_t>(m.recipient)).receive(m);
  }
}

std::vector<std::pair<int, int>> SwarmSimulator::contacts_at(int tick) const {
  std::set<std::pair<int, int>> out;
  const int n = static_cast<int>(world_.robots.size());
  if (cfg_.schedule.mode == CommSchedule::Mode::kGeometric) {
    for (int a = 0; a < n; ++a) {
      for (int b = a + 1; b < n; ++b) {
        const auto& ta = world_.robot(a).truth_per_tick;
        const auto& tb = world_.robot(b).truth_per_tick;
        if (tick < 0 || tick >= static_cast<int>(ta.size()) ||
            tick >= static_cast<int>(tb.size())) {
          continue;
        }
        const double d = (ta[static_cast<std::size_t>(tick)].translation() -
                          tb[static_cast<std::size_t>(tick)].translation())
                             .norm();
        if (d <= cfg_.schedule.range) out.insert({a, b});
      }
    }
  } else {
    for (const Contact& c : cfg_.schedule.contacts) {
      if (c.tick != tick || c.a == c.b) continue;
      if (c.a < 0 || c.b < 0 || c.a >= n || c.b >= n) {
        throw std::invalid_argument("contact references an unknown robot");
      }
      out.insert({std::min(c.a, c.b), std::max(c.a, c.b)});
    }
  }
  return {out.begin(), out.end()};
}

ExchangeResult SwarmSimulator::exchange_protocol(int a, int b) {
  if (a == b) throw std::invalid_argument("a robot cannot contact itself");
  const int lower = std::min(a, b);
  const int higher = std::max(a, b);
  RobotAgent& lo = agents_.at(static_cast<std::size_t>(lower));
  RobotAgent& hi = agents_.at(static_cast<std::size_t>(higher));
  ExchangeResult result;

  std::vector<SwarmMessage> batches;
  if (auto m = lo.descriptor_batch_for(higher)) batches.push_back(std::move(*m));
  if (auto m = hi.descriptor_batch_for(lower)) batches.push_back(std::move(*m));
  result.messages += batches.size();
  deliver(std::move(batches));

  std::vector<SwarmMessage> latents = hi.share_latents(lower);
  result.messages += latents.size();
  deliver(std::move(latents));

  RobotAgent::RegistrationOutcome reg = lo.register_candidates(higher, oracle_);
  for (std::size_t i = 0; i < reg.failures; ++i) ledger_.record_failure(lower, higher);
  result.failures = reg.failures;
  result.loops = reg.accepted;
  result.messages += reg.announces.size();
  deliver(std::move(reg.announces));
  return result;
}

std::vector<SwarmEvent> SwarmSimulator::rendezvous(int tick,
                                                   std::vector<std::pair<int, int>> contacts,
                                                   bool force_merge) {
  std::vector<SwarmEvent> events;
  for (auto& [a, b] : contacts) {
    if (a > b) std::swap(a, b);
  }
  std::sort(contacts.begin(), contacts.end());
  contacts.erase(std::unique(contacts.begin(), contacts.end()), contacts.end());

  UnionFind components(agents_.size());
  for (const auto& [a, b] : contacts) {
    events.push_back({SwarmEvent::Kind::kContact, tick, {a, b}, ""});
    const ExchangeResult ex = exchange_protocol(a, b);
    for (const LoopClosure& loop : ex.loops) {
      events.push_back({SwarmEvent::Kind::kLoopAccepted, tick, {a, b},
                        to_string(loop.from) + " " + to_string(loop.to)});
    }
    if (ex.failures > 0) {
      events.push_back({SwarmEvent::Kind::kRegistrationFailed, tick, {a, b},
                        std::to_string(ex.failures)});
    }
    components.unite(static_cast<std::size_t>(a), static_cast<std::size_t>(b));
  }

  std::map<std::size_t, std::vector<int>> groups;
  for (const auto& [a, b] : contacts) {
    groups[components.find(static_cast<std::size_t>(a))].push_back(a);
    groups[components.find(static_cast<std::size_t>(b))].push_back(b);
  }
  std::vector<std::vector<int>> ordered;
  for (auto& [root, members] : groups) {
    std::sort(members.begin(), members.end());
    members.erase(std::unique(members.begin(), members.end()), members.end());
    ordered.push_back(members);
  }
  std::sort(ordered.begin(), ordered.end());

  for (const std::vector<int>& members : ordered) {
    const int elected = elect_optimizer(members);
    std::vector<SwarmMessage> shares;
    for (int r : members) {
      if (auto m = agents_.at(static_cast<std::size_t>(r)).graph_share_for(elected)) {
        shares.push_back(std::move(*m));
      }
    }
    deliver(std::move(shares));
    MergeOutcome outcome =
        agents_.at(static_cast<std::size_t>(elected)).merge_and_broadcast(members, force_merge);
    if (!outcome.solved) continue;
    if (outcome.failed) {
      events.push_back({SwarmEvent::Kind::kMergeFailed, tick, outcome.merged_robots,
                        outcome.message});
    } else {
      events.push_back({SwarmEvent::Kind::kMerge, tick, outcome.merged_robots,
                        std::to_string(outcome.loops) + " loops"});
      deliver(outcome.broadcasts);
    }
    last_merge_ = std::move(outcome);
  }
  return events;
}

std::vector<SwarmEvent> SwarmSimulator::step(int tick) {
  for (const RobotTrack& track : world_.robots) {
    const auto it = std::find(track.keyframe_ticks.begin(), track.keyframe_ticks.end(), tick);
    if (it == track.keyframe_ticks.end()) continue;
    const int index = static_cast<int>(it - track.keyframe_ticks.begin());
    agents_.at(static_cast<std::size_t>(track.id)).add_keyframe(track.keyframe(index));
  }
  return rendezvous(tick, contacts_at(tick), false);
}

std::vector<SwarmEvent> SwarmSimulator::run() {
  std::vector<SwarmEvent> events;
  for (int t = 0; t < world_.config.ticks; ++t) {
    std::vector<SwarmEvent> e = step(t);
    events.insert(events.end(), e.begin(), e.end());
  }
  if (cfg_.final_rendezvous && agents_.size() > 1) {
    std::vector<std::pair<int, int>> all;
    for (int a = 0; a < static_cast<int>(agents_.size()); ++a) {
      for (int b = a + 1; b < static_cast<int>(agents_.size()); ++b) all.emplace_back(a, b);
    }
    std::vector<SwarmEvent> e = rendezvous(world_.config.ticks, all, true);
    events.insert(events.end(), e.begin(), e.end());
  }
  return events;
}

Trajectories SwarmSimulator::final_estimate() const {
  Trajectories out = agents_.front().estimate();
  for (const RobotAgent& agent : agents_) {
    if (out.contains(agent.id())) continue;
    std::vector<Pose>& poses = out[agent.id()];
    for (const Keyframe& kf : agent.keyframes()) poses.push_back(kf.odometry);
  }
  return out;
}

}  // namespace mrlc
