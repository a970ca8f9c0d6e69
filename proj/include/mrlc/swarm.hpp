#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <variant>
#include <vector>

#include "mrlc/frontend.hpp"
#include "mrlc/graph.hpp"
#include "mrlc/optimize.hpp"
#include "mrlc/oracle.hpp"
#include "mrlc/world.hpp"

namespace mrlc {

// ---------------------------------------------------------------------------
// Messages

enum class MessageType : std::uint8_t {
  kDescriptorBatch,
  kLatentShare,
  kLoopAnnounce,
  kGraphShare,
  kEstimateBroadcast,
};

std::string to_string(MessageType type);

/// Accounting sizes (bytes).
inline constexpr std::size_t kDescriptorBatchHeaderBytes = 8;
inline constexpr std::size_t kDescriptorEntryHeaderBytes = 12;
inline constexpr std::size_t kLatentShareHeaderBytes = 16;
inline constexpr std::size_t kDefaultLatentBytes = 197376;
inline constexpr std::size_t kLoopRecordBytes = 104;
inline constexpr std::size_t kPoseRecordBytes = 56;
inline constexpr std::size_t kGraphShareHeaderBytes = 12;
inline constexpr std::size_t kTrajectoryHeaderBytes = 8;

struct DescriptorBatch {
  int robot = 0;
  std::vector<std::pair<int, Descriptor>> entries;
};

/// Opaque encoded keyframe sent to the robot that performs the decoding.
struct LatentShare {
  int robot = 0;
  int index = 0;
  std::uint64_t handle = 0;
  std::size_t size_bytes = kDefaultLatentBytes;
};

struct LoopAnnounce {
  LoopClosure loop;
};

/// Odometry and loops forwarded to the elected optimizer.
struct GraphShare {
  int robot = 0;
  int first_index = 0;
  std::vector<Pose> odometry;
  std::vector<LoopClosure> loops;
};

struct EstimateBroadcast {
  Trajectories poses;
};

using MessagePayload =
    std::variant<DescriptorBatch, LatentShare, LoopAnnounce, GraphShare, EstimateBroadcast>;

struct SwarmMessage {
  int sender = 0;
  int recipient = 0;
  MessagePayload payload;

  MessageType type() const { return static_cast<MessageType>(payload.index()); }

  /// Deterministic accounting size:
  ///   DescriptorBatch   8 + n * (4 * dim + 12)
  ///   LatentShare       16 + nominal latent size
  ///   LoopAnnounce      104
  ///   GraphShare        12 + 64 * poses + 104 * loops
  ///   EstimateBroadcast sum over robots of (8 + 56 * poses)
  std::size_t size_bytes() const;
};

// ---------------------------------------------------------------------------
// Ledger

struct LedgerEntry {
  std::size_t count = 0;
  std::size_t bytes = 0;

  bool operator==(const LedgerEntry&) const = default;
};

/// Message counts and bytes per directed robot pair and message type.
class BandwidthLedger {
 public:
  using Key = std::tuple<int, int, MessageType>;

  void record(const SwarmMessage& message);
  void record_failure(int decoder, int peer);

  const std::map<Key, LedgerEntry>& entries() const { return entries_; }
  const std::map<std::pair<int, int>, std::size_t>& failures() const { return failures_; }

  LedgerEntry total(MessageType type) const;
  std::size_t total_bytes() const;
  std::size_t total_failures() const;

  /// CSV with columns pair,type,count,bytes; pair is "sender->recipient".
  void write_csv(std::ostream& out) const;

  bool operator==(const BandwidthLedger&) const = default;

 private:
  std::map<Key, LedgerEntry> entries_;
  std::map<std::pair<int, int>, std::size_t> failures_;
};

// ---------------------------------------------------------------------------
// Agents

enum class ScaleInitMode { kGroundTruth, kRawOracle, kOdometryRatio };

std::string to_string(ScaleInitMode mode);
ScaleInitMode scale_init_from_string(const std::string& name);

struct AgentConfig {
  ConfidenceParams frontend;
  ScaleInitMode scale_init = ScaleInitMode::kOdometryRatio;
  std::size_t latent_bytes = kDefaultLatentBytes;
  Formulation formulation = Formulation::kIndependentScales;
  SolverKind solver = SolverKind::kLevenbergMarquardt;
  SolverConfig solver_config;
  GraphOptions graph_options;
};

/// Oriented candidate: `lower` belongs to the robot with the lower id, which
/// performs the registration.
struct CandidatePair {
  KeyframeId lower;
  KeyframeId higher;

  auto operator<=>(const CandidatePair&) const = default;
};

/// Loop record for a registered candidate, before ratio filtering.
/// `odom_metric` is the decoding robot's own odometry translation between
/// the keyframe and its odometry partner (lower index first), when known.
LoopClosure loop_from_registration(const CandidatePair& pair, const RegistrationResult& result,
                                   const std::optional<Vector3>& odom_metric, ScaleInitMode mode);

/// Own odometry translation of the odometry pair of keyframe `index`.
std::optional<Vector3> odometry_pair_translation(const std::vector<Pose>& odometry, int index);

/// Best match in a growing target set for every query of a growing query set.
/// Equivalent to match_descriptors over the current sets at any time.
class BestMatchTable {
 public:
  void add_query(const KeyframeId& id, const Descriptor& d);
  void add_target(const KeyframeId& id, const Descriptor& d);
  std::vector<CandidateMatch> matches(double threshold) const;

 private:
  struct Query {
    KeyframeId id;
    Descriptor descriptor;
    std::optional<KeyframeId> best;
    double similarity = 0.0;
  };
  void offer(Query& q, const KeyframeId& id, const Descriptor& d);

  std::vector<Query> queries_;
  std::vector<std::pair<KeyframeId, Descriptor>> targets_;
};

struct MergeOutcome {
  bool solved = false;
  bool failed = false;
  std::vector<int> merged_robots;
  std::size_t loops = 0;
  SolveReport report;
  FactorGraph graph;
  Values values;
  std::vector<LoopClosure> graph_loops;
  std::vector<SwarmMessage> broadcasts;
  std::string message;
};

/// One robot. Everything an agent knows about other robots arrives through
/// `receive`; the oracle is only consulted for keyframes whose latent the
/// agent holds.
class RobotAgent {
 public:
  RobotAgent(int id, AgentConfig cfg);

  int id() const { return id_; }
  void add_keyframe(const Keyframe& kf);

  /// New own descriptors for `peer`, if any.
  std::optional<SwarmMessage> descriptor_batch_for(int peer);

  /// Unprocessed candidates between this robot and `peer`, computed from the
  /// descriptors both have exchanged so far.
  std::vector<CandidatePair> candidates_with(int peer) const;

  /// Higher-id side: latents the lower-id `peer` needs for the current
  /// candidates (each keyframe at most once per recipient). Marks the
  /// candidates processed.
  std::vector<SwarmMessage> share_latents(int peer);

  struct RegistrationOutcome {
    std::vector<SwarmMessage> announces;
    std::vector<LoopClosure> accepted;
    std::size_t failures = 0;
    std::size_t rejected = 0;
  };

  /// Lower-id side: registers every current candidate with `peer`, filters by
  /// correspondence ratio and announces accepted loops. Marks the candidates
  /// processed.
  RegistrationOutcome register_candidates(int peer, RegistrationOracle& oracle);

  /// Odometry and loops the elected robot has not received from us yet.
  std::optional<SwarmMessage> graph_share_for(int elected);

  /// Elected side: joint optimization over the robots of `component` that are
  /// linked to this robot by known loops. Runs when loops were added since
  /// the last solve, or when `force` is set.
  MergeOutcome merge_and_broadcast(const std::vector<int>& component, bool force = false);

  void receive(const SwarmMessage& message);

  const std::vector<Keyframe>& keyframes() const { return own_; }
  const std::vector<LoopClosure>& loops() const { return loops_; }
  /// Current estimate for every robot known to this agent; trajectories are
  /// extended with odometry past the last merged keyframe.
  Trajectories estimate() const;
  /// Number of distinct own keyframes encoded (each at most once).
  std::size_t encodings() const { return encoded_.size(); }
  std::size_t latent_shares_sent() const;

 private:
  struct PeerTables {
    BestMatchTable own_to_peer;
    BestMatchTable peer_to_own;
    std::size_t sent = 0;
  };

  void add_loop(const LoopClosure& loop);
  Trajectories known_odometry() const;

  int id_;
  AgentConfig cfg_;
  std::vector<Keyframe> own_;
  std::vector<Pose> own_odometry_;
  std::map<int, PeerTables> peers_;
  std::map<int, std::set<CandidatePair>> processed_;
  std::set<int> encoded_;
  std::map<int, std::set<int>> latents_sent_;
  std::map<int, std::set<int>> latents_held_;
  std::vector<LoopClosure> loops_;
  std::set<std::pair<KeyframeId, KeyframeId>> loop_keys_;
  std::map<int, std::vector<Pose>> peer_odometry_;
  std::map<int, std::size_t> odometry_shared_;
  std::map<int, std::set<std::pair<KeyframeId, KeyframeId>>> loops_shared_;
  Trajectories estimate_;
  std::size_t loops_at_last_solve_ = 0;
};

/// Lowest id of a non-empty robot set.
int elect_optimizer(const std::vector<int>& robots);

// ---------------------------------------------------------------------------
// Simulation

struct Contact {
  int tick = 0;
  int a = 0;
  int b = 0;
};

struct CommSchedule {
  enum class Mode { kGeometric, kExplicit };
  Mode mode = Mode::kGeometric;
  /// Communication range over ground-truth positions (geometric mode).
  double range = 30.0;
  /// Contact list (explicit mode); treated as symmetric.
  std::vector<Contact> contacts;
};

struct SwarmConfig {
  AgentConfig agent;
  CommSchedule schedule;
  /// After the last tick, bring every robot into contact and force a merge.
  bool final_rendezvous = true;
};

struct SwarmEvent {
  enum class Kind { kContact, kLoopAccepted, kRegistrationFailed, kMerge, kMergeFailed };
  Kind kind;
  int tick = 0;
  std::vector<int> robots;
  std::string detail;
};

struct ExchangeResult {
  std::size_t messages = 0;
  std::vector<LoopClosure> loops;
  std::size_t failures = 0;
};

class SwarmSimulator {
 public:
  SwarmSimulator(const World& world, RegistrationOracle& oracle, SwarmConfig cfg);

  /// Adds the keyframes taken at `tick`, detects contacts and runs the
  /// exchange and merge protocol for them.
  std::vector<SwarmEvent> step(int tick);

  /// All ticks, then the final rendezvous when configured.
  std::vector<SwarmEvent> run();

  /// Runs the protocol for the given contacts, then merges every connected
  /// component of the contact graph.
  std::vector<SwarmEvent> rendezvous(int tick, std::vector<std::pair<int, int>> contacts,
                                     bool force_merge);

  ExchangeResult exchange_protocol(int a, int b);

  std::vector<std::pair<int, int>> contacts_at(int tick) const;

  const BandwidthLedger& ledger() const { return ledger_; }
  const RobotAgent& agent(int id) const { return agents_.at(static_cast<std::size_t>(id)); }
  const std::vector<RobotAgent>& agents() const { return agents_; }

  /// The lowest-id agent's estimate, completed with raw odometry for robots
  /// it never merged with.
  Trajectories final_estimate() const;
  /// Outcome of the most recent merge that ran.
  const std::optional<MergeOutcome>& last_merge() const { return last_merge_; }

 private:
  void deliver(std::vector<SwarmMessage> messages);

  const World& world_;
  RegistrationOracle& oracle_;
  SwarmConfig cfg_;
  std::vector<RobotAgent> agents_;
  BandwidthLedger ledger_;
  std::optional<MergeOutcome> last_merge_;
};

}  // namespace mrlc
