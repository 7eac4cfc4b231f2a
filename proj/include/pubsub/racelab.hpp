#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pubsub/errors.hpp"

namespace pubsub::racelab {

/// Which metadata architecture the abstract model runs under.
///
/// single_writer: every operation is one fused atomic step; reclamation is
/// integrated into publish/membership/cleanup, so cross-plane consistency
/// is structural.
///
/// owner_driven: the publisher owns its messages' data plane while the
/// control plane is shared; operations touching both planes decompose into
/// one micro-step per plane access, and publish works from a possibly stale
/// cached subscriber list. No mitigation handshakes are modeled.
enum class Arch : uint8_t { single_writer = 0, owner_driven = 1 };

/// The nine metadata-modifying operations plus the two crash events that
/// enable the cleanup rows.
enum class OpKind : uint8_t {
  sub_join = 0,
  sub_leave,
  sub_crash,          // process death event (not a metadata op)
  sub_crash_cleanup,
  pub_join,
  pub_leave,
  pub_crash,          // process death event
  pub_crash_cleanup,
  publish,
  reclamation_check,
  ref_release,
};

const char* op_name(OpKind op) noexcept;
std::optional<OpKind> op_from_name(std::string_view name) noexcept;

struct ScenarioOp {
  OpKind op;
  int target = -1;   // subject process for join/leave/crash/cleanup/release
  int message = -1;  // for ref_release

  bool operator==(const ScenarioOp&) const = default;
};

struct ActorScript {
  int actor = 0;  // actor 0 is the publisher process
  std::vector<ScenarioOp> script;
};

struct Scenario {
  std::string name;
  bool transient_local = true;
  int depth = 1;
  int initial_messages = 0;
  std::vector<int> initial_subscribers;
  std::map<int, std::vector<int>> initial_refs;  // message index -> holders
  // Where the owner-driven publisher's subscriber cache refreshes. The
  // paper pins refresh to membership operations but not the exact point,
  // so it is a scenario parameter rather than a constant.
  bool membership_refreshes_cache = true;
  int max_messages = 3;
  std::vector<ActorScript> actors;
};

struct MessageState {
  bool exists = false;
  bool reclaimed = false;
  std::set<int> refs;  // visible reference set (the protocol's bits)

  bool operator==(const MessageState&) const = default;
};

struct AbstractState {
  // Control plane.
  std::set<int> subscribers;
  bool publisher_alive = true;
  // Data plane.
  std::vector<MessageState> messages;
  // Owner-driven publisher-local cache of the subscriber list.
  std::set<int> pub_cache;
  // Ground truth, never read by protocol steps: which processes actually
  // hold a handle on each message.
  std::vector<std::set<int>> live_refs;
  std::set<int> crashed;
  // Scratch carried between micro-steps of one decomposed operation.
  std::map<int, std::vector<int>> pending_history;     // joining sub -> history list
  std::map<int, std::vector<int>> pending_reclaim;     // actor -> snapshot-eligible messages
  // Per-actor program position.
  std::vector<int> pc;
  std::vector<int> micro;

  bool operator==(const AbstractState&) const = default;
  std::string canonical() const;  // deterministic serialization for hashing
};

struct StepRef {
  int actor = 0;
  OpKind op = OpKind::publish;
  int micro = 0;
  int target = -1;
  int message = -1;

  bool operator==(const StepRef&) const = default;
};

enum class ViolationKind : uint8_t { premature_reclaim = 0, permanent_leak = 1 };

struct Violation {
  ViolationKind kind;
  int message = -1;
  std::vector<StepRef> trace;  // replays deterministically to the violating state
};

struct ExploreLimits {
  int max_depth = 12;
  uint64_t max_states = 1'000'000;
};

struct ExploreResult {
  uint64_t states_visited = 0;
  std::vector<Violation> violations;  // minimal-depth, deterministic order
};

/// All architecture-legal next micro-steps from a state.
std::vector<StepRef> enumerate_steps(const Scenario& scenario, Arch arch,
                                     const AbstractState& state);

/// Exhaustive depth-bounded DFS with state hashing. Deterministic output.
/// Throws Errc::bound_exceeded past the state cap.
ExploreResult explore(const Scenario& scenario, Arch arch, ExploreLimits limits = {});

AbstractState initial_state(const Scenario& scenario);

/// Deterministic re-execution of a recorded trace. Throws
/// Errc::malformed_trace when a step is not enabled where recorded.
AbstractState replay(const Scenario& scenario, Arch arch, const std::vector<StepRef>& trace);

/// R1 predicate on a state: some reclaimed message is still held.
std::optional<int> premature_reclaim(const AbstractState& state);

// Built-in scenario families and (de)serialization for the CLI.
Scenario crash_join_scenario();      // subscriber crash + late join vs reclamation check
Scenario pub_crash_join_scenario();  // publisher crash recovery vs late join
Scenario stale_cache_leak_scenario();
std::vector<std::string> builtin_scenario_names();
Scenario builtin_scenario(std::string_view name);

std::string scenario_to_json(const Scenario& scenario);
Scenario scenario_from_json(const std::string& text);
std::string trace_to_json(const Scenario& scenario, Arch arch, const ExploreResult& result);

}  // namespace pubsub::racelab
