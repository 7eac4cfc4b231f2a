#include "pubsub/racelab.hpp"

#include <algorithm>
#include <functional>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace pubsub::racelab {

using nlohmann::json;

const char* op_name(OpKind op) noexcept {
  switch (op) {
    case OpKind::sub_join: return "sub_join";
    case OpKind::sub_leave: return "sub_leave";
    case OpKind::sub_crash: return "sub_crash";
    case OpKind::sub_crash_cleanup: return "sub_crash_cleanup";
    case OpKind::pub_join: return "pub_join";
    case OpKind::pub_leave: return "pub_leave";
    case OpKind::pub_crash: return "pub_crash";
    case OpKind::pub_crash_cleanup: return "pub_crash_cleanup";
    case OpKind::publish: return "publish";
    case OpKind::reclamation_check: return "reclamation_check";
    case OpKind::ref_release: return "ref_release";
  }
  return "unknown";
}

std::optional<OpKind> op_from_name(std::string_view name) noexcept {
  for (uint8_t i = 0; i <= static_cast<uint8_t>(OpKind::ref_release); ++i) {
    if (name == op_name(static_cast<OpKind>(i))) return static_cast<OpKind>(i);
  }
  return std::nullopt;
}

std::string AbstractState::canonical() const {
  std::ostringstream out;
  auto set_of = [&](const std::set<int>& s) {
    out << '{';
    for (int v : s) out << v << ',';
    out << '}';
  };
  out << "subs";
  set_of(subscribers);
  out << "pub" << (publisher_alive ? 1 : 0) << ";m[";
  for (const auto& m : messages) {
    out << (m.exists ? 1 : 0) << (m.reclaimed ? 1 : 0);
    set_of(m.refs);
    out << ';';
  }
  out << "]cache";
  set_of(pub_cache);
  out << "live[";
  for (const auto& s : live_refs) set_of(s);
  out << "]crashed";
  set_of(crashed);
  out << "hist[";
  for (const auto& [actor, msgs] : pending_history) {
    out << actor << ':';
    for (int m : msgs) out << m << ',';
    out << ';';
  }
  out << "]rc[";
  for (const auto& [actor, msgs] : pending_reclaim) {
    out << actor << ':';
    for (int m : msgs) out << m << ',';
    out << ';';
  }
  out << "]pc[";
  for (size_t i = 0; i < pc.size(); ++i) out << pc[i] << '/' << micro[i] << ',';
  out << ']';
  return out.str();
}

namespace {

int actor_index(const Scenario& scenario, int actor_id) {
  for (size_t i = 0; i < scenario.actors.size(); ++i)
    if (scenario.actors[i].actor == actor_id) return static_cast<int>(i);
  return -1;
}

constexpr int kPublisherProcess = 0;

bool retention_met(const Scenario& scenario, const AbstractState& state, int m) {
  if (!scenario.transient_local) return true;
  int newer = 0;
  for (size_t i = m + 1; i < state.messages.size(); ++i)
    if (state.messages[i].exists && !state.messages[i].reclaimed) newer++;
  return newer >= scenario.depth;
}

// Newest min(depth, available) unreclaimed messages, ascending. Empty for
// volatile durability: history delivery is a Transient Local feature.
std::vector<int> history_for_join(const Scenario& scenario, const AbstractState& state) {
  std::vector<int> history;
  if (!scenario.transient_local) return history;
  for (int m = static_cast<int>(state.messages.size()) - 1; m >= 0; --m) {
    if (!state.messages[m].exists || state.messages[m].reclaimed) continue;
    history.push_back(m);
    if (static_cast<int>(history.size()) >= scenario.depth) break;
  }
  std::reverse(history.begin(), history.end());
  return history;
}

void reclaim_message(AbstractState& state, int m) {
  state.messages[m].reclaimed = true;
  state.messages[m].refs.clear();
}

// The single-writer reclamation pass, run inside fused operations: evict
// messages with an empty visible reference set whose retention is satisfied.
void sweep_single_writer(const Scenario& scenario, AbstractState& state) {
  for (size_t m = 0; m < state.messages.size(); ++m) {
    auto& msg = state.messages[m];
    if (!msg.exists || msg.reclaimed) continue;
    if (!msg.refs.empty()) continue;
    if (!retention_met(scenario, state, static_cast<int>(m))) continue;
    reclaim_message(state, static_cast<int>(m));
  }
}

int micro_step_count(Arch arch, OpKind op) {
  if (arch == Arch::single_writer) return 1;
  switch (op) {
    case OpKind::sub_join: return 2;            // control, then data
    case OpKind::sub_leave: return 2;           // data, then control
    case OpKind::sub_crash_cleanup: return 2;   // data, then control
    case OpKind::pub_leave: return 2;           // data, then control
    case OpKind::pub_crash_cleanup: return 3;   // data read, data write, control
    case OpKind::reclamation_check: return 2;   // data read, then commit
    default: return 1;  // single-plane ops and crash events
  }
}

bool step_enabled(const Scenario& scenario, const AbstractState& state, int idx) {
  const ActorScript& actor = scenario.actors[idx];
  if (state.pc[idx] >= static_cast<int>(actor.script.size())) return false;
  // A crashed process executes nothing further; system actors performing
  // cleanup must not themselves be crash subjects in sane scenarios.
  if (state.crashed.count(actor.actor)) return false;
  const ScenarioOp& op = actor.script[state.pc[idx]];
  if (state.micro[idx] > 0) return true;  // mid-operation continuation

  switch (op.op) {
    case OpKind::sub_join:
      return !state.subscribers.count(op.target) && !state.crashed.count(op.target);
    case OpKind::sub_leave:
      return state.subscribers.count(op.target) && !state.crashed.count(op.target);
    case OpKind::sub_crash:
      return !state.crashed.count(op.target);
    case OpKind::sub_crash_cleanup:
      return state.crashed.count(op.target) > 0;
    case OpKind::pub_join:
      return !state.publisher_alive && !state.crashed.count(kPublisherProcess);
    case OpKind::pub_leave:
      return state.publisher_alive && !state.crashed.count(kPublisherProcess);
    case OpKind::pub_crash:
      return !state.crashed.count(kPublisherProcess);
    case OpKind::pub_crash_cleanup:
      return state.crashed.count(kPublisherProcess) > 0;
    case OpKind::publish:
      return state.publisher_alive && !state.crashed.count(kPublisherProcess) &&
             static_cast<int>(state.messages.size()) < scenario.max_messages;
    case OpKind::reclamation_check:
      return state.publisher_alive && !state.crashed.count(kPublisherProcess);
    case OpKind::ref_release:
      return op.message >= 0 && op.message < static_cast<int>(state.messages.size()) &&
             !state.crashed.count(op.target) &&
             state.live_refs[op.message].count(op.target) > 0;
  }
  return false;
}

void deliver_publish(AbstractState& state, const std::set<int>& receivers) {
  MessageState msg;
  msg.exists = true;
  msg.refs = receivers;  // stale entries set orphan bits; that is the point
  state.messages.push_back(std::move(msg));
  std::set<int> live;
  for (int p : receivers)
    if (!state.crashed.count(p) && state.subscribers.count(p)) live.insert(p);
  state.live_refs.push_back(std::move(live));
}

// Applies the current micro-step of the actor's current op. Caller has
// checked step_enabled.
void apply_step(const Scenario& scenario, Arch arch, AbstractState& state, int idx) {
  const ActorScript& actor = scenario.actors[idx];
  const ScenarioOp& op = actor.script[state.pc[idx]];
  const int micro = state.micro[idx];
  const bool sw = arch == Arch::single_writer;
  const bool refresh = scenario.membership_refreshes_cache;

  auto clear_bits_of = [&](int p) {
    for (auto& m : state.messages) m.refs.erase(p);
  };
  auto drop_live_of = [&](int p) {
    for (auto& s : state.live_refs) s.erase(p);
  };
  auto refresh_cache = [&] { state.pub_cache = state.subscribers; };

  switch (op.op) {
    case OpKind::sub_join: {
      if (sw) {
        state.subscribers.insert(op.target);
        for (int m : history_for_join(scenario, state)) {
          state.messages[m].refs.insert(op.target);
          state.live_refs[m].insert(op.target);
        }
        refresh_cache();  // single writer always sees true membership
        sweep_single_writer(scenario, state);
      } else if (micro == 0) {
        // Control plane: membership insert and watermark/history computation.
        state.subscribers.insert(op.target);
        state.pending_history[actor.actor] = history_for_join(scenario, state);
        if (refresh) refresh_cache();
      } else {
        // Data plane: acquire references on the precomputed history, even if
        // a message was reclaimed in between (that is the race).
        for (int m : state.pending_history[actor.actor]) {
          state.messages[m].refs.insert(op.target);
          state.live_refs[m].insert(op.target);
        }
        state.pending_history.erase(actor.actor);
      }
      break;
    }
    case OpKind::sub_leave: {
      if (sw) {
        clear_bits_of(op.target);
        drop_live_of(op.target);
        state.subscribers.erase(op.target);
        refresh_cache();
        sweep_single_writer(scenario, state);
      } else if (micro == 0) {
        clear_bits_of(op.target);  // graceful leave releases everything first
        drop_live_of(op.target);
      } else {
        state.subscribers.erase(op.target);
        if (refresh) refresh_cache();
      }
      break;
    }
    case OpKind::sub_crash: {
      // Process death: its handles vanish; metadata is untouched until the
      // cleanup operation runs.
      state.crashed.insert(op.target);
      drop_live_of(op.target);
      break;
    }
    case OpKind::sub_crash_cleanup: {
      if (sw) {
        clear_bits_of(op.target);
        state.subscribers.erase(op.target);
        refresh_cache();
        sweep_single_writer(scenario, state);
      } else if (micro == 0) {
        clear_bits_of(op.target);  // orphaned bits cleared
      } else {
        state.subscribers.erase(op.target);
        if (refresh) refresh_cache();
      }
      break;
    }
    case OpKind::pub_join: {
      state.publisher_alive = true;
      if (sw) refresh_cache();
      break;
    }
    case OpKind::pub_leave: {
      if (sw) {
        state.publisher_alive = false;
        sweep_single_writer(scenario, state);
      } else if (micro == 0) {
        // Owner frees its unreferenced messages on the way out; retention
        // dies with it.
        for (size_t m = 0; m < state.messages.size(); ++m) {
          auto& msg = state.messages[m];
          if (msg.exists && !msg.reclaimed && msg.refs.empty())
            reclaim_message(state, static_cast<int>(m));
        }
      } else {
        state.publisher_alive = false;
      }
      break;
    }
    case OpKind::pub_crash: {
      state.crashed.insert(kPublisherProcess);
      break;
    }
    case OpKind::pub_crash_cleanup: {
      if (sw) {
        // Server takes over Transient Local retention: only the standard
        // reclamation rule applies, history stays available.
        state.publisher_alive = false;
        sweep_single_writer(scenario, state);
      } else if (micro == 0) {
        // Recovery reads the data plane: snapshot the apparently
        // unreferenced messages.
        std::vector<int>& candidates = state.pending_reclaim[actor.actor];
        candidates.clear();
        for (size_t m = 0; m < state.messages.size(); ++m) {
          const auto& msg = state.messages[m];
          if (msg.exists && !msg.reclaimed && msg.refs.empty())
            candidates.push_back(static_cast<int>(m));
        }
      } else if (micro == 1) {
        // Frees what the stale snapshot said was free.
        for (int m : state.pending_reclaim[actor.actor])
          if (!state.messages[m].reclaimed) reclaim_message(state, m);
        state.pending_reclaim.erase(actor.actor);
      } else {
        state.publisher_alive = false;
      }
      break;
    }
    case OpKind::publish: {
      if (sw) {
        deliver_publish(state, state.subscribers);
        sweep_single_writer(scenario, state);
      } else {
        // Data plane only; visibility comes from the cached subscriber list.
        deliver_publish(state, state.pub_cache);
      }
      break;
    }
    case OpKind::reclamation_check: {
      if (sw) {
        sweep_single_writer(scenario, state);
      } else if (micro == 0) {
        std::vector<int>& candidates = state.pending_reclaim[actor.actor];
        candidates.clear();
        for (size_t m = 0; m < state.messages.size(); ++m) {
          const auto& msg = state.messages[m];
          if (msg.exists && !msg.reclaimed && msg.refs.empty() &&
              retention_met(scenario, state, static_cast<int>(m)))
            candidates.push_back(static_cast<int>(m));
        }
      } else {
        // Commit without revalidation: the stale gap is the race.
        for (int m : state.pending_reclaim[actor.actor])
          if (!state.messages[m].reclaimed) reclaim_message(state, m);
        state.pending_reclaim.erase(actor.actor);
      }
      break;
    }
    case OpKind::ref_release: {
      state.messages[op.message].refs.erase(op.target);
      state.live_refs[op.message].erase(op.target);
      break;
    }
  }

  int steps = micro_step_count(arch, op.op);
  if (micro + 1 >= steps) {
    state.pc[idx]++;
    state.micro[idx] = 0;
  } else {
    state.micro[idx] = micro + 1;
  }
}

// Terminal-state liveness check. Runs the architecture's own quiescent
// reclamation to a fixpoint (owner-driven reclamation requires a live
// publisher), then reports messages that ground truth says should be gone.
std::vector<int> leaked_messages(const Scenario& scenario, Arch arch, AbstractState state) {
  bool owner_can_reclaim =
      arch == Arch::single_writer ||
      (state.publisher_alive && !state.crashed.count(kPublisherProcess));
  if (owner_can_reclaim) {
    bool changed = true;
    while (changed) {
      changed = false;
      for (size_t m = 0; m < state.messages.size(); ++m) {
        auto& msg = state.messages[m];
        if (msg.exists && !msg.reclaimed && msg.refs.empty() &&
            retention_met(scenario, state, static_cast<int>(m))) {
          reclaim_message(state, static_cast<int>(m));
          changed = true;
        }
      }
    }
  }
  std::vector<int> leaks;
  for (size_t m = 0; m < state.messages.size(); ++m) {
    const auto& msg = state.messages[m];
    if (msg.exists && !msg.reclaimed && state.live_refs[m].empty() &&
        retention_met(scenario, state, static_cast<int>(m)))
      leaks.push_back(static_cast<int>(m));
  }
  return leaks;
}

}  // namespace

AbstractState initial_state(const Scenario& scenario) {
  AbstractState state;
  state.subscribers.insert(scenario.initial_subscribers.begin(),
                           scenario.initial_subscribers.end());
  state.pub_cache = state.subscribers;
  state.messages.resize(scenario.initial_messages);
  state.live_refs.resize(scenario.initial_messages);
  for (int m = 0; m < scenario.initial_messages; ++m) state.messages[m].exists = true;
  for (const auto& [m, holders] : scenario.initial_refs) {
    if (m < 0 || m >= scenario.initial_messages)
      raise(Errc::invalid_argument, "initial ref to nonexistent message");
    for (int p : holders) {
      state.messages[m].refs.insert(p);
      state.live_refs[m].insert(p);
    }
  }
  state.pc.assign(scenario.actors.size(), 0);
  state.micro.assign(scenario.actors.size(), 0);
  return state;
}

std::optional<int> premature_reclaim(const AbstractState& state) {
  for (size_t m = 0; m < state.messages.size(); ++m)
    if (state.messages[m].reclaimed && !state.live_refs[m].empty())
      return static_cast<int>(m);
  return std::nullopt;
}

std::vector<StepRef> enumerate_steps(const Scenario& scenario, Arch arch,
                                     const AbstractState& state) {
  std::vector<StepRef> steps;
  for (size_t idx = 0; idx < scenario.actors.size(); ++idx) {
    if (!step_enabled(scenario, state, static_cast<int>(idx))) continue;
    const ScenarioOp& op = scenario.actors[idx].script[state.pc[idx]];
    steps.push_back({scenario.actors[idx].actor, op.op, state.micro[idx], op.target, op.message});
  }
  (void)arch;
  return steps;
}

ExploreResult explore(const Scenario& scenario, Arch arch, ExploreLimits limits) {
  ExploreResult result;
  // Best depth at which each configuration was reached; re-expand on
  // improvement so recorded traces are minimal.
  std::unordered_map<std::string, int> visited;
  // Minimal violation per (kind, message).
  std::map<std::pair<int, int>, Violation> minimal;

  std::vector<StepRef> trace;

  auto record = [&](ViolationKind kind, int message) {
    auto key = std::make_pair(static_cast<int>(kind), message);
    auto it = minimal.find(key);
    if (it == minimal.end() || trace.size() < it->second.trace.size())
      minimal[key] = Violation{kind, message, trace};
  };

  std::function<void(const AbstractState&, int)> dfs = [&](const AbstractState& state,
                                                           int depth) {
    auto key = state.canonical();
    auto [it, inserted] = visited.emplace(std::move(key), depth);
    if (!inserted) {
      if (it->second <= depth) return;
      it->second = depth;
    } else {
      result.states_visited++;
      if (result.states_visited > limits.max_states)
        raise(Errc::bound_exceeded, "state cap of " + std::to_string(limits.max_states) +
                                        " exceeded");
    }

    if (auto m = premature_reclaim(state)) record(ViolationKind::premature_reclaim, *m);

    auto steps = enumerate_steps(scenario, arch, state);
    if (steps.empty()) {
      for (int m : leaked_messages(scenario, arch, state))
        record(ViolationKind::permanent_leak, m);
      return;
    }
    if (depth >= limits.max_depth) return;

    for (size_t idx = 0, s = 0; idx < scenario.actors.size(); ++idx) {
      if (!step_enabled(scenario, state, static_cast<int>(idx))) continue;
      AbstractState next = state;
      apply_step(scenario, arch, next, static_cast<int>(idx));
      trace.push_back(steps[s]);
      dfs(next, depth + 1);
      trace.pop_back();
      ++s;
    }
  };

  dfs(initial_state(scenario), 0);

  for (auto& [key, violation] : minimal) result.violations.push_back(std::move(violation));
  return result;
}

AbstractState replay(const Scenario& scenario, Arch arch, const std::vector<StepRef>& trace) {
  AbstractState state = initial_state(scenario);
  for (const StepRef& step : trace) {
    int idx = actor_index(scenario, step.actor);
    if (idx < 0) raise(Errc::malformed_trace, "unknown actor " + std::to_string(step.actor));
    if (!step_enabled(scenario, state, idx))
      raise(Errc::malformed_trace, std::string("step not enabled: ") + op_name(step.op));
    const ScenarioOp& op = scenario.actors[idx].script[state.pc[idx]];
    if (op.op != step.op || state.micro[idx] != step.micro)
      raise(Errc::malformed_trace, std::string("trace does not match script at ") + op_name(step.op));
    apply_step(scenario, arch, state, idx);
  }
  return state;
}

Scenario crash_join_scenario() {
  Scenario s;
  s.name = "crash-join";
  s.transient_local = true;
  s.depth = 1;
  s.initial_messages = 1;
  s.initial_subscribers = {1};
  s.initial_refs[0] = {1};
  s.max_messages = 2;
  s.actors = {
      {0, {{OpKind::publish}, {OpKind::reclamation_check}}},
      {1, {{OpKind::sub_crash, 1}}},
      {2, {{OpKind::sub_join, 2}}},
      {3, {{OpKind::sub_crash_cleanup, 1}}},
  };
  return s;
}

Scenario pub_crash_join_scenario() {
  Scenario s;
  s.name = "pub-crash-join";
  s.transient_local = true;
  s.depth = 1;
  s.initial_messages = 1;
  s.max_messages = 1;
  s.actors = {
      {0, {{OpKind::pub_crash}}},
      {1, {{OpKind::sub_join, 1}}},
      {2, {{OpKind::pub_crash_cleanup}}},
  };
  return s;
}

Scenario stale_cache_leak_scenario() {
  Scenario s;
  s.name = "stale-cache-leak";
  s.transient_local = true;
  s.depth = 1;
  s.initial_subscribers = {1};
  s.membership_refreshes_cache = false;
  s.max_messages = 2;
  s.actors = {
      {0, {{OpKind::publish}, {OpKind::publish}}},
      {1, {{OpKind::sub_crash, 1}}},
      {2, {{OpKind::sub_crash_cleanup, 1}}},
  };
  return s;
}

std::vector<std::string> builtin_scenario_names() {
  return {"crash-join", "pub-crash-join", "stale-cache-leak"};
}

Scenario builtin_scenario(std::string_view name) {
  if (name == "crash-join") return crash_join_scenario();
  if (name == "pub-crash-join") return pub_crash_join_scenario();
  if (name == "stale-cache-leak") return stale_cache_leak_scenario();
  raise(Errc::invalid_argument, "unknown scenario '" + std::string(name) + "'");
}

std::string scenario_to_json(const Scenario& s) {
  json j;
  j["name"] = s.name;
  j["transient_local"] = s.transient_local;
  j["depth"] = s.depth;
  j["initial_messages"] = s.initial_messages;
  j["initial_subscribers"] = s.initial_subscribers;
  json refs = json::object();
  for (const auto& [m, holders] : s.initial_refs) refs[std::to_string(m)] = holders;
  j["initial_refs"] = refs;
  j["membership_refreshes_cache"] = s.membership_refreshes_cache;
  j["max_messages"] = s.max_messages;
  json actors = json::array();
  for (const auto& a : s.actors) {
    json script = json::array();
    for (const auto& op : a.script) {
      json o;
      o["op"] = op_name(op.op);
      if (op.target >= 0) o["target"] = op.target;
      if (op.message >= 0) o["message"] = op.message;
      script.push_back(o);
    }
    actors.push_back(json{{"actor", a.actor}, {"script", script}});
  }
  j["actors"] = actors;
  return j.dump(2);
}

Scenario scenario_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(Errc::malformed_trace, std::string("bad scenario json: ") + e.what());
  }
  Scenario s;
  try {
    s.name = j.value("name", "custom");
    s.transient_local = j.value("transient_local", true);
    s.depth = j.value("depth", 1);
    s.initial_messages = j.value("initial_messages", 0);
    s.initial_subscribers = j.value("initial_subscribers", std::vector<int>{});
    if (j.contains("initial_refs"))
      for (const auto& [key, holders] : j["initial_refs"].items())
        s.initial_refs[std::stoi(key)] = holders.get<std::vector<int>>();
    s.membership_refreshes_cache = j.value("membership_refreshes_cache", true);
    s.max_messages = j.value("max_messages", 3);
    for (const auto& a : j.at("actors")) {
      ActorScript script;
      script.actor = a.at("actor").get<int>();
      for (const auto& o : a.at("script")) {
        ScenarioOp op;
        auto kind = op_from_name(o.at("op").get<std::string>());
        if (!kind) raise(Errc::malformed_trace, "unknown op in scenario");
        op.op = *kind;
        op.target = o.value("target", -1);
        op.message = o.value("message", -1);
        script.script.push_back(op);
      }
      s.actors.push_back(std::move(script));
    }
  } catch (const json::exception& e) {
    raise(Errc::malformed_trace, std::string("bad scenario json: ") + e.what());
  }
  return s;
}

std::string trace_to_json(const Scenario& scenario, Arch arch, const ExploreResult& result) {
  json j;
  j["scenario"] = scenario.name;
  j["architecture"] = arch == Arch::single_writer ? "single-writer" : "owner-driven";
  j["states_visited"] = result.states_visited;
  json violations = json::array();
  for (const auto& v : result.violations) {
    json steps = json::array();
    for (const auto& step : v.trace) {
      json o;
      o["actor"] = step.actor;
      o["op"] = op_name(step.op);
      o["micro"] = step.micro;
      if (step.target >= 0) o["target"] = step.target;
      if (step.message >= 0) o["message"] = step.message;
      steps.push_back(o);
    }
    violations.push_back(json{
        {"kind", v.kind == ViolationKind::premature_reclaim ? "PrematureReclaim" : "PermanentLeak"},
        {"message", v.message},
        {"trace", steps},
    });
  }
  j["violations"] = violations;
  return j.dump(2);
}

}  // namespace pubsub::racelab
