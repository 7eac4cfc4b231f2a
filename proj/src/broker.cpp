#include "pubsub/broker.hpp"

#include <algorithm>
#include <cassert>

namespace pubsub {

namespace {

// Keeps the membership generation odd for the duration of a membership
// operation, including error exits.
class GenGuard {
 public:
  explicit GenGuard(std::atomic<uint64_t>& gen) : gen_(gen) { gen_.fetch_add(1); }
  ~GenGuard() { gen_.fetch_add(1); }

 private:
  std::atomic<uint64_t>& gen_;
};

}  // namespace

Broker::Broker(BrokerConfig config) : config_(std::move(config)) {
  if (config_.max_subscribers_per_topic == 0)
    raise(Errc::invalid_argument, "bitmap width must be positive");
}

std::shared_lock<std::shared_mutex> Broker::global_read(OpClass cls) {
  lock_counts_[static_cast<size_t>(cls)][0].fetch_add(1, std::memory_order_relaxed);
  return std::shared_lock(global_lock_);
}

std::unique_lock<std::shared_mutex> Broker::global_write(OpClass cls) {
  lock_counts_[static_cast<size_t>(cls)][1].fetch_add(1, std::memory_order_relaxed);
  return std::unique_lock(global_lock_);
}

std::shared_lock<std::shared_mutex> Broker::topic_read(TopicState& t, OpClass cls) {
  lock_counts_[static_cast<size_t>(cls)][2].fetch_add(1, std::memory_order_relaxed);
  return std::shared_lock(t.lock);
}

std::unique_lock<std::shared_mutex> Broker::topic_write(TopicState& t, OpClass cls) {
  lock_counts_[static_cast<size_t>(cls)][3].fetch_add(1, std::memory_order_relaxed);
  return std::unique_lock(t.lock);
}

LockModeCounts Broker::lock_counts(OpClass cls) const {
  const auto& row = lock_counts_[static_cast<size_t>(cls)];
  return {row[0].load(), row[1].load(), row[2].load(), row[3].load()};
}

Broker::TopicState* Broker::find_topic(std::string_view name) {
  auto it = topics_.find(std::string(name));
  return it == topics_.end() ? nullptr : it->second.get();
}

Broker::TopicState& Broker::topic_or_create(std::string_view name) {
  auto it = topics_.find(std::string(name));
  if (it == topics_.end()) {
    auto state = std::make_unique<TopicState>();
    state->name = std::string(name);
    it = topics_.emplace(state->name, std::move(state)).first;
  }
  return *it->second;
}

void Broker::bump_membership(TopicState& t) {
  t.counters.membership_ops.fetch_add(1, std::memory_order_relaxed);
  counters_.membership_ops.fetch_add(1, std::memory_order_relaxed);
}

uint64_t Broker::register_publisher(std::string_view topic, QoS qos, uint64_t pid) {
  if (topic.empty()) raise(Errc::invalid_argument, "empty topic name");
  if (qos.depth == 0) raise(Errc::invalid_argument, "KeepLast depth must be >= 1");
  auto g = global_write(OpClass::membership);
  GenGuard gen(membership_gen_);
  TopicState& t = topic_or_create(topic);
  if (t.next_local_id >= config_.max_subscribers_per_topic)
    raise(Errc::id_space_exhausted, "topic '" + t.name + "' exhausted its local-id space");
  uint64_t id = t.next_local_id++;
  t.publishers.emplace(id, PublisherRecord{id, pid, qos, 0});
  bump_membership(t);
  return id;
}

uint64_t Broker::initial_watermark(const TopicState& t, const QoS& sub_qos) const {
  uint64_t latest = t.next_entry_id - 1;
  if (sub_qos.durability == Durability::volatile_) return latest;
  // Transient Local: position so the first receive returns the newest
  // min(depth, retained) entries. Retained entry ids may be non-contiguous,
  // so walk the tree rather than subtracting from the latest id.
  uint64_t take = std::min<uint64_t>(sub_qos.depth, t.entries.size());
  if (take == 0) return latest;
  auto it = t.entries.rbegin();
  for (uint64_t i = 1; i < take; ++i) ++it;
  return it->first - 1;
}

RegisterSubResult Broker::register_subscriber(std::string_view topic, QoS qos, uint64_t pid) {
  if (topic.empty()) raise(Errc::invalid_argument, "empty topic name");
  if (qos.depth == 0) raise(Errc::invalid_argument, "KeepLast depth must be >= 1");
  auto g = global_write(OpClass::membership);
  GenGuard gen(membership_gen_);
  TopicState& t = topic_or_create(topic);
  if (t.next_local_id >= config_.max_subscribers_per_topic)
    raise(Errc::id_space_exhausted, "topic '" + t.name + "' exhausted its local-id space");
  uint64_t id = t.next_local_id++;
  auto [it, inserted] = t.subscribers.try_emplace(id);
  assert(inserted);
  it->second.local_id = id;
  it->second.pid = pid;
  it->second.qos = qos;
  uint64_t watermark = initial_watermark(t, qos);
  it->second.watermark.store(watermark, std::memory_order_relaxed);
  bump_membership(t);
  return {id, watermark};
}

void Broker::route_eviction(TopicState& t, const ArenaRef& ref, uint64_t publisher_id,
                            bool publisher_live, std::vector<ArenaRef>& out) {
  out.push_back(ref);
  if (config_.reclaimer) {
    config_.reclaimer(ref);
  } else if (publisher_live) {
    // Deferred mode: hand the slot back to its owner in the next publish.
    t.pending_reclaim[publisher_id].push_back(ref);
  }
  // Departed owner, deferred mode: nothing to route; the owning segment is
  // retired as a whole once the broker no longer references it.
}

void Broker::evict_for_publisher(TopicState& t, uint64_t publisher_id,
                                 std::vector<ArenaRef>& out) {
  auto pub = t.publishers.find(publisher_id);
  assert(pub != t.publishers.end());
  const uint32_t depth = pub->second.qos.depth;

  std::vector<uint64_t> ids;
  for (const auto& [id, e] : t.entries)
    if (e.publisher_id == publisher_id) ids.push_back(id);

  for (size_t i = 0; i < ids.size(); ++i) {
    uint64_t newer = ids.size() - 1 - i;
    if (newer < depth) break;  // everything from here on is within depth
    auto it = t.entries.find(ids[i]);
    if (!it->second.bitmap.none()) continue;
    out.push_back(it->second.payload);
    if (config_.reclaimer) config_.reclaimer(it->second.payload);
    t.entries.erase(it);
  }
}

void Broker::sweep_topic(TopicState& t, std::vector<ArenaRef>& out) {
  // Group entry ids by owning publisher (ascending within each group).
  std::map<uint64_t, std::vector<uint64_t>> groups;
  for (const auto& [id, e] : t.entries) groups[e.publisher_id].push_back(id);

  for (auto& [pub_id, ids] : groups) {
    bool live = t.publishers.count(pub_id) > 0;
    QoS qos = live ? t.publishers.at(pub_id).qos : t.entries.at(ids.front()).publisher_qos;
    bool orphaned_volatile = !live && qos.durability == Durability::volatile_;
    for (size_t i = 0; i < ids.size(); ++i) {
      uint64_t newer = ids.size() - 1 - i;
      if (!orphaned_volatile && newer < qos.depth) break;
      auto it = t.entries.find(ids[i]);
      if (!it->second.bitmap.none()) continue;
      route_eviction(t, it->second.payload, pub_id, live, out);
      t.entries.erase(it);
    }
  }
}

void Broker::erase_topic_if_dead(const std::string& name) {
  auto it = topics_.find(name);
  if (it == topics_.end()) return;
  TopicState& t = *it->second;
  if (t.publishers.empty() && t.subscribers.empty() && t.entries.empty()) topics_.erase(it);
}

std::vector<ArenaRef> Broker::unregister_publisher(std::string_view topic, uint64_t publisher_id) {
  auto g = global_write(OpClass::membership);
  GenGuard gen(membership_gen_);
  TopicState* t = find_topic(topic);
  if (!t) raise(Errc::unknown_endpoint, "no such topic '" + std::string(topic) + "'");
  auto it = t->publishers.find(publisher_id);
  if (it == t->publishers.end())
    raise(Errc::unknown_endpoint, "publisher " + std::to_string(publisher_id) + " not registered");
  t->retired_publishers.emplace(publisher_id,
                                RetiredPublisher{it->second.qos, it->second.published, it->second.pid});
  t->publishers.erase(it);
  t->pending_reclaim.erase(publisher_id);  // owner can no longer collect them
  bump_membership(*t);
  std::vector<ArenaRef> evicted;
  sweep_topic(*t, evicted);
  erase_topic_if_dead(std::string(topic));
  return evicted;
}

std::vector<ArenaRef> Broker::unregister_subscriber(std::string_view topic, uint64_t subscriber_id) {
  auto g = global_write(OpClass::membership);
  GenGuard gen(membership_gen_);
  TopicState* t = find_topic(topic);
  if (!t) raise(Errc::unknown_endpoint, "no such topic '" + std::string(topic) + "'");
  auto it = t->subscribers.find(subscriber_id);
  if (it == t->subscribers.end())
    raise(Errc::unknown_endpoint, "subscriber " + std::to_string(subscriber_id) + " not registered");
  for (auto& [id, e] : t->entries) e.bitmap.clear(subscriber_id);
  t->subscribers.erase(it);
  bump_membership(*t);
  std::vector<ArenaRef> evicted;
  sweep_topic(*t, evicted);
  erase_topic_if_dead(std::string(topic));
  return evicted;
}

PublishResult Broker::publish_entry(std::string_view topic, uint64_t publisher_id,
                                    const ArenaRef& payload) {
  auto g = global_read(OpClass::publish);
  uint64_t gen = membership_gen_.load();
  assert(gen % 2 == 0);
  (void)gen;
  TopicState* t = find_topic(topic);
  if (!t) raise(Errc::topic_gone, "topic '" + std::string(topic) + "' does not exist");
  auto lk = topic_write(*t, OpClass::publish);
  auto pub = t->publishers.find(publisher_id);
  if (pub == t->publishers.end())
    raise(Errc::unknown_endpoint, "publisher " + std::to_string(publisher_id) + " not registered");

  PublishResult result;
  result.entry_id = t->next_entry_id++;
  t->entries.emplace(
      result.entry_id,
      EntryRecord(result.entry_id, payload, publisher_id, pub->second.qos,
                  config_.max_subscribers_per_topic));
  pub->second.published++;

  // Deferred reclamations queued by membership operations ride along first,
  // then this publish's own depth-scan evictions.
  if (auto p = t->pending_reclaim.find(publisher_id); p != t->pending_reclaim.end()) {
    result.evicted = std::move(p->second);
    t->pending_reclaim.erase(p);
  }
  evict_for_publisher(*t, publisher_id, result.evicted);

  result.subscriber_ids.reserve(t->subscribers.size());
  for (const auto& [id, sub] : t->subscribers) result.subscriber_ids.push_back(id);

  t->counters.publish_ops.fetch_add(1, std::memory_order_relaxed);
  counters_.publish_ops.fetch_add(1, std::memory_order_relaxed);
  assert(membership_gen_.load() == gen);
  return result;
}

std::vector<ReceivedEntry> Broker::receive_entries(std::string_view topic, uint64_t subscriber_id) {
  auto g = global_read(OpClass::receive);
  uint64_t gen = membership_gen_.load();
  assert(gen % 2 == 0);
  (void)gen;
  TopicState* t = find_topic(topic);
  if (!t) raise(Errc::unknown_endpoint, "no such topic '" + std::string(topic) + "'");
  auto lk = topic_read(*t, OpClass::receive);
  auto it = t->subscribers.find(subscriber_id);
  if (it == t->subscribers.end())
    raise(Errc::unknown_endpoint, "subscriber " + std::to_string(subscriber_id) + " not registered");
  SubscriberRecord& sub = it->second;

  if (receive_probe_) receive_probe_(topic, subscriber_id);

  std::vector<ReceivedEntry> out;
  uint64_t watermark = sub.watermark.load(std::memory_order_relaxed);
  for (auto e = t->entries.upper_bound(watermark); e != t->entries.end(); ++e) {
    bool newly_set = e->second.bitmap.set(subscriber_id);
    assert(newly_set);
    (void)newly_set;
    out.push_back({e->first, e->second.payload});
    watermark = e->first;
  }
  if (!out.empty()) {
    sub.watermark.store(watermark, std::memory_order_relaxed);
    t->counters.receive_bit_sets.fetch_add(out.size(), std::memory_order_relaxed);
    counters_.receive_bit_sets.fetch_add(out.size(), std::memory_order_relaxed);
  }
  assert(membership_gen_.load() == gen);
  return out;
}

void Broker::release_reference(std::string_view topic, uint64_t subscriber_id, uint64_t entry_id) {
  auto g = global_read(OpClass::release);
  uint64_t gen = membership_gen_.load();
  assert(gen % 2 == 0);
  (void)gen;
  TopicState* t = find_topic(topic);
  if (!t) raise(Errc::unknown_endpoint, "no such topic '" + std::string(topic) + "'");
  auto lk = topic_read(*t, OpClass::release);
  if (!t->subscribers.count(subscriber_id))
    raise(Errc::unknown_endpoint, "subscriber " + std::to_string(subscriber_id) + " not registered");
  auto e = t->entries.find(entry_id);
  if (e == t->entries.end())
    raise(Errc::unknown_entry, "entry " + std::to_string(entry_id) + " already evicted");
  if (!e->second.bitmap.clear(subscriber_id))
    raise(Errc::bit_not_set, "double release of entry " + std::to_string(entry_id));
  // No eviction here: the entry becomes eligible the next time its
  // publisher publishes, or at the next membership/exit cleanup.
  t->counters.release_bit_clears.fetch_add(1, std::memory_order_relaxed);
  counters_.release_bit_clears.fetch_add(1, std::memory_order_relaxed);
  assert(membership_gen_.load() == gen);
}

std::vector<ArenaRef> Broker::handle_process_exit(uint64_t pid) {
  auto g = global_write(OpClass::membership);
  GenGuard gen(membership_gen_);
  std::vector<ArenaRef> evicted;
  std::vector<std::string> touched;
  for (auto& [name, tp] : topics_) {
    TopicState& t = *tp;
    bool changed = false;
    for (auto it = t.subscribers.begin(); it != t.subscribers.end();) {
      if (it->second.pid != pid) {
        ++it;
        continue;
      }
      for (auto& [id, e] : t.entries) e.bitmap.clear(it->first);
      it = t.subscribers.erase(it);
      bump_membership(t);
      changed = true;
    }
    for (auto it = t.publishers.begin(); it != t.publishers.end();) {
      if (it->second.pid != pid) {
        ++it;
        continue;
      }
      t.retired_publishers.emplace(
          it->first, RetiredPublisher{it->second.qos, it->second.published, it->second.pid});
      t.pending_reclaim.erase(it->first);
      it = t.publishers.erase(it);
      bump_membership(t);
      changed = true;
    }
    if (changed) {
      sweep_topic(t, evicted);
      touched.push_back(name);
    }
  }
  for (const auto& name : touched) erase_topic_if_dead(name);
  return evicted;
}

BrokerSnapshot Broker::snapshot(std::optional<std::string_view> topic) {
  auto g = global_read(OpClass::snapshot);
  if (topic && !topics_.count(std::string(*topic)))
    raise(Errc::unknown_topic, "no such topic '" + std::string(*topic) + "'");

  BrokerSnapshot snap;
  for (const auto& [name, tp] : topics_) {
    if (topic && name != *topic) continue;
    TopicState& t = *tp;
    auto lk = topic_read(t, OpClass::snapshot);
    TopicSnapshot ts;
    ts.name = name;
    ts.next_entry_id = t.next_entry_id;
    ts.next_local_id = t.next_local_id;
    for (const auto& [id, e] : t.entries)
      ts.entries.push_back({id, e.publisher_id, e.payload, e.bitmap.words()});
    for (const auto& [id, p] : t.publishers)
      ts.publishers.push_back({id, p.pid, p.qos, p.published, false});
    for (const auto& [id, p] : t.retired_publishers)
      ts.publishers.push_back({id, p.pid, p.qos, p.published, true});
    std::sort(ts.publishers.begin(), ts.publishers.end(),
              [](const auto& a, const auto& b) { return a.local_id < b.local_id; });
    for (const auto& [id, s] : t.subscribers)
      ts.subscribers.push_back({id, s.pid, s.qos, s.watermark.load(std::memory_order_relaxed)});
    for (const auto& [id, refs] : t.pending_reclaim)
      if (!refs.empty()) ts.pending_reclaim.emplace_back(id, refs.size());
    ts.counters = t.counters.snapshot();
    snap.topics.push_back(std::move(ts));
  }
  snap.counters = counters_.snapshot();
  return snap;
}

bool Broker::arena_in_use(uint64_t arena_id) {
  auto g = global_read(OpClass::snapshot);
  for (const auto& [name, tp] : topics_) {
    auto lk = topic_read(*tp, OpClass::snapshot);
    for (const auto& [id, e] : tp->entries)
      if (e.payload.arena_id == arena_id) return true;
    for (const auto& [pub, refs] : tp->pending_reclaim)
      for (const auto& r : refs)
        if (r.arena_id == arena_id) return true;
  }
  return false;
}

}  // namespace pubsub
