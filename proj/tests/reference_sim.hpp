#pragma once

// Test-only single-threaded reference simulator for the broker's metadata
// rules. Written brute-force (vectors, sets, fixpoint rescans) and kept
// independent of the broker implementation: tests compare the two step for
// step. Counters mirror the broker's instrumentation definitions.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pubsub/broker_api.hpp"
#include "pubsub/errors.hpp"

namespace simref {

using pubsub::ArenaRef;
using pubsub::Durability;
using pubsub::Errc;
using pubsub::QoS;

struct Publisher {
  uint64_t id;
  uint64_t pid;
  QoS qos;
  uint64_t published = 0;
  bool retired = false;
};

struct Subscriber {
  uint64_t id;
  uint64_t pid;
  QoS qos;
  uint64_t watermark = 0;
};

struct Entry {
  uint64_t id;
  uint64_t publisher;
  ArenaRef payload;
  std::set<uint64_t> holders;
};

struct Counters {
  uint64_t publish_ops = 0;
  uint64_t receive_bit_sets = 0;
  uint64_t release_bit_clears = 0;
  uint64_t membership_ops = 0;
};

struct Topic {
  std::vector<Entry> entries;  // ascending by id
  std::vector<Publisher> publishers;
  std::vector<Subscriber> subscribers;
  uint64_t next_entry = 1;
  uint64_t next_local = 0;
  Counters counters;
};

class SimBroker {
 public:
  explicit SimBroker(uint32_t width = 64) : width_(width) {}

  uint64_t register_publisher(const std::string& topic, QoS qos, uint64_t pid) {
    check_qos(topic, qos);
    Topic& t = topics_[topic];
    uint64_t id = fresh_local_id(topic, t);
    t.publishers.push_back({id, pid, qos, 0, false});
    bump_membership(t);
    return id;
  }

  struct SubResult {
    uint64_t id;
    uint64_t watermark;
  };

  SubResult register_subscriber(const std::string& topic, QoS qos, uint64_t pid) {
    check_qos(topic, qos);
    Topic& t = topics_[topic];
    uint64_t id = fresh_local_id(topic, t);
    uint64_t watermark = initial_watermark(t, qos);
    t.subscribers.push_back({id, pid, qos, watermark});
    bump_membership(t);
    return {id, watermark};
  }

  std::vector<uint64_t> unregister_publisher(const std::string& topic, uint64_t id) {
    Topic* t = find_topic(topic);
    if (!t) pubsub::raise(Errc::unknown_endpoint, "sim: no topic");
    Publisher* p = live_publisher(*t, id);
    if (!p) pubsub::raise(Errc::unknown_endpoint, "sim: no publisher");
    p->retired = true;
    bump_membership(*t);
    auto evicted = sweep(*t);
    erase_if_dead(topic);
    return evicted;
  }

  std::vector<uint64_t> unregister_subscriber(const std::string& topic, uint64_t id) {
    Topic* t = find_topic(topic);
    if (!t) pubsub::raise(Errc::unknown_endpoint, "sim: no topic");
    auto it = std::find_if(t->subscribers.begin(), t->subscribers.end(),
                           [&](const Subscriber& s) { return s.id == id; });
    if (it == t->subscribers.end()) pubsub::raise(Errc::unknown_endpoint, "sim: no subscriber");
    for (Entry& e : t->entries) e.holders.erase(id);
    t->subscribers.erase(it);
    bump_membership(*t);
    auto evicted = sweep(*t);
    erase_if_dead(topic);
    return evicted;
  }

  struct PublishOut {
    uint64_t entry_id;
    std::vector<uint64_t> subscriber_ids;
    std::vector<uint64_t> evicted_entry_ids;
  };

  PublishOut publish(const std::string& topic, uint64_t publisher_id, const ArenaRef& payload) {
    Topic* t = find_topic(topic);
    if (!t) pubsub::raise(Errc::topic_gone, "sim: no topic");
    Publisher* p = live_publisher(*t, publisher_id);
    if (!p) pubsub::raise(Errc::unknown_endpoint, "sim: no publisher");
    PublishOut out;
    out.entry_id = t->next_entry++;
    t->entries.push_back({out.entry_id, publisher_id, payload, {}});
    p->published++;
    // Depth rule over this publisher's entries only.
    for (;;) {
      bool changed = false;
      for (const Entry& e : t->entries) {
        if (e.publisher != publisher_id || !e.holders.empty()) continue;
        if (newer_than(*t, e) >= p->qos.depth) {
          out.evicted_entry_ids.push_back(e.id);
          erase_entry(*t, e.id);
          changed = true;
          break;
        }
      }
      if (!changed) break;
    }
    for (const Subscriber& s : t->subscribers) out.subscriber_ids.push_back(s.id);
    std::sort(out.subscriber_ids.begin(), out.subscriber_ids.end());
    t->counters.publish_ops++;
    global_.publish_ops++;
    return out;
  }

  std::vector<uint64_t> receive(const std::string& topic, uint64_t subscriber_id) {
    Topic* t = find_topic(topic);
    if (!t) pubsub::raise(Errc::unknown_endpoint, "sim: no topic");
    Subscriber* s = subscriber(*t, subscriber_id);
    if (!s) pubsub::raise(Errc::unknown_endpoint, "sim: no subscriber");
    std::vector<uint64_t> delivered;
    for (Entry& e : t->entries) {
      if (e.id <= s->watermark) continue;
      e.holders.insert(subscriber_id);
      delivered.push_back(e.id);
    }
    if (!delivered.empty()) {
      s->watermark = delivered.back();
      t->counters.receive_bit_sets += delivered.size();
      global_.receive_bit_sets += delivered.size();
    }
    return delivered;
  }

  void release(const std::string& topic, uint64_t subscriber_id, uint64_t entry_id) {
    Topic* t = find_topic(topic);
    if (!t) pubsub::raise(Errc::unknown_endpoint, "sim: no topic");
    if (!subscriber(*t, subscriber_id)) pubsub::raise(Errc::unknown_endpoint, "sim: no subscriber");
    auto it = std::find_if(t->entries.begin(), t->entries.end(),
                           [&](const Entry& e) { return e.id == entry_id; });
    if (it == t->entries.end()) pubsub::raise(Errc::unknown_entry, "sim: entry evicted");
    if (!it->holders.erase(subscriber_id)) pubsub::raise(Errc::bit_not_set, "sim: double release");
    t->counters.release_bit_clears++;
    global_.release_bit_clears++;
    // No eviction here.
  }

  std::vector<uint64_t> process_exit(uint64_t pid) {
    std::vector<uint64_t> evicted;
    std::vector<std::string> touched;
    for (auto& [name, t] : topics_) {
      bool changed = false;
      for (auto it = t.subscribers.begin(); it != t.subscribers.end();) {
        if (it->pid != pid) {
          ++it;
          continue;
        }
        for (Entry& e : t.entries) e.holders.erase(it->id);
        it = t.subscribers.erase(it);
        bump_membership(t);
        changed = true;
      }
      for (Publisher& p : t.publishers) {
        if (p.pid != pid || p.retired) continue;
        p.retired = true;
        bump_membership(t);
        changed = true;
      }
      if (changed) {
        auto swept = sweep(t);
        evicted.insert(evicted.end(), swept.begin(), swept.end());
        touched.push_back(name);
      }
    }
    for (const auto& name : touched) erase_if_dead(name);
    return evicted;
  }

  /// First difference from the broker snapshot, or nullopt when equal.
  std::optional<std::string> diff(const pubsub::BrokerSnapshot& snap) const {
    if (snap.topics.size() != topics_.size())
      return "topic count: broker " + std::to_string(snap.topics.size()) + " sim " +
             std::to_string(topics_.size());
    for (const auto& ts : snap.topics) {
      auto it = topics_.find(ts.name);
      if (it == topics_.end()) return "broker has extra topic " + ts.name;
      const Topic& t = it->second;
      if (ts.next_entry_id != t.next_entry) return ts.name + ": next_entry_id";
      if (ts.next_local_id != t.next_local) return ts.name + ": next_local_id";
      if (ts.entries.size() != t.entries.size())
        return ts.name + ": entry count broker " + std::to_string(ts.entries.size()) + " sim " +
               std::to_string(t.entries.size());
      for (size_t i = 0; i < t.entries.size(); ++i) {
        const auto& be = ts.entries[i];
        const auto& se = t.entries[i];
        if (be.entry_id != se.id) return ts.name + ": entry id order";
        if (be.publisher_id != se.publisher) return ts.name + ": entry publisher";
        if (!(be.payload == se.payload)) return ts.name + ": entry payload";
        std::set<uint64_t> bits;
        for (size_t w = 0; w < be.bitmap_words.size(); ++w)
          for (int b = 0; b < 64; ++b)
            if ((be.bitmap_words[w] >> b) & 1) bits.insert(w * 64 + b);
        if (bits != se.holders)
          return ts.name + ": entry " + std::to_string(se.id) + " holder set";
      }
      if (ts.publishers.size() != t.publishers.size()) return ts.name + ": publisher count";
      for (const auto& bp : ts.publishers) {
        auto sp = std::find_if(t.publishers.begin(), t.publishers.end(),
                               [&](const Publisher& p) { return p.id == bp.local_id; });
        if (sp == t.publishers.end()) return ts.name + ": publisher ids";
        if (bp.pid != sp->pid || !(bp.qos == sp->qos) || bp.published != sp->published ||
            bp.retired != sp->retired)
          return ts.name + ": publisher " + std::to_string(bp.local_id) + " fields";
      }
      if (ts.subscribers.size() != t.subscribers.size()) return ts.name + ": subscriber count";
      for (const auto& bs : ts.subscribers) {
        auto ss = std::find_if(t.subscribers.begin(), t.subscribers.end(),
                               [&](const Subscriber& s) { return s.id == bs.local_id; });
        if (ss == t.subscribers.end()) return ts.name + ": subscriber ids";
        if (bs.pid != ss->pid || !(bs.qos == ss->qos) || bs.watermark != ss->watermark)
          return ts.name + ": subscriber " + std::to_string(bs.local_id) + " fields";
      }
      if (!ts.pending_reclaim.empty()) return ts.name + ": pending reclaim should be empty";
      if (ts.counters.publish_ops != t.counters.publish_ops ||
          ts.counters.receive_bit_sets != t.counters.receive_bit_sets ||
          ts.counters.release_bit_clears != t.counters.release_bit_clears ||
          ts.counters.membership_ops != t.counters.membership_ops)
        return ts.name + ": counters";
    }
    if (snap.counters.publish_ops != global_.publish_ops ||
        snap.counters.receive_bit_sets != global_.receive_bit_sets ||
        snap.counters.release_bit_clears != global_.release_bit_clears ||
        snap.counters.membership_ops != global_.membership_ops)
      return "global counters";
    return std::nullopt;
  }

  const std::map<std::string, Topic>& topics() const { return topics_; }

 private:
  static void check_qos(const std::string& topic, const QoS& qos) {
    if (topic.empty()) pubsub::raise(Errc::invalid_argument, "sim: empty topic");
    if (qos.depth == 0) pubsub::raise(Errc::invalid_argument, "sim: zero depth");
  }

  uint64_t fresh_local_id(const std::string&, Topic& t) {
    if (t.next_local >= width_) pubsub::raise(Errc::id_space_exhausted, "sim: ids exhausted");
    return t.next_local++;
  }

  Topic* find_topic(const std::string& name) {
    auto it = topics_.find(name);
    return it == topics_.end() ? nullptr : &it->second;
  }

  static Publisher* live_publisher(Topic& t, uint64_t id) {
    for (Publisher& p : t.publishers)
      if (p.id == id && !p.retired) return &p;
    return nullptr;
  }

  static Subscriber* subscriber(Topic& t, uint64_t id) {
    for (Subscriber& s : t.subscribers)
      if (s.id == id) return &s;
    return nullptr;
  }

  uint64_t initial_watermark(const Topic& t, const QoS& qos) const {
    uint64_t latest = t.next_entry - 1;
    if (qos.durability == Durability::volatile_) return latest;
    uint64_t take = std::min<uint64_t>(qos.depth, t.entries.size());
    if (take == 0) return latest;
    return t.entries[t.entries.size() - take].id - 1;
  }

  uint64_t newer_than(const Topic& t, const Entry& entry) const {
    uint64_t n = 0;
    for (const Entry& e : t.entries)
      if (e.publisher == entry.publisher && e.id > entry.id) n++;
    return n;
  }

  void erase_entry(Topic& t, uint64_t id) {
    t.entries.erase(std::find_if(t.entries.begin(), t.entries.end(),
                                 [&](const Entry& e) { return e.id == id; }));
  }

  const Publisher& owner_of(const Topic& t, const Entry& e) const {
    for (const Publisher& p : t.publishers)
      if (p.id == e.publisher) return p;
    pubsub::raise(Errc::unknown_endpoint, "sim: orphan entry without publisher record");
  }

  std::vector<uint64_t> sweep(Topic& t) {
    std::vector<uint64_t> evicted;
    for (;;) {
      bool changed = false;
      for (const Entry& e : t.entries) {
        if (!e.holders.empty()) continue;
        const Publisher& owner = owner_of(t, e);
        bool orphaned_volatile = owner.retired && owner.qos.durability == Durability::volatile_;
        if (orphaned_volatile || newer_than(t, e) >= owner.qos.depth) {
          evicted.push_back(e.id);
          erase_entry(t, e.id);
          changed = true;
          break;
        }
      }
      if (!changed) break;
    }
    return evicted;
  }

  void bump_membership(Topic& t) {
    t.counters.membership_ops++;
    global_.membership_ops++;
  }

  void erase_if_dead(const std::string& name) {
    auto it = topics_.find(name);
    if (it == topics_.end()) return;
    Topic& t = it->second;
    bool any_live_pub = std::any_of(t.publishers.begin(), t.publishers.end(),
                                    [](const Publisher& p) { return !p.retired; });
    if (!any_live_pub && t.subscribers.empty() && t.entries.empty()) topics_.erase(it);
  }

  uint32_t width_;
  std::map<std::string, Topic> topics_;
  Counters global_;
};

}  // namespace simref
