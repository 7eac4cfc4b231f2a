#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pubsub/arena.hpp"
#include "pubsub/qos.hpp"

namespace pubsub {

struct RegisterSubResult {
  uint64_t subscriber_id = 0;
  uint64_t initial_watermark = 0;
};

struct PublishResult {
  uint64_t entry_id = 0;
  std::vector<uint64_t> subscriber_ids;  // current subscribers to notify, ascending
  std::vector<ArenaRef> evicted;
};

struct ReceivedEntry {
  uint64_t entry_id = 0;
  ArenaRef payload;
};

struct CounterSnapshot {
  uint64_t publish_ops = 0;
  uint64_t receive_bit_sets = 0;
  uint64_t release_bit_clears = 0;
  uint64_t membership_ops = 0;

  bool operator==(const CounterSnapshot&) const = default;
  uint64_t data_plane_updates() const {
    return publish_ops + receive_bit_sets + release_bit_clears;
  }
};

struct EntrySnapshot {
  uint64_t entry_id = 0;
  uint64_t publisher_id = 0;
  ArenaRef payload;
  std::vector<uint64_t> bitmap_words;

  bool bitmap_empty() const {
    for (uint64_t w : bitmap_words)
      if (w) return false;
    return true;
  }
  uint32_t bitmap_count() const {
    uint32_t n = 0;
    for (uint64_t w : bitmap_words) n += static_cast<uint32_t>(__builtin_popcountll(w));
    return n;
  }
  bool bitmap_test(uint64_t bit) const {
    uint64_t word = bit / 64;
    return word < bitmap_words.size() && (bitmap_words[word] >> (bit % 64)) & 1;
  }
};

struct PublisherSnapshot {
  uint64_t local_id = 0;
  uint64_t pid = 0;
  QoS qos;
  uint64_t published = 0;
  bool retired = false;
};

struct SubscriberSnapshot {
  uint64_t local_id = 0;
  uint64_t pid = 0;
  QoS qos;
  uint64_t watermark = 0;
};

struct TopicSnapshot {
  std::string name;
  uint64_t next_entry_id = 1;
  uint64_t next_local_id = 0;
  std::vector<EntrySnapshot> entries;          // ascending by entry id
  std::vector<PublisherSnapshot> publishers;   // ascending by local id, retired included
  std::vector<SubscriberSnapshot> subscribers; // ascending by local id
  std::vector<std::pair<uint64_t, uint64_t>> pending_reclaim;  // publisher id -> queued refs
  CounterSnapshot counters;
};

struct BrokerSnapshot {
  std::vector<TopicSnapshot> topics;  // ascending by name
  CounterSnapshot counters;

  const TopicSnapshot* topic(std::string_view name) const {
    for (const auto& t : topics)
      if (t.name == name) return &t;
    return nullptr;
  }
};

/// The metadata-server operation set. Implemented in-process by Broker and
/// over the wire by RemoteBroker; the handle layer is written against this
/// interface so both modes share one code path.
class BrokerApi {
 public:
  virtual ~BrokerApi() = default;

  virtual uint64_t register_publisher(std::string_view topic, QoS qos, uint64_t pid) = 0;
  virtual RegisterSubResult register_subscriber(std::string_view topic, QoS qos, uint64_t pid) = 0;
  virtual std::vector<ArenaRef> unregister_publisher(std::string_view topic, uint64_t publisher_id) = 0;
  virtual std::vector<ArenaRef> unregister_subscriber(std::string_view topic, uint64_t subscriber_id) = 0;
  virtual PublishResult publish_entry(std::string_view topic, uint64_t publisher_id,
                                      const ArenaRef& payload) = 0;
  virtual std::vector<ReceivedEntry> receive_entries(std::string_view topic, uint64_t subscriber_id) = 0;
  virtual void release_reference(std::string_view topic, uint64_t subscriber_id, uint64_t entry_id) = 0;
  virtual std::vector<ArenaRef> handle_process_exit(uint64_t pid) = 0;
  virtual BrokerSnapshot snapshot(std::optional<std::string_view> topic = std::nullopt) = 0;

  /// True when evicted payloads are reclaimed inside the broker itself;
  /// callers then must not reclaim refs returned from publish.
  virtual bool reclaims_internally() const = 0;
};

}  // namespace pubsub
