#pragma once

#include <array>
#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "pubsub/broker_api.hpp"
#include "pubsub/errors.hpp"

namespace pubsub {

/// Fixed-width per-entry subscriber bit set. Bit i is set iff the
/// subscriber with topic-local id i holds at least one reference.
/// Set/clear are lock-free so the receive and release paths can run
/// under a shared per-topic lock.
class SubscriberBitmap {
 public:
  explicit SubscriberBitmap(uint32_t width)
      : width_(width), words_(new std::atomic<uint64_t>[word_count()]) {
    for (uint32_t i = 0; i < word_count(); ++i) words_[i].store(0, std::memory_order_relaxed);
  }

  uint32_t width() const noexcept { return width_; }
  uint32_t word_count() const noexcept { return (width_ + 63) / 64; }

  /// Returns true when the bit was newly set.
  bool set(uint64_t bit) {
    uint64_t prev = words_[bit / 64].fetch_or(1ull << (bit % 64), std::memory_order_acq_rel);
    return (prev & (1ull << (bit % 64))) == 0;
  }

  /// Returns true when the bit was previously set.
  bool clear(uint64_t bit) {
    uint64_t prev = words_[bit / 64].fetch_and(~(1ull << (bit % 64)), std::memory_order_acq_rel);
    return (prev & (1ull << (bit % 64))) != 0;
  }

  bool test(uint64_t bit) const {
    return (words_[bit / 64].load(std::memory_order_acquire) >> (bit % 64)) & 1;
  }

  bool none() const {
    for (uint32_t i = 0; i < word_count(); ++i)
      if (words_[i].load(std::memory_order_acquire)) return false;
    return true;
  }

  std::vector<uint64_t> words() const {
    std::vector<uint64_t> out(word_count());
    for (uint32_t i = 0; i < word_count(); ++i) out[i] = words_[i].load(std::memory_order_acquire);
    return out;
  }

 private:
  uint32_t width_;
  std::unique_ptr<std::atomic<uint64_t>[]> words_;
};

/// Lock acquisition classes instrumented for conformance checks.
enum class OpClass : uint8_t { publish = 0, receive = 1, release = 2, membership = 3, snapshot = 4 };

struct LockModeCounts {
  uint64_t global_read = 0;
  uint64_t global_write = 0;
  uint64_t topic_read = 0;
  uint64_t topic_write = 0;

  bool operator==(const LockModeCounts&) const = default;
};

struct BrokerConfig {
  /// Bitmap width; registering more than this many endpoints on one topic
  /// (publishers and subscribers share the local-id sequence) is an error.
  uint32_t max_subscribers_per_topic = 64;

  /// When set, every evicted payload is reclaimed here, inside the broker,
  /// at the moment of eviction. When unset (wire mode), evictions whose
  /// owning publisher is still registered are queued and handed back in
  /// that publisher's next publish result.
  std::function<void(const ArenaRef&)> reclaimer;
};

/// The single-writer metadata server: owns the entry trees (data plane) and
/// the endpoint tables (control plane) for every topic. All mutation goes
/// through this class under a strict two-level lock hierarchy: a global
/// reader-writer lock over per-topic reader-writer locks, acquired
/// global-then-topic and never reversed.
///
///   publish            global READ  + topic WRITE
///   receive / release  global READ  + topic READ (bit flips are atomic)
///   membership / exit  global WRITE (no topic lock needed)
class Broker final : public BrokerApi {
 public:
  explicit Broker(BrokerConfig config = {});

  uint64_t register_publisher(std::string_view topic, QoS qos, uint64_t pid) override;
  RegisterSubResult register_subscriber(std::string_view topic, QoS qos, uint64_t pid) override;
  std::vector<ArenaRef> unregister_publisher(std::string_view topic, uint64_t publisher_id) override;
  std::vector<ArenaRef> unregister_subscriber(std::string_view topic, uint64_t subscriber_id) override;
  PublishResult publish_entry(std::string_view topic, uint64_t publisher_id,
                              const ArenaRef& payload) override;
  std::vector<ReceivedEntry> receive_entries(std::string_view topic, uint64_t subscriber_id) override;
  void release_reference(std::string_view topic, uint64_t subscriber_id, uint64_t entry_id) override;
  std::vector<ArenaRef> handle_process_exit(uint64_t pid) override;
  BrokerSnapshot snapshot(std::optional<std::string_view> topic = std::nullopt) override;

  bool reclaims_internally() const override { return static_cast<bool>(config_.reclaimer); }

  /// True while any topic still holds an entry whose payload lives in the
  /// given arena. Used by the server to decide when a departed client's
  /// shared-memory segment can be unlinked.
  bool arena_in_use(uint64_t arena_id);

  LockModeCounts lock_counts(OpClass cls) const;

  /// Test hook: invoked inside the receive critical section (global READ +
  /// topic READ held) after validation. Set only while quiescent.
  void set_receive_probe(std::function<void(std::string_view, uint64_t)> probe) {
    receive_probe_ = std::move(probe);
  }

 private:
  struct Counters {
    std::atomic<uint64_t> publish_ops{0};
    std::atomic<uint64_t> receive_bit_sets{0};
    std::atomic<uint64_t> release_bit_clears{0};
    std::atomic<uint64_t> membership_ops{0};

    CounterSnapshot snapshot() const {
      return {publish_ops.load(), receive_bit_sets.load(), release_bit_clears.load(),
              membership_ops.load()};
    }
  };

  struct PublisherRecord {
    uint64_t local_id = 0;
    uint64_t pid = 0;
    QoS qos;
    uint64_t published = 0;
  };

  struct RetiredPublisher {
    QoS qos;
    uint64_t published = 0;
    uint64_t pid = 0;
  };

  struct SubscriberRecord {
    uint64_t local_id = 0;
    uint64_t pid = 0;
    QoS qos;
    std::atomic<uint64_t> watermark{0};  // last delivered entry id, 0 = nothing
  };

  struct EntryRecord {
    uint64_t entry_id = 0;
    ArenaRef payload;
    uint64_t publisher_id = 0;
    QoS publisher_qos;  // frozen at publish so orphaned entries keep their rule
    bool publisher_retired = false;
    SubscriberBitmap bitmap;

    EntryRecord(uint64_t id, ArenaRef ref, uint64_t pub, QoS qos, uint32_t width)
        : entry_id(id), payload(ref), publisher_id(pub), publisher_qos(qos), bitmap(width) {}
  };

  struct TopicState {
    std::string name;
    std::map<uint64_t, EntryRecord> entries;
    std::map<uint64_t, PublisherRecord> publishers;
    std::map<uint64_t, SubscriberRecord> subscribers;
    std::map<uint64_t, RetiredPublisher> retired_publishers;
    std::map<uint64_t, std::vector<ArenaRef>> pending_reclaim;  // live publisher -> queued refs
    uint64_t next_entry_id = 1;
    uint64_t next_local_id = 0;
    Counters counters;
    mutable std::shared_mutex lock;
  };

  // Lock helpers; every acquisition is tagged with its operation class.
  std::shared_lock<std::shared_mutex> global_read(OpClass cls);
  std::unique_lock<std::shared_mutex> global_write(OpClass cls);
  std::shared_lock<std::shared_mutex> topic_read(TopicState& t, OpClass cls);
  std::unique_lock<std::shared_mutex> topic_write(TopicState& t, OpClass cls);

  TopicState* find_topic(std::string_view name);  // caller holds global lock
  TopicState& topic_or_create(std::string_view name);  // caller holds global write

  void route_eviction(TopicState& t, const ArenaRef& ref, uint64_t publisher_id,
                      bool publisher_live, std::vector<ArenaRef>& out);

  // Evicts this publisher's reclaimable entries (zero bitmap, more than
  // depth newer entries from the same publisher). Caller holds a lock that
  // excludes concurrent structural changes.
  void evict_for_publisher(TopicState& t, uint64_t publisher_id, std::vector<ArenaRef>& out);

  // Full reclamation pass over one topic: the publish-time depth rule for
  // every live or transient-local-retired publisher group, plus immediate
  // eviction of zero-bitmap entries orphaned by departed volatile publishers.
  void sweep_topic(TopicState& t, std::vector<ArenaRef>& out);

  // Removes the topic when no endpoints and no entries remain. Caller holds
  // the global write lock.
  void erase_topic_if_dead(const std::string& name);

  uint64_t initial_watermark(const TopicState& t, const QoS& sub_qos) const;

  void bump_membership(TopicState& t);

  BrokerConfig config_;
  mutable std::shared_mutex global_lock_;
  std::map<std::string, std::unique_ptr<TopicState>> topics_;
  Counters counters_;

  // Structural-atomicity check (debug): membership changes step this
  // generation to odd on entry and even on exit while holding the global
  // write lock; data-path operations assert they never observe an odd or
  // changing value.
  std::atomic<uint64_t> membership_gen_{0};

  mutable std::array<std::array<std::atomic<uint64_t>, 4>, 5> lock_counts_{};

  std::function<void(std::string_view, uint64_t)> receive_probe_;
};

}  // namespace pubsub
