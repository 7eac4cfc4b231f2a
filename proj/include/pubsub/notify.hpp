#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pubsub/errors.hpp"

namespace pubsub {

enum class NotifyOutcome : uint8_t {
  delivered = 0,  // queue was empty, wakeup enqueued
  coalesced = 1,  // queue already pending; the next receive drains everything
  gone = 2,       // subscriber exited; publisher path ignores this
};

enum class DeliveryModeKind : uint8_t { event_driven = 0, polling = 1 };

struct DeliveryMode {
  DeliveryModeKind mode = DeliveryModeKind::event_driven;
  std::chrono::microseconds poll_interval{100};
};

/// Capacity-1 wakeup slot for one subscriber. post() never blocks the
/// publisher; a send on a full queue is a no-op reported as coalesced.
class WakeupQueue {
 public:
  NotifyOutcome post();
  /// Blocks until a wakeup is pending (consuming it) or the timeout expires.
  bool consume_wait(std::chrono::microseconds timeout);
  /// Non-blocking consume.
  bool try_consume();
  void close();
  bool closed() const;

 private:
  friend class WakeupHub;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  bool pending_ = false;
  bool closed_ = false;
};

/// In-process notification fabric: one capacity-1 queue per (topic,
/// subscriber). The multi-process counterpart is MqNotifier/MqWakeupQueue.
class WakeupHub {
 public:
  std::shared_ptr<WakeupQueue> register_queue(std::string_view topic, uint64_t subscriber_id);
  void unregister_queue(std::string_view topic, uint64_t subscriber_id);

  NotifyOutcome notify(std::string_view topic, uint64_t subscriber_id);

  /// Returns the subset of `subscriber_ids` on `topic` with a pending
  /// wakeup, consuming those wakeups. Blocks up to `timeout`; throws
  /// Errc::timeout when nothing becomes ready.
  std::vector<uint64_t> wait_events(std::string_view topic, std::span<const uint64_t> subscriber_ids,
                                    std::chrono::microseconds timeout);

  uint64_t notifications_sent() const { return notifications_sent_.load(); }

 private:
  using Key = std::pair<std::string, uint64_t>;
  mutable std::shared_mutex mu_;
  std::map<Key, std::shared_ptr<WakeupQueue>> queues_;
  // Multi-queue waiters park on one hub-wide condition variable; notify only
  // signals it while someone is actually waiting there.
  std::mutex multi_mu_;
  std::condition_variable multi_cv_;
  std::atomic<int> multi_waiters_{0};
  std::atomic<uint64_t> notifications_sent_{0};
};

/// Drift-free tick source for the polling delivery mode: each wait targets
/// the next multiple of the interval, mirroring a fixed-rate poll loop.
class PollingClock {
 public:
  explicit PollingClock(std::chrono::microseconds interval);
  void wait_next_tick();

 private:
  std::chrono::microseconds interval_;
  std::chrono::steady_clock::time_point next_;
};

/// One polling-mode iteration: sleep to the next tick, then run the receive
/// callable. The induced latency floor (about half the interval on average)
/// is this mode's defining property.
template <class ReceiveFn>
auto poll_loop_step(PollingClock& clock, ReceiveFn&& receive) {
  clock.wait_next_tick();
  return receive();
}

}  // namespace pubsub
