#pragma once

#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "pubsub/broker.hpp"
#include "pubsub/broker_api.hpp"
#include "pubsub/handle.hpp"
#include "pubsub/notify.hpp"

namespace pubsub {

/// Publisher-side and subscriber-side ends of the post-publish wakeup path.
/// The in-process fabric is WakeupHub; multi-process mode uses POSIX
/// message queues behind the same interface.
class Waiter {
 public:
  virtual ~Waiter() = default;
  virtual bool wait(std::chrono::microseconds timeout) = 0;
};

class NotifyFabric {
 public:
  virtual ~NotifyFabric() = default;
  virtual NotifyOutcome notify(std::string_view topic, uint64_t subscriber_id) = 0;
  virtual std::shared_ptr<Waiter> attach(std::string_view topic, uint64_t subscriber_id) = 0;
  virtual void detach(std::string_view topic, uint64_t subscriber_id) = 0;
};

class HubFabric final : public NotifyFabric {
 public:
  explicit HubFabric(std::shared_ptr<WakeupHub> hub) : hub_(std::move(hub)) {}
  NotifyOutcome notify(std::string_view topic, uint64_t subscriber_id) override {
    return hub_->notify(topic, subscriber_id);
  }
  std::shared_ptr<Waiter> attach(std::string_view topic, uint64_t subscriber_id) override;
  void detach(std::string_view topic, uint64_t subscriber_id) override {
    hub_->unregister_queue(topic, subscriber_id);
  }
  WakeupHub& hub() { return *hub_; }

 private:
  std::shared_ptr<WakeupHub> hub_;
};

struct PublishReceipt {
  uint64_t entry_id = 0;
  uint32_t notified_subscriber_count = 0;
  uint32_t evicted_count = 0;
};

class Session;

/// One registered publisher endpoint. Loans arena slots, publishes them,
/// fans out wakeups, and routes returned evictions back into its arena
/// when the broker does not reclaim internally.
class Publisher {
 public:
  ~Publisher();
  Publisher(const Publisher&) = delete;
  Publisher& operator=(const Publisher&) = delete;

  MessageHandle loan(uint64_t size);
  PublishReceipt publish(MessageHandle& handle);
  void unregister();

  const std::string& topic() const { return core_->topic; }
  uint64_t id() const { return core_->publisher_id; }

 private:
  friend class Session;
  Publisher(Session& session, std::string_view topic, QoS qos);

  Session* session_;
  QoS qos_;
  std::shared_ptr<detail::PublisherCore> core_;
  bool registered_ = false;
};

/// One registered subscriber endpoint.
class Subscriber {
 public:
  ~Subscriber();
  Subscriber(const Subscriber&) = delete;
  Subscriber& operator=(const Subscriber&) = delete;

  /// Drains all entries past the watermark; one handle per entry, each with
  /// local count 1.
  std::vector<MessageHandle> receive();
  /// Blocks until a wakeup arrives or the timeout expires.
  bool wait(std::chrono::microseconds timeout);
  void unregister();

  const std::string& topic() const { return core_->topic; }
  uint64_t id() const { return core_->subscriber_id; }
  uint64_t initial_watermark() const { return initial_watermark_; }

 private:
  friend class Session;
  Subscriber(Session& session, std::string_view topic, QoS qos);

  Session* session_;
  std::shared_ptr<detail::SubscriberCore> core_;
  std::shared_ptr<Waiter> waiter_;
  uint64_t initial_watermark_ = 0;
  bool registered_ = false;
};

/// Per-process bundle: broker access, this process's arena, payload
/// resolution and the notification fabric. Tests drive several logical
/// processes by creating one session per simulated pid.
class Session {
 public:
  struct Options {
    std::shared_ptr<BrokerApi> broker;
    std::shared_ptr<const PayloadResolver> resolver;
    std::shared_ptr<Arena> arena;  // may be null for subscriber-only sessions
    std::shared_ptr<NotifyFabric> notify;
    uint64_t pid = 0;
  };

  explicit Session(Options options);
  ~Session();

  std::unique_ptr<Publisher> create_publisher(std::string_view topic, QoS qos);
  std::unique_ptr<Subscriber> create_subscriber(std::string_view topic, QoS qos);

  /// Simulates an abrupt process death: outstanding handles go inert
  /// (crashed processes issue no releases) and the broker performs its
  /// exit cleanup for this pid.
  void simulate_crash();

  uint64_t pid() const { return options_.pid; }
  BrokerApi& broker() { return *options_.broker; }
  Arena* arena() { return options_.arena.get(); }
  NotifyFabric& notify() { return *options_.notify; }

  /// Release/reclaim failures swallowed by infallible drop paths.
  uint64_t protocol_errors() const;

 private:
  friend class Publisher;
  friend class Subscriber;

  void adopt(std::shared_ptr<detail::PublisherCore> core);
  void adopt(std::shared_ptr<detail::SubscriberCore> core);

  Options options_;
  bool crashed_ = false;
  std::mutex cores_mu_;
  std::vector<std::weak_ptr<detail::PublisherCore>> pub_cores_;
  std::vector<std::weak_ptr<detail::SubscriberCore>> sub_cores_;
};

/// Everything a single-process deployment needs, wired together: a broker
/// that reclaims through the arena registry, plus the in-process wakeup hub.
struct InProcRuntime {
  std::shared_ptr<ArenaRegistry> arenas;
  std::shared_ptr<Broker> broker;
  std::shared_ptr<WakeupHub> hub;
  std::shared_ptr<HubFabric> fabric;

  explicit InProcRuntime(uint32_t max_subscribers_per_topic = 64);

  /// New logical process backed by a poisoning in-process arena.
  Session make_session(uint64_t pid, uint64_t arena_capacity = 1 << 20);
};

}  // namespace pubsub
