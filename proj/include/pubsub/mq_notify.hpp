#pragma once

#include <map>
#include <mutex>
#include <string>
#include <string_view>

#include "pubsub/session.hpp"

namespace pubsub {

constexpr const char* kDefaultMqPrefix = "pubsub-notify";

/// POSIX message-queue notification fabric for multi-process mode: one
/// capacity-1 queue per subscriber, sent to with O_NONBLOCK so a publisher
/// never waits. A full queue means the subscriber is already scheduled to
/// wake; the send reports coalesced and its next receive drains everything.
///
/// Logical queue ids follow `<prefix>/<topic-hash>/<subscriber_local_id>`;
/// the OS-level name flattens the separators to '.' because POSIX forbids
/// interior slashes in queue names.
class MqNotifyFabric final : public NotifyFabric {
 public:
  explicit MqNotifyFabric(std::string prefix = kDefaultMqPrefix);
  ~MqNotifyFabric() override;

  NotifyOutcome notify(std::string_view topic, uint64_t subscriber_id) override;
  std::shared_ptr<Waiter> attach(std::string_view topic, uint64_t subscriber_id) override;
  void detach(std::string_view topic, uint64_t subscriber_id) override;

  /// FNV-1a 64-bit hash used in queue names.
  static uint64_t topic_hash(std::string_view topic) noexcept;
  static std::string queue_name(std::string_view prefix, std::string_view topic,
                                uint64_t subscriber_id);

 private:
  std::string prefix_;
  std::mutex mu_;
  std::map<std::string, int> send_cache_;  // queue name -> mqd
};

}  // namespace pubsub
