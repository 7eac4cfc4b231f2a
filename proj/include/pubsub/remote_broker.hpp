#pragma once

#include <atomic>
#include <mutex>
#include <string>

#include "pubsub/broker_api.hpp"
#include "pubsub/proto.hpp"

namespace pubsub {

/// Client side of the wire protocol: a BrokerApi whose every call is one
/// request/response round trip on a unix stream socket. One connection per
/// client process; dropping it is the crash signal the server acts on.
class RemoteBroker final : public BrokerApi {
 public:
  RemoteBroker(const std::string& socket_path, uint64_t pid);
  ~RemoteBroker() override;

  RemoteBroker(const RemoteBroker&) = delete;
  RemoteBroker& operator=(const RemoteBroker&) = delete;

  uint64_t register_publisher(std::string_view topic, QoS qos, uint64_t pid) override;
  RegisterSubResult register_subscriber(std::string_view topic, QoS qos, uint64_t pid) override;
  std::vector<ArenaRef> unregister_publisher(std::string_view topic, uint64_t publisher_id) override;
  std::vector<ArenaRef> unregister_subscriber(std::string_view topic, uint64_t subscriber_id) override;
  PublishResult publish_entry(std::string_view topic, uint64_t publisher_id,
                              const ArenaRef& payload) override;
  std::vector<ReceivedEntry> receive_entries(std::string_view topic, uint64_t subscriber_id) override;
  void release_reference(std::string_view topic, uint64_t subscriber_id, uint64_t entry_id) override;

  /// Not available over the wire: a client signals its own exit by closing
  /// the connection, and cannot clean up for other pids.
  std::vector<ArenaRef> handle_process_exit(uint64_t pid) override;

  BrokerSnapshot snapshot(std::optional<std::string_view> topic = std::nullopt) override;
  /// Canonical snapshot bytes as served, for byte-identity checks.
  std::vector<uint8_t> snapshot_bytes(std::optional<std::string_view> topic = std::nullopt);

  bool reclaims_internally() const override { return false; }

  uint64_t pid() const { return pid_; }
  void close();

 private:
  proto::ResponseFrame call(proto::RequestBody body);

  int fd_ = -1;
  uint64_t pid_;
  std::atomic<uint64_t> next_request_id_{1};
  std::mutex io_mu_;
};

}  // namespace pubsub
