#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "pubsub/broker.hpp"
#include "pubsub/proto.hpp"

namespace pubsub {

/// Serves a Broker over a unix stream socket, one connection per client
/// process. The connection doubles as the crash detector: teardown triggers
/// handle_process_exit for the client's hello pid exactly once.
class BrokerServer {
 public:
  struct Options {
    std::string socket_path = proto::kDefaultSocketPath;
    /// When set, the server creates one shared-memory segment per client
    /// pid at its first publisher registration and unlinks it once the
    /// departed client's payloads are no longer referenced.
    bool manage_segments = false;
    uint64_t segment_capacity = 8u << 20;
    std::string segment_prefix = "pubsub-arena";
  };

  BrokerServer(std::shared_ptr<Broker> broker, Options options);
  ~BrokerServer();

  void start();
  void stop();

  const std::string& socket_path() const { return options_.socket_path; }

 private:
  void accept_loop();
  void serve_connection(int fd);
  void ensure_segment(uint64_t pid);
  void retire_segment(uint64_t pid);
  void reap_zombie_segments();

  std::shared_ptr<Broker> broker_;
  Options options_;
  int listen_fd_ = -1;
  std::atomic<bool> running_{false};
  std::thread accept_thread_;
  std::mutex conns_mu_;
  std::vector<std::thread> conn_threads_;
  std::set<int> conn_fds_;
  std::mutex seg_mu_;
  std::set<uint64_t> segments_;         // pids with a created segment
  std::set<uint64_t> zombie_segments_;  // departed pids, segment still referenced
  std::atomic<int> zombie_count_{0};
};

}  // namespace pubsub
