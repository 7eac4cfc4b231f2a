#include "pubsub/server.hpp"

#include <sys/socket.h>
#include <unistd.h>

#include "net_util.hpp"
#include "pubsub/shm_arena.hpp"

namespace pubsub {

using namespace proto;

BrokerServer::BrokerServer(std::shared_ptr<Broker> broker, Options options)
    : broker_(std::move(broker)), options_(std::move(options)) {}

BrokerServer::~BrokerServer() { stop(); }

void BrokerServer::start() {
  listen_fd_ = net::unix_listen(options_.socket_path);
  running_.store(true);
  accept_thread_ = std::thread([this] { accept_loop(); });
}

void BrokerServer::stop() {
  if (!running_.exchange(false)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  {
    std::lock_guard lk(conns_mu_);
    for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  if (accept_thread_.joinable()) accept_thread_.join();
  std::vector<std::thread> threads;
  {
    std::lock_guard lk(conns_mu_);
    threads.swap(conn_threads_);
  }
  for (auto& t : threads)
    if (t.joinable()) t.join();
  ::unlink(options_.socket_path.c_str());
  std::lock_guard lk(seg_mu_);
  for (uint64_t pid : segments_)
    ShmSegment::unlink(shm_segment_name(options_.segment_prefix, pid));
  for (uint64_t pid : zombie_segments_)
    ShmSegment::unlink(shm_segment_name(options_.segment_prefix, pid));
  segments_.clear();
  zombie_segments_.clear();
}

void BrokerServer::accept_loop() {
  while (running_.load()) {
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (!running_.load()) break;
      continue;
    }
    std::lock_guard lk(conns_mu_);
    conn_fds_.insert(fd);
    conn_threads_.emplace_back([this, fd] { serve_connection(fd); });
  }
}

void BrokerServer::ensure_segment(uint64_t pid) {
  if (!options_.manage_segments) return;
  std::lock_guard lk(seg_mu_);
  if (segments_.count(pid)) return;
  std::string name = shm_segment_name(options_.segment_prefix, pid);
  ShmSegment::unlink(name);  // stale segment from a previous incarnation
  ShmSegment::create(name, options_.segment_capacity);  // mapping dropped; name persists
  segments_.insert(pid);
}

void BrokerServer::retire_segment(uint64_t pid) {
  if (!options_.manage_segments) return;
  std::lock_guard lk(seg_mu_);
  if (!segments_.erase(pid)) return;
  if (broker_->arena_in_use(pid)) {
    zombie_segments_.insert(pid);  // retained payloads still reference it
    zombie_count_.fetch_add(1);
  } else {
    ShmSegment::unlink(shm_segment_name(options_.segment_prefix, pid));
  }
}

void BrokerServer::reap_zombie_segments() {
  if (zombie_count_.load() == 0) return;
  std::lock_guard lk(seg_mu_);
  for (auto it = zombie_segments_.begin(); it != zombie_segments_.end();) {
    if (!broker_->arena_in_use(*it)) {
      ShmSegment::unlink(shm_segment_name(options_.segment_prefix, *it));
      it = zombie_segments_.erase(it);
      zombie_count_.fetch_sub(1);
    } else {
      ++it;
    }
  }
}

void BrokerServer::serve_connection(int fd) {
  uint64_t pid = 0;
  bool hello_done = false;

  auto respond = [&](ResponseFrame frame) { net::write_frame(fd, encode_response(frame)); };

  try {
    for (;;) {
      auto frame = net::read_frame(fd);
      if (!frame) break;  // clean EOF

      FrameHeader header = peek_header(*frame);
      if (!opcode_known(header.opcode)) {
        // Unknown opcode: error response, connection stays open.
        ResponseFrame err;
        err.request_id = header.request_id;
        err.opcode = Opcode::hello;
        err.body = ErrorResponse{Errc::malformed_frame,
                                 "unknown opcode " + std::to_string(header.opcode)};
        respond(std::move(err));
        continue;
      }

      RequestFrame request = decode_request(*frame);
      ResponseFrame response;
      response.request_id = request.request_id;
      response.opcode = request.opcode();

      if (!hello_done && request.opcode() != Opcode::hello) {
        response.body = ErrorResponse{Errc::malformed_frame, "hello expected first"};
        respond(std::move(response));
        break;
      }

      try {
        std::visit(
            [&](const auto& body) {
              using T = std::decay_t<decltype(body)>;
              if constexpr (std::is_same_v<T, HelloRequest>) {
                if (body.version != kProtocolVersion)
                  raise(Errc::malformed_frame,
                        "unsupported protocol version " + std::to_string(body.version));
                pid = body.pid;
                hello_done = true;
                response.body = HelloResponse{kProtocolVersion};
              } else if constexpr (std::is_same_v<T, RegisterPubRequest>) {
                ensure_segment(body.pid);
                response.body =
                    RegisterPubResponse{broker_->register_publisher(body.topic, body.qos, body.pid)};
              } else if constexpr (std::is_same_v<T, RegisterSubRequest>) {
                auto r = broker_->register_subscriber(body.topic, body.qos, body.pid);
                response.body = RegisterSubResponse{r.subscriber_id, r.initial_watermark};
              } else if constexpr (std::is_same_v<T, UnregisterPubRequest>) {
                response.body = EvictedListResponse{
                    broker_->unregister_publisher(body.topic, body.publisher_id)};
              } else if constexpr (std::is_same_v<T, UnregisterSubRequest>) {
                response.body = EvictedListResponse{
                    broker_->unregister_subscriber(body.topic, body.subscriber_id)};
              } else if constexpr (std::is_same_v<T, PublishRequest>) {
                auto r = broker_->publish_entry(body.topic, body.publisher_id, body.payload);
                response.body =
                    PublishResponse{r.entry_id, std::move(r.subscriber_ids), std::move(r.evicted)};
              } else if constexpr (std::is_same_v<T, ReceiveRequest>) {
                auto entries = broker_->receive_entries(body.topic, body.subscriber_id);
                ReceiveResponse r;
                r.entries.reserve(entries.size());
                for (const auto& e : entries) r.entries.push_back({e.entry_id, e.payload});
                response.body = std::move(r);
              } else if constexpr (std::is_same_v<T, ReleaseRequest>) {
                broker_->release_reference(body.topic, body.subscriber_id, body.entry_id);
                response.body = ReleaseResponse{};
              } else if constexpr (std::is_same_v<T, SnapshotRequest>) {
                std::optional<std::string_view> topic;
                if (body.topic) topic = *body.topic;
                response.body = SnapshotResponse{encode_snapshot(broker_->snapshot(topic))};
              }
            },
            request.body);
      } catch (const Error& e) {
        response.body = ErrorResponse{e.code(), e.what()};
      }
      respond(std::move(response));
      if (options_.manage_segments) reap_zombie_segments();
    }
  } catch (const Error&) {
    // Malformed stream or write failure: drop the connection; exit cleanup below.
  }

  ::close(fd);
  {
    std::lock_guard lk(conns_mu_);
    conn_fds_.erase(fd);
  }
  if (hello_done) {
    // Connection loss is the crash signal.
    broker_->handle_process_exit(pid);
    retire_segment(pid);
    reap_zombie_segments();
  }
}

}  // namespace pubsub
