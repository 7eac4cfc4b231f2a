#include "pubsub/remote_broker.hpp"

#include <unistd.h>

#include "net_util.hpp"

namespace pubsub {

using namespace proto;

RemoteBroker::RemoteBroker(const std::string& socket_path, uint64_t pid) : pid_(pid) {
  fd_ = net::unix_connect(socket_path);
  auto response = call(HelloRequest{kProtocolVersion, pid});
  if (!std::holds_alternative<HelloResponse>(response.body))
    raise(Errc::malformed_frame, "unexpected hello response");
}

RemoteBroker::~RemoteBroker() { close(); }

void RemoteBroker::close() {
  std::lock_guard lk(io_mu_);
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

ResponseFrame RemoteBroker::call(RequestBody body) {
  RequestFrame request;
  request.request_id = next_request_id_.fetch_add(1);
  request.body = std::move(body);
  auto encoded = encode_request(request);

  std::lock_guard lk(io_mu_);
  if (fd_ < 0) raise(Errc::io_failure, "connection closed");
  net::write_frame(fd_, encoded);
  auto frame = net::read_frame(fd_);
  if (!frame) raise(Errc::io_failure, "broker closed the connection");
  ResponseFrame response = decode_response(*frame);
  if (response.request_id != request.request_id)
    raise(Errc::malformed_frame, "response id does not match request");
  if (const auto* err = std::get_if<ErrorResponse>(&response.body))
    throw Error(err->code, err->message);
  return response;
}

namespace {

template <class T>
const T& expect(const ResponseFrame& frame) {
  const T* body = std::get_if<T>(&frame.body);
  if (!body) raise(Errc::malformed_frame, "unexpected response body");
  return *body;
}

}  // namespace

uint64_t RemoteBroker::register_publisher(std::string_view topic, QoS qos, uint64_t pid) {
  auto r = call(RegisterPubRequest{std::string(topic), qos, pid});
  return expect<RegisterPubResponse>(r).publisher_id;
}

RegisterSubResult RemoteBroker::register_subscriber(std::string_view topic, QoS qos, uint64_t pid) {
  auto r = call(RegisterSubRequest{std::string(topic), qos, pid});
  const auto& body = expect<RegisterSubResponse>(r);
  return {body.subscriber_id, body.initial_watermark};
}

std::vector<ArenaRef> RemoteBroker::unregister_publisher(std::string_view topic,
                                                         uint64_t publisher_id) {
  auto r = call(UnregisterPubRequest{std::string(topic), publisher_id});
  return expect<EvictedListResponse>(r).evicted;
}

std::vector<ArenaRef> RemoteBroker::unregister_subscriber(std::string_view topic,
                                                          uint64_t subscriber_id) {
  auto r = call(UnregisterSubRequest{std::string(topic), subscriber_id});
  return expect<EvictedListResponse>(r).evicted;
}

PublishResult RemoteBroker::publish_entry(std::string_view topic, uint64_t publisher_id,
                                          const ArenaRef& payload) {
  auto r = call(PublishRequest{std::string(topic), publisher_id, payload});
  const auto& body = expect<PublishResponse>(r);
  return {body.entry_id, body.subscriber_ids, body.evicted};
}

std::vector<ReceivedEntry> RemoteBroker::receive_entries(std::string_view topic,
                                                         uint64_t subscriber_id) {
  auto r = call(ReceiveRequest{std::string(topic), subscriber_id});
  const auto& body = expect<ReceiveResponse>(r);
  std::vector<ReceivedEntry> out;
  out.reserve(body.entries.size());
  for (const auto& e : body.entries) out.push_back({e.entry_id, e.payload});
  return out;
}

void RemoteBroker::release_reference(std::string_view topic, uint64_t subscriber_id,
                                     uint64_t entry_id) {
  auto r = call(ReleaseRequest{std::string(topic), subscriber_id, entry_id});
  expect<ReleaseResponse>(r);
}

std::vector<ArenaRef> RemoteBroker::handle_process_exit(uint64_t) {
  raise(Errc::invalid_argument, "process exit is signaled by closing the connection");
}

std::vector<uint8_t> RemoteBroker::snapshot_bytes(std::optional<std::string_view> topic) {
  SnapshotRequest request;
  if (topic) request.topic = std::string(*topic);
  auto r = call(std::move(request));
  return expect<SnapshotResponse>(r).encoded;
}

BrokerSnapshot RemoteBroker::snapshot(std::optional<std::string_view> topic) {
  auto bytes = snapshot_bytes(topic);
  return decode_snapshot(bytes);
}

}  // namespace pubsub
