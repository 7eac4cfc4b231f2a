#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "pubsub/broker_api.hpp"
#include "pubsub/errors.hpp"

namespace pubsub::proto {

// Request/response frames between the client library and the broker
// process. All integers are little-endian fixed width; topic names are
// 16-bit-length-prefixed UTF-8 capped at 255 bytes. Every request gets
// exactly one response with a matching request id.
//
// Frame layout:
//   u32 length     byte count of the remainder (request_id onward)
//   u64 request_id
//   u8  opcode
//   u8  status     responses only; 0 = ok, else an Errc value
//   ...body        opcode-specific fixed-layout fields

constexpr uint8_t kProtocolVersion = 1;
constexpr uint32_t kMaxFrameLength = 16u << 20;
constexpr size_t kMaxTopicLength = 255;
constexpr const char* kSocketEnvVar = "PUBSUB_BROKER_SOCK";
constexpr const char* kDefaultSocketPath = "/tmp/pubsub-lifetimes.sock";

/// Socket path from PUBSUB_BROKER_SOCK, falling back to the default.
std::string socket_path_from_env();

enum class Opcode : uint8_t {
  hello = 0,
  register_pub = 1,
  register_sub = 2,
  unregister_pub = 3,
  unregister_sub = 4,
  publish = 5,
  receive = 6,
  release = 7,
  snapshot = 8,
};

bool opcode_known(uint8_t raw);

struct HelloRequest {
  uint8_t version = kProtocolVersion;
  uint64_t pid = 0;
  bool operator==(const HelloRequest&) const = default;
};
struct RegisterPubRequest {
  std::string topic;
  QoS qos;
  uint64_t pid = 0;
  bool operator==(const RegisterPubRequest&) const = default;
};
struct RegisterSubRequest {
  std::string topic;
  QoS qos;
  uint64_t pid = 0;
  bool operator==(const RegisterSubRequest&) const = default;
};
struct UnregisterPubRequest {
  std::string topic;
  uint64_t publisher_id = 0;
  bool operator==(const UnregisterPubRequest&) const = default;
};
struct UnregisterSubRequest {
  std::string topic;
  uint64_t subscriber_id = 0;
  bool operator==(const UnregisterSubRequest&) const = default;
};
struct PublishRequest {
  std::string topic;
  uint64_t publisher_id = 0;
  ArenaRef payload;
  bool operator==(const PublishRequest&) const = default;
};
struct ReceiveRequest {
  std::string topic;
  uint64_t subscriber_id = 0;
  bool operator==(const ReceiveRequest&) const = default;
};
struct ReleaseRequest {
  std::string topic;
  uint64_t subscriber_id = 0;
  uint64_t entry_id = 0;
  bool operator==(const ReleaseRequest&) const = default;
};
struct SnapshotRequest {
  std::optional<std::string> topic;
  bool operator==(const SnapshotRequest&) const = default;
};

using RequestBody =
    std::variant<HelloRequest, RegisterPubRequest, RegisterSubRequest, UnregisterPubRequest,
                 UnregisterSubRequest, PublishRequest, ReceiveRequest, ReleaseRequest,
                 SnapshotRequest>;

struct RequestFrame {
  uint64_t request_id = 0;
  RequestBody body;

  Opcode opcode() const { return static_cast<Opcode>(body.index()); }
  bool operator==(const RequestFrame&) const = default;
};

struct HelloResponse {
  uint8_t version = kProtocolVersion;
  bool operator==(const HelloResponse&) const = default;
};
struct RegisterPubResponse {
  uint64_t publisher_id = 0;
  bool operator==(const RegisterPubResponse&) const = default;
};
struct RegisterSubResponse {
  uint64_t subscriber_id = 0;
  uint64_t initial_watermark = 0;
  bool operator==(const RegisterSubResponse&) const = default;
};
struct EvictedListResponse {  // unregister_pub / unregister_sub
  std::vector<ArenaRef> evicted;
  bool operator==(const EvictedListResponse&) const = default;
};
struct PublishResponse {
  uint64_t entry_id = 0;
  std::vector<uint64_t> subscriber_ids;
  std::vector<ArenaRef> evicted;
  bool operator==(const PublishResponse&) const = default;
};
struct ReceiveEntryWire {
  uint64_t entry_id = 0;
  ArenaRef payload;
  bool operator==(const ReceiveEntryWire&) const = default;
};
struct ReceiveResponse {
  std::vector<ReceiveEntryWire> entries;
  bool operator==(const ReceiveResponse&) const = default;
};
struct ReleaseResponse {
  bool operator==(const ReleaseResponse&) const = default;
};
struct SnapshotResponse {
  std::vector<uint8_t> encoded;  // canonical snapshot encoding, see below
  bool operator==(const SnapshotResponse&) const = default;
};
struct ErrorResponse {
  Errc code = Errc::ok;
  std::string message;
  bool operator==(const ErrorResponse&) const = default;
};

using ResponseBody =
    std::variant<HelloResponse, RegisterPubResponse, RegisterSubResponse, EvictedListResponse,
                 PublishResponse, ReceiveResponse, ReleaseResponse, SnapshotResponse,
                 ErrorResponse>;

struct ResponseFrame {
  uint64_t request_id = 0;
  Opcode opcode = Opcode::hello;
  ResponseBody body;

  bool is_error() const { return std::holds_alternative<ErrorResponse>(body); }
  bool operator==(const ResponseFrame&) const = default;
};

/// Full frame bytes including the length prefix.
std::vector<uint8_t> encode_request(const RequestFrame& frame);
std::vector<uint8_t> encode_response(const ResponseFrame& frame);

/// Decode a full frame (length prefix included). Throws
/// Errc::malformed_frame on length mismatch, truncation or unknown opcode.
RequestFrame decode_request(std::span<const uint8_t> frame);
ResponseFrame decode_response(std::span<const uint8_t> frame);

struct FrameHeader {
  uint32_t length = 0;
  uint64_t request_id = 0;
  uint8_t opcode = 0;
};

/// Header fields only; lets the server answer unknown opcodes with an error
/// response instead of dropping the connection.
FrameHeader peek_header(std::span<const uint8_t> frame);

/// Canonical deterministic snapshot encoding; byte-for-byte comparable
/// across in-process and wire-served brokers.
std::vector<uint8_t> encode_snapshot(const BrokerSnapshot& snapshot);
BrokerSnapshot decode_snapshot(std::span<const uint8_t> bytes);

}  // namespace pubsub::proto
