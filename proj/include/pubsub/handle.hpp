#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "pubsub/arena.hpp"
#include "pubsub/broker_api.hpp"

namespace pubsub {

enum class HandleRole : uint8_t { publisher_loan = 0, subscriber_ref = 1 };

namespace detail {

/// State shared between a subscriber endpoint and every handle it produced.
/// `defunct` flips when the endpoint unregisters or its process "crashes";
/// outstanding handles then become inert instead of emitting releases the
/// broker has already accounted for.
struct SubscriberCore {
  BrokerApi* broker = nullptr;
  std::shared_ptr<const PayloadResolver> resolver;
  std::string topic;
  uint64_t subscriber_id = 0;
  std::atomic<bool> defunct{false};
  std::atomic<uint64_t> protocol_errors{0};
};

struct PublisherCore {
  std::shared_ptr<Arena> arena;
  std::string topic;
  uint64_t publisher_id = 0;
  std::atomic<bool> defunct{false};
  std::atomic<uint64_t> protocol_errors{0};
};

/// The shared count + validity flag behind every copy of one handle.
/// Invalidation is a single flag flip, so publish is O(1) in the number of
/// outstanding copies.
struct ControlBlock {
  std::atomic<uint32_t> local_count{1};
  std::atomic<bool> valid{true};
  std::atomic<bool> published{false};
  HandleRole role;
  ArenaRef payload;
  std::atomic<uint64_t> entry_id{0};  // set for subscriber_ref, set at publish for loans
  std::span<std::byte> loan_view;     // valid for publisher_loan until publish
  std::shared_ptr<SubscriberCore> sub;
  std::shared_ptr<PublisherCore> pub;

  void on_count_zero() noexcept;
};

}  // namespace detail

/// The application-facing message reference: std::shared_ptr-equivalent
/// copy/move/destruction, a process-local count, and publish-time
/// invalidation of every copy. Copying an invalidated handle throws;
/// dropping is infallible. The final drop of a subscriber handle emits
/// exactly one release notification to the broker.
class MessageHandle {
 public:
  MessageHandle() = default;

  MessageHandle(const MessageHandle& other) : MessageHandle(other.clone()) {}
  MessageHandle& operator=(const MessageHandle& other);
  MessageHandle(MessageHandle&& other) noexcept : block_(std::move(other.block_)) {}
  MessageHandle& operator=(MessageHandle&& other) noexcept;
  ~MessageHandle() { drop(); }

  /// Explicit in-process copy: bumps only the local count, no broker call.
  /// Throws Errc::invalid_handle once the block was invalidated by publish.
  MessageHandle clone() const;

  /// Releases this reference. Infallible; broker-reported release failures
  /// are counted on the owning endpoint as protocol errors.
  void drop() noexcept;

  explicit operator bool() const noexcept { return block_ != nullptr; }
  bool valid() const noexcept;
  HandleRole role() const;
  std::string_view topic() const;
  std::optional<uint64_t> entry_id() const;
  const ArenaRef& payload_ref() const;
  uint32_t use_count() const;

  /// Read-only payload view. Loans must still be valid (publish invalidates
  /// them); subscriber views are resolved through the arena every time so a
  /// reclaimed slot surfaces as Errc::poisoned_payload.
  std::span<const std::byte> bytes() const;

  /// Writable view; publisher loans only, before publish.
  std::span<std::byte> writable();

 private:
  friend class Publisher;
  friend class Subscriber;
  explicit MessageHandle(std::shared_ptr<detail::ControlBlock> block) : block_(std::move(block)) {}

  detail::ControlBlock& checked_block() const;

  std::shared_ptr<detail::ControlBlock> block_;
};

}  // namespace pubsub
