#include "pubsub/handle.hpp"

#include <cassert>

namespace pubsub {

namespace detail {

void ControlBlock::on_count_zero() noexcept {
  if (role == HandleRole::subscriber_ref) {
    if (sub->defunct.load(std::memory_order_acquire)) return;
    try {
      sub->broker->release_reference(sub->topic, sub->subscriber_id,
                                     entry_id.load(std::memory_order_relaxed));
    } catch (...) {
      // Drop is infallible; a failing release is a protocol bug and is
      // reported out of band.
      sub->protocol_errors.fetch_add(1, std::memory_order_relaxed);
    }
    return;
  }
  // Publisher loan. After publish, ownership already moved to the broker.
  if (published.load(std::memory_order_acquire)) return;
  if (pub->defunct.load(std::memory_order_acquire)) return;
  try {
    pub->arena->reclaim(payload);
  } catch (...) {
    pub->protocol_errors.fetch_add(1, std::memory_order_relaxed);
  }
}

}  // namespace detail

MessageHandle& MessageHandle::operator=(const MessageHandle& other) {
  if (this != &other) *this = other.clone();
  return *this;
}

MessageHandle& MessageHandle::operator=(MessageHandle&& other) noexcept {
  if (this != &other) {
    drop();
    block_ = std::move(other.block_);
  }
  return *this;
}

MessageHandle MessageHandle::clone() const {
  if (!block_) return MessageHandle();
  if (!block_->valid.load(std::memory_order_acquire))
    raise(Errc::invalid_handle, "handle was invalidated by publish");
  block_->local_count.fetch_add(1, std::memory_order_acq_rel);
  return MessageHandle(block_);
}

void MessageHandle::drop() noexcept {
  if (!block_) return;
  if (block_->local_count.fetch_sub(1, std::memory_order_acq_rel) == 1) {
    block_->on_count_zero();
  }
  block_.reset();
}

bool MessageHandle::valid() const noexcept {
  return block_ && block_->valid.load(std::memory_order_acquire);
}

HandleRole MessageHandle::role() const { return checked_block().role; }

std::string_view MessageHandle::topic() const {
  auto& block = checked_block();
  return block.role == HandleRole::subscriber_ref ? block.sub->topic : block.pub->topic;
}

std::optional<uint64_t> MessageHandle::entry_id() const {
  auto& block = checked_block();
  if (block.role == HandleRole::subscriber_ref) return block.entry_id.load();
  if (block.published.load(std::memory_order_acquire)) return block.entry_id.load();
  return std::nullopt;
}

const ArenaRef& MessageHandle::payload_ref() const { return checked_block().payload; }

uint32_t MessageHandle::use_count() const {
  return block_ ? block_->local_count.load(std::memory_order_acquire) : 0;
}

std::span<const std::byte> MessageHandle::bytes() const {
  auto& block = checked_block();
  if (!block.valid.load(std::memory_order_acquire))
    raise(Errc::invalid_handle, "handle was invalidated by publish");
  if (block.role == HandleRole::publisher_loan)
    return {block.loan_view.data(), block.loan_view.size()};
  // Resolved through the arena on every access so that a violated lifetime
  // (slot reclaimed while this handle lives) is detected, not read through.
  return block.sub->resolver->resolve(block.payload);
}

std::span<std::byte> MessageHandle::writable() {
  auto& block = checked_block();
  if (block.role != HandleRole::publisher_loan)
    raise(Errc::invalid_handle, "subscriber handles are read-only");
  if (!block.valid.load(std::memory_order_acquire))
    raise(Errc::invalid_handle, "handle was invalidated by publish");
  return block.loan_view;
}

detail::ControlBlock& MessageHandle::checked_block() const {
  if (!block_) raise(Errc::invalid_handle, "null handle");
  return *block_;
}

}  // namespace pubsub
