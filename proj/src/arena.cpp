#include "pubsub/arena.hpp"

#include <algorithm>
#include <cstring>

namespace pubsub {

namespace detail {

std::optional<uint64_t> FreeListAllocator::allocate(uint64_t length) {
  for (auto it = free_.begin(); it != free_.end(); ++it) {
    if (it->second < length) continue;
    uint64_t offset = it->first;
    uint64_t remaining = it->second - length;
    free_.erase(it);
    if (remaining > 0) free_.emplace(offset + length, remaining);
    return offset;
  }
  return std::nullopt;
}

void FreeListAllocator::release(uint64_t offset, uint64_t length) {
  auto next = free_.lower_bound(offset);
  if (next != free_.end() && offset + length == next->first) {
    length += next->second;
    next = free_.erase(next);
  }
  if (next != free_.begin()) {
    auto prev = std::prev(next);
    if (prev->first + prev->second == offset) {
      offset = prev->first;
      length += prev->second;
      free_.erase(prev);
    }
  }
  free_.emplace(offset, length);
}

}  // namespace detail

InProcArena::InProcArena(uint64_t arena_id, uint64_t capacity)
    : id_(arena_id), bytes_(capacity), alloc_(capacity) {}

std::pair<ArenaRef, std::span<std::byte>> InProcArena::allocate(uint64_t length) {
  if (length == 0) raise(Errc::invalid_argument, "zero-length allocation");
  std::lock_guard lk(mu_);
  auto offset = alloc_.allocate(length);
  if (!offset)
    raise(Errc::arena_exhausted, "no free range of " + std::to_string(length) + " bytes");
  live_.emplace(*offset, length);
  // Reusing the range invalidates any tombstones it overlaps.
  auto t = tombstones_.lower_bound(*offset);
  if (t != tombstones_.begin()) {
    auto prev = std::prev(t);
    if (prev->first + prev->second > *offset) t = tombstones_.erase(prev);
  }
  while (t != tombstones_.end() && t->first < *offset + length) t = tombstones_.erase(t);
  return {ArenaRef{id_, *offset, length}, std::span<std::byte>(bytes_.data() + *offset, length)};
}

std::span<const std::byte> InProcArena::resolve(const ArenaRef& ref) const {
  if (ref.arena_id != id_) raise(Errc::unknown_ref, "ref belongs to another arena");
  std::lock_guard lk(mu_);
  if (auto it = live_.find(ref.offset); it != live_.end() && it->second == ref.length) {
    return std::span<const std::byte>(bytes_.data() + ref.offset, ref.length);
  }
  if (auto it = tombstones_.find(ref.offset);
      it != tombstones_.end() && it->second == ref.length) {
    raise(Errc::poisoned_payload, "slot at offset " + std::to_string(ref.offset) +
                                      " was reclaimed while still referenced");
  }
  raise(Errc::unknown_ref, "no slot at offset " + std::to_string(ref.offset));
}

void InProcArena::reclaim(const ArenaRef& ref) {
  if (ref.arena_id != id_) raise(Errc::unknown_ref, "ref belongs to another arena");
  std::lock_guard lk(mu_);
  auto it = live_.find(ref.offset);
  if (it == live_.end() || it->second != ref.length) {
    if (tombstones_.count(ref.offset)) raise(Errc::double_reclaim, "slot already reclaimed");
    raise(Errc::unknown_ref, "no live slot at offset " + std::to_string(ref.offset));
  }
  std::memset(bytes_.data() + ref.offset, static_cast<int>(kPoisonByte), ref.length);
  tombstones_.emplace(ref.offset, it->second);
  live_.erase(it);
  alloc_.release(ref.offset, ref.length);
}

ArenaStats InProcArena::stats() const {
  std::lock_guard lk(mu_);
  ArenaStats s;
  s.capacity = alloc_.capacity();
  for (const auto& [off, len] : live_) s.live_bytes += len;
  s.free_bytes = s.capacity - s.live_bytes;
  s.live_slots = live_.size();
  return s;
}

void ArenaRegistry::add(std::shared_ptr<Arena> arena) {
  std::unique_lock lk(mu_);
  arenas_[arena->arena_id()] = std::move(arena);
}

void ArenaRegistry::remove(uint64_t arena_id) {
  std::unique_lock lk(mu_);
  arenas_.erase(arena_id);
}

std::shared_ptr<Arena> ArenaRegistry::find(uint64_t arena_id) const {
  std::shared_lock lk(mu_);
  auto it = arenas_.find(arena_id);
  return it == arenas_.end() ? nullptr : it->second;
}

std::span<const std::byte> ArenaRegistry::resolve(const ArenaRef& ref) const {
  auto arena = find(ref.arena_id);
  if (!arena) raise(Errc::unknown_ref, "unknown arena " + std::to_string(ref.arena_id));
  return arena->resolve(ref);
}

void ArenaRegistry::reclaim(const ArenaRef& ref) {
  auto arena = find(ref.arena_id);
  if (!arena) raise(Errc::unknown_ref, "unknown arena " + std::to_string(ref.arena_id));
  arena->reclaim(ref);
}

uint64_t ArenaRegistry::total_live_slots() const {
  std::shared_lock lk(mu_);
  uint64_t n = 0;
  for (const auto& [id, arena] : arenas_) n += arena->stats().live_slots;
  return n;
}

uint64_t ArenaRegistry::total_live_bytes() const {
  std::shared_lock lk(mu_);
  uint64_t n = 0;
  for (const auto& [id, arena] : arenas_) n += arena->stats().live_bytes;
  return n;
}

const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::ok: return "ok";
    case Errc::arena_exhausted: return "ArenaExhausted";
    case Errc::invalid_handle: return "InvalidHandle";
    case Errc::topic_gone: return "TopicGone";
    case Errc::id_space_exhausted: return "IdSpaceExhausted";
    case Errc::unknown_endpoint: return "UnknownEndpoint";
    case Errc::unknown_entry: return "UnknownEntry";
    case Errc::bit_not_set: return "BitNotSet";
    case Errc::unknown_topic: return "UnknownTopic";
    case Errc::unknown_ref: return "UnknownRef";
    case Errc::double_reclaim: return "DoubleReclaim";
    case Errc::poisoned_payload: return "PoisonedPayload";
    case Errc::queue_gone: return "QueueGone";
    case Errc::timeout: return "Timeout";
    case Errc::bound_exceeded: return "BoundExceeded";
    case Errc::malformed_trace: return "MalformedTrace";
    case Errc::malformed_frame: return "MalformedFrame";
    case Errc::capacity_exceeded: return "CapacityExceeded";
    case Errc::spawn_failure: return "SpawnFailure";
    case Errc::empty_sample_set: return "EmptySampleSet";
    case Errc::insufficient_points: return "InsufficientPoints";
    case Errc::io_failure: return "IoFailure";
    case Errc::invalid_argument: return "InvalidArgument";
  }
  return "unknown";
}

}  // namespace pubsub
