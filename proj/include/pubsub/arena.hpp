#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <unordered_map>
#include <vector>

#include "pubsub/errors.hpp"

namespace pubsub {

/// Location of one payload inside a publisher-owned arena. The same ref
/// resolves to identical bytes in every attached process while the slot
/// is live.
struct ArenaRef {
  uint64_t arena_id = 0;  // owning publisher-process identity
  uint64_t offset = 0;
  uint64_t length = 0;

  bool operator==(const ArenaRef&) const = default;
};

struct ArenaStats {
  uint64_t capacity = 0;
  uint64_t live_bytes = 0;
  uint64_t free_bytes = 0;
  uint64_t live_slots = 0;
};

namespace detail {

/// First-fit offset allocator with free-range coalescing. Byte storage and
/// slot bookkeeping stay with the owning arena.
class FreeListAllocator {
 public:
  explicit FreeListAllocator(uint64_t capacity) : capacity_(capacity) {
    if (capacity) free_.emplace(0, capacity);
  }

  std::optional<uint64_t> allocate(uint64_t length);
  void release(uint64_t offset, uint64_t length);
  uint64_t capacity() const noexcept { return capacity_; }

 private:
  uint64_t capacity_;
  std::map<uint64_t, uint64_t> free_;  // offset -> length
};

}  // namespace detail

/// Construct-once read-many payload storage with explicit reclamation.
class Arena {
 public:
  virtual ~Arena() = default;

  virtual uint64_t arena_id() const noexcept = 0;

  /// Reserves a slot. Throws Errc::arena_exhausted when no free range fits.
  virtual std::pair<ArenaRef, std::span<std::byte>> allocate(uint64_t length) = 0;

  /// Read-only view of a live slot. Throws Errc::unknown_ref for refs that
  /// never existed here, Errc::poisoned_payload where the backend detects a
  /// reclaimed slot.
  virtual std::span<const std::byte> resolve(const ArenaRef& ref) const = 0;

  /// Frees a slot previously returned as evicted. Throws Errc::double_reclaim.
  virtual void reclaim(const ArenaRef& ref) = 0;

  virtual ArenaStats stats() const = 0;
};

/// Deterministic in-process arena used by tests, racelab and the inproc
/// bench backend. Reclaimed slots are overwritten with a sentinel byte and
/// tombstoned so that a stale resolve is reported as poisoned_payload
/// instead of silently returning freed memory.
class InProcArena final : public Arena {
 public:
  InProcArena(uint64_t arena_id, uint64_t capacity);

  uint64_t arena_id() const noexcept override { return id_; }
  std::pair<ArenaRef, std::span<std::byte>> allocate(uint64_t length) override;
  std::span<const std::byte> resolve(const ArenaRef& ref) const override;
  void reclaim(const ArenaRef& ref) override;
  ArenaStats stats() const override;

  /// Test backdoor: reclaims a slot that the broker still considers live,
  /// to prove the poison detector fires. Never used by production paths.
  void force_reclaim_for_test(const ArenaRef& ref) { reclaim(ref); }

  static constexpr std::byte kPoisonByte{0xDD};

 private:
  uint64_t id_;
  std::vector<std::byte> bytes_;
  detail::FreeListAllocator alloc_;
  std::map<uint64_t, uint64_t> live_;        // offset -> length
  std::map<uint64_t, uint64_t> tombstones_;  // reclaimed, not yet reused
  mutable std::mutex mu_;
};

/// Resolves payload refs without knowing which arena backs them.
class PayloadResolver {
 public:
  virtual ~PayloadResolver() = default;
  virtual std::span<const std::byte> resolve(const ArenaRef& ref) const = 0;
};

/// Process-local table of arenas keyed by arena id. Doubles as the broker's
/// reclaimer in single-process setups.
class ArenaRegistry final : public PayloadResolver {
 public:
  void add(std::shared_ptr<Arena> arena);
  void remove(uint64_t arena_id);
  std::shared_ptr<Arena> find(uint64_t arena_id) const;

  std::span<const std::byte> resolve(const ArenaRef& ref) const override;
  void reclaim(const ArenaRef& ref);

  uint64_t total_live_slots() const;
  uint64_t total_live_bytes() const;

 private:
  mutable std::shared_mutex mu_;
  std::unordered_map<uint64_t, std::shared_ptr<Arena>> arenas_;
};

}  // namespace pubsub
