#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>

#include "pubsub/arena.hpp"

namespace pubsub {

/// Name of the shared-memory segment backing one arena. The logical id is
/// `<prefix>/<arena_id>`; the OS-level name flattens the separator to '.'
/// because POSIX shm names cannot contain interior slashes.
std::string shm_segment_name(std::string_view prefix, uint64_t arena_id);

constexpr const char* kDefaultShmPrefix = "pubsub-arena";

/// RAII wrapper around one POSIX shared-memory mapping.
class ShmSegment {
 public:
  static ShmSegment create(const std::string& name, uint64_t capacity);
  static ShmSegment open_rw(const std::string& name);
  static ShmSegment open_ro(const std::string& name);
  static void unlink(const std::string& name) noexcept;

  ShmSegment() = default;
  ShmSegment(ShmSegment&& other) noexcept;
  ShmSegment& operator=(ShmSegment&& other) noexcept;
  ShmSegment(const ShmSegment&) = delete;
  ShmSegment& operator=(const ShmSegment&) = delete;
  ~ShmSegment();

  std::span<std::byte> bytes() { return {static_cast<std::byte*>(base_), size_}; }
  std::span<const std::byte> bytes() const { return {static_cast<const std::byte*>(base_), size_}; }
  uint64_t size() const noexcept { return size_; }
  const std::string& name() const noexcept { return name_; }
  bool mapped() const noexcept { return base_ != nullptr; }

 private:
  ShmSegment(std::string name, void* base, uint64_t size) : name_(std::move(name)), base_(base), size_(size) {}

  std::string name_;
  void* base_ = nullptr;
  uint64_t size_ = 0;
};

/// Publisher-side shared-memory arena. Allocator metadata is process-local:
/// readers address payload bytes purely by {offset, length}, so nothing in
/// the segment itself needs cross-process synchronization.
class ShmArenaWriter final : public Arena {
 public:
  ShmArenaWriter(uint64_t arena_id, ShmSegment segment);

  uint64_t arena_id() const noexcept override { return id_; }
  std::pair<ArenaRef, std::span<std::byte>> allocate(uint64_t length) override;
  std::span<const std::byte> resolve(const ArenaRef& ref) const override;
  void reclaim(const ArenaRef& ref) override;
  ArenaStats stats() const override;

 private:
  uint64_t id_;
  ShmSegment segment_;
  detail::FreeListAllocator alloc_;
  std::map<uint64_t, uint64_t> live_;  // offset -> length
  mutable std::mutex mu_;
};

/// Subscriber-side resolution: maps peer segments read-only on demand,
/// keyed by arena id. Mappings are kept for the resolver's lifetime so
/// payloads of departed publishers stay readable (the broker owns segment
/// unlinking).
class ShmResolver final : public PayloadResolver {
 public:
  explicit ShmResolver(std::string prefix = kDefaultShmPrefix) : prefix_(std::move(prefix)) {}

  std::span<const std::byte> resolve(const ArenaRef& ref) const override;

 private:
  std::string prefix_;
  mutable std::mutex mu_;
  mutable std::map<uint64_t, ShmSegment> segments_;
};

}  // namespace pubsub
