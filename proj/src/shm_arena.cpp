#include "pubsub/shm_arena.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace pubsub {

std::string shm_segment_name(std::string_view prefix, uint64_t arena_id) {
  std::string name = "/";
  name += prefix;
  name += ".";
  name += std::to_string(arena_id);
  return name;
}

ShmSegment ShmSegment::create(const std::string& name, uint64_t capacity) {
  int fd = ::shm_open(name.c_str(), O_CREAT | O_EXCL | O_RDWR, 0600);
  if (fd < 0) raise(Errc::io_failure, "shm_open create " + name + ": " + std::strerror(errno));
  if (::ftruncate(fd, static_cast<off_t>(capacity)) != 0) {
    int saved = errno;
    ::close(fd);
    ::shm_unlink(name.c_str());
    raise(Errc::io_failure, "ftruncate " + name + ": " + std::strerror(saved));
  }
  void* base = ::mmap(nullptr, capacity, PROT_READ | PROT_WRITE, MAP_SHARED, fd, 0);
  int saved = errno;
  ::close(fd);
  if (base == MAP_FAILED) {
    ::shm_unlink(name.c_str());
    raise(Errc::io_failure, "mmap " + name + ": " + std::strerror(saved));
  }
  return ShmSegment(name, base, capacity);
}

ShmSegment ShmSegment::open_rw(const std::string& name) {
  int fd = ::shm_open(name.c_str(), O_RDWR, 0600);
  if (fd < 0) raise(Errc::io_failure, "shm_open " + name + ": " + std::strerror(errno));
  struct stat st{};
  if (::fstat(fd, &st) != 0) {
    int saved = errno;
    ::close(fd);
    raise(Errc::io_failure, "fstat " + name + ": " + std::strerror(saved));
  }
  uint64_t size = static_cast<uint64_t>(st.st_size);
  void* base = ::mmap(nullptr, size, PROT_READ | PROT_WRITE, MAP_SHARED, fd, 0);
  int saved = errno;
  ::close(fd);
  if (base == MAP_FAILED) raise(Errc::io_failure, "mmap " + name + ": " + std::strerror(saved));
  return ShmSegment(name, base, size);
}

ShmSegment ShmSegment::open_ro(const std::string& name) {
  int fd = ::shm_open(name.c_str(), O_RDONLY, 0600);
  if (fd < 0) raise(Errc::unknown_ref, "shm_open " + name + ": " + std::strerror(errno));
  struct stat st{};
  if (::fstat(fd, &st) != 0) {
    int saved = errno;
    ::close(fd);
    raise(Errc::io_failure, "fstat " + name + ": " + std::strerror(saved));
  }
  uint64_t size = static_cast<uint64_t>(st.st_size);
  void* base = ::mmap(nullptr, size, PROT_READ, MAP_SHARED, fd, 0);
  int saved = errno;
  ::close(fd);
  if (base == MAP_FAILED) raise(Errc::io_failure, "mmap " + name + ": " + std::strerror(saved));
  return ShmSegment(name, base, size);
}

void ShmSegment::unlink(const std::string& name) noexcept { ::shm_unlink(name.c_str()); }

ShmSegment::ShmSegment(ShmSegment&& other) noexcept
    : name_(std::move(other.name_)), base_(other.base_), size_(other.size_) {
  other.base_ = nullptr;
  other.size_ = 0;
}

ShmSegment& ShmSegment::operator=(ShmSegment&& other) noexcept {
  if (this != &other) {
    if (base_) ::munmap(base_, size_);
    name_ = std::move(other.name_);
    base_ = other.base_;
    size_ = other.size_;
    other.base_ = nullptr;
    other.size_ = 0;
  }
  return *this;
}

ShmSegment::~ShmSegment() {
  if (base_) ::munmap(base_, size_);
}

ShmArenaWriter::ShmArenaWriter(uint64_t arena_id, ShmSegment segment)
    : id_(arena_id), segment_(std::move(segment)), alloc_(segment_.size()) {}

std::pair<ArenaRef, std::span<std::byte>> ShmArenaWriter::allocate(uint64_t length) {
  if (length == 0) raise(Errc::invalid_argument, "zero-length allocation");
  std::lock_guard lk(mu_);
  auto offset = alloc_.allocate(length);
  if (!offset)
    raise(Errc::arena_exhausted, "no free range of " + std::to_string(length) + " bytes");
  live_.emplace(*offset, length);
  return {ArenaRef{id_, *offset, length}, segment_.bytes().subspan(*offset, length)};
}

std::span<const std::byte> ShmArenaWriter::resolve(const ArenaRef& ref) const {
  if (ref.arena_id != id_) raise(Errc::unknown_ref, "ref belongs to another arena");
  if (ref.offset + ref.length > segment_.size())
    raise(Errc::unknown_ref, "ref outside segment bounds");
  return segment_.bytes().subspan(ref.offset, ref.length);
}

void ShmArenaWriter::reclaim(const ArenaRef& ref) {
  if (ref.arena_id != id_) raise(Errc::unknown_ref, "ref belongs to another arena");
  std::lock_guard lk(mu_);
  auto it = live_.find(ref.offset);
  if (it == live_.end() || it->second != ref.length)
    raise(Errc::double_reclaim, "no live slot at offset " + std::to_string(ref.offset));
  live_.erase(it);
  alloc_.release(ref.offset, ref.length);
}

ArenaStats ShmArenaWriter::stats() const {
  std::lock_guard lk(mu_);
  ArenaStats s;
  s.capacity = alloc_.capacity();
  for (const auto& [off, len] : live_) s.live_bytes += len;
  s.free_bytes = s.capacity - s.live_bytes;
  s.live_slots = live_.size();
  return s;
}

std::span<const std::byte> ShmResolver::resolve(const ArenaRef& ref) const {
  std::lock_guard lk(mu_);
  auto it = segments_.find(ref.arena_id);
  if (it == segments_.end()) {
    auto segment = ShmSegment::open_ro(shm_segment_name(prefix_, ref.arena_id));
    it = segments_.emplace(ref.arena_id, std::move(segment)).first;
  }
  if (ref.offset + ref.length > it->second.size())
    raise(Errc::unknown_ref, "ref outside segment bounds");
  return it->second.bytes().subspan(ref.offset, ref.length);
}

}  // namespace pubsub
