#include "net_util.hpp"

#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "pubsub/errors.hpp"
#include "pubsub/proto.hpp"

namespace pubsub::net {

namespace {

sockaddr_un make_addr(const std::string& path) {
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (path.size() >= sizeof(addr.sun_path))
    raise(Errc::invalid_argument, "socket path too long: " + path);
  std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
  return addr;
}

bool read_exact(int fd, uint8_t* buf, size_t n, bool* clean_eof_at_start) {
  size_t got = 0;
  while (got < n) {
    ssize_t r = ::read(fd, buf + got, n - got);
    if (r == 0) {
      if (clean_eof_at_start && got == 0) {
        *clean_eof_at_start = true;
        return false;
      }
      raise(Errc::io_failure, "connection closed mid-frame");
    }
    if (r < 0) {
      if (errno == EINTR) continue;
      raise(Errc::io_failure, std::string("read: ") + std::strerror(errno));
    }
    got += static_cast<size_t>(r);
  }
  return true;
}

}  // namespace

int unix_listen(const std::string& path, int backlog) {
  int fd = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) raise(Errc::io_failure, std::string("socket: ") + std::strerror(errno));
  sockaddr_un addr = make_addr(path);
  ::unlink(path.c_str());
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    int saved = errno;
    ::close(fd);
    raise(Errc::io_failure, "bind " + path + ": " + std::strerror(saved));
  }
  if (::listen(fd, backlog) != 0) {
    int saved = errno;
    ::close(fd);
    raise(Errc::io_failure, "listen " + path + ": " + std::strerror(saved));
  }
  return fd;
}

int unix_connect(const std::string& path) {
  int fd = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) raise(Errc::io_failure, std::string("socket: ") + std::strerror(errno));
  sockaddr_un addr = make_addr(path);
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    int saved = errno;
    ::close(fd);
    raise(Errc::io_failure, "connect " + path + ": " + std::strerror(saved));
  }
  return fd;
}

std::optional<std::vector<uint8_t>> read_frame(int fd) {
  uint8_t prefix[4];
  bool clean_eof = false;
  if (!read_exact(fd, prefix, 4, &clean_eof)) return std::nullopt;
  uint32_t length = static_cast<uint32_t>(prefix[0]) | (static_cast<uint32_t>(prefix[1]) << 8) |
                    (static_cast<uint32_t>(prefix[2]) << 16) |
                    (static_cast<uint32_t>(prefix[3]) << 24);
  if (length > proto::kMaxFrameLength)
    raise(Errc::malformed_frame, "frame exceeds maximum length");
  std::vector<uint8_t> frame(4 + length);
  std::memcpy(frame.data(), prefix, 4);
  if (length > 0) read_exact(fd, frame.data() + 4, length, nullptr);
  return frame;
}

void write_frame(int fd, const std::vector<uint8_t>& frame) {
  size_t sent = 0;
  while (sent < frame.size()) {
    ssize_t w = ::write(fd, frame.data() + sent, frame.size() - sent);
    if (w < 0) {
      if (errno == EINTR) continue;
      raise(Errc::io_failure, std::string("write: ") + std::strerror(errno));
    }
    sent += static_cast<size_t>(w);
  }
}

}  // namespace pubsub::net
