#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace pubsub::net {

// Unix-domain stream socket helpers shared by the server and the client.

int unix_listen(const std::string& path, int backlog = 64);
int unix_connect(const std::string& path);

/// Reads one length-prefixed frame (prefix included in the result).
/// Returns nullopt on clean EOF at a frame boundary; throws Errc::io_failure
/// on mid-frame EOF or socket errors, Errc::malformed_frame on an oversized
/// length field.
std::optional<std::vector<uint8_t>> read_frame(int fd);
void write_frame(int fd, const std::vector<uint8_t>& frame);

}  // namespace pubsub::net
