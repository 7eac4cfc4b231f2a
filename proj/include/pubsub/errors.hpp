#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pubsub {

/// Error codes shared across the library and the wire protocol
/// (the wire status byte is the numeric value of the code).
enum class Errc : uint8_t {
  ok = 0,
  arena_exhausted,
  invalid_handle,
  topic_gone,
  id_space_exhausted,
  unknown_endpoint,
  unknown_entry,
  bit_not_set,
  unknown_topic,
  unknown_ref,
  double_reclaim,
  poisoned_payload,
  queue_gone,
  timeout,
  bound_exceeded,
  malformed_trace,
  malformed_frame,
  capacity_exceeded,
  spawn_failure,
  empty_sample_set,
  insufficient_points,
  io_failure,
  invalid_argument,
};

const char* errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace pubsub
