#pragma once

#include <cstdint>

namespace pubsub {

/// Whether retained history is delivered to late-joining subscribers.
enum class Durability : uint8_t {
  volatile_ = 0,
  transient_local = 1,
};

/// Keep-last quality of service. `depth` bounds both the number of
/// retained messages per publisher and how far back a late joiner starts.
struct QoS {
  Durability durability = Durability::volatile_;
  uint32_t depth = 10;

  bool operator==(const QoS&) const = default;
};

}  // namespace pubsub
