#include "pubsub/proto.hpp"

#include <cstdlib>
#include <cstring>

namespace pubsub::proto {

namespace {

class Writer {
 public:
  void u8(uint8_t v) { out_.push_back(v); }
  void u16(uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void str16(std::string_view s) {
    if (s.size() > kMaxTopicLength) raise(Errc::malformed_frame, "topic exceeds 255 bytes");
    u16(static_cast<uint16_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void ref(const ArenaRef& r) {
    u64(r.arena_id);
    u64(r.offset);
    u64(r.length);
  }
  void qos(const QoS& q) {
    u8(static_cast<uint8_t>(q.durability));
    u32(q.depth);
  }

  /// Finish a frame: prefix the accumulated payload with its u32 length.
  std::vector<uint8_t> into_frame() && {
    uint64_t n = out_.size();
    if (n > kMaxFrameLength) raise(Errc::malformed_frame, "frame exceeds maximum length");
    std::vector<uint8_t> framed;
    framed.reserve(n + 4);
    for (int i = 0; i < 4; ++i) framed.push_back(static_cast<uint8_t>(n >> (8 * i)));
    framed.insert(framed.end(), out_.begin(), out_.end());
    return framed;
  }

  std::vector<uint8_t> into_bytes() && { return std::move(out_); }

 private:
  std::vector<uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> bytes) : bytes_(bytes) {}

  uint8_t u8() { return take(1)[0]; }
  uint16_t u16() {
    auto b = take(2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
  }
  uint32_t u32() {
    auto b = take(4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  }
  uint64_t u64() {
    uint64_t v = 0;
    auto b = take(8);
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::string str16() {
    uint16_t n = u16();
    if (n > kMaxTopicLength) raise(Errc::malformed_frame, "string exceeds 255 bytes");
    auto b = take(n);
    return std::string(reinterpret_cast<const char*>(b.data()), b.size());
  }
  ArenaRef ref() {
    ArenaRef r;
    r.arena_id = u64();
    r.offset = u64();
    r.length = u64();
    return r;
  }
  QoS qos() {
    QoS q;
    uint8_t d = u8();
    if (d > 1) raise(Errc::malformed_frame, "bad durability value");
    q.durability = static_cast<Durability>(d);
    q.depth = u32();
    return q;
  }
  void expect_end() const {
    if (pos_ != bytes_.size()) raise(Errc::malformed_frame, "trailing bytes in frame");
  }
  size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const uint8_t> take(size_t n) {
    if (pos_ + n > bytes_.size()) raise(Errc::malformed_frame, "truncated frame");
    auto view = bytes_.subspan(pos_, n);
    pos_ += n;
    return view;
  }

  std::span<const uint8_t> bytes_;
  size_t pos_ = 0;
};

// Strips and validates the u32 length prefix.
std::span<const uint8_t> frame_payload(std::span<const uint8_t> frame) {
  if (frame.size() < 4) raise(Errc::malformed_frame, "frame shorter than length prefix");
  uint32_t n = static_cast<uint32_t>(frame[0]) | (static_cast<uint32_t>(frame[1]) << 8) |
               (static_cast<uint32_t>(frame[2]) << 16) | (static_cast<uint32_t>(frame[3]) << 24);
  if (n > kMaxFrameLength) raise(Errc::malformed_frame, "frame exceeds maximum length");
  if (frame.size() - 4 != n) raise(Errc::malformed_frame, "length field does not match frame size");
  return frame.subspan(4);
}

void write_ref_list(Writer& w, const std::vector<ArenaRef>& refs) {
  w.u32(static_cast<uint32_t>(refs.size()));
  for (const auto& r : refs) w.ref(r);
}

std::vector<ArenaRef> read_ref_list(Reader& r) {
  uint32_t n = r.u32();
  std::vector<ArenaRef> refs;
  refs.reserve(n);
  for (uint32_t i = 0; i < n; ++i) refs.push_back(r.ref());
  return refs;
}

}  // namespace

std::string socket_path_from_env() {
  const char* p = std::getenv(kSocketEnvVar);
  return p && *p ? std::string(p) : std::string(kDefaultSocketPath);
}

bool opcode_known(uint8_t raw) { return raw <= static_cast<uint8_t>(Opcode::snapshot); }

std::vector<uint8_t> encode_request(const RequestFrame& frame) {
  Writer w;
  w.u64(frame.request_id);
  w.u8(static_cast<uint8_t>(frame.opcode()));
  std::visit(
      [&](const auto& body) {
        using T = std::decay_t<decltype(body)>;
        if constexpr (std::is_same_v<T, HelloRequest>) {
          w.u8(body.version);
          w.u64(body.pid);
        } else if constexpr (std::is_same_v<T, RegisterPubRequest> ||
                             std::is_same_v<T, RegisterSubRequest>) {
          w.str16(body.topic);
          w.qos(body.qos);
          w.u64(body.pid);
        } else if constexpr (std::is_same_v<T, UnregisterPubRequest>) {
          w.str16(body.topic);
          w.u64(body.publisher_id);
        } else if constexpr (std::is_same_v<T, UnregisterSubRequest>) {
          w.str16(body.topic);
          w.u64(body.subscriber_id);
        } else if constexpr (std::is_same_v<T, PublishRequest>) {
          w.str16(body.topic);
          w.u64(body.publisher_id);
          w.ref(body.payload);
        } else if constexpr (std::is_same_v<T, ReceiveRequest>) {
          w.str16(body.topic);
          w.u64(body.subscriber_id);
        } else if constexpr (std::is_same_v<T, ReleaseRequest>) {
          w.str16(body.topic);
          w.u64(body.subscriber_id);
          w.u64(body.entry_id);
        } else if constexpr (std::is_same_v<T, SnapshotRequest>) {
          w.u8(body.topic ? 1 : 0);
          if (body.topic) w.str16(*body.topic);
        }
      },
      frame.body);
  return std::move(w).into_frame();
}

RequestFrame decode_request(std::span<const uint8_t> frame) {
  Reader r(frame_payload(frame));
  RequestFrame out;
  out.request_id = r.u64();
  uint8_t op = r.u8();
  if (!opcode_known(op)) raise(Errc::malformed_frame, "unknown opcode " + std::to_string(op));
  switch (static_cast<Opcode>(op)) {
    case Opcode::hello: {
      HelloRequest b;
      b.version = r.u8();
      b.pid = r.u64();
      out.body = b;
      break;
    }
    case Opcode::register_pub: {
      RegisterPubRequest b;
      b.topic = r.str16();
      b.qos = r.qos();
      b.pid = r.u64();
      out.body = b;
      break;
    }
    case Opcode::register_sub: {
      RegisterSubRequest b;
      b.topic = r.str16();
      b.qos = r.qos();
      b.pid = r.u64();
      out.body = b;
      break;
    }
    case Opcode::unregister_pub: {
      UnregisterPubRequest b;
      b.topic = r.str16();
      b.publisher_id = r.u64();
      out.body = b;
      break;
    }
    case Opcode::unregister_sub: {
      UnregisterSubRequest b;
      b.topic = r.str16();
      b.subscriber_id = r.u64();
      out.body = b;
      break;
    }
    case Opcode::publish: {
      PublishRequest b;
      b.topic = r.str16();
      b.publisher_id = r.u64();
      b.payload = r.ref();
      out.body = b;
      break;
    }
    case Opcode::receive: {
      ReceiveRequest b;
      b.topic = r.str16();
      b.subscriber_id = r.u64();
      out.body = b;
      break;
    }
    case Opcode::release: {
      ReleaseRequest b;
      b.topic = r.str16();
      b.subscriber_id = r.u64();
      b.entry_id = r.u64();
      out.body = b;
      break;
    }
    case Opcode::snapshot: {
      SnapshotRequest b;
      if (r.u8()) b.topic = r.str16();
      out.body = b;
      break;
    }
  }
  r.expect_end();
  return out;
}

std::vector<uint8_t> encode_response(const ResponseFrame& frame) {
  Writer w;
  w.u64(frame.request_id);
  w.u8(static_cast<uint8_t>(frame.opcode));
  if (const auto* err = std::get_if<ErrorResponse>(&frame.body)) {
    w.u8(static_cast<uint8_t>(err->code));
    w.str16(err->message.substr(0, kMaxTopicLength));
    return std::move(w).into_frame();
  }
  w.u8(static_cast<uint8_t>(Errc::ok));
  std::visit(
      [&](const auto& body) {
        using T = std::decay_t<decltype(body)>;
        if constexpr (std::is_same_v<T, HelloResponse>) {
          w.u8(body.version);
        } else if constexpr (std::is_same_v<T, RegisterPubResponse>) {
          w.u64(body.publisher_id);
        } else if constexpr (std::is_same_v<T, RegisterSubResponse>) {
          w.u64(body.subscriber_id);
          w.u64(body.initial_watermark);
        } else if constexpr (std::is_same_v<T, EvictedListResponse>) {
          write_ref_list(w, body.evicted);
        } else if constexpr (std::is_same_v<T, PublishResponse>) {
          w.u64(body.entry_id);
          w.u32(static_cast<uint32_t>(body.subscriber_ids.size()));
          for (uint64_t id : body.subscriber_ids) w.u64(id);
          write_ref_list(w, body.evicted);
        } else if constexpr (std::is_same_v<T, ReceiveResponse>) {
          w.u32(static_cast<uint32_t>(body.entries.size()));
          for (const auto& e : body.entries) {
            w.u64(e.entry_id);
            w.ref(e.payload);
          }
        } else if constexpr (std::is_same_v<T, ReleaseResponse>) {
          // empty body
        } else if constexpr (std::is_same_v<T, SnapshotResponse>) {
          w.u32(static_cast<uint32_t>(body.encoded.size()));
          for (uint8_t b : body.encoded) w.u8(b);
        }
      },
      frame.body);
  return std::move(w).into_frame();
}

ResponseFrame decode_response(std::span<const uint8_t> frame) {
  Reader r(frame_payload(frame));
  ResponseFrame out;
  out.request_id = r.u64();
  uint8_t op = r.u8();
  if (!opcode_known(op)) raise(Errc::malformed_frame, "unknown opcode " + std::to_string(op));
  out.opcode = static_cast<Opcode>(op);
  uint8_t status = r.u8();
  if (status != static_cast<uint8_t>(Errc::ok)) {
    if (status > static_cast<uint8_t>(Errc::invalid_argument))
      raise(Errc::malformed_frame, "unknown status code");
    ErrorResponse err;
    err.code = static_cast<Errc>(status);
    err.message = r.str16();
    out.body = err;
    r.expect_end();
    return out;
  }
  switch (out.opcode) {
    case Opcode::hello: {
      HelloResponse b;
      b.version = r.u8();
      out.body = b;
      break;
    }
    case Opcode::register_pub: {
      RegisterPubResponse b;
      b.publisher_id = r.u64();
      out.body = b;
      break;
    }
    case Opcode::register_sub: {
      RegisterSubResponse b;
      b.subscriber_id = r.u64();
      b.initial_watermark = r.u64();
      out.body = b;
      break;
    }
    case Opcode::unregister_pub:
    case Opcode::unregister_sub: {
      EvictedListResponse b;
      b.evicted = read_ref_list(r);
      out.body = b;
      break;
    }
    case Opcode::publish: {
      PublishResponse b;
      b.entry_id = r.u64();
      uint32_t n = r.u32();
      b.subscriber_ids.reserve(n);
      for (uint32_t i = 0; i < n; ++i) b.subscriber_ids.push_back(r.u64());
      b.evicted = read_ref_list(r);
      out.body = b;
      break;
    }
    case Opcode::receive: {
      ReceiveResponse b;
      uint32_t n = r.u32();
      b.entries.reserve(n);
      for (uint32_t i = 0; i < n; ++i) {
        ReceiveEntryWire e;
        e.entry_id = r.u64();
        e.payload = r.ref();
        b.entries.push_back(e);
      }
      out.body = b;
      break;
    }
    case Opcode::release: {
      out.body = ReleaseResponse{};
      break;
    }
    case Opcode::snapshot: {
      SnapshotResponse b;
      uint32_t n = r.u32();
      b.encoded.reserve(n);
      for (uint32_t i = 0; i < n; ++i) b.encoded.push_back(r.u8());
      out.body = b;
      break;
    }
  }
  r.expect_end();
  return out;
}

FrameHeader peek_header(std::span<const uint8_t> frame) {
  if (frame.size() < 4 + 8 + 1) raise(Errc::malformed_frame, "frame shorter than header");
  FrameHeader h;
  h.length = static_cast<uint32_t>(frame[0]) | (static_cast<uint32_t>(frame[1]) << 8) |
             (static_cast<uint32_t>(frame[2]) << 16) | (static_cast<uint32_t>(frame[3]) << 24);
  Reader r(frame.subspan(4));
  h.request_id = r.u64();
  h.opcode = r.u8();
  return h;
}

std::vector<uint8_t> encode_snapshot(const BrokerSnapshot& snapshot) {
  Writer w;
  w.u8(kProtocolVersion);
  auto counters = [&](const CounterSnapshot& c) {
    w.u64(c.publish_ops);
    w.u64(c.receive_bit_sets);
    w.u64(c.release_bit_clears);
    w.u64(c.membership_ops);
  };
  w.u32(static_cast<uint32_t>(snapshot.topics.size()));
  for (const auto& t : snapshot.topics) {
    w.str16(t.name);
    w.u64(t.next_entry_id);
    w.u64(t.next_local_id);
    counters(t.counters);
    w.u32(static_cast<uint32_t>(t.entries.size()));
    for (const auto& e : t.entries) {
      w.u64(e.entry_id);
      w.u64(e.publisher_id);
      w.ref(e.payload);
      w.u32(static_cast<uint32_t>(e.bitmap_words.size()));
      for (uint64_t word : e.bitmap_words) w.u64(word);
    }
    w.u32(static_cast<uint32_t>(t.publishers.size()));
    for (const auto& p : t.publishers) {
      w.u64(p.local_id);
      w.u64(p.pid);
      w.u8(static_cast<uint8_t>(p.qos.durability));
      w.u32(p.qos.depth);
      w.u64(p.published);
      w.u8(p.retired ? 1 : 0);
    }
    w.u32(static_cast<uint32_t>(t.subscribers.size()));
    for (const auto& s : t.subscribers) {
      w.u64(s.local_id);
      w.u64(s.pid);
      w.u8(static_cast<uint8_t>(s.qos.durability));
      w.u32(s.qos.depth);
      w.u64(s.watermark);
    }
    w.u32(static_cast<uint32_t>(t.pending_reclaim.size()));
    for (const auto& [pub, count] : t.pending_reclaim) {
      w.u64(pub);
      w.u64(count);
    }
  }
  counters(snapshot.counters);
  return std::move(w).into_bytes();
}

BrokerSnapshot decode_snapshot(std::span<const uint8_t> bytes) {
  Reader r(bytes);
  if (r.u8() != kProtocolVersion) raise(Errc::malformed_frame, "snapshot version mismatch");
  auto counters = [&] {
    CounterSnapshot c;
    c.publish_ops = r.u64();
    c.receive_bit_sets = r.u64();
    c.release_bit_clears = r.u64();
    c.membership_ops = r.u64();
    return c;
  };
  BrokerSnapshot snap;
  uint32_t topic_count = r.u32();
  for (uint32_t ti = 0; ti < topic_count; ++ti) {
    TopicSnapshot t;
    t.name = r.str16();
    t.next_entry_id = r.u64();
    t.next_local_id = r.u64();
    t.counters = counters();
    uint32_t n_entries = r.u32();
    for (uint32_t i = 0; i < n_entries; ++i) {
      EntrySnapshot e;
      e.entry_id = r.u64();
      e.publisher_id = r.u64();
      e.payload = r.ref();
      uint32_t words = r.u32();
      for (uint32_t k = 0; k < words; ++k) e.bitmap_words.push_back(r.u64());
      t.entries.push_back(std::move(e));
    }
    uint32_t n_pubs = r.u32();
    for (uint32_t i = 0; i < n_pubs; ++i) {
      PublisherSnapshot p;
      p.local_id = r.u64();
      p.pid = r.u64();
      p.qos.durability = static_cast<Durability>(r.u8());
      p.qos.depth = r.u32();
      p.published = r.u64();
      p.retired = r.u8() != 0;
      t.publishers.push_back(p);
    }
    uint32_t n_subs = r.u32();
    for (uint32_t i = 0; i < n_subs; ++i) {
      SubscriberSnapshot s;
      s.local_id = r.u64();
      s.pid = r.u64();
      s.qos.durability = static_cast<Durability>(r.u8());
      s.qos.depth = r.u32();
      s.watermark = r.u64();
      t.subscribers.push_back(s);
    }
    uint32_t n_pending = r.u32();
    for (uint32_t i = 0; i < n_pending; ++i) {
      uint64_t pub = r.u64();
      uint64_t count = r.u64();
      t.pending_reclaim.emplace_back(pub, count);
    }
    snap.topics.push_back(std::move(t));
  }
  snap.counters = counters();
  r.expect_end();
  return snap;
}

}  // namespace pubsub::proto
