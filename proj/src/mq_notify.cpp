#include "pubsub/mq_notify.hpp"

#include <fcntl.h>
#include <mqueue.h>
#include <sys/stat.h>
#include <time.h>

#include <cerrno>
#include <cstring>

namespace pubsub {

namespace {

class MqWaiter final : public Waiter {
 public:
  MqWaiter(std::string name, mqd_t mq) : name_(std::move(name)), mq_(mq) {}
  ~MqWaiter() override {
    if (mq_ != static_cast<mqd_t>(-1)) ::mq_close(mq_);
  }

  bool wait(std::chrono::microseconds timeout) override {
    struct timespec abs{};
    ::clock_gettime(CLOCK_REALTIME, &abs);
    abs.tv_sec += timeout.count() / 1000000;
    abs.tv_nsec += (timeout.count() % 1000000) * 1000;
    if (abs.tv_nsec >= 1000000000) {
      abs.tv_sec += 1;
      abs.tv_nsec -= 1000000000;
    }
    char buf[1];
    ssize_t n = ::mq_timedreceive(mq_, buf, sizeof buf, nullptr, &abs);
    return n >= 0;
  }

 private:
  std::string name_;
  mqd_t mq_;
};

}  // namespace

MqNotifyFabric::MqNotifyFabric(std::string prefix) : prefix_(std::move(prefix)) {}

MqNotifyFabric::~MqNotifyFabric() {
  std::lock_guard lk(mu_);
  for (auto& [name, mq] : send_cache_) ::mq_close(static_cast<mqd_t>(mq));
}

uint64_t MqNotifyFabric::topic_hash(std::string_view topic) noexcept {
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : topic) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string MqNotifyFabric::queue_name(std::string_view prefix, std::string_view topic,
                                       uint64_t subscriber_id) {
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(topic_hash(topic)));
  std::string name = "/";
  name += prefix;
  name += ".";
  name += hex;
  name += ".";
  name += std::to_string(subscriber_id);
  return name;
}

NotifyOutcome MqNotifyFabric::notify(std::string_view topic, uint64_t subscriber_id) {
  std::string name = queue_name(prefix_, topic, subscriber_id);
  mqd_t mq;
  {
    std::lock_guard lk(mu_);
    auto it = send_cache_.find(name);
    if (it == send_cache_.end()) {
      mq = ::mq_open(name.c_str(), O_WRONLY | O_NONBLOCK);
      if (mq == static_cast<mqd_t>(-1)) return NotifyOutcome::gone;
      send_cache_.emplace(name, static_cast<int>(mq));
    } else {
      mq = static_cast<mqd_t>(it->second);
    }
  }
  char byte = 1;
  if (::mq_send(mq, &byte, 1, 0) == 0) return NotifyOutcome::delivered;
  if (errno == EAGAIN) return NotifyOutcome::coalesced;
  std::lock_guard lk(mu_);
  if (auto it = send_cache_.find(name); it != send_cache_.end()) {
    ::mq_close(static_cast<mqd_t>(it->second));
    send_cache_.erase(it);
  }
  return NotifyOutcome::gone;
}

std::shared_ptr<Waiter> MqNotifyFabric::attach(std::string_view topic, uint64_t subscriber_id) {
  std::string name = queue_name(prefix_, topic, subscriber_id);
  struct mq_attr attr{};
  attr.mq_maxmsg = 1;  // capacity exactly 1: redundant wakeups coalesce
  attr.mq_msgsize = 1;
  ::mq_unlink(name.c_str());  // stale queue from a crashed predecessor
  mqd_t mq = ::mq_open(name.c_str(), O_CREAT | O_EXCL | O_RDONLY, 0600, &attr);
  if (mq == static_cast<mqd_t>(-1))
    raise(Errc::io_failure, "mq_open " + name + ": " + std::strerror(errno));
  return std::make_shared<MqWaiter>(name, mq);
}

void MqNotifyFabric::detach(std::string_view topic, uint64_t subscriber_id) {
  std::string name = queue_name(prefix_, topic, subscriber_id);
  ::mq_unlink(name.c_str());
}

}  // namespace pubsub
