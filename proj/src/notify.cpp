#include "pubsub/notify.hpp"

#include <algorithm>
#include <thread>

namespace pubsub {

NotifyOutcome WakeupQueue::post() {
  std::lock_guard lk(mu_);
  if (closed_) return NotifyOutcome::gone;
  if (pending_) return NotifyOutcome::coalesced;
  pending_ = true;
  cv_.notify_all();
  return NotifyOutcome::delivered;
}

bool WakeupQueue::consume_wait(std::chrono::microseconds timeout) {
  std::unique_lock lk(mu_);
  if (!cv_.wait_for(lk, timeout, [&] { return pending_ || closed_; })) return false;
  if (!pending_) return false;
  pending_ = false;
  return true;
}

bool WakeupQueue::try_consume() {
  std::lock_guard lk(mu_);
  if (!pending_) return false;
  pending_ = false;
  return true;
}

void WakeupQueue::close() {
  std::lock_guard lk(mu_);
  closed_ = true;
  cv_.notify_all();
}

bool WakeupQueue::closed() const {
  std::lock_guard lk(mu_);
  return closed_;
}

std::shared_ptr<WakeupQueue> WakeupHub::register_queue(std::string_view topic,
                                                       uint64_t subscriber_id) {
  std::unique_lock lk(mu_);
  auto q = std::make_shared<WakeupQueue>();
  queues_[Key(std::string(topic), subscriber_id)] = q;
  return q;
}

void WakeupHub::unregister_queue(std::string_view topic, uint64_t subscriber_id) {
  std::unique_lock lk(mu_);
  auto it = queues_.find(Key(std::string(topic), subscriber_id));
  if (it == queues_.end()) return;
  it->second->close();
  queues_.erase(it);
}

NotifyOutcome WakeupHub::notify(std::string_view topic, uint64_t subscriber_id) {
  std::shared_ptr<WakeupQueue> q;
  {
    std::shared_lock lk(mu_);
    auto it = queues_.find(Key(std::string(topic), subscriber_id));
    if (it == queues_.end()) return NotifyOutcome::gone;
    q = it->second;
  }
  NotifyOutcome outcome = q->post();
  if (outcome != NotifyOutcome::gone) {
    notifications_sent_.fetch_add(1, std::memory_order_relaxed);
    if (multi_waiters_.load(std::memory_order_acquire) > 0) {
      std::lock_guard lk(multi_mu_);
      multi_cv_.notify_all();
    }
  }
  return outcome;
}

std::vector<uint64_t> WakeupHub::wait_events(std::string_view topic,
                                             std::span<const uint64_t> subscriber_ids,
                                             std::chrono::microseconds timeout) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  std::vector<std::pair<uint64_t, std::shared_ptr<WakeupQueue>>> watched;
  {
    std::shared_lock lk(mu_);
    for (uint64_t id : subscriber_ids) {
      auto it = queues_.find(Key(std::string(topic), id));
      if (it != queues_.end()) watched.emplace_back(id, it->second);
    }
  }
  auto collect = [&] {
    std::vector<uint64_t> ready;
    for (auto& [id, q] : watched)
      if (q->try_consume()) ready.push_back(id);
    return ready;
  };

  multi_waiters_.fetch_add(1, std::memory_order_acq_rel);
  std::vector<uint64_t> ready;
  {
    std::unique_lock lk(multi_mu_);
    for (;;) {
      ready = collect();
      if (!ready.empty()) break;
      if (multi_cv_.wait_until(lk, deadline) == std::cv_status::timeout) {
        ready = collect();
        break;
      }
    }
  }
  multi_waiters_.fetch_sub(1, std::memory_order_acq_rel);
  if (ready.empty()) raise(Errc::timeout, "no wakeups within timeout");
  return ready;
}

PollingClock::PollingClock(std::chrono::microseconds interval) : interval_(interval) {
  if (interval <= std::chrono::microseconds::zero())
    raise(Errc::invalid_argument, "poll interval must be positive");
  next_ = std::chrono::steady_clock::now() + interval_;
}

void PollingClock::wait_next_tick() {
  std::this_thread::sleep_until(next_);
  auto now = std::chrono::steady_clock::now();
  do {
    next_ += interval_;
  } while (next_ <= now);
}

}  // namespace pubsub
