#include <doctest.h>

#include <atomic>
#include <thread>

#include "pubsub/mq_notify.hpp"
#include "pubsub/notify.hpp"
#include "pubsub/session.hpp"

using namespace pubsub;
using namespace std::chrono_literals;

TEST_CASE("notify on an empty queue delivers; before consumption it coalesces") {
  WakeupHub hub;
  auto q = hub.register_queue("t", 0);
  CHECK(hub.notify("t", 0) == NotifyOutcome::delivered);
  CHECK(hub.notify("t", 0) == NotifyOutcome::coalesced);
  CHECK(q->consume_wait(1ms));
  CHECK_FALSE(q->consume_wait(1ms));  // both wakeups merged into one
}

TEST_CASE("notify after the subscriber is gone reports it without blocking") {
  WakeupHub hub;
  hub.register_queue("t", 0);
  hub.unregister_queue("t", 0);
  CHECK(hub.notify("t", 0) == NotifyOutcome::gone);
}

TEST_CASE("wait_events returns exactly the pending subset") {
  WakeupHub hub;
  std::vector<uint64_t> ids{0, 1, 2, 3, 4};
  for (uint64_t id : ids) hub.register_queue("t", id);
  hub.notify("t", 1);
  hub.notify("t", 3);
  hub.notify("t", 4);
  auto ready = hub.wait_events("t", ids, 10ms);
  std::sort(ready.begin(), ready.end());
  CHECK(ready == std::vector<uint64_t>{1, 3, 4});
  try {
    hub.wait_events("t", ids, 1ms);
    FAIL("expected timeout");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::timeout);
  }
}

TEST_CASE("wait_events with a pending wakeup returns immediately") {
  WakeupHub hub;
  std::vector<uint64_t> ids{7};
  hub.register_queue("t", 7);
  hub.notify("t", 7);
  auto begin = std::chrono::steady_clock::now();
  auto ready = hub.wait_events("t", ids, 1000ms);
  CHECK(ready == std::vector<uint64_t>{7});
  CHECK(std::chrono::steady_clock::now() - begin < 100ms);
}

TEST_CASE("no lost wakeups under concurrent notify and wait") {
  WakeupHub hub;
  auto q = hub.register_queue("t", 0);
  std::atomic<int> consumed{0};
  std::atomic<bool> done{false};
  std::thread consumer([&] {
    while (!done.load()) {
      if (q->consume_wait(500us)) consumed.fetch_add(1);
    }
    while (q->try_consume()) consumed.fetch_add(1);
  });
  int delivered = 0;
  for (int i = 0; i < 20000; ++i) {
    if (hub.notify("t", 0) == NotifyOutcome::delivered) delivered++;
  }
  done.store(true);
  consumer.join();
  // Every delivered (non-coalesced) wakeup is eventually consumed.
  CHECK(consumed.load() == delivered);
}

TEST_CASE("publisher notify never blocks even when the subscriber never drains") {
  WakeupHub hub;
  hub.register_queue("t", 0);
  auto begin = std::chrono::steady_clock::now();
  for (int i = 0; i < 100000; ++i) hub.notify("t", 0);
  CHECK(std::chrono::steady_clock::now() - begin < 2s);
}

TEST_CASE("polling clock induces the configured delivery floor") {
  // Publish mid-interval; delivery waits for the next tick.
  InProcRuntime rt;
  Session pub_session = rt.make_session(1);
  Session sub_session = rt.make_session(2);
  QoS qos{Durability::volatile_, 8};
  auto pub = pub_session.create_publisher("t", qos);
  auto sub = sub_session.create_subscriber("t", qos);

  PollingClock clock(100us);
  int delivered = 0;
  double total_offset_us = 0;
  auto deadline = std::chrono::steady_clock::now() + 3s;
  std::thread sub_thread([&] {
    while (std::chrono::steady_clock::now() < deadline || delivered == 0) {
      auto handles = poll_loop_step(clock, [&] { return sub->receive(); });
      auto now = std::chrono::steady_clock::now();
      for (auto& h : handles) {
        uint64_t t_pub = 0;
        auto bytes = h.bytes();
        for (int i = 0; i < 8; ++i) t_pub |= static_cast<uint64_t>(bytes[i]) << (8 * i);
        auto now_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                          now.time_since_epoch())
                          .count();
        total_offset_us += static_cast<double>(now_ns - t_pub) / 1000.0;
        delivered++;
      }
      if (delivered >= 10000) break;
    }
  });
  std::thread pub_thread([&] {
    // 2 kHz: interval 500 us, uniformly sampled phase against the 100 us tick.
    auto next = std::chrono::steady_clock::now();
    while (std::chrono::steady_clock::now() < deadline) {
      MessageHandle h = pub->loan(64);
      auto view = h.writable();
      uint64_t t_pub = std::chrono::duration_cast<std::chrono::nanoseconds>(
                           std::chrono::steady_clock::now().time_since_epoch())
                           .count();
      for (int i = 0; i < 8; ++i) view[i] = static_cast<std::byte>((t_pub >> (8 * i)) & 0xff);
      pub->publish(h);
      next += 500us;
      std::this_thread::sleep_until(next);
    }
  });
  pub_thread.join();
  sub_thread.join();
  REQUIRE(delivered >= 1000);
  double mean_us = total_offset_us / delivered;
  // Floor construction: mean offset is about interval/2 plus scheduler
  // overshoot; generous window, the strict bound is an acceptance criterion.
  CHECK(mean_us >= 25.0);
  CHECK(mean_us <= 2000.0);
}

TEST_CASE("posix mq fabric coalesces at capacity 1 and detects departed queues") {
  MqNotifyFabric fabric("pubsub-notify-test-" + std::to_string(::getpid()));
  CHECK(fabric.notify("t", 0) == NotifyOutcome::gone);  // nothing attached yet
  auto waiter = fabric.attach("t", 0);
  CHECK(fabric.notify("t", 0) == NotifyOutcome::delivered);
  CHECK(fabric.notify("t", 0) == NotifyOutcome::coalesced);
  CHECK(waiter->wait(100ms));
  CHECK_FALSE(waiter->wait(1ms));
  CHECK(fabric.notify("t", 0) == NotifyOutcome::delivered);
  CHECK(waiter->wait(100ms));
  fabric.detach("t", 0);
}

TEST_CASE("mq queue names flatten the logical id into a single segment") {
  auto name = MqNotifyFabric::queue_name("pubsub-notify", "demo", 3);
  CHECK(name.front() == '/');
  CHECK(name.find('/', 1) == std::string::npos);
  CHECK(name.find("pubsub-notify.") == 1);
  CHECK(name.back() == '3');
}
