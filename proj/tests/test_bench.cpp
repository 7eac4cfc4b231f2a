#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "pubsub/bench.hpp"

using namespace pubsub;
using namespace pubsub::bench;

TEST_CASE("nearest-rank percentiles match hand-computed values") {
  std::vector<double> one_to_hundred;
  for (int i = 1; i <= 100; ++i) one_to_hundred.push_back(i);
  CHECK(percentile_us(one_to_hundred, 0.5) == 50.0);

  std::vector<double> one_to_thousand;
  for (int i = 1; i <= 1000; ++i) one_to_thousand.push_back(i);
  CHECK(percentile_us(one_to_thousand, 0.999) == 999.0);

  CHECK(percentile_us({7.0}, 0.5) == 7.0);
  CHECK(percentile_us({7.0}, 0.999) == 7.0);
  CHECK_THROWS_AS(percentile_us({}, 0.5), Error);
  CHECK_THROWS_AS(percentile_us({1.0}, 0.0), Error);
  CHECK_THROWS_AS(percentile_us({1.0}, 1.0), Error);
}

TEST_CASE("pooled percentile differs from averaged per-stream percentiles") {
  // Two streams {1,1,1} and {100,100,100}: pooled p50 is 1, the mean of
  // per-stream medians would be 50.5. The harness must pool.
  std::vector<double> pooled{1, 1, 1, 100, 100, 100};
  CHECK(percentile_us(pooled, 0.5) == 1.0);
}

TEST_CASE("linear fit recovers exact-linear and constant inputs") {
  auto fit = scaling_fit({{1, 10}, {2, 20}, {4, 40}, {8, 80}});
  CHECK(fit.slope == doctest::Approx(10.0));
  CHECK(fit.r2 == doctest::Approx(1.0));

  auto flat = scaling_fit({{1, 5}, {2, 5}, {4, 5}, {8, 5}});
  CHECK(flat.slope == doctest::Approx(0.0));

  CHECK_THROWS_AS(scaling_fit({{1, 1}, {2, 2}}), Error);
}

TEST_CASE("a config violating the utilization cap is rejected before spawn") {
  SweepConfig cfg;
  cfg.topics = 1000000;
  cfg.subscribers = 64;
  cfg.rate_hz = 1000.0;
  try {
    run_config(cfg);
    FAIL("expected capacity_exceeded");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::capacity_exceeded);
  }
}

TEST_CASE("a short run produces conserved samples of all three metrics") {
  SweepConfig cfg;
  cfg.topics = 1;
  cfg.subscribers = 1;
  cfg.rate_hz = 200.0;
  cfg.duration_s = 0.5;
  cfg.warmup_s = 0.2;
  cfg.iterations = 1;
  auto stats = run_config(cfg);

  uint64_t publish_n = 0, receive_n = 0, e2e_n = 0;
  for (const auto& s : stats.samples) {
    CHECK(s.value_us >= 0.0);
    if (s.metric == Metric::publish) publish_n++;
    if (s.metric == Metric::receive) receive_n++;
    if (s.metric == Metric::e2e) e2e_n++;
  }
  CHECK(publish_n > 50);  // ~100 expected at 200 Hz over 0.5 s
  CHECK(e2e_n == stats.published_in_window);
  CHECK(receive_n > 0);
  CHECK(stats.sample_conservation_ok);
  CHECK(stats.e2e_samples_recorded == stats.e2e_samples_expected);
}

TEST_CASE("per-publish notification count equals the subscriber count") {
  SweepConfig cfg;
  cfg.topics = 2;
  cfg.subscribers = 3;
  cfg.rate_hz = 500.0;
  cfg.iterations = 1;
  cfg.message_limit = 40;  // exact accounting, no wall-clock dependence
  cfg.warmup_s = 0.0;
  cfg.duration_s = 60.0;  // irrelevant with a message limit
  auto stats = run_config(cfg);
  CHECK(stats.broker_counters.publish_ops == 2 * 40);
  CHECK(stats.notifications_sent == stats.broker_counters.publish_ops * 3);
}

TEST_CASE("delivery mode changes timing only, not the broker operation sequence") {
  auto run_mode = [&](DeliveryModeKind mode) {
    SweepConfig cfg;
    cfg.topics = 2;
    cfg.subscribers = 2;
    cfg.rate_hz = 500.0;
    cfg.iterations = 1;
    cfg.message_limit = 50;
    cfg.warmup_s = 0.0;
    cfg.duration_s = 60.0;
    cfg.mode.mode = mode;
    cfg.mode.poll_interval = std::chrono::microseconds(100);
    return run_config(cfg);
  };
  auto event = run_mode(DeliveryModeKind::event_driven);
  auto poll = run_mode(DeliveryModeKind::polling);
  CHECK(event.broker_counters.publish_ops == poll.broker_counters.publish_ops);
  CHECK(event.broker_counters.receive_bit_sets == poll.broker_counters.receive_bit_sets);
  CHECK(event.broker_counters.release_bit_clears == poll.broker_counters.release_bit_clears);
  CHECK(event.broker_counters.membership_ops == poll.broker_counters.membership_ops);
}

TEST_CASE("csv emission matches the collected samples") {
  SweepConfig cfg;
  cfg.topics = 1;
  cfg.subscribers = 2;
  cfg.rate_hz = 200.0;
  cfg.duration_s = 0.3;
  cfg.warmup_s = 0.1;
  cfg.iterations = 2;
  auto stats = run_config(cfg);

  std::string raw_path = "/tmp/pubsub-test-raw.csv";
  std::string agg_path = "/tmp/pubsub-test-agg.csv";
  write_raw_csv(raw_path, stats.samples);
  auto rows = aggregate(stats.samples);
  write_aggregate_csv(agg_path, rows);

  std::ifstream raw(raw_path);
  std::string header;
  std::getline(raw, header);
  CHECK(header == "metric,mode,backend,T,S,R,iter,process,value_us");
  size_t data_rows = 0;
  std::vector<double> e2e_values;
  for (std::string line; std::getline(raw, line);) {
    if (line.empty()) continue;
    data_rows++;
    if (line.rfind("e2e,", 0) == 0) {
      auto comma = line.rfind(',');
      e2e_values.push_back(std::stod(line.substr(comma + 1)));
    }
  }
  CHECK(data_rows == stats.samples.size());  // no silent drops

  // Aggregate rows must equal percentile() recomputed from the raw rows.
  for (const auto& row : rows) {
    if (row.metric != Metric::e2e) continue;
    CHECK(row.n == e2e_values.size());
    CHECK(row.p50_us == doctest::Approx(percentile_us(e2e_values, 0.5)));
    CHECK(row.p999_us == doctest::Approx(percentile_us(e2e_values, 0.999)));
  }
  std::remove(raw_path.c_str());
  std::remove(agg_path.c_str());
}

TEST_CASE("heatmap grid covers the (T,S) cells") {
  std::vector<AggregateRow> rows;
  for (int t : {2, 4})
    for (int s : {2, 4})
      rows.push_back({Metric::e2e, DeliveryModeKind::event_driven, Backend::inproc, t, s, 100.0,
                      10, 5.0, static_cast<double>(t * s)});
  std::string path = "/tmp/pubsub-test-heatmap.csv";
  write_heatmap_csv(path, rows, Metric::e2e, true);
  std::ifstream in(path);
  std::string header, row1, row2;
  std::getline(in, header);
  std::getline(in, row1);
  std::getline(in, row2);
  CHECK(header == "T,S2,S4");
  CHECK(row1 == "2,4.000,8.000");
  CHECK(row2 == "4,8.000,16.000");
  std::remove(path.c_str());
}

TEST_CASE("capacity probe reports a plausible event rate") {
  double capacity = host_capacity_events_per_sec();
  CHECK(capacity > 1000.0);  // anything slower means the stack is broken
}
