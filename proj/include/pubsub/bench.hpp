#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pubsub/broker_api.hpp"
#include "pubsub/notify.hpp"
#include "pubsub/qos.hpp"

namespace pubsub::bench {

enum class SweepKind : uint8_t { A = 0, B = 1, C = 2, custom = 3 };
enum class Backend : uint8_t { inproc = 0, shm = 1 };
enum class Metric : uint8_t { publish = 0, receive = 1, e2e = 2 };

const char* metric_name(Metric m) noexcept;
const char* backend_name(Backend b) noexcept;
const char* mode_name(DeliveryModeKind m) noexcept;

struct SweepConfig {
  SweepKind sweep = SweepKind::custom;
  int topics = 1;
  int subscribers = 1;  // per topic
  double rate_hz = 100.0;
  double duration_s = 3.0;
  double warmup_s = 1.0;
  int iterations = 3;
  DeliveryMode mode;
  Backend backend = Backend::inproc;
  double utilization_cap = 0.6;
  uint32_t payload_bytes = 1024;
  QoS qos{Durability::volatile_, 16};
  /// When nonzero, each publisher stops after this many messages instead of
  /// running for duration_s. Used by tests that need identical operation
  /// counts across runs.
  uint64_t message_limit = 0;

  // Multi-process (shm backend) plumbing.
  std::string socket_path;
  std::string shm_prefix = "pubsub-arena";
  std::string mq_prefix = "pubsub-notify";
  std::string worker_exe;  // executable re-run with the hidden worker flags
};

struct LatencySample {
  Metric metric;
  DeliveryModeKind mode;
  Backend backend;
  int topics;
  int subscribers;
  double rate_hz;
  int iteration;
  uint64_t process;  // actor id (publisher or subscriber pid)
  double value_us;
};

struct RunStats {
  std::vector<LatencySample> samples;
  uint64_t published_in_window = 0;  // entries whose publish fell in the measure window
  uint64_t e2e_samples_expected = 0;
  uint64_t e2e_samples_recorded = 0;
  bool sample_conservation_ok = true;
  uint64_t notifications_sent = 0;
  CounterSnapshot broker_counters;
};

/// Spawns T publisher actors and T*S subscriber actors (threads for the
/// inproc backend, processes for shm), publishes at the configured rate and
/// pools all samples across iterations. Throws Errc::capacity_exceeded when
/// T*S*R violates the utilization cap, Errc::spawn_failure when a worker
/// cannot be started.
RunStats run_config(const SweepConfig& config);

/// Exact nearest-rank percentile over the pooled sample set:
/// sorted[ceil(q*n)], 1-indexed. Throws Errc::empty_sample_set.
double percentile_us(std::vector<double> values, double q);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 1.0;
};

/// Least-squares fit of y against x; needs at least 4 points
/// (Errc::insufficient_points otherwise).
LinearFit scaling_fit(const std::vector<std::pair<double, double>>& points);

/// Host event capacity, measured as a 1-topic 1-subscriber saturation ramp
/// (publish/wake/receive/release as fast as the stack allows). The paper
/// caps configurations at a fraction of this.
double probe_capacity_events_per_sec();

/// Cached probe; measured once per process on first use.
double host_capacity_events_per_sec();

struct AggregateRow {
  Metric metric;
  DeliveryModeKind mode;
  Backend backend;
  int topics;
  int subscribers;
  double rate_hz;
  uint64_t n;
  double p50_us;
  double p999_us;
};

std::vector<AggregateRow> aggregate(const std::vector<LatencySample>& samples);

// CSV emission. UTF-8, header row, '.' decimal separator.
void write_raw_csv(const std::string& path, const std::vector<LatencySample>& samples);
void write_aggregate_csv(const std::string& path, const std::vector<AggregateRow>& rows);
/// Heatmap grid over (T, S) for one metric/percentile (sweep C reporting):
/// rows are topic counts, columns subscriber counts.
void write_heatmap_csv(const std::string& path, const std::vector<AggregateRow>& rows,
                       Metric metric, bool p999);

/// Entry point for the hidden worker subcommand in shm mode. Returns the
/// process exit code.
int worker_main(int argc, char** argv);

}  // namespace pubsub::bench
