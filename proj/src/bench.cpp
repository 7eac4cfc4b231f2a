#include "pubsub/bench.hpp"

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cassert>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <future>
#include <latch>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "pubsub/mq_notify.hpp"
#include "pubsub/remote_broker.hpp"
#include "pubsub/server.hpp"
#include "pubsub/session.hpp"
#include "pubsub/shm_arena.hpp"

extern char** environ;

namespace pubsub::bench {

using Clock = std::chrono::steady_clock;
using std::chrono::microseconds;
using std::chrono::nanoseconds;

const char* metric_name(Metric m) noexcept {
  switch (m) {
    case Metric::publish: return "publish";
    case Metric::receive: return "receive";
    case Metric::e2e: return "e2e";
  }
  return "unknown";
}

const char* backend_name(Backend b) noexcept {
  return b == Backend::inproc ? "inproc" : "shm";
}

const char* mode_name(DeliveryModeKind m) noexcept {
  return m == DeliveryModeKind::event_driven ? "event" : "poll";
}

double percentile_us(std::vector<double> values, double q) {
  if (values.empty()) raise(Errc::empty_sample_set, "no samples");
  if (!(q > 0.0 && q < 1.0)) raise(Errc::invalid_argument, "quantile must be in (0, 1)");
  std::sort(values.begin(), values.end());
  size_t rank = static_cast<size_t>(std::ceil(q * static_cast<double>(values.size())));
  if (rank < 1) rank = 1;
  return values[rank - 1];
}

LinearFit scaling_fit(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 4)
    raise(Errc::insufficient_points, "linear fit needs at least 4 points");
  double n = static_cast<double>(points.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [x, y] : points) {
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  double denom = n * sxx - sx * sx;
  if (denom == 0.0) raise(Errc::invalid_argument, "degenerate x values");
  LinearFit fit;
  fit.slope = (n * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / n;
  double mean_y = sy / n;
  double ss_tot = 0, ss_res = 0;
  for (const auto& [x, y] : points) {
    double predicted = fit.slope * x + fit.intercept;
    ss_tot += (y - mean_y) * (y - mean_y);
    ss_res += (y - predicted) * (y - predicted);
  }
  fit.r2 = ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot;
  return fit;
}

namespace {

struct ActorTimes {
  Clock::time_point start;
  Clock::time_point warmup_end;
  Clock::time_point measure_end;
};

uint64_t to_ns(Clock::time_point tp) {
  return static_cast<uint64_t>(
      std::chrono::duration_cast<nanoseconds>(tp.time_since_epoch()).count());
}

Clock::time_point from_ns(uint64_t ns) { return Clock::time_point(nanoseconds(ns)); }

void stamp_publish_time(std::span<std::byte> payload, uint64_t t_pub_ns) {
  assert(payload.size() >= 8);
  for (int i = 0; i < 8; ++i)
    payload[i] = static_cast<std::byte>((t_pub_ns >> (8 * i)) & 0xff);
}

uint64_t read_publish_time(std::span<const std::byte> payload) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(payload[i]) << (8 * i);
  return v;
}

struct PubOutcome {
  std::vector<double> publish_us;
  std::set<uint64_t> window_entries;
  uint64_t published_total = 0;
};

PubOutcome publisher_loop(Publisher& pub, const SweepConfig& cfg, const ActorTimes& times) {
  PubOutcome out;
  auto period = nanoseconds(static_cast<int64_t>(1e9 / cfg.rate_hz));
  for (uint64_t i = 0;; ++i) {
    std::this_thread::sleep_until(times.start + i * period);
    auto t_begin = Clock::now();
    if (cfg.message_limit != 0) {
      if (out.published_total >= cfg.message_limit) break;
    } else if (t_begin >= times.measure_end) {
      break;
    }
    MessageHandle handle = pub.loan(cfg.payload_bytes);
    auto view = handle.writable();
    uint64_t t_pub_ns = to_ns(Clock::now());
    stamp_publish_time(view, t_pub_ns);
    PublishReceipt receipt = pub.publish(handle);
    auto t_done = Clock::now();
    out.published_total++;
    bool in_window = t_begin >= times.warmup_end && t_begin < times.measure_end;
    if (in_window) {
      out.publish_us.push_back(
          std::chrono::duration<double, std::micro>(t_done - t_begin).count());
      out.window_entries.insert(receipt.entry_id);
    }
  }
  return out;
}

struct SubOutcome {
  std::vector<double> receive_us;
  std::vector<double> e2e_us;
  std::set<uint64_t> window_entries;
};

// Shared by event-driven and polling subscribers: one receive call, samples
// recorded for entries whose publish fell inside the measure window.
void drain_once(Subscriber& sub, const ActorTimes& times, SubOutcome& out) {
  auto r_begin = Clock::now();
  auto handles = sub.receive();
  auto r_done = Clock::now();
  if (!handles.empty() && r_begin >= times.warmup_end && r_begin < times.measure_end) {
    out.receive_us.push_back(
        std::chrono::duration<double, std::micro>(r_done - r_begin).count());
  }
  // t_receive is the batch callback start; callback execution is excluded.
  uint64_t t_rec_ns = to_ns(r_done);
  for (auto& handle : handles) {
    uint64_t t_pub_ns = read_publish_time(handle.bytes());
    if (t_pub_ns >= to_ns(times.warmup_end) && t_pub_ns < to_ns(times.measure_end)) {
      out.e2e_us.push_back(static_cast<double>(t_rec_ns - t_pub_ns) / 1000.0);
      out.window_entries.insert(handle.entry_id().value());
    }
    handle.drop();  // 1 -> 0: the release notification
  }
}

SubOutcome subscriber_loop(Subscriber& sub, const SweepConfig& cfg, const ActorTimes& times,
                           const std::atomic<bool>& stop) {
  SubOutcome out;
  if (cfg.mode.mode == DeliveryModeKind::event_driven) {
    while (!stop.load(std::memory_order_acquire)) {
      sub.wait(microseconds(1000));
      drain_once(sub, times, out);
    }
  } else {
    PollingClock clock(cfg.mode.poll_interval);
    while (!stop.load(std::memory_order_acquire)) {
      clock.wait_next_tick();
      drain_once(sub, times, out);
    }
  }
  drain_once(sub, times, out);  // final drain after publishers stopped
  return out;
}

std::string bench_topic(int index) { return "bench/t" + std::to_string(index); }

void run_inproc_iteration(const SweepConfig& cfg, int iteration, RunStats& stats) {
  const int T = cfg.topics;
  const int S = cfg.subscribers;
  uint32_t width = std::max<uint32_t>(64, static_cast<uint32_t>(S) + 2);
  InProcRuntime runtime(width);

  std::atomic<bool> stop{false};
  std::atomic<bool> release_publishers{false};
  std::latch ready(static_cast<ptrdiff_t>(T + T * S));
  std::latch publishing_done(static_cast<ptrdiff_t>(T));
  std::promise<ActorTimes> times_promise;
  std::shared_future<ActorTimes> times_future = times_promise.get_future().share();

  std::vector<PubOutcome> pub_results(T);
  std::vector<SubOutcome> sub_results(T * S);
  std::vector<uint64_t> pub_pids(T), sub_pids(T * S);
  std::vector<std::thread> threads;
  threads.reserve(T + T * S);

  // Arena sized for depth plus pipeline slack.
  uint64_t arena_capacity =
      std::max<uint64_t>(1 << 20, static_cast<uint64_t>(cfg.payload_bytes) * (cfg.qos.depth + 64));

  for (int t = 0; t < T; ++t) {
    uint64_t pid = 1000 + static_cast<uint64_t>(t);
    pub_pids[t] = pid;
    threads.emplace_back([&, t, pid] {
      Session session = runtime.make_session(pid, arena_capacity);
      auto pub = session.create_publisher(bench_topic(t), cfg.qos);
      ready.count_down();
      ActorTimes times = times_future.get();
      pub_results[t] = publisher_loop(*pub, cfg, times);
      publishing_done.count_down();
      // Unregistering evicts this publisher's unreferenced entries, so stay
      // registered until every subscriber has drained.
      while (!release_publishers.load(std::memory_order_acquire))
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
    });
  }
  for (int t = 0; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      int index = t * S + s;
      uint64_t pid = 2000 + static_cast<uint64_t>(index);
      sub_pids[index] = pid;
      threads.emplace_back([&, t, index, pid] {
        Session session = runtime.make_session(pid, 0);
        auto sub = session.create_subscriber(bench_topic(t), cfg.qos);
        ready.count_down();
        ActorTimes times = times_future.get();
        sub_results[index] = subscriber_loop(*sub, cfg, times, stop);
        sub->unregister();
      });
    }
  }

  ready.wait();
  ActorTimes times;
  times.start = Clock::now() + std::chrono::milliseconds(20);
  times.warmup_end = times.start + std::chrono::duration_cast<Clock::duration>(
                                       std::chrono::duration<double>(cfg.warmup_s));
  times.measure_end = times.warmup_end + std::chrono::duration_cast<Clock::duration>(
                                             std::chrono::duration<double>(cfg.duration_s));
  times_promise.set_value(times);

  // Teardown order: publishing ends, subscribers drain and unregister, then
  // publishers may unregister.
  publishing_done.wait();
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  stop.store(true, std::memory_order_release);
  for (size_t i = T; i < threads.size(); ++i) threads[i].join();
  release_publishers.store(true, std::memory_order_release);
  for (int t = 0; t < T; ++t) threads[t].join();

  for (int t = 0; t < T; ++t) {
    const auto& pr = pub_results[t];
    stats.published_in_window += pr.window_entries.size();
    for (double v : pr.publish_us)
      stats.samples.push_back({Metric::publish, cfg.mode.mode, cfg.backend, T, S, cfg.rate_hz,
                               iteration, pub_pids[t], v});
    for (int s = 0; s < S; ++s) {
      const auto& sr = sub_results[t * S + s];
      stats.e2e_samples_expected += pr.window_entries.size();
      if (sr.window_entries != pr.window_entries) stats.sample_conservation_ok = false;
    }
  }
  for (int index = 0; index < T * S; ++index) {
    const auto& sr = sub_results[index];
    stats.e2e_samples_recorded += sr.e2e_us.size();
    for (double v : sr.receive_us)
      stats.samples.push_back({Metric::receive, cfg.mode.mode, cfg.backend, T, S, cfg.rate_hz,
                               iteration, sub_pids[index], v});
    for (double v : sr.e2e_us)
      stats.samples.push_back({Metric::e2e, cfg.mode.mode, cfg.backend, T, S, cfg.rate_hz,
                               iteration, sub_pids[index], v});
  }
  stats.notifications_sent += runtime.hub->notifications_sent();
  auto snap = runtime.broker->snapshot();
  stats.broker_counters.publish_ops += snap.counters.publish_ops;
  stats.broker_counters.receive_bit_sets += snap.counters.receive_bit_sets;
  stats.broker_counters.release_bit_clears += snap.counters.release_bit_clears;
  stats.broker_counters.membership_ops += snap.counters.membership_ops;
}

// ---------------------------------------------------------------------------
// shm backend: one process per actor, spawned as `<exe> bench-worker ...`.

struct WorkerSpec {
  std::vector<std::string> args;
  std::string out_path;
  uint64_t pid;
  int topic_index;
  bool is_publisher;
};

pid_t spawn_worker(const std::string& exe, const std::vector<std::string>& args) {
  std::vector<char*> argv;
  argv.push_back(const_cast<char*>(exe.c_str()));
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  pid_t pid = 0;
  int rc = ::posix_spawn(&pid, exe.c_str(), nullptr, nullptr, argv.data(), environ);
  if (rc != 0) raise(Errc::spawn_failure, std::string("posix_spawn: ") + std::strerror(rc));
  return pid;
}

void run_shm_iteration(const SweepConfig& cfg, int iteration, RunStats& stats) {
  if (cfg.worker_exe.empty())
    raise(Errc::spawn_failure, "shm backend requires worker_exe (the bench binary path)");
  const int T = cfg.topics;
  const int S = cfg.subscribers;

  std::string socket_path = cfg.socket_path;
  if (socket_path.empty())
    socket_path = "/tmp/pubsub-bench-" + std::to_string(::getpid()) + "-" +
                  std::to_string(iteration) + ".sock";
  std::string tag = std::to_string(::getpid()) + "." + std::to_string(iteration);
  std::string shm_prefix = cfg.shm_prefix + "." + tag;
  std::string mq_prefix = cfg.mq_prefix + "." + tag;

  BrokerConfig broker_config;
  broker_config.max_subscribers_per_topic = std::max<uint32_t>(64, S + 2);
  auto broker = std::make_shared<Broker>(std::move(broker_config));
  BrokerServer::Options server_options;
  server_options.socket_path = socket_path;
  server_options.manage_segments = true;
  server_options.segment_prefix = shm_prefix;
  server_options.segment_capacity =
      std::max<uint64_t>(1 << 20, static_cast<uint64_t>(cfg.payload_bytes) * (cfg.qos.depth + 64));
  BrokerServer server(broker, server_options);
  server.start();

  ActorTimes times;
  times.start = Clock::now() + std::chrono::milliseconds(400);
  times.warmup_end = times.start + std::chrono::duration_cast<Clock::duration>(
                                       std::chrono::duration<double>(cfg.warmup_s));
  times.measure_end = times.warmup_end + std::chrono::duration_cast<Clock::duration>(
                                             std::chrono::duration<double>(cfg.duration_s));

  auto make_args = [&](bool is_pub, int topic, uint64_t pid, const std::string& out) {
    std::vector<std::string> args = {
        "bench-worker",
        "--role", is_pub ? "pub" : "sub",
        "--topic", bench_topic(topic),
        "--socket", socket_path,
        "--pid", std::to_string(pid),
        "--start-ns", std::to_string(to_ns(times.start)),
        "--warmup-end-ns", std::to_string(to_ns(times.warmup_end)),
        "--measure-end-ns", std::to_string(to_ns(times.measure_end)),
        "--rate-hz", std::to_string(cfg.rate_hz),
        "--payload", std::to_string(cfg.payload_bytes),
        "--mode", mode_name(cfg.mode.mode),
        "--poll-us", std::to_string(cfg.mode.poll_interval.count()),
        "--depth", std::to_string(cfg.qos.depth),
        "--durability", cfg.qos.durability == Durability::transient_local ? "transient" : "volatile",
        "--message-limit", std::to_string(cfg.message_limit),
        "--shm-prefix", shm_prefix,
        "--mq-prefix", mq_prefix,
        "--out", out,
    };
    return args;
  };

  std::vector<WorkerSpec> specs;
  for (int t = 0; t < T; ++t) {
    uint64_t pid = 1000 + static_cast<uint64_t>(t);
    std::string out = "/tmp/pubsub-bench-worker-" + tag + "-p" + std::to_string(t) + ".csv";
    specs.push_back({make_args(true, t, pid, out), out, pid, t, true});
  }
  for (int t = 0; t < T; ++t)
    for (int s = 0; s < S; ++s) {
      int index = t * S + s;
      uint64_t pid = 2000 + static_cast<uint64_t>(index);
      std::string out = "/tmp/pubsub-bench-worker-" + tag + "-s" + std::to_string(index) + ".csv";
      specs.push_back({make_args(false, t, pid, out), out, pid, t, false});
    }

  std::vector<pid_t> children;
  children.reserve(specs.size());
  for (const auto& spec : specs) children.push_back(spawn_worker(cfg.worker_exe, spec.args));

  bool worker_failed = false;
  for (pid_t child : children) {
    int status = 0;
    ::waitpid(child, &status, 0);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) worker_failed = true;
  }

  std::map<int, uint64_t> published_per_topic;
  std::map<int, std::vector<uint64_t>> received_per_topic;
  for (const auto& spec : specs) {
    std::ifstream in(spec.out_path);
    if (!in) {
      worker_failed = true;
      continue;
    }
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream row(line);
      std::string kind;
      std::getline(row, kind, ',');
      if (kind == "meta") {
        std::string field, value;
        std::getline(row, field, ',');
        std::getline(row, value, ',');
        if (field == "published_window") {
          published_per_topic[spec.topic_index] += std::stoull(value);
          stats.published_in_window += std::stoull(value);
        } else if (field == "received_window") {
          received_per_topic[spec.topic_index].push_back(std::stoull(value));
        }
        continue;
      }
      std::string value;
      std::getline(row, value, ',');
      Metric metric = kind == "publish"   ? Metric::publish
                      : kind == "receive" ? Metric::receive
                                          : Metric::e2e;
      stats.samples.push_back({metric, cfg.mode.mode, cfg.backend, T, S, cfg.rate_hz, iteration,
                               spec.pid, std::stod(value)});
    }
    ::unlink(spec.out_path.c_str());
  }

  for (const auto& [topic, counts] : received_per_topic) {
    for (uint64_t count : counts) {
      stats.e2e_samples_expected += published_per_topic[topic];
      stats.e2e_samples_recorded += count;
      if (count != published_per_topic[topic]) stats.sample_conservation_ok = false;
    }
  }

  auto snap = broker->snapshot();
  stats.broker_counters.publish_ops += snap.counters.publish_ops;
  stats.broker_counters.receive_bit_sets += snap.counters.receive_bit_sets;
  stats.broker_counters.release_bit_clears += snap.counters.release_bit_clears;
  stats.broker_counters.membership_ops += snap.counters.membership_ops;
  server.stop();
  ::unlink(socket_path.c_str());
  if (worker_failed) raise(Errc::spawn_failure, "one or more bench workers failed");
}

}  // namespace

double probe_capacity_events_per_sec() {
  InProcRuntime runtime;
  Session pub_session = runtime.make_session(1, 1 << 20);
  Session sub_session = runtime.make_session(2, 0);
  QoS qos{Durability::volatile_, 8};
  auto pub = pub_session.create_publisher("capacity-probe", qos);
  auto sub = sub_session.create_subscriber("capacity-probe", qos);

  auto begin = Clock::now();
  auto deadline = begin + std::chrono::milliseconds(200);
  uint64_t events = 0;
  while (Clock::now() < deadline) {
    MessageHandle handle = pub->loan(64);
    pub->publish(handle);
    sub->wait(microseconds(1000));
    auto handles = sub->receive();
    events += handles.size();
  }
  double elapsed = std::chrono::duration<double>(Clock::now() - begin).count();
  return static_cast<double>(events) / elapsed;
}

double host_capacity_events_per_sec() {
  static const double capacity = probe_capacity_events_per_sec();
  return capacity;
}

RunStats run_config(const SweepConfig& cfg) {
  if (cfg.topics < 1 || cfg.subscribers < 1)
    raise(Errc::invalid_argument, "topics and subscribers must be positive");
  if (cfg.rate_hz <= 0) raise(Errc::invalid_argument, "rate must be positive");
  if (cfg.payload_bytes < 8) raise(Errc::invalid_argument, "payload must hold a timestamp");
  double demanded = static_cast<double>(cfg.topics) * cfg.subscribers * cfg.rate_hz;
  double budget = cfg.utilization_cap * host_capacity_events_per_sec();
  if (demanded > budget)
    raise(Errc::capacity_exceeded,
          "T*S*R = " + std::to_string(demanded) + " events/s exceeds " +
              std::to_string(budget) + " (cap of the measured host capacity)");

  RunStats stats;
  for (int iteration = 0; iteration < cfg.iterations; ++iteration) {
    if (cfg.backend == Backend::inproc)
      run_inproc_iteration(cfg, iteration, stats);
    else
      run_shm_iteration(cfg, iteration, stats);
  }
  return stats;
}

std::vector<AggregateRow> aggregate(const std::vector<LatencySample>& samples) {
  std::map<std::tuple<int, int, int, int, int, double>, std::vector<double>> groups;
  for (const auto& s : samples) {
    groups[{static_cast<int>(s.metric), static_cast<int>(s.mode), static_cast<int>(s.backend),
            s.topics, s.subscribers, s.rate_hz}]
        .push_back(s.value_us);
  }
  std::vector<AggregateRow> rows;
  for (auto& [key, values] : groups) {
    AggregateRow row;
    row.metric = static_cast<Metric>(std::get<0>(key));
    row.mode = static_cast<DeliveryModeKind>(std::get<1>(key));
    row.backend = static_cast<Backend>(std::get<2>(key));
    row.topics = std::get<3>(key);
    row.subscribers = std::get<4>(key);
    row.rate_hz = std::get<5>(key);
    row.n = values.size();
    row.p50_us = percentile_us(values, 0.5);
    row.p999_us = percentile_us(values, 0.999);
    rows.push_back(row);
  }
  return rows;
}

namespace {

std::string format_us(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) raise(Errc::io_failure, "cannot write " + path);
  return out;
}

}  // namespace

void write_raw_csv(const std::string& path, const std::vector<LatencySample>& samples) {
  auto out = open_out(path);
  out << "metric,mode,backend,T,S,R,iter,process,value_us\n";
  for (const auto& s : samples) {
    out << metric_name(s.metric) << ',' << mode_name(s.mode) << ',' << backend_name(s.backend)
        << ',' << s.topics << ',' << s.subscribers << ',' << s.rate_hz << ',' << s.iteration << ','
        << s.process << ',' << format_us(s.value_us) << '\n';
  }
  if (!out.flush()) raise(Errc::io_failure, "write failed: " + path);
}

void write_aggregate_csv(const std::string& path, const std::vector<AggregateRow>& rows) {
  auto out = open_out(path);
  out << "metric,mode,backend,T,S,R,n,p50_us,p999_us\n";
  for (const auto& r : rows) {
    out << metric_name(r.metric) << ',' << mode_name(r.mode) << ',' << backend_name(r.backend)
        << ',' << r.topics << ',' << r.subscribers << ',' << r.rate_hz << ',' << r.n << ','
        << format_us(r.p50_us) << ',' << format_us(r.p999_us) << '\n';
  }
  if (!out.flush()) raise(Errc::io_failure, "write failed: " + path);
}

void write_heatmap_csv(const std::string& path, const std::vector<AggregateRow>& rows,
                       Metric metric, bool p999) {
  std::set<int> topic_values, sub_values;
  std::map<std::pair<int, int>, double> cells;
  for (const auto& r : rows) {
    if (r.metric != metric) continue;
    topic_values.insert(r.topics);
    sub_values.insert(r.subscribers);
    cells[{r.topics, r.subscribers}] = p999 ? r.p999_us : r.p50_us;
  }
  auto out = open_out(path);
  out << "T";
  for (int s : sub_values) out << ",S" << s;
  out << '\n';
  for (int t : topic_values) {
    out << t;
    for (int s : sub_values) {
      out << ',';
      auto it = cells.find({t, s});
      if (it != cells.end()) out << format_us(it->second);
    }
    out << '\n';
  }
  if (!out.flush()) raise(Errc::io_failure, "write failed: " + path);
}

// ---------------------------------------------------------------------------
// Worker process entry point (hidden `bench-worker` subcommand).

int worker_main(int argc, char** argv) {
  std::map<std::string, std::string> flags;
  for (int i = 0; i + 1 < argc; i += 2) flags[argv[i]] = argv[i + 1];
  auto need = [&](const char* name) -> const std::string& {
    auto it = flags.find(name);
    if (it == flags.end()) raise(Errc::invalid_argument, std::string("missing flag ") + name);
    return it->second;
  };

  std::string role = need("--role");
  std::string topic = need("--topic");
  std::string socket = need("--socket");
  uint64_t pid = std::stoull(need("--pid"));
  ActorTimes times;
  times.start = from_ns(std::stoull(need("--start-ns")));
  times.warmup_end = from_ns(std::stoull(need("--warmup-end-ns")));
  times.measure_end = from_ns(std::stoull(need("--measure-end-ns")));

  SweepConfig cfg;
  cfg.rate_hz = std::stod(need("--rate-hz"));
  cfg.payload_bytes = static_cast<uint32_t>(std::stoul(need("--payload")));
  cfg.mode.mode = need("--mode") == std::string("poll") ? DeliveryModeKind::polling
                                                        : DeliveryModeKind::event_driven;
  cfg.mode.poll_interval = microseconds(std::stoll(need("--poll-us")));
  cfg.qos.depth = static_cast<uint32_t>(std::stoul(need("--depth")));
  cfg.qos.durability = need("--durability") == std::string("transient")
                           ? Durability::transient_local
                           : Durability::volatile_;
  cfg.message_limit = std::stoull(need("--message-limit"));
  std::string shm_prefix = need("--shm-prefix");
  std::string mq_prefix = need("--mq-prefix");
  std::string out_path = need("--out");

  auto broker = std::make_shared<RemoteBroker>(socket, pid);
  auto fabric = std::make_shared<MqNotifyFabric>(mq_prefix);
  auto out = open_out(out_path);

  if (role == "pub") {
    Session::Options opts;
    opts.broker = broker;
    opts.resolver = std::make_shared<ShmResolver>(shm_prefix);
    opts.notify = fabric;
    opts.pid = pid;
    // The server creates the segment at hello; open it as the owner.
    opts.arena = std::make_shared<ShmArenaWriter>(
        pid, ShmSegment::open_rw(shm_segment_name(shm_prefix, pid)));
    Session session(std::move(opts));
    auto pub = session.create_publisher(topic, cfg.qos);
    std::this_thread::sleep_until(times.start);
    PubOutcome result = publisher_loop(*pub, cfg, times);
    for (double v : result.publish_us) out << "publish," << format_us(v) << '\n';
    out << "meta,published_window," << result.window_entries.size() << '\n';
    // Keep the endpoint registered until subscriber workers have drained;
    // disconnect would evict this publisher's unreferenced entries.
    std::this_thread::sleep_until(times.measure_end + std::chrono::milliseconds(400));
  } else {
    Session::Options opts;
    opts.broker = broker;
    opts.resolver = std::make_shared<ShmResolver>(shm_prefix);
    opts.notify = fabric;
    opts.pid = pid;
    Session session(std::move(opts));
    auto sub = session.create_subscriber(topic, cfg.qos);
    std::atomic<bool> stop{false};
    // Subscribers run until shortly after the measurement window so the last
    // published entries are drained.
    std::thread stopper([&] {
      std::this_thread::sleep_until(times.measure_end + std::chrono::milliseconds(150));
      stop.store(true, std::memory_order_release);
    });
    SubOutcome result = subscriber_loop(*sub, cfg, times, stop);
    stopper.join();
    for (double v : result.receive_us) out << "receive," << format_us(v) << '\n';
    for (double v : result.e2e_us) out << "e2e," << format_us(v) << '\n';
    out << "meta,received_window," << result.window_entries.size() << '\n';
    sub->unregister();
  }
  out.flush();
  return out ? 0 : 1;
}

}  // namespace pubsub::bench
