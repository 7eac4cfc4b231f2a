// Latency benchmark harness: sweeps topic count, fan-out and their product
// and emits raw/aggregate/heatmap CSVs.
//
//   bench --sweep A|B|C --mode event|poll --backend inproc|shm --out-dir DIR
//
// Desk-scale point lists are the default; --paper-scale selects the full
// published ranges. The hidden `bench-worker` subcommand is what the shm
// backend re-executes for each actor process.

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pubsub/bench.hpp"

using namespace pubsub;
using bench::SweepConfig;

namespace {

std::string self_exe() {
  char buf[4096];
  ssize_t n = ::readlink("/proc/self/exe", buf, sizeof buf - 1);
  if (n <= 0) return "bench";
  buf[n] = '\0';
  return buf;
}

struct Point {
  int topics;
  int subscribers;
};

std::vector<Point> sweep_points(bench::SweepKind sweep, bool paper_scale) {
  std::vector<Point> points;
  switch (sweep) {
    case bench::SweepKind::A: {
      std::vector<int> ts = paper_scale ? std::vector<int>{1, 5, 10, 25, 50, 100, 200}
                                        : std::vector<int>{1, 5, 10, 25, 50};
      for (int t : ts) points.push_back({t, 2});
      break;
    }
    case bench::SweepKind::B: {
      std::vector<int> ss = paper_scale ? std::vector<int>{1, 2, 4, 8, 16, 32}
                                        : std::vector<int>{1, 2, 4, 8, 16};
      for (int s : ss) points.push_back({10, s});
      break;
    }
    case bench::SweepKind::C: {
      std::vector<int> ts = paper_scale ? std::vector<int>{10, 25, 50, 100}
                                        : std::vector<int>{5, 10, 25};
      std::vector<int> ss = paper_scale ? std::vector<int>{2, 4, 8, 16}
                                        : std::vector<int>{2, 4, 8};
      for (int t : ts)
        for (int s : ss) points.push_back({t, s});
      break;
    }
    case bench::SweepKind::custom:
      break;
  }
  return points;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc >= 2 && std::string(argv[1]) == "bench-worker") {
    try {
      return bench::worker_main(argc - 2, argv + 2);
    } catch (const Error& e) {
      std::fprintf(stderr, "bench-worker: %s\n", e.what());
      return 1;
    }
  }

  CLI::App app{"pub/sub latency benchmark harness"};
  std::string sweep_name = "A";
  std::string mode_name = "event";
  std::string backend_name = "inproc";
  std::string out_dir = "bench-out";
  int64_t poll_interval_us = 100;
  double rate_hz = 100.0;
  double duration_s = 3.0;
  double warmup_s = 1.0;
  int iterations = 3;
  bool paper_scale = false;
  int custom_topics = 0;
  int custom_subscribers = 0;
  app.add_option("--sweep", sweep_name, "A (topics), B (subscribers), C (grid)");
  app.add_option("--mode", mode_name, "event or poll");
  app.add_option("--poll-interval-us", poll_interval_us, "polling interval");
  app.add_option("--backend", backend_name, "inproc (threads) or shm (processes)");
  app.add_option("--rate-hz", rate_hz, "publish rate per topic");
  app.add_option("--duration-s", duration_s, "measured seconds per point");
  app.add_option("--warmup-s", warmup_s, "warmup seconds per point");
  app.add_option("--iterations", iterations, "iterations pooled per point");
  app.add_flag("--paper-scale", paper_scale, "full published sweep ranges");
  app.add_option("--topics", custom_topics, "custom sweep: topic count");
  app.add_option("--subscribers", custom_subscribers, "custom sweep: fan-out");
  app.add_option("--out-dir", out_dir, "output directory for CSVs");
  CLI11_PARSE(app, argc, argv);

  try {
    bench::SweepKind sweep = bench::SweepKind::custom;
    if (sweep_name == "A") sweep = bench::SweepKind::A;
    else if (sweep_name == "B") sweep = bench::SweepKind::B;
    else if (sweep_name == "C") sweep = bench::SweepKind::C;
    else if (sweep_name != "custom") {
      std::fprintf(stderr, "bench: unknown sweep '%s'\n", sweep_name.c_str());
      return 2;
    }

    auto points = sweep_points(sweep, paper_scale);
    if (sweep == bench::SweepKind::custom) {
      if (custom_topics < 1 || custom_subscribers < 1) {
        std::fprintf(stderr, "bench: custom sweep needs --topics and --subscribers\n");
        return 2;
      }
      points.push_back({custom_topics, custom_subscribers});
    }

    std::filesystem::create_directories(out_dir);
    std::fprintf(stderr, "bench: host capacity %.0f events/s\n",
                 bench::host_capacity_events_per_sec());

    std::vector<bench::LatencySample> all_samples;
    for (const Point& point : points) {
      SweepConfig cfg;
      cfg.sweep = sweep;
      cfg.topics = point.topics;
      cfg.subscribers = point.subscribers;
      cfg.rate_hz = rate_hz;
      cfg.duration_s = duration_s;
      cfg.warmup_s = warmup_s;
      cfg.iterations = iterations;
      cfg.mode.mode = mode_name == "poll" ? DeliveryModeKind::polling
                                          : DeliveryModeKind::event_driven;
      cfg.mode.poll_interval = std::chrono::microseconds(poll_interval_us);
      cfg.backend = backend_name == "shm" ? bench::Backend::shm : bench::Backend::inproc;
      cfg.worker_exe = self_exe();
      std::fprintf(stderr, "bench: T=%d S=%d R=%.0f %s/%s ...\n", cfg.topics, cfg.subscribers,
                   cfg.rate_hz, mode_name.c_str(), backend_name.c_str());
      auto stats = bench::run_config(cfg);
      if (!stats.sample_conservation_ok)
        std::fprintf(stderr, "bench: WARNING: sample conservation violated at T=%d S=%d\n",
                     cfg.topics, cfg.subscribers);
      all_samples.insert(all_samples.end(), stats.samples.begin(), stats.samples.end());
    }

    std::string stem = std::string("sweep") + sweep_name + "_" + mode_name + "_" + backend_name;
    auto rows = bench::aggregate(all_samples);
    bench::write_raw_csv(out_dir + "/raw_" + stem + ".csv", all_samples);
    bench::write_aggregate_csv(out_dir + "/agg_" + stem + ".csv", rows);
    if (sweep == bench::SweepKind::C) {
      bench::write_heatmap_csv(out_dir + "/heatmap_e2e_p999_" + stem + ".csv", rows,
                               bench::Metric::e2e, true);
    }
    std::fprintf(stderr, "bench: wrote %s/{raw,agg}_%s.csv\n", out_dir.c_str(), stem.c_str());
    return 0;
  } catch (const Error& e) {
    std::fprintf(stderr, "bench: %s\n", e.what());
    return 1;
  }
}
