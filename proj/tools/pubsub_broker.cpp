// Standalone broker daemon: serves the metadata server over a unix socket
// and owns the shared-memory segments of its clients.

#include <csignal>
#include <cstdio>
#include <semaphore>

#include <CLI11.hpp>

#include "pubsub/broker.hpp"
#include "pubsub/proto.hpp"
#include "pubsub/server.hpp"
#include "pubsub/shm_arena.hpp"

namespace {
std::binary_semaphore g_shutdown{0};
void handle_signal(int) { g_shutdown.release(); }
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"single-writer pub/sub metadata broker"};
  std::string socket_path = pubsub::proto::socket_path_from_env();
  uint32_t width = 64;
  uint64_t segment_capacity = 8u << 20;
  std::string segment_prefix = pubsub::kDefaultShmPrefix;
  bool no_segments = false;
  app.add_option("--socket", socket_path, "unix socket path (env PUBSUB_BROKER_SOCK)");
  app.add_option("--max-subscribers-per-topic", width, "bitmap width per topic");
  app.add_option("--segment-capacity", segment_capacity, "per-client shm segment bytes");
  app.add_option("--segment-prefix", segment_prefix, "shm segment name prefix");
  app.add_flag("--no-segments", no_segments, "do not manage client shm segments");
  CLI11_PARSE(app, argc, argv);

  try {
    pubsub::BrokerConfig config;
    config.max_subscribers_per_topic = width;
    auto broker = std::make_shared<pubsub::Broker>(std::move(config));

    pubsub::BrokerServer::Options options;
    options.socket_path = socket_path;
    options.manage_segments = !no_segments;
    options.segment_capacity = segment_capacity;
    options.segment_prefix = segment_prefix;
    pubsub::BrokerServer server(broker, options);
    server.start();
    std::fprintf(stderr, "pubsub_broker: serving on %s\n", socket_path.c_str());

    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    g_shutdown.acquire();
    server.stop();
  } catch (const pubsub::Error& e) {
    std::fprintf(stderr, "pubsub_broker: %s\n", e.what());
    return 1;
  }
  return 0;
}
