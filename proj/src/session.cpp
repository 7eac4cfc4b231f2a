#include "pubsub/session.hpp"

namespace pubsub {

namespace {

class QueueWaiter final : public Waiter {
 public:
  explicit QueueWaiter(std::shared_ptr<WakeupQueue> queue) : queue_(std::move(queue)) {}
  bool wait(std::chrono::microseconds timeout) override { return queue_->consume_wait(timeout); }

 private:
  std::shared_ptr<WakeupQueue> queue_;
};

}  // namespace

std::shared_ptr<Waiter> HubFabric::attach(std::string_view topic, uint64_t subscriber_id) {
  return std::make_shared<QueueWaiter>(hub_->register_queue(topic, subscriber_id));
}

Publisher::Publisher(Session& session, std::string_view topic, QoS qos)
    : session_(&session), qos_(qos) {
  if (!session.options_.arena)
    raise(Errc::invalid_argument, "session has no arena; cannot publish");
  core_ = std::make_shared<detail::PublisherCore>();
  core_->arena = session.options_.arena;
  core_->topic = std::string(topic);
  core_->publisher_id = session.broker().register_publisher(topic, qos, session.pid());
  registered_ = true;
  session.adopt(core_);
}

Publisher::~Publisher() {
  try {
    unregister();
  } catch (...) {
    core_->protocol_errors.fetch_add(1, std::memory_order_relaxed);
  }
}

MessageHandle Publisher::loan(uint64_t size) {
  if (!registered_) raise(Errc::invalid_handle, "publisher is unregistered");
  auto [ref, view] = core_->arena->allocate(size);
  auto block = std::make_shared<detail::ControlBlock>();
  block->role = HandleRole::publisher_loan;
  block->payload = ref;
  block->loan_view = view;
  block->pub = core_;
  return MessageHandle(std::move(block));
}

PublishReceipt Publisher::publish(MessageHandle& handle) {
  if (!registered_) raise(Errc::invalid_handle, "publisher is unregistered");
  if (!handle.block_) raise(Errc::invalid_handle, "null handle");
  auto& block = *handle.block_;
  if (block.role != HandleRole::publisher_loan)
    raise(Errc::invalid_handle, "cannot publish a subscriber handle");
  if (block.published.load(std::memory_order_acquire) ||
      !block.valid.load(std::memory_order_acquire))
    raise(Errc::invalid_handle, "handle already published");
  if (block.pub != core_) raise(Errc::invalid_argument, "handle belongs to another publisher");

  PublishResult result =
      session_->broker().publish_entry(core_->topic, core_->publisher_id, block.payload);

  // Ownership transferred to the middleware; every copy sharing this block
  // now fails access deterministically.
  block.entry_id.store(result.entry_id, std::memory_order_relaxed);
  block.published.store(true, std::memory_order_release);
  block.valid.store(false, std::memory_order_release);

  if (!session_->broker().reclaims_internally()) {
    for (const ArenaRef& ref : result.evicted)
      if (ref.arena_id == core_->arena->arena_id()) core_->arena->reclaim(ref);
  }

  PublishReceipt receipt;
  receipt.entry_id = result.entry_id;
  receipt.evicted_count = static_cast<uint32_t>(result.evicted.size());
  for (uint64_t sub : result.subscriber_ids) {
    if (session_->notify().notify(core_->topic, sub) != NotifyOutcome::gone)
      receipt.notified_subscriber_count++;
  }
  return receipt;
}

void Publisher::unregister() {
  if (!registered_) return;
  registered_ = false;
  if (core_->defunct.load(std::memory_order_acquire)) return;  // session crashed
  auto evicted = session_->broker().unregister_publisher(core_->topic, core_->publisher_id);
  if (!session_->broker().reclaims_internally()) {
    for (const ArenaRef& ref : evicted)
      if (ref.arena_id == core_->arena->arena_id()) core_->arena->reclaim(ref);
  }
}

Subscriber::Subscriber(Session& session, std::string_view topic, QoS qos) : session_(&session) {
  core_ = std::make_shared<detail::SubscriberCore>();
  core_->broker = &session.broker();
  core_->resolver = session.options_.resolver;
  core_->topic = std::string(topic);
  auto result = session.broker().register_subscriber(topic, qos, session.pid());
  core_->subscriber_id = result.subscriber_id;
  initial_watermark_ = result.initial_watermark;
  registered_ = true;
  waiter_ = session.notify().attach(topic, core_->subscriber_id);
  session.adopt(core_);
}

Subscriber::~Subscriber() {
  try {
    unregister();
  } catch (...) {
    core_->protocol_errors.fetch_add(1, std::memory_order_relaxed);
  }
}

std::vector<MessageHandle> Subscriber::receive() {
  if (!registered_) raise(Errc::invalid_handle, "subscriber is unregistered");
  auto entries = session_->broker().receive_entries(core_->topic, core_->subscriber_id);
  std::vector<MessageHandle> handles;
  handles.reserve(entries.size());
  for (const auto& entry : entries) {
    auto block = std::make_shared<detail::ControlBlock>();
    block->role = HandleRole::subscriber_ref;
    block->payload = entry.payload;
    block->entry_id.store(entry.entry_id, std::memory_order_relaxed);
    block->sub = core_;
    handles.emplace_back(MessageHandle(std::move(block)));
  }
  return handles;
}

bool Subscriber::wait(std::chrono::microseconds timeout) { return waiter_->wait(timeout); }

void Subscriber::unregister() {
  if (!registered_) return;
  registered_ = false;
  // Outstanding handles go inert first: the broker clears this subscriber's
  // bits as part of the unregister, so later drops must not release again.
  bool was_defunct = core_->defunct.exchange(true, std::memory_order_acq_rel);
  if (was_defunct) return;  // session crashed
  session_->notify().detach(core_->topic, core_->subscriber_id);
  session_->broker().unregister_subscriber(core_->topic, core_->subscriber_id);
}

Session::Session(Options options) : options_(std::move(options)) {
  if (!options_.broker) raise(Errc::invalid_argument, "session requires a broker");
  if (!options_.notify) raise(Errc::invalid_argument, "session requires a notify fabric");
}

Session::~Session() = default;

std::unique_ptr<Publisher> Session::create_publisher(std::string_view topic, QoS qos) {
  return std::unique_ptr<Publisher>(new Publisher(*this, topic, qos));
}

std::unique_ptr<Subscriber> Session::create_subscriber(std::string_view topic, QoS qos) {
  return std::unique_ptr<Subscriber>(new Subscriber(*this, topic, qos));
}

void Session::simulate_crash() {
  {
    std::lock_guard lk(cores_mu_);
    crashed_ = true;
    for (auto& weak : pub_cores_)
      if (auto core = weak.lock()) core->defunct.store(true, std::memory_order_release);
    for (auto& weak : sub_cores_)
      if (auto core = weak.lock()) core->defunct.store(true, std::memory_order_release);
  }
  options_.broker->handle_process_exit(options_.pid);
}

uint64_t Session::protocol_errors() const {
  uint64_t n = 0;
  for (const auto& weak : pub_cores_)
    if (auto core = weak.lock()) n += core->protocol_errors.load();
  for (const auto& weak : sub_cores_)
    if (auto core = weak.lock()) n += core->protocol_errors.load();
  return n;
}

void Session::adopt(std::shared_ptr<detail::PublisherCore> core) {
  std::lock_guard lk(cores_mu_);
  if (crashed_) core->defunct.store(true, std::memory_order_release);
  pub_cores_.push_back(core);
}

void Session::adopt(std::shared_ptr<detail::SubscriberCore> core) {
  std::lock_guard lk(cores_mu_);
  if (crashed_) core->defunct.store(true, std::memory_order_release);
  sub_cores_.push_back(core);
}

InProcRuntime::InProcRuntime(uint32_t max_subscribers_per_topic)
    : arenas(std::make_shared<ArenaRegistry>()) {
  BrokerConfig config;
  config.max_subscribers_per_topic = max_subscribers_per_topic;
  config.reclaimer = [registry = arenas](const ArenaRef& ref) { registry->reclaim(ref); };
  broker = std::make_shared<Broker>(std::move(config));
  hub = std::make_shared<WakeupHub>();
  fabric = std::make_shared<HubFabric>(hub);
}

Session InProcRuntime::make_session(uint64_t pid, uint64_t arena_capacity) {
  auto arena = std::make_shared<InProcArena>(pid, arena_capacity);
  arenas->add(arena);
  Session::Options opts;
  opts.broker = broker;
  opts.resolver = arenas;
  opts.arena = std::move(arena);
  opts.notify = fabric;
  opts.pid = pid;
  return Session(std::move(opts));
}

}  // namespace pubsub
