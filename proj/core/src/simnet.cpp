#include "seslayer/simnet.hpp"

#include <pthread.h>

#include <algorithm>
#include <cstring>
#include <stdexcept>

namespace seslayer::sim {

namespace {
constexpr std::size_t kTaskStackSize = 512 * 1024;
}  // namespace

struct SimNet::Task {
  std::uint64_t id = 0;
  std::string node;
  std::function<void()> fn;
  pthread_t thread{};
  bool started = false;
  bool done = false;
  bool cancelled = false;
  std::condition_variable cv;
  std::exception_ptr error;
};

namespace {
thread_local SimNet* tls_net = nullptr;
thread_local void* tls_task = nullptr;
}  // namespace

struct SimNet::PipeEnd {
  std::string node;
  Address local;
  Address peer;
  std::deque<std::uint8_t> inbound;
  std::vector<std::uint64_t> waiters;
  bool closed = false;
  bool peer_closed = false;
  bool wrote_since_read = false;
  std::weak_ptr<PipeEnd> other;
};

struct SimNet::PendingConnect {
  std::vector<std::uint64_t> waiters;
  bool refused = false;
  bool abandoned = false;
  std::shared_ptr<PipeEnd> established;
};

struct SimNet::ListenerState {
  Address addr;
  std::deque<std::shared_ptr<PipeEnd>> backlog;
  std::vector<std::uint64_t> waiters;
  bool closed = false;
};

struct SimNet::DatagramState {
  Address addr;
  std::deque<Datagram> inbound;
  std::vector<std::uint64_t> waiters;
  bool closed = false;
};

// ---------------------------------------------------------------------------
// Channels

class SimStream final : public StreamChannel {
 public:
  SimStream(SimNet& net, std::shared_ptr<SimNet::PipeEnd> end) : net_(net), end_(std::move(end)) {}
  ~SimStream() override { close(); }

  void write(ByteView data, Deadline) override {
    std::unique_lock lk(net_.mu_);
    if (end_->closed) throw_closed("write", 0);
    auto other = end_->other.lock();
    if (!other || end_->peer_closed) throw_closed("write", 0);
    net_.ledger_.record_message(end_->node, context::op(), data.size());
    net_.log_traffic_locked(end_->node, end_->peer.host, false, data);
    end_->wrote_since_read = true;
    auto lat = net_.link(end_->node, end_->peer.host).one_way_latency;
    Bytes copy(data.begin(), data.end());
    net_.schedule_locked(net_.now() + lat, [n = &net_, other, copy = std::move(copy)] {
      if (other->closed) return;
      other->inbound.insert(other->inbound.end(), copy.begin(), copy.end());
      n->wake_locked(other->waiters);
    });
  }

  void read_exact(std::span<std::uint8_t> out, Deadline deadline) override {
    std::unique_lock lk(net_.mu_);
    if (end_->closed) throw_closed("read", 0);
    if (end_->wrote_since_read) {
      net_.ledger_.record_round_trip(end_->node, context::op());
      end_->wrote_since_read = false;
    }
    const Micros expiry = deadline.expiry_from(net_.now());
    while (end_->inbound.size() < out.size()) {
      if (end_->peer_closed || end_->closed) {
        auto have = end_->inbound.size();
        end_->inbound.clear();
        throw_closed("read", have);
      }
      if (net_.now() >= expiry) {
        auto have = end_->inbound.size();
        std::copy(end_->inbound.begin(), end_->inbound.end(), out.begin());
        end_->inbound.clear();
        throw_timeout("read", have);
      }
      end_->waiters.push_back(net_.current_task().id);
      net_.block_locked(lk, expiry);
    }
    std::copy_n(end_->inbound.begin(), out.size(), out.begin());
    end_->inbound.erase(end_->inbound.begin(), end_->inbound.begin() + static_cast<std::ptrdiff_t>(out.size()));
  }

  void close() override {
    std::unique_lock lk(net_.mu_);
    if (end_->closed) return;
    end_->closed = true;
    if (auto other = end_->other.lock()) {
      auto lat = net_.link(end_->node, end_->peer.host).one_way_latency;
      net_.schedule_locked(net_.now() + lat, [n = &net_, other] {
        other->peer_closed = true;
        n->wake_locked(other->waiters);
      });
    }
  }

  Address local_address() const override { return end_->local; }
  Address peer_address() const override { return end_->peer; }

 private:
  SimNet& net_;
  std::shared_ptr<SimNet::PipeEnd> end_;
};

class SimListener final : public Listener {
 public:
  SimListener(SimNet& net, std::shared_ptr<SimNet::ListenerState> st) : net_(net), st_(std::move(st)) {}
  ~SimListener() override { close(); }

  std::unique_ptr<StreamChannel> accept(Deadline deadline) override {
    std::unique_lock lk(net_.mu_);
    const Micros expiry = deadline.expiry_from(net_.now());
    while (st_->backlog.empty()) {
      if (st_->closed) throw_closed("accept", 0);
      if (net_.now() >= expiry) return nullptr;
      st_->waiters.push_back(net_.current_task().id);
      net_.block_locked(lk, expiry);
    }
    auto end = st_->backlog.front();
    st_->backlog.pop_front();
    return std::make_unique<SimStream>(net_, std::move(end));
  }

  Address address() const override { return st_->addr; }

  void close() override {
    std::unique_lock lk(net_.mu_);
    if (st_->closed) return;
    st_->closed = true;
    auto it = net_.listeners_.find(st_->addr);
    if (it != net_.listeners_.end() && it->second == st_) net_.listeners_.erase(it);
    net_.wake_locked(st_->waiters);
  }

 private:
  SimNet& net_;
  std::shared_ptr<SimNet::ListenerState> st_;
};

class SimDatagram final : public DatagramSocket {
 public:
  SimDatagram(SimNet& net, std::shared_ptr<SimNet::DatagramState> st) : net_(net), st_(std::move(st)) {}
  ~SimDatagram() override { close(); }

  void send_to(const Address& to, ByteView data) override {
    std::unique_lock lk(net_.mu_);
    if (st_->closed) throw_closed("send_to", 0);
    const auto& from = st_->addr;
    net_.ledger_.record_message(from.host, context::op(), data.size());
    net_.log_traffic_locked(from.host, to.host, true, data);
    auto params = net_.link(from.host, to.host);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (params.loss_probability > 0 && u(net_.link_rng_) < params.loss_probability) return;
    int copies = 1;
    if (params.duplicate_probability > 0 && u(net_.link_rng_) < params.duplicate_probability) copies = 2;
    for (int i = 0; i < copies; ++i) {
      Micros delay = params.one_way_latency;
      if (params.datagram_jitter.count() > 0) {
        std::uniform_int_distribution<std::int64_t> j(0, params.datagram_jitter.count());
        delay += Micros{j(net_.link_rng_)};
      }
      Datagram d{from, Bytes(data.begin(), data.end())};
      net_.schedule_locked(net_.now() + delay, [n = &net_, to, d = std::move(d)]() mutable {
        auto it = n->datagram_sockets_.find(to);
        if (it == n->datagram_sockets_.end() || it->second->closed) return;
        it->second->inbound.push_back(std::move(d));
        n->wake_locked(it->second->waiters);
      });
    }
  }

  std::optional<Datagram> receive(Deadline deadline) override {
    std::unique_lock lk(net_.mu_);
    const Micros expiry = deadline.expiry_from(net_.now());
    while (st_->inbound.empty()) {
      if (st_->closed) throw_closed("receive", 0);
      if (net_.now() >= expiry) return std::nullopt;
      st_->waiters.push_back(net_.current_task().id);
      net_.block_locked(lk, expiry);
    }
    auto d = std::move(st_->inbound.front());
    st_->inbound.pop_front();
    return d;
  }

  Address local_address() const override { return st_->addr; }

  void close() override {
    std::unique_lock lk(net_.mu_);
    if (st_->closed) return;
    st_->closed = true;
    auto it = net_.datagram_sockets_.find(st_->addr);
    if (it != net_.datagram_sockets_.end() && it->second == st_) net_.datagram_sockets_.erase(it);
    net_.wake_locked(st_->waiters);
  }

 private:
  SimNet& net_;
  std::shared_ptr<SimNet::DatagramState> st_;
};

// ---------------------------------------------------------------------------

SimNet::SimNet(std::uint64_t seed) : random_(seed), link_rng_(seed ^ 0x9e3779b97f4a7c15ULL) {}

SimNet::~SimNet() {
  std::unique_lock lk(mu_);
  // Tasks spawned but never run still own no threads; started ones were
  // joined by run().
  tasks_.clear();
}

void SimNet::set_default_link(LinkParams p) {
  std::lock_guard lk(mu_);
  default_link_ = p;
}

void SimNet::set_link(const std::string& a, const std::string& b, LinkParams p) {
  std::lock_guard lk(mu_);
  links_[{a, b}] = p;
  links_[{b, a}] = p;
}

LinkParams SimNet::link(const std::string& from, const std::string& to) const {
  // Callers may or may not hold mu_; links are only mutated before run().
  if (from == to) return LinkParams{};
  auto it = links_.find({from, to});
  return it == links_.end() ? default_link_ : it->second;
}

void SimNet::log_traffic_locked(const std::string& from, const std::string& to, bool datagram,
                                ByteView b) {
  ++traffic_count_;
  if (capture_) traffic_.push_back({now(), from, to, datagram, Bytes(b.begin(), b.end())});
}

void SimNet::schedule_locked(Micros at, std::function<void()> action) {
  events_.push(Event{at, event_seq_++, std::move(action)});
}

void SimNet::make_ready_locked(std::uint64_t id) {
  if (in_ready_.insert(id).second) ready_.push_back(id);
}

void SimNet::wake_locked(std::vector<std::uint64_t>& waiters) {
  for (auto id : waiters) make_ready_locked(id);
  waiters.clear();
}

SimNet::Task& SimNet::current_task() const {
  if (tls_net != this || tls_task == nullptr)
    throw std::logic_error("simulated network used outside a simulation task");
  return *static_cast<Task*>(tls_task);
}

void SimNet::block_locked(std::unique_lock<std::mutex>& lk, std::optional<Micros> wake_at) {
  Task& self = current_task();
  if (self.cancelled) throw Cancelled{};
  if (wake_at) schedule_locked(*wake_at, [this, id = self.id] { make_ready_locked(id); });
  running_ = 0;
  sched_cv_.notify_one();
  self.cv.wait(lk, [&] { return running_ == self.id; });
  if (self.cancelled) throw Cancelled{};
}

void SimNet::task_entry(SimNet* net, Task* t) {
  std::unique_lock lk(net->mu_);
  t->cv.wait(lk, [&] { return net->running_ == t->id; });
  tls_net = net;
  tls_task = t;
  context::set_node(t->node);
  if (!t->cancelled) {
    lk.unlock();
    try {
      t->fn();
    } catch (const Cancelled&) {
    } catch (...) {
      t->error = std::current_exception();
    }
    lk.lock();
  }
  t->fn = nullptr;
  t->done = true;
  net->running_ = 0;
  net->sched_cv_.notify_one();
}

namespace {
struct EntryArg {
  SimNet* net;
  void* task;
  void (*entry)(SimNet*, void*);
};
}  // namespace

void SimNet::resume_locked(std::unique_lock<std::mutex>& lk, Task& t) {
  if (t.done) return;
  if (!t.started) {
    t.started = true;
    pthread_attr_t attr;
    pthread_attr_init(&attr);
    pthread_attr_setstacksize(&attr, kTaskStackSize);
    auto* arg = new EntryArg{this, &t, [](SimNet* n, void* p) { task_entry(n, static_cast<Task*>(p)); }};
    int rc = pthread_create(
        &t.thread, &attr,
        [](void* p) -> void* {
          auto* a = static_cast<EntryArg*>(p);
          auto local = *a;
          delete a;
          local.entry(local.net, local.task);
          return nullptr;
        },
        arg);
    pthread_attr_destroy(&attr);
    if (rc != 0) {
      delete arg;
      throw std::runtime_error(std::string("cannot start simulation task: ") + std::strerror(rc));
    }
  }
  running_ = t.id;
  t.cv.notify_one();
  sched_cv_.wait(lk, [&] { return running_ == 0; });
}

std::uint64_t SimNet::spawn_locked(std::string node, std::function<void()> fn) {
  auto t = std::make_unique<Task>();
  t->id = next_task_id_++;
  t->node = std::move(node);
  t->fn = std::move(fn);
  auto id = t->id;
  tasks_.emplace(id, std::move(t));
  make_ready_locked(id);
  return id;
}

void SimNet::spawn(std::string node, std::function<void()> fn) {
  std::lock_guard lk(mu_);
  spawn_locked(std::move(node), std::move(fn));
}

void SimNet::sleep_for(Micros d) {
  std::unique_lock lk(mu_);
  const Micros wake = now() + d;
  while (now() < wake) block_locked(lk, wake);
}

void SimNet::consume_cpu(Micros d) {
  if (d <= Micros{0}) return;
  std::unique_lock lk(mu_);
  auto& free_at = cpu_free_at_[current_task().node];
  const Micros done = std::max(now(), free_at) + d;
  free_at = done;
  while (now() < done) block_locked(lk, done);
}

void SimNet::run(std::string node, std::function<void()> main) {
  std::unique_lock lk(mu_);
  if (running_sim_) throw std::logic_error("SimNet::run is not reentrant");
  running_sim_ = true;
  auto main_id = spawn_locked(std::move(node), std::move(main));
  Task& main_task = *tasks_.at(main_id);

  std::exception_ptr failure;
  std::exception_ptr task_failure;
  while (!main_task.done) {
    if (!ready_.empty()) {
      auto id = ready_.front();
      ready_.pop_front();
      in_ready_.erase(id);
      auto it = tasks_.find(id);
      if (it == tasks_.end() || it->second->done) continue;
      resume_locked(lk, *it->second);
      if (it->second->done && id != main_id) {
        // Reap now so long runs do not pile up finished threads.
        auto t = std::move(it->second);
        tasks_.erase(it);
        lk.unlock();
        pthread_join(t->thread, nullptr);
        lk.lock();
        if (t->error && !task_failure) task_failure = t->error;
      }
      continue;
    }
    if (events_.empty()) {
      failure = std::make_exception_ptr(std::logic_error("simulation deadlock: no runnable task and no pending event"));
      break;
    }
    Event ev = events_.top();
    events_.pop();
    if (ev.at.count() > now_.load()) now_.store(ev.at.count());
    ev.action();
  }

  // Cancel whatever is left, in creation order.
  for (auto& [id, t] : tasks_) {
    t->cancelled = true;
    while (t->started && !t->done) resume_locked(lk, *t);
  }
  for (auto& [id, t] : tasks_) {
    if (t->started) {
      lk.unlock();
      pthread_join(t->thread, nullptr);
      lk.lock();
    }
  }
  if (!failure) {
    if (main_task.error) failure = main_task.error;
    else if (task_failure) failure = task_failure;
    else
      for (auto& [id, t] : tasks_)
        if (t->error) {
          failure = t->error;
          break;
        }
  }
  tasks_.clear();
  cpu_free_at_.clear();
  ready_.clear();
  in_ready_.clear();
  events_ = {};
  running_sim_ = false;
  if (failure) std::rethrow_exception(failure);
}

std::unique_ptr<StreamChannel> SimNet::connect(const Address& to, Deadline deadline) {
  std::unique_lock lk(mu_);
  Task& self = current_task();
  const std::string& node = self.node;
  const Micros expiry = deadline.expiry_from(now());
  auto pending = std::make_shared<PendingConnect>();
  Address local{node, next_ephemeral_port_++};
  if (next_ephemeral_port_ < 40000) next_ephemeral_port_ = 40000;
  const Micros lat = link(node, to.host).one_way_latency;

  schedule_locked(now() + lat, [this, pending, to, local, lat, node] {
    auto it = listeners_.find(to);
    if (it == listeners_.end() || it->second->closed) {
      schedule_locked(now() + lat, [this, pending] {
        pending->refused = true;
        wake_locked(pending->waiters);
      });
      return;
    }
    auto client = std::make_shared<PipeEnd>();
    auto server = std::make_shared<PipeEnd>();
    client->node = node;
    client->local = local;
    client->peer = to;
    server->node = to.host;
    server->local = to;
    server->peer = local;
    client->other = server;
    server->other = client;
    it->second->backlog.push_back(server);
    wake_locked(it->second->waiters);
    schedule_locked(now() + lat, [this, pending, client, server, lat] {
      if (pending->abandoned) {
        client->closed = true;
        schedule_locked(now() + lat, [this, server] {
          server->peer_closed = true;
          wake_locked(server->waiters);
        });
        return;
      }
      pending->established = client;
      wake_locked(pending->waiters);
    });
  });

  while (!pending->refused && !pending->established) {
    if (now() >= expiry) {
      pending->abandoned = true;
      throw_timeout("connect to " + to.to_string(), 0);
    }
    pending->waiters.push_back(self.id);
    block_locked(lk, expiry);
  }
  ledger_.record_round_trip(node, "connect");
  if (pending->refused) throw_refused(to);
  return std::make_unique<SimStream>(*this, pending->established);
}

std::unique_ptr<Listener> SimNet::listen(const Address& at) {
  std::lock_guard lk(mu_);
  auto& slot = listeners_[at];
  if (slot && !slot->closed)
    throw TransportError(errc::kIoError, "address " + at.to_string() + " already in use");
  slot = std::make_shared<ListenerState>();
  slot->addr = at;
  return std::make_unique<SimListener>(*this, slot);
}

std::unique_ptr<DatagramSocket> SimNet::bind_datagram(const Address& at) {
  std::lock_guard lk(mu_);
  auto& slot = datagram_sockets_[at];
  if (slot && !slot->closed)
    throw TransportError(errc::kIoError, "address " + at.to_string() + " already in use");
  slot = std::make_shared<DatagramState>();
  slot->addr = at;
  return std::make_unique<SimDatagram>(*this, slot);
}

}  // namespace seslayer::sim
