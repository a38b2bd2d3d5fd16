#pragma once

// Deterministic simulated network.
//
// Each simulated activity (a daemon's accept loop, a connection handler, a
// scenario driver) is a task backed by its own thread, but exactly one task
// runs at any moment: tasks hand a baton to the scheduler whenever they block.
// The scheduler wakes tasks in FIFO order and, when none is runnable, advances
// the virtual clock to the next pending event. Given the same seed and inputs,
// every run produces the same interleaving, clock readings and traffic.
//
// Streams are reliable and ordered with per-link one-way latency; datagrams
// additionally honour loss, duplication and jitter probabilities. A connect
// costs one round trip; the listener sees the connection after one one-way
// latency.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <map>
#include <optional>
#include <memory>
#include <mutex>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "seslayer/transport.hpp"

namespace seslayer::sim {

struct LinkParams {
  Micros one_way_latency{0};
  double loss_probability = 0.0;
  double duplicate_probability = 0.0;
  // Extra uniform [0, jitter] delay per datagram; reorders datagrams.
  Micros datagram_jitter{0};
};

struct TrafficRecord {
  Micros at{0};
  std::string from;
  std::string to;
  bool datagram = false;
  Bytes bytes;
};

// Thrown inside tasks that are still blocked when the simulation ends. It does
// not derive from std::exception so protocol-level handlers never swallow it.
struct Cancelled {};

class SimNet final : public Network {
 public:
  explicit SimNet(std::uint64_t seed = 1);
  ~SimNet() override;
  SimNet(const SimNet&) = delete;
  SimNet& operator=(const SimNet&) = delete;

  void set_default_link(LinkParams p);
  // Symmetric.
  void set_link(const std::string& a, const std::string& b, LinkParams p);
  LinkParams link(const std::string& from, const std::string& to) const;

  // Keep full copies of every message (for traffic scanners). On by default.
  void set_capture(bool on) { capture_ = on; }
  const std::vector<TrafficRecord>& traffic() const { return traffic_; }
  std::size_t traffic_count() const { return traffic_count_; }

  // Runs `main` as a task on `node`, drives the simulation until it returns,
  // then cancels every remaining task. Rethrows the first exception that
  // escaped any task.
  void run(std::string node, std::function<void()> main);

  // Network
  const Clock& clock() const override { return clock_; }
  RandomSource& random() override { return random_; }
  RoundTripLedger& ledger() override { return ledger_; }
  std::unique_ptr<StreamChannel> connect(const Address& to, Deadline deadline) override;
  std::unique_ptr<Listener> listen(const Address& at) override;
  std::unique_ptr<DatagramSocket> bind_datagram(const Address& at) override;
  void spawn(std::string node, std::function<void()> fn) override;
  void sleep_for(Micros d) override;
  // Each node has one CPU: concurrent work on a node queues behind earlier
  // work.
  void consume_cpu(Micros d) override;

  Micros now() const { return Micros{now_.load()}; }

 private:
  class VirtualClock final : public Clock {
   public:
    explicit VirtualClock(const SimNet& n) : net_(n) {}
    Micros now() const override { return net_.now(); }

   private:
    const SimNet& net_;
  };

  friend class SimStream;
  friend class SimListener;
  friend class SimDatagram;

  struct Task;
  struct Event {
    Micros at;
    std::uint64_t seq;
    std::function<void()> action;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.at != b.at ? a.at > b.at : a.seq > b.seq;
    }
  };
  struct PipeEnd;
  struct PendingConnect;
  struct ListenerState;
  struct DatagramState;

  // All *_locked members require mu_.
  void schedule_locked(Micros at, std::function<void()> action);
  void make_ready_locked(std::uint64_t id);
  void wake_locked(std::vector<std::uint64_t>& waiters);
  // Parks the calling task until woken or `wake_at` (if finite) passes.
  void block_locked(std::unique_lock<std::mutex>& lk, std::optional<Micros> wake_at);
  void resume_locked(std::unique_lock<std::mutex>& lk, Task& t);
  Task& current_task() const;
  std::uint64_t spawn_locked(std::string node, std::function<void()> fn);
  void log_traffic_locked(const std::string& from, const std::string& to, bool datagram, ByteView b);
  static void task_entry(SimNet* net, Task* t);

  mutable std::mutex mu_;
  std::condition_variable sched_cv_;
  std::uint64_t running_ = 0;
  std::uint64_t next_task_id_ = 1;
  std::map<std::uint64_t, std::unique_ptr<Task>> tasks_;
  std::deque<std::uint64_t> ready_;
  std::set<std::uint64_t> in_ready_;
  std::priority_queue<Event, std::vector<Event>, Later> events_;
  std::uint64_t event_seq_ = 0;
  std::atomic<std::int64_t> now_{0};
  bool running_sim_ = false;

  VirtualClock clock_{*this};
  SeededRandom random_;
  std::mt19937_64 link_rng_;
  RoundTripLedger ledger_;

  LinkParams default_link_;
  std::map<std::pair<std::string, std::string>, LinkParams> links_;
  std::map<Address, std::shared_ptr<ListenerState>> listeners_;
  std::map<Address, std::shared_ptr<DatagramState>> datagram_sockets_;
  std::uint16_t next_ephemeral_port_ = 40000;
  std::map<std::string, Micros> cpu_free_at_;

  bool capture_ = true;
  std::vector<TrafficRecord> traffic_;
  std::size_t traffic_count_ = 0;
};

}  // namespace seslayer::sim
