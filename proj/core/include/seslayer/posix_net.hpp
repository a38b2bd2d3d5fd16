#pragma once

// Live network over POSIX TCP and UDP sockets. Deadlines are enforced with
// poll(); spawned work runs on real threads that are joined on destruction.

#include <atomic>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "seslayer/transport.hpp"

namespace seslayer {

class PosixNetwork final : public Network {
 public:
  PosixNetwork() = default;
  ~PosixNetwork() override;
  PosixNetwork(const PosixNetwork&) = delete;
  PosixNetwork& operator=(const PosixNetwork&) = delete;

  const Clock& clock() const override { return clock_; }
  RandomSource& random() override { return random_; }
  RoundTripLedger& ledger() override { return ledger_; }
  std::unique_ptr<StreamChannel> connect(const Address& to, Deadline deadline) override;
  std::unique_ptr<Listener> listen(const Address& at) override;
  std::unique_ptr<DatagramSocket> bind_datagram(const Address& at) override;
  void spawn(std::string node, std::function<void()> fn) override;
  void sleep_for(Micros d) override;
  bool stopping() const override { return stopping_.load(); }

  // Asks loops to finish and joins every spawned thread.
  void stop();

 private:
  SteadyClock clock_;
  SystemRandom random_;
  RoundTripLedger ledger_;
  std::atomic<bool> stopping_{false};
  struct Worker {
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> done;
  };
  std::mutex mu_;
  std::vector<Worker> workers_;
};

}  // namespace seslayer
