#include "seslayer/posix_net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <iostream>

namespace seslayer {

namespace {

[[noreturn]] void throw_errno(std::string_view what, std::size_t transferred = 0) {
  int e = errno;
  std::int64_t code = errc::kIoError;
  if (e == ECONNREFUSED) code = errc::kConnectionRefused;
  else if (e == ECONNRESET || e == EPIPE) code = errc::kConnectionClosed;
  throw TransportError(code, std::string(what) + ": " + std::strerror(e), transferred);
}

sockaddr_in resolve(const Address& a) {
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(a.port);
  if (a.host.empty() || a.host == "*" || a.host == "0.0.0.0") {
    sa.sin_addr.s_addr = htonl(INADDR_ANY);
    return sa;
  }
  if (inet_pton(AF_INET, a.host.c_str(), &sa.sin_addr) == 1) return sa;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  addrinfo* res = nullptr;
  int rc = getaddrinfo(a.host.c_str(), nullptr, &hints, &res);
  if (rc != 0 || res == nullptr)
    throw TransportError(errc::kIoError, "cannot resolve '" + a.host + "': " + gai_strerror(rc));
  sa.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return sa;
}

Address to_address(const sockaddr_in& sa) {
  char buf[INET_ADDRSTRLEN] = {};
  inet_ntop(AF_INET, &sa.sin_addr, buf, sizeof buf);
  return Address{buf, ntohs(sa.sin_port)};
}

Address sock_name(int fd, bool peer) {
  sockaddr_in sa{};
  socklen_t len = sizeof sa;
  int rc = peer ? getpeername(fd, reinterpret_cast<sockaddr*>(&sa), &len)
                : getsockname(fd, reinterpret_cast<sockaddr*>(&sa), &len);
  if (rc != 0) return {};
  return to_address(sa);
}

void set_nonblocking(int fd) { fcntl(fd, F_SETFL, fcntl(fd, F_GETFL) | O_NONBLOCK); }

// Waits for `events` on fd until `expiry`. Returns false on timeout, or
// early once the network is stopping.
bool wait_fd(int fd, short events, const Network& net, Micros expiry) {
  constexpr std::int64_t kSliceMs = 100;
  for (;;) {
    if (net.stopping()) return false;
    auto left = expiry - net.clock().now();
    if (left.count() <= 0) return false;
    pollfd p{fd, events, 0};
    int ms = static_cast<int>(std::min<std::int64_t>(kSliceMs, (left.count() + 999) / 1000));
    int rc = ::poll(&p, 1, ms);
    if (rc > 0) return true;
    if (rc < 0 && errno != EINTR) throw_errno("poll");
  }
}

class PosixStream final : public StreamChannel {
 public:
  PosixStream(int fd, PosixNetwork& net) : fd_(fd), net_(net) {
    set_nonblocking(fd_);
    int one = 1;
    setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    local_ = sock_name(fd_, false);
    peer_ = sock_name(fd_, true);
  }
  ~PosixStream() override { close(); }

  void write(ByteView data, Deadline deadline) override {
    if (fd_ < 0) throw_closed("write", 0);
    const Micros expiry = deadline.expiry_from(net_.clock().now());
    std::size_t done = 0;
    while (done < data.size()) {
      ssize_t n = ::send(fd_, data.data() + done, data.size() - done, MSG_NOSIGNAL);
      if (n > 0) {
        done += static_cast<std::size_t>(n);
        continue;
      }
      if (n < 0 && errno == EINTR) continue;
      if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
        if (!wait_fd(fd_, POLLOUT, net_, expiry)) throw_timeout("write", done);
        continue;
      }
      throw_errno("write", done);
    }
    net_.ledger().record_message(context::node(), context::op(), data.size());
    wrote_since_read_ = true;
  }

  void read_exact(std::span<std::uint8_t> out, Deadline deadline) override {
    if (fd_ < 0) throw_closed("read", 0);
    if (wrote_since_read_) {
      net_.ledger().record_round_trip(context::node(), context::op());
      wrote_since_read_ = false;
    }
    const Micros expiry = deadline.expiry_from(net_.clock().now());
    std::size_t done = 0;
    while (done < out.size()) {
      ssize_t n = ::recv(fd_, out.data() + done, out.size() - done, 0);
      if (n > 0) {
        done += static_cast<std::size_t>(n);
        continue;
      }
      if (n == 0) throw_closed("read", done);
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) {
        if (!wait_fd(fd_, POLLIN, net_, expiry)) throw_timeout("read", done);
        continue;
      }
      throw_errno("read", done);
    }
  }

  void close() override {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

  Address local_address() const override { return local_; }
  Address peer_address() const override { return peer_; }

 private:
  int fd_;
  PosixNetwork& net_;
  Address local_;
  Address peer_;
  bool wrote_since_read_ = false;
};

class PosixListener final : public Listener {
 public:
  PosixListener(int fd, PosixNetwork& net) : fd_(fd), net_(net) {
    set_nonblocking(fd_);
    addr_ = sock_name(fd_, false);
  }
  ~PosixListener() override { close(); }

  std::unique_ptr<StreamChannel> accept(Deadline deadline) override {
    if (fd_ < 0) throw_closed("accept", 0);
    const Micros expiry = deadline.expiry_from(net_.clock().now());
    for (;;) {
      int c = ::accept(fd_, nullptr, nullptr);
      if (c >= 0) return std::make_unique<PosixStream>(c, net_);
      if (errno == EINTR || errno == ECONNABORTED) continue;
      if (errno != EAGAIN && errno != EWOULDBLOCK) throw_errno("accept");
      if (!wait_fd(fd_, POLLIN, net_, expiry)) return nullptr;
    }
  }

  Address address() const override { return addr_; }
  void close() override {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_;
  PosixNetwork& net_;
  Address addr_;
};

class PosixDatagram final : public DatagramSocket {
 public:
  PosixDatagram(int fd, PosixNetwork& net) : fd_(fd), net_(net) {
    set_nonblocking(fd_);
    addr_ = sock_name(fd_, false);
  }
  ~PosixDatagram() override { close(); }

  void send_to(const Address& to, ByteView data) override {
    if (fd_ < 0) throw_closed("send_to", 0);
    auto sa = resolve(to);
    for (;;) {
      ssize_t n = ::sendto(fd_, data.data(), data.size(), 0, reinterpret_cast<sockaddr*>(&sa), sizeof sa);
      if (n >= 0) break;
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) {
        wait_fd(fd_, POLLOUT, net_, net_.clock().now() + Micros{1'000'000});
        continue;
      }
      throw_errno("sendto " + to.to_string());
    }
    net_.ledger().record_message(context::node(), context::op(), data.size());
  }

  std::optional<Datagram> receive(Deadline deadline) override {
    if (fd_ < 0) throw_closed("receive", 0);
    const Micros expiry = deadline.expiry_from(net_.clock().now());
    Bytes buf(65536);
    for (;;) {
      sockaddr_in sa{};
      socklen_t len = sizeof sa;
      ssize_t n = ::recvfrom(fd_, buf.data(), buf.size(), 0, reinterpret_cast<sockaddr*>(&sa), &len);
      if (n >= 0) {
        buf.resize(static_cast<std::size_t>(n));
        return Datagram{to_address(sa), std::move(buf)};
      }
      if (errno == EINTR) continue;
      if (errno != EAGAIN && errno != EWOULDBLOCK) throw_errno("recvfrom");
      if (!wait_fd(fd_, POLLIN, net_, expiry)) return std::nullopt;
    }
  }

  Address local_address() const override { return addr_; }
  void close() override {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_;
  PosixNetwork& net_;
  Address addr_;
};

}  // namespace

PosixNetwork::~PosixNetwork() { stop(); }

void PosixNetwork::stop() {
  stopping_.store(true);
  for (;;) {
    std::vector<Worker> workers;
    {
      std::lock_guard lk(mu_);
      workers.swap(workers_);
    }
    if (workers.empty()) return;
    for (auto& w : workers)
      if (w.thread.joinable()) w.thread.join();
  }
}

std::unique_ptr<StreamChannel> PosixNetwork::connect(const Address& to, Deadline deadline) {
  const Micros expiry = deadline.expiry_from(clock_.now());
  auto sa = resolve(to);
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw_errno("socket");
  set_nonblocking(fd);
  int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa);
  if (rc != 0 && errno != EINPROGRESS) {
    int e = errno;
    ::close(fd);
    errno = e;
    if (e == ECONNREFUSED) throw_refused(to);
    throw_errno("connect " + to.to_string());
  }
  if (rc != 0) {
    if (!wait_fd(fd, POLLOUT, *this, expiry)) {
      ::close(fd);
      throw_timeout("connect to " + to.to_string(), 0);
    }
    int err = 0;
    socklen_t len = sizeof err;
    getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) {
      ::close(fd);
      if (err == ECONNREFUSED) throw_refused(to);
      errno = err;
      throw_errno("connect " + to.to_string());
    }
  }
  ledger_.record_round_trip(context::node(), "connect");
  return std::make_unique<PosixStream>(fd, *this);
}

std::unique_ptr<Listener> PosixNetwork::listen(const Address& at) {
  auto sa = resolve(at);
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw_errno("socket");
  int one = 1;
  setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0 || ::listen(fd, 128) != 0) {
    int e = errno;
    ::close(fd);
    errno = e;
    throw_errno("listen on " + at.to_string());
  }
  return std::make_unique<PosixListener>(fd, *this);
}

std::unique_ptr<DatagramSocket> PosixNetwork::bind_datagram(const Address& at) {
  auto sa = resolve(at);
  int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (fd < 0) throw_errno("socket");
  if (::bind(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) {
    int e = errno;
    ::close(fd);
    errno = e;
    throw_errno("bind udp " + at.to_string());
  }
  int size = 4 << 20;
  setsockopt(fd, SOL_SOCKET, SO_RCVBUF, &size, sizeof size);
  return std::make_unique<PosixDatagram>(fd, *this);
}

void PosixNetwork::spawn(std::string node, std::function<void()> fn) {
  std::lock_guard lk(mu_);
  // Join whatever has already finished so a long-lived daemon does not
  // accumulate dead threads.
  std::erase_if(workers_, [](Worker& w) {
    if (!w.done->load()) return false;
    w.thread.join();
    return true;
  });
  auto done = std::make_shared<std::atomic<bool>>(false);
  workers_.push_back({std::thread([node = std::move(node), fn = std::move(fn), done] {
                        context::set_node(node);
                        try {
                          fn();
                        } catch (const std::exception& e) {
                          std::cerr << node << ": " << e.what() << "\n";
                        }
                        done->store(true);
                      }),
                      done});
}

void PosixNetwork::sleep_for(Micros d) { std::this_thread::sleep_for(d); }

}  // namespace seslayer
