#pragma once

// Generators and fixtures shared by the unit tests.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "seslayer/bytes.hpp"
#include "seslayer/policy.hpp"
#include "seslayer/secman.hpp"
#include "seslayer/simnet.hpp"
#include "seslayer/wire.hpp"

namespace testing_support {

using namespace seslayer;

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  std::uint64_t u64() { return rng_(); }
  std::int64_t range(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng_);
  }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(range(0, static_cast<std::int64_t>(n) - 1)); }
  bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(rng_); }

  Bytes bytes(std::size_t n) {
    Bytes b(n);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng_());
    return b;
  }
  std::string text(std::size_t max_len) {
    std::string s(static_cast<std::size_t>(range(0, static_cast<std::int64_t>(max_len))), '\0');
    for (auto& c : s) c = static_cast<char>(rng_());
    return s;
  }
  std::string name(std::size_t max_len = 12) {
    static constexpr char kAlpha[] = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_";
    std::string s(static_cast<std::size_t>(range(1, static_cast<std::int64_t>(max_len))), 'a');
    for (auto& c : s) c = kAlpha[index(sizeof kAlpha - 1)];
    return s;
  }

  // Any 64-bit pattern, NaNs and infinities included.
  double any_double() {
    switch (range(0, 5)) {
      case 0: return std::bit_cast<double>(rng_());
      case 1: return static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(rng_())));
      case 2: return static_cast<double>(range(-1000, 1000)) / 8.0;
      case 3: return std::numeric_limits<double>::infinity() * (coin() ? 1 : -1);
      default: return std::uniform_real_distribution<double>(-1e12, 1e12)(rng_);
    }
  }
  std::int64_t any_int() {
    switch (range(0, 3)) {
      case 0: return static_cast<std::int64_t>(rng_());
      case 1: return range(-300, 300);
      case 2: return static_cast<std::int32_t>(rng_());
      default: return coin() ? std::numeric_limits<std::int64_t>::min() : std::numeric_limits<std::int64_t>::max();
    }
  }

  wire::RecordAd record(int depth) {
    wire::RecordAd ad;
    const auto n = range(0, 5);
    for (std::int64_t i = 0; i < n; ++i) {
      auto key = name() + "_" + std::to_string(i);
      ad.set(key, value(depth + 1));
    }
    return ad;
  }

  wire::WireValue value(int depth = 0) {
    switch (range(0, depth < 2 ? 4 : 3)) {
      case 0: return wire::WireValue(any_int());
      case 1: return wire::WireValue(any_double());
      case 2: return wire::WireValue(text(40));
      case 3: return wire::WireValue(wire::FileBlob{bytes(static_cast<std::size_t>(range(0, 300)))});
      default: return wire::WireValue(record(depth));
    }
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    std::shuffle(v.begin(), v.end(), rng_);
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// "name = hex" lines; '#' comments and blank lines skipped.
inline std::map<std::string, std::string> golden_vectors(const std::string& file) {
  std::map<std::string, std::string> out;
  std::istringstream in(read_file(std::string(SESLAYER_GOLDEN_DIR) + "/" + file));
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

// A client and a server policy sharing PASSWORD and the AES suite.
inline const char* kServerPolicy = R"(NAME server
METHODS PASSWORD CLAIMTOBE
SUITES AES192-CTR-HMAC-SHA256 NULL
REQUIRE_ENCRYPTION yes
PASSWORD alice alice-secret
MAP password:alice alice
MAP claimtobe:* claimed-*
ALLOW alice READ,WRITE,DAEMON
ALLOW claimed-* READ
)";

inline const char* kClientPolicy = R"(NAME client
METHODS PASSWORD
SUITES AES192-CTR-HMAC-SHA256
REQUIRE_ENCRYPTION yes
CREDENTIAL PASSWORD alice alice-secret
ALLOW * *
)";

inline auth::SecurityPolicy policy(const char* text) { return auth::SecurityPolicy::parse(text); }

inline const Deadline kLong = Deadline::seconds(60);

// Echoes each command payload back over the stream.
inline void echo_handler(session::CommandContext& ctx) {
  if (ctx.stream) ctx.stream->send(ctx.payload, kLong);
}

// Server manager with its accept loop spawned on node "server".
struct SimServer {
  session::SessionManager mgr;
  std::unique_ptr<Listener> listener;
  std::unique_ptr<DatagramSocket> dgram;

  SimServer(sim::SimNet& net, const auth::SecurityPolicy& p, Address at = {"server", 9618})
      : mgr(net, p, at) {
    mgr.set_handler(echo_handler);
  }
  // Call inside net.run().
  void start(sim::SimNet& net) {
    listener = net.listen(mgr.address());
    dgram = net.bind_datagram(mgr.address());
    net.spawn("server", [this] { mgr.run_listener(*listener); });
    net.spawn("server", [this] { mgr.run_datagrams(*dgram); });
  }
};

}  // namespace testing_support
