#include <benchmark/benchmark.h>

#include "seslayer/crypto_suite.hpp"

using namespace seslayer;
using namespace seslayer::crypto;

namespace {

void BM_Mac(benchmark::State& st) {
  const SessionKey k(Bytes(kSessionKeySize, 3));
  const Bytes data(static_cast<std::size_t>(st.range(0)), 1);
  for (auto _ : st) benchmark::DoNotOptimize(mac(k, data, kHmacSha256));
  st.SetBytesProcessed(st.iterations() * st.range(0));
}
BENCHMARK(BM_Mac)->Arg(64)->Arg(4096)->Arg(70000);

void BM_AesEncrypt(benchmark::State& st) {
  const SessionKey k(Bytes(kSessionKeySize, 3));
  const Bytes data(static_cast<std::size_t>(st.range(0)), 1);
  SeededRandom rng(1);
  for (auto _ : st) benchmark::DoNotOptimize(encrypt(k, data, kAes192Ctr, rng));
  st.SetBytesProcessed(st.iterations() * st.range(0));
}
BENCHMARK(BM_AesEncrypt)->Arg(64)->Arg(4096)->Arg(70000);

void BM_X25519Agreement(benchmark::State& st) {
  SeededRandom rng(2);
  const X25519KeyPair peer(rng);
  for (auto _ : st) {
    X25519KeyPair mine(rng);
    benchmark::DoNotOptimize(mine.shared_secret(peer.public_key()));
  }
}
BENCHMARK(BM_X25519Agreement);

}  // namespace
