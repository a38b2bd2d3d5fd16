#include <benchmark/benchmark.h>

#include <algorithm>
#include <random>

#include "seslayer/fragment.hpp"

using namespace seslayer;

namespace {

void BM_FragmentReassemble(benchmark::State& st) {
  const Bytes payload(static_cast<std::size_t>(st.range(0)), 0x42);
  PacingPolicy pacing;
  pacing.max_fragment_payload = 8000;
  std::mt19937_64 rng(1);
  std::uint64_t id = 0;
  for (auto _ : st) {
    auto frags = fragment(payload, pacing, ++id);
    std::shuffle(frags.begin(), frags.end(), rng);
    ReassemblyBuffer buf;
    std::optional<Bytes> whole;
    for (const auto& f : frags) {
      auto wire = encode_fragment(f);
      auto back = decode_fragment(wire);
      whole = buf.reassemble("peer", back.header, back.payload, Micros{0});
    }
    benchmark::DoNotOptimize(whole);
  }
  st.SetBytesProcessed(st.iterations() * st.range(0));
}
BENCHMARK(BM_FragmentReassemble)->Arg(1000)->Arg(70000)->Arg(1 << 20);

}  // namespace
