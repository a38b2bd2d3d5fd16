#include <benchmark/benchmark.h>

#include "seslayer/wire.hpp"

using namespace seslayer;
using namespace seslayer::wire;

namespace {

RecordAd sample_ad(int attrs) {
  RecordAd ad;
  for (int i = 0; i < attrs; ++i) {
    const auto k = "Attr" + std::to_string(i);
    switch (i % 3) {
      case 0: ad.set_int(k, i * 7919); break;
      case 1: ad.set_float(k, i / 3.0); break;
      default: ad.set_string(k, std::string(static_cast<std::size_t>(16 + i), 'x'));
    }
  }
  return ad;
}

void BM_EncodeRecord(benchmark::State& st) {
  const auto ad = sample_ad(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(encode_record(ad));
  st.SetItemsProcessed(st.iterations());
}
BENCHMARK(BM_EncodeRecord)->Arg(8)->Arg(64)->Arg(512);

void BM_DecodeRecord(benchmark::State& st) {
  const auto bytes = encode_record(sample_ad(static_cast<int>(st.range(0))));
  for (auto _ : st) benchmark::DoNotOptimize(decode_record(bytes));
  st.SetBytesProcessed(static_cast<std::int64_t>(st.iterations() * bytes.size()));
}
BENCHMARK(BM_DecodeRecord)->Arg(8)->Arg(64)->Arg(512);

void BM_BlobRoundTrip(benchmark::State& st) {
  const Bytes blob(static_cast<std::size_t>(st.range(0)), 0x5a);
  for (auto _ : st) benchmark::DoNotOptimize(decode(encode_blob(blob)));
  st.SetBytesProcessed(st.iterations() * st.range(0));
}
BENCHMARK(BM_BlobRoundTrip)->Arg(1 << 10)->Arg(1 << 20);

}  // namespace
