#include <gtest/gtest.h>

#include "seslayer/fragment.hpp"
#include "seslayer/simnet.hpp"
#include "support.hpp"

using namespace seslayer;
using testing_support::Gen;

namespace {

PacingPolicy max_payload(std::size_t n) {
  PacingPolicy p;
  p.max_fragment_payload = n;
  return p;
}

}  // namespace

TEST(Fragment, SizesFollowCeilAndRemainder) {
  Gen g(31);
  const auto payload = g.bytes(200000);
  const auto frags = fragment(payload, max_payload(60000), 9);
  const std::size_t expect_n = (200000 + 60000 - 1) / 60000;
  ASSERT_EQ(frags.size(), expect_n);
  const std::size_t sizes[] = {60000, 60000, 60000, 200000 - 3 * 60000};
  for (std::size_t i = 0; i < frags.size(); ++i) {
    EXPECT_EQ(frags[i].payload.size(), sizes[i]);
    EXPECT_EQ(frags[i].header.payload_len, sizes[i]);
    EXPECT_EQ(frags[i].header.index, i);
    EXPECT_EQ(frags[i].header.total, 4);
    EXPECT_EQ(frags[i].header.datagram_id, 9u);
  }
}

TEST(Fragment, SingleByte) {
  const auto frags = fragment(Bytes{7}, PacingPolicy{}, 1);
  ASSERT_EQ(frags.size(), 1u);
  EXPECT_EQ(frags[0].header.total, 1);
}

TEST(Fragment, SeventyKilobytesNeedsTwo) {
  const auto frags = fragment(Bytes(70000, 1), PacingPolicy{}, 1);
  ASSERT_EQ(frags.size(), 2u);
  EXPECT_EQ(frags[0].payload.size(), 60000u);
  EXPECT_EQ(frags[1].payload.size(), 10000u);
}

TEST(Fragment, Errors) {
  EXPECT_THROW(fragment({}, PacingPolicy{}, 1), std::invalid_argument);
  EXPECT_THROW(fragment(Bytes{1}, max_payload(0), 1), std::invalid_argument);
  EXPECT_THROW(fragment(Bytes{1}, max_payload(65001), 1), std::invalid_argument);
  try {
    fragment(Bytes(65536, 0), max_payload(1), 1);
    FAIL() << "fragmented beyond the 16-bit total";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::kOversize);
  }
}

TEST(Fragment, GoldenLayout) {
  const auto v = testing_support::golden_vectors("fragment.txt");
  Fragment f{{0x0102030405060708, 1, 3, 2}, to_bytes("hi")};
  EXPECT_EQ(encode_fragment(f), from_hex(v.at("fragment_1_of_3")));
  Fragment single{{0, 0, 1, 1}, to_bytes("z")};
  EXPECT_EQ(encode_fragment(single), from_hex(v.at("fragment_single")));
  auto back = decode_fragment(from_hex(v.at("fragment_1_of_3")));
  EXPECT_EQ(back.header, f.header);
  EXPECT_EQ(back.payload, f.payload);
}

TEST(Fragment, DecodeRejectsMalformed) {
  EXPECT_THROW(decode_fragment(Bytes(13, 0)), Error);
  // index == total
  EXPECT_THROW(decode_fragment(from_hex("0000000000000001 0002 0002 0000")), Error);
  // total == 0
  EXPECT_THROW(decode_fragment(from_hex("0000000000000001 0000 0000 0000")), Error);
  // declared length disagrees with the datagram
  EXPECT_THROW(decode_fragment(from_hex("0000000000000001 0000 0001 0002 61")), Error);
}

TEST(Reassembly, OutOfOrderDeliversOnLast) {
  Gen g(32);
  const auto payload = g.bytes(25);
  const auto frags = fragment(payload, max_payload(10), 5);
  ASSERT_EQ(frags.size(), 3u);
  ReassemblyBuffer buf;
  EXPECT_FALSE(buf.reassemble("a", frags[2].header, frags[2].payload, Micros{0}));
  EXPECT_FALSE(buf.reassemble("a", frags[0].header, frags[0].payload, Micros{1}));
  auto out = buf.reassemble("a", frags[1].header, frags[1].payload, Micros{2});
  ASSERT_TRUE(out);
  EXPECT_EQ(*out, payload);
}

TEST(Reassembly, DuplicatesAreIdempotent) {
  const auto frags = fragment(Bytes(20, 3), max_payload(10), 5);
  ReassemblyBuffer buf;
  EXPECT_FALSE(buf.reassemble("a", frags[0].header, frags[0].payload, Micros{0}));
  EXPECT_FALSE(buf.reassemble("a", frags[0].header, frags[0].payload, Micros{0}));
  EXPECT_TRUE(buf.reassemble("a", frags[1].header, frags[1].payload, Micros{0}));
  EXPECT_FALSE(buf.reassemble("a", frags[1].header, frags[1].payload, Micros{0}));
  EXPECT_FALSE(buf.reassemble("a", frags[0].header, frags[0].payload, Micros{0}));
}

TEST(Reassembly, ExpiredEntryIsDropped) {
  const auto frags = fragment(Bytes(30, 3), max_payload(10), 5);
  ReassemblyBuffer buf(Millis{100});
  buf.reassemble("a", frags[0].header, frags[0].payload, Micros{0});
  buf.reassemble("a", frags[1].header, frags[1].payload, Micros{0});
  EXPECT_EQ(buf.live_entries(), 1u);
  EXPECT_FALSE(buf.reassemble("a", frags[2].header, frags[2].payload, Millis{100}));
  EXPECT_EQ(buf.evicted_count(), 1u);
}

TEST(Reassembly, ConflictingTotalEvicts) {
  ReassemblyBuffer buf;
  buf.reassemble("a", {5, 0, 3, 1}, Bytes{1}, Micros{0});
  try {
    buf.reassemble("a", {5, 1, 2, 1}, Bytes{1}, Micros{0});
    FAIL() << "accepted a conflicting total";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::kProtocolError);
  }
  EXPECT_EQ(buf.live_entries(), 0u);
}

TEST(Reassembly, SendersAreSeparate) {
  ReassemblyBuffer buf;
  EXPECT_FALSE(buf.reassemble("a", {1, 0, 2, 1}, Bytes{1}, Micros{0}));
  EXPECT_FALSE(buf.reassemble("b", {1, 1, 2, 1}, Bytes{2}, Micros{0}));
  EXPECT_EQ(buf.live_entries(), 2u);
}

TEST(ReassemblyProperty, AnyPermutationAnyDuplication) {
  Gen g(33);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto payload = g.bytes(static_cast<std::size_t>(g.range(1, 5000)));
    const auto frags = fragment(payload, max_payload(static_cast<std::size_t>(g.range(1, 700))), g.u64());
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < frags.size(); ++i) {
      order.push_back(i);
      while (g.coin(0.3)) order.push_back(i);
    }
    g.shuffle(order);
    ReassemblyBuffer buf;
    int deliveries = 0;
    for (auto i : order) {
      if (auto out = buf.reassemble("s", frags[i].header, frags[i].payload, Micros{0})) {
        ++deliveries;
        ASSERT_EQ(*out, payload);
      }
    }
    ASSERT_EQ(deliveries, 1);
  }
}

TEST(ReassemblyProperty, MemoryBoundedByRateTimesDeadline) {
  // One never-completed datagram per millisecond, 100 ms eviction deadline.
  const Micros interval = Millis{1};
  const Micros deadline = Millis{100};
  const auto bound = static_cast<std::size_t>(deadline / interval);
  ReassemblyBuffer buf(deadline);
  std::size_t peak = 0;
  for (std::uint64_t i = 0; i < 20000; ++i) {
    buf.reassemble("s", {i, 0, 2, 1}, Bytes{1}, interval * static_cast<std::int64_t>(i));
    peak = std::max(peak, buf.live_entries());
  }
  EXPECT_LE(peak, bound);
  EXPECT_GT(buf.evicted_count(), 0u);
}

TEST(SendPaced, SpanAtLeastDelays) {
  sim::SimNet net(1);
  PacingPolicy p;
  p.max_fragment_payload = 10;
  p.inter_fragment_delay = Micros{500};
  std::vector<Micros> arrivals;
  std::vector<std::uint16_t> indices;
  Micros start{0}, end{0};
  net.run("a", [&] {
    auto rx = net.bind_datagram({"b", 1});
    auto tx = net.bind_datagram({"a", 1});
    net.spawn("b", [&] {
      for (int i = 0; i < 4; ++i) {
        auto d = rx->receive(Deadline::seconds(1));
        indices.push_back(decode_fragment(d->data).header.index);
      }
    });
    start = net.now();
    send_paced(fragment(Bytes(40, 1), p, 1), p, *tx, {"b", 1}, net);
    end = net.now();
    net.sleep_for(Millis{10});
  });
  EXPECT_GE(end - start, Micros{3 * 500});
  EXPECT_EQ(indices, (std::vector<std::uint16_t>{0, 1, 2, 3}));
}

TEST(SendPaced, NoDelayForSingleOrZero) {
  sim::SimNet net(1);
  PacingPolicy p;
  p.inter_fragment_delay = Micros{500};
  Micros single{-1}, zero{-1};
  net.run("a", [&] {
    auto tx = net.bind_datagram({"a", 1});
    auto t0 = net.now();
    send_paced(fragment(Bytes(10, 1), p, 1), p, *tx, {"b", 1}, net);
    single = net.now() - t0;
    PacingPolicy z;
    z.max_fragment_payload = 2;
    t0 = net.now();
    send_paced(fragment(Bytes(10, 1), z, 2), z, *tx, {"b", 1}, net);
    zero = net.now() - t0;
  });
  EXPECT_EQ(single, Micros{0});
  EXPECT_EQ(zero, Micros{0});
}

TEST(SendPaced, FailurePushesSocketFrame) {
  sim::SimNet net(1);
  net.run("a", [&] {
    auto tx = net.bind_datagram({"a", 1});
    tx->close();
    try {
      send_paced(fragment(Bytes(3, 1), PacingPolicy{}, 1), PacingPolicy{}, *tx, {"b", 1}, net);
      ADD_FAILURE() << "send on a closed socket succeeded";
    } catch (const Error& e) {
      EXPECT_EQ(e.stack().top().subsystem, subsys::kSocket);
      EXPECT_EQ(e.code(), errc::kIoError);
    }
  });
}

TEST(SimTransport, ConnectRefused) {
  sim::SimNet net(1);
  net.run("a", [&] {
    try {
      net.connect({"b", 9}, Deadline::seconds(1));
      ADD_FAILURE() << "connected to nothing";
    } catch (const TransportError& e) {
      EXPECT_EQ(e.code(), errc::kConnectionRefused);
      EXPECT_EQ(e.stack().format(), "111 -- connection refused");
    }
  });
}

TEST(SimTransport, ReadTimesOutAtDeadline) {
  sim::SimNet net(1);
  Micros waited{0};
  net.run("a", [&] {
    auto l = net.listen({"b", 9});
    net.spawn("b", [&] {
      auto ch = l->accept(Deadline::seconds(5));
      net.sleep_for(std::chrono::seconds(2));
    });
    auto ch = net.connect({"b", 9}, Deadline::seconds(1));
    const auto t0 = net.now();
    try {
      ch->read_n(1, Deadline::ms(100));
      ADD_FAILURE() << "read returned data nobody sent";
    } catch (const TransportError& e) {
      EXPECT_EQ(e.code(), errc::kTimedOut);
      EXPECT_EQ(e.transferred(), 0u);
    }
    waited = net.now() - t0;
  });
  EXPECT_EQ(waited, Millis{100});
}

TEST(SimTransport, PartialProgressReported) {
  sim::SimNet net(1);
  net.run("a", [&] {
    auto l = net.listen({"b", 9});
    net.spawn("b", [&] {
      auto ch = l->accept(Deadline::seconds(5));
      ch->write(Bytes(3, 1), Deadline::seconds(1));
      net.sleep_for(std::chrono::seconds(2));
    });
    auto ch = net.connect({"b", 9}, Deadline::seconds(1));
    try {
      ch->read_n(10, Deadline::ms(100));
      ADD_FAILURE();
    } catch (const TransportError& e) {
      EXPECT_EQ(e.transferred(), 3u);
    }
  });
}

TEST(SimTransport, WriteToLivePeer) {
  sim::SimNet net(1);
  Bytes got;
  net.run("a", [&] {
    auto l = net.listen({"b", 9});
    net.spawn("b", [&] {
      auto ch = l->accept(Deadline::seconds(5));
      got = ch->read_n(10, Deadline::seconds(5));
    });
    auto ch = net.connect({"b", 9}, Deadline::seconds(1));
    ch->write(Bytes(10, 4), Deadline::seconds(1));
    net.sleep_for(Millis{10});
  });
  EXPECT_EQ(got, Bytes(10, 4));
}

TEST(SimTransport, NoOperationOutlivesItsDeadline) {
  Gen g(34);
  for (int trial = 0; trial < 50; ++trial) {
    sim::SimNet net(static_cast<std::uint64_t>(trial));
    const auto timeout = g.range(1, 5000);
    Micros waited{0};
    net.run("a", [&] {
      auto l = net.listen({"b", 9});
      auto rx = net.bind_datagram({"a", 2});
      net.spawn("b", [&] {
        auto ch = l->accept(Deadline::seconds(60));
        net.sleep_for(std::chrono::seconds(30));
      });
      auto ch = net.connect({"b", 9}, Deadline::seconds(1));
      auto t0 = net.now();
      EXPECT_THROW(ch->read_n(1, Deadline::ms(timeout)), TransportError);
      EXPECT_FALSE(rx->receive(Deadline::ms(timeout)));
      EXPECT_EQ(l->accept(Deadline::ms(timeout)), nullptr);
      waited = net.now() - t0;
    });
    EXPECT_EQ(waited, Millis{3 * timeout});
  }
}
