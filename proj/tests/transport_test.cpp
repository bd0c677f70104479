#include "rmpc/transport.hpp"

#include <gtest/gtest.h>

#include <thread>

using namespace rmpc;

TEST(Transport, FrameWireLayout) {
  Frame f;
  f.op = kOpData;
  f.proto = 3;
  f.instance = 9;
  f.payload = {1, 2, 3};
  auto b = serializeFrame(f);
  ASSERT_EQ(b.size(), 14u);
  EXPECT_EQ(b[0], 10u);  // 7 header bytes after the length + 3 payload
  EXPECT_EQ(b[1], 0u);
  EXPECT_EQ(b[4], kOpData);
  EXPECT_EQ(b[5], 3u);
  EXPECT_EQ(b[7], 9u);
  EXPECT_EQ(b[11], 1u);

  Frame g = parseFrame(b.data(), b.size());
  EXPECT_EQ(g.op, f.op);
  EXPECT_EQ(g.proto, f.proto);
  EXPECT_EQ(g.instance, f.instance);
  EXPECT_EQ(g.payload, f.payload);

  EXPECT_THROW(parseFrame(b.data(), 5), std::runtime_error);
  b[0] += 1;
  EXPECT_THROW(parseFrame(b.data(), b.size()), std::runtime_error);
}

TEST(Transport, FifoOrderAndByteCount) {
  SimNet net(3);
  Frame a;
  a.proto = 1;
  a.payload = {10};
  Frame b;
  b.proto = 1;
  b.payload = {20, 21};
  net.send(0, 1, a);
  net.send(0, 1, b);
  EXPECT_EQ(net.recv(1, 0).payload[0], 10u);
  EXPECT_EQ(net.recv(1, 0).payload.size(), 2u);
  EXPECT_EQ(net.pairBytes(0, 1), 12u + 13u);
  EXPECT_EQ(net.pairBytes(1, 0), 0u);
  EXPECT_THROW(net.send(0, 0, a), std::invalid_argument);
}

TEST(Transport, ThreeThreadRingWithBarriers) {
  SimNet net(3);
  constexpr int kWaves = 5;
  std::vector<std::vector<uint8_t>> got(3);
  auto run = [&](int me) {
    for (int w = 0; w < kWaves; ++w) {
      Frame f;
      f.proto = 7;
      f.payload = {uint8_t(me * 16 + w)};
      net.send(me, (me + 1) % 3, f);
      got[me].push_back(net.recv(me, (me + 2) % 3).payload[0]);
      net.roundBarrier(me);
    }
  };
  std::thread t1(run, 1), t2(run, 2);
  run(0);
  t1.join();
  t2.join();
  for (int me = 0; me < 3; ++me) {
    EXPECT_EQ(net.waves(me), uint64_t(kWaves));
    int prev = (me + 2) % 3;
    for (int w = 0; w < kWaves; ++w) EXPECT_EQ(got[me][w], uint8_t(prev * 16 + w));
  }
}

TEST(Transport, BroadcastIsAtomicUnderTamper) {
  AdversaryScript sc;
  sc.corrupt = 0;
  sc.wire.push_back({0, Mut::kTamperAdd, 5});

  SimNet net(3);
  net.setScript(&sc);
  Frame f;
  f.op = kOpHash;
  f.proto = 2;
  f.payload = {100, 0};
  net.broadcast3(0, f);
  Frame r1 = net.recv(1, 0), r2 = net.recv(2, 0);
  EXPECT_EQ(r1.payload[0], 105u);
  EXPECT_EQ(r2.payload, r1.payload);
}

TEST(Transport, ScriptedDropBecomesTombstone) {
  AdversaryScript sc;
  sc.corrupt = 1;
  sc.wire.push_back({1, Mut::kDrop, 0});

  SimNet net(3);
  net.setScript(&sc);
  Frame f;
  f.proto = 4;
  f.payload = {1, 2, 3, 4};
  net.send(1, 2, f);               // ordinal 0: intact
  net.send(1, 0, f);               // ordinal 1: dropped
  net.send(0, 1, f);               // honest party unaffected
  EXPECT_FALSE(net.recv(2, 1).silent());
  Frame d = net.recv(0, 1);
  EXPECT_TRUE(d.silent());
  EXPECT_FALSE(net.recv(1, 0).silent());
  EXPECT_EQ(net.pairBytes(1, 0), 0u);  // a dropped frame never hits the wire
}

TEST(Transport, TamperSetRewritesLeadingBytes) {
  AdversaryScript sc;
  sc.corrupt = 2;
  sc.wire.push_back({0, Mut::kTamperSet, 0xBEEF});

  SimNet net(3);
  net.setScript(&sc);
  Frame f;
  f.proto = 4;
  f.payload = {0, 0};
  net.send(2, 0, f);
  Frame r = net.recv(0, 2);
  EXPECT_EQ(r.payload[0], 0xEF);
  EXPECT_EQ(r.payload[1], 0xBE);
}

TEST(Transport, DeterministicTranscript) {
  auto run = [](std::vector<SendRecord>& log, uint64_t& total) {
    SimNet net(3);
    net.setRecording(true);
    auto work = [&](int me) {
      for (int w = 0; w < 3; ++w) {
        Frame f;
        f.proto = uint16_t(me + 1);
        f.instance = uint32_t(w);
        f.payload = {uint8_t(me), uint8_t(w)};
        net.send(me, (me + 1) % 3, f);
        net.recv(me, (me + 2) % 3);
        net.roundBarrier(me);
      }
    };
    std::thread t1(work, 1), t2(work, 2);
    work(0);
    t1.join();
    t2.join();
    log = net.sendLog();
    total = net.totalBytes();
  };
  std::vector<SendRecord> la, lb;
  uint64_t ta = 0, tb = 0;
  run(la, ta);
  run(lb, tb);
  EXPECT_EQ(ta, tb);
  ASSERT_EQ(la.size(), lb.size());
  // per-sender subsequences are deterministic
  for (int p = 0; p < 3; ++p) {
    std::vector<std::pair<uint32_t, std::vector<uint8_t>>> a, b;
    for (auto& r : la)
      if (r.from == p) a.push_back({r.ordinal, r.payload});
    for (auto& r : lb)
      if (r.from == p) b.push_back({r.ordinal, r.payload});
    EXPECT_EQ(a, b);
  }
}

TEST(Transport, ExternalEndpointBypassesBarrier) {
  SimNet net(3, 1);  // one user endpoint, id 3
  EXPECT_EQ(net.endpoints(), 4);
  Frame f;
  f.proto = 9;
  f.payload = {42};
  net.send(3, 0, f);
  EXPECT_EQ(net.recv(0, 3).payload[0], 42u);
  net.send(0, 3, f);
  EXPECT_EQ(net.recv(3, 0).payload[0], 42u);
  EXPECT_THROW(net.roundBarrier(3), std::invalid_argument);
  EXPECT_THROW(net.broadcast3(3, f), std::invalid_argument);
}

TEST(Transport, DecisionHookRecordsAndScripts) {
  AdversaryScript sc;
  sc.corrupt = 1;
  sc.decisions[{5, 2, 0}] = Deviate::kFalseAccuse;

  SimNet net(3);
  net.setScript(&sc);
  net.setRecording(true);
  EXPECT_EQ(net.decide(0, {5, 2, 0}), Deviate::kNone);  // honest party: no deviation
  EXPECT_EQ(net.decide(1, {5, 2, 0}), Deviate::kFalseAccuse);
  EXPECT_EQ(net.decide(1, {5, 3, 0}), Deviate::kNone);  // different site
  EXPECT_EQ(net.decisionLog().size(), 3u);
  EXPECT_EQ(net.decisionLog()[1].party, 1);
}

TEST(Transport, TallyBucketsAndAmortization) {
  Tally t;
  for (int i = 0; i < 1024; ++i) t.addBits(proto::kMult3, Phase::kOnline, Bucket::kData, 192);
  t.addBits(proto::kJmpCtl, Phase::kOnline, Bucket::kVerify, 256 * 3);
  t.addInstances(proto::kMult3, 1024);
  t.addRounds(proto::kMult3, Phase::kOnline, 1);
  t.addOnceRounds(proto::kMult3, Phase::kOnline, 4);

  EXPECT_DOUBLE_EQ(t.amortizedData(proto::kMult3, Phase::kOnline), 192.0);
  EXPECT_EQ(t.row(proto::kMult3).dataBits[int(Phase::kOnline)], 192u * 1024);
  EXPECT_EQ(t.row(proto::kMult3).verifyBits[int(Phase::kOnline)], 0u);
  EXPECT_EQ(t.row(proto::kJmpCtl).verifyBits[int(Phase::kOnline)], 768u);
  EXPECT_EQ(t.row(proto::kMult3).rounds[int(Phase::kOnline)], 1u);
  EXPECT_EQ(t.row(proto::kMult3).onceRounds[int(Phase::kOnline)], 4u);
  EXPECT_EQ(t.row(999).instances, 0u);
  EXPECT_DOUBLE_EQ(t.amortizedData(999, Phase::kPre), 0.0);
  t.clear();
  EXPECT_EQ(t.row(proto::kMult3).dataBits[1], 0u);
}
