#include "rmpc/core3.hpp"

#include <gtest/gtest.h>

#include <array>
#include <map>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

using namespace rmpc;

namespace {

template <typename F>
std::array<std::string, 3> runEngines(SimNet& net, Tally& tally, uint64_t seed, F body) {
  auto ks = KeyStore::setup3(seed);
  IdealMulPre ideal(net, tally, ks[0].common());
  std::array<std::string, 3> errs;
  std::vector<std::thread> ts;
  for (int p = 0; p < 3; ++p)
    ts.emplace_back([&, p] {
      try {
        Engine3 eng(p, net, tally, ks[p], ideal);
        body(p, eng);
      } catch (const std::exception& e) {
        errs[p] = e.what();
      }
    });
  for (auto& t : ts) t.join();
  return errs;
}

void expectClean(const std::array<std::string, 3>& errs) {
  for (int p = 0; p < 3; ++p) EXPECT_EQ(errs[p], "") << "party " << p;
}

RingVec testValues(int width, size_t extra, uint64_t seed) {
  RingVec vs = {Ring::zero(width), Ring(1, width), Ring(Ring::maskFor(width), width),
                Ring(1ull << (width - 1), width)};
  std::mt19937_64 rng(seed);
  for (size_t i = 0; i < extra; ++i) vs.push_back(Ring(rng(), width));
  return vs;
}

ShareView3 viewOf(const std::array<ShrVec, 3>& got, size_t i) {
  return ShareView3{{got[0][i], got[1][i], got[2][i]}};
}

struct CircuitRun {
  std::array<Run3Result, 3> res;
  std::array<std::string, 3> errs;
};

CircuitRun runCircuitParties(SimNet& net, Tally& tally, uint64_t seed, const Circuit& ckt,
                             const std::array<std::map<int, Ring>, 3>& inputs) {
  auto ks = KeyStore::setup3(seed);
  IdealMulPre ideal(net, tally, ks[0].common());
  CircuitRun out;
  std::vector<std::thread> ts;
  for (int p = 0; p < 3; ++p)
    ts.emplace_back([&, p] {
      try {
        out.res[p] = runCircuit3(p, net, tally, ks[p], ideal, ckt, inputs[p]);
      } catch (const std::exception& e) {
        out.errs[p] = e.what();
      }
    });
  for (auto& t : ts) t.join();
  return out;
}

}  // namespace

TEST(Core3, SharingAllDealersReconstruct) {
  for (int width : {16, 64}) {
    for (int dealer = 0; dealer < 3; ++dealer) {
      RingVec vs = testValues(width, 4, 100 + dealer);
      SimNet net(3);
      Tally tally;
      std::array<ShrVec, 3> got;
      auto errs = runEngines(net, tally, 7, [&](int p, Engine3& eng) {
        ShrVec xs = eng.shPre(dealer, width, vs.size());
        for (const Shr& x : xs) EXPECT_FALSE(x.isOnline());
        eng.shOnline(dealer, xs, p == dealer ? vs : RingVec{});
        ASSERT_TRUE(eng.verify().delivered());
        got[p] = xs;
      });
      expectClean(errs);
      for (size_t i = 0; i < vs.size(); ++i)
        EXPECT_EQ(viewOf(got, i).reconstruct().v, vs[i].v)
            << "dealer " << dealer << " width " << width << " value " << i;
    }
  }
}

TEST(Core3, JointSharingPairsReconstruct) {
  for (JointPair pair : {JointPair::P1P2, JointPair::P1P0, JointPair::P2P0}) {
    const int width = 64;
    RingVec vs = testValues(width, 4, 200 + int(pair));
    SimNet net(3);
    Tally tally;
    std::array<ShrVec, 3> got;
    auto errs = runEngines(net, tally, 11, [&](int p, Engine3& eng) {
      ShrVec xs = eng.jshPre(pair, width, vs.size());
      eng.jshOnline(pair, xs, vs);
      ASSERT_TRUE(eng.verify().delivered());
      got[p] = xs;
    });
    expectClean(errs);
    for (size_t i = 0; i < vs.size(); ++i)
      EXPECT_EQ(viewOf(got, i).reconstruct().v, vs[i].v) << "pair " << int(pair);
  }
}

TEST(Core3, JointConstShareColumns) {
  for (JointPair pair : {JointPair::P1P2, JointPair::P1P0, JointPair::P2P0}) {
    for (int width : {1, 64}) {
      RingVec vs = testValues(width, 2, 300 + int(pair));
      SimNet net(3);
      Tally tally;
      std::array<ShrVec, 3> got;
      auto errs = runEngines(net, tally, 13, [&](int p, Engine3& eng) {
        int third = pair == JointPair::P1P2 ? 0 : (pair == JointPair::P1P0 ? 2 : 1);
        RingVec mine = p == third ? RingVec(vs.size(), Ring::zero(width)) : vs;
        got[p] = eng.jshConst(pair, mine);
      });
      expectClean(errs);
      for (size_t i = 0; i < vs.size(); ++i)
        EXPECT_EQ(viewOf(got, i).reconstruct().v, vs[i].v);
    }
  }
}

TEST(Core3, MultCorrectAndTripleConsistent) {
  const int width = 64;
  RingVec vx = testValues(width, 8, 41), vy = testValues(width, 8, 42);
  size_t n = vx.size();
  SimNet net(3);
  Tally tally;
  std::array<ShrVec, 3> gx, gy, gz;
  std::array<std::vector<MulPre3>, 3> gpre;
  auto errs = runEngines(net, tally, 17, [&](int p, Engine3& eng) {
    ShrVec xs = eng.shPre(0, width, n);
    eng.shOnline(0, xs, p == 0 ? vx : RingVec{});
    ShrVec ys = eng.shPre(1, width, n);
    eng.shOnline(1, ys, p == 1 ? vy : RingVec{});
    std::vector<MulPre3> pre = eng.multPre(xs, ys);
    ShrVec zs = eng.multOnline(xs, ys, pre);
    eng.flushDeferred();
    ASSERT_TRUE(eng.verify().delivered());
    gx[p] = xs;
    gy[p] = ys;
    gz[p] = zs;
    gpre[p] = pre;
  });
  expectClean(errs);
  for (size_t i = 0; i < n; ++i) {
    EXPECT_EQ(viewOf(gz, i).reconstruct().v, (vx[i] * vy[i]).v) << "product " << i;

    // the implied triple (d, e, f): d*e must equal gamma_x*gamma_y + psi + chi
    Ring d = gx[0][i].a1 + gx[0][i].a2 + gx[1][i].g;
    Ring e = gy[0][i].a1 + gy[0][i].a2 + gy[1][i].g;
    Ring chi = gpre[0][i].chi1 + gpre[0][i].chi2;
    EXPECT_EQ((d * e).v, (gx[1][i].g * gy[1][i].g + gpre[1][i].psi + chi).v);
    // replicated preprocessing slots agree across their holders
    EXPECT_EQ(gpre[0][i].chi1.v, gpre[1][i].chi1.v);
    EXPECT_EQ(gpre[0][i].chi2.v, gpre[2][i].chi2.v);
    EXPECT_EQ(gpre[1][i].psi.v, gpre[2][i].psi.v);
  }
}

TEST(Core3, MultChainDeep) {
  const int width = 64;
  SimNet net(3);
  Tally tally;
  Ring vx(3, width), vy(5, width);
  std::array<ShrVec, 3> acc;
  auto errs = runEngines(net, tally, 19, [&](int p, Engine3& eng) {
    ShrVec xs = eng.shPre(0, width, 1);
    eng.shOnline(0, xs, p == 0 ? RingVec{vx} : RingVec{});
    ShrVec ys = eng.shPre(1, width, 1);
    eng.shOnline(1, ys, p == 1 ? RingVec{vy} : RingVec{});
    ShrVec cur = xs;
    for (int step = 0; step < 8; ++step) {
      auto pre = eng.multPre(cur, ys);
      cur = eng.multOnline(cur, ys, pre);
      cur[0] = cur[0] + xs[0];  // interleave a linear op
    }
    eng.flushDeferred();
    ASSERT_TRUE(eng.verify().delivered());
    acc[p] = cur;
  });
  expectClean(errs);
  Ring expect = vx;
  for (int step = 0; step < 8; ++step) expect = expect * vy + vx;
  EXPECT_EQ(viewOf(acc, 0).reconstruct().v, expect.v);
}

TEST(Core3, MulPreScriptedSharesStayCorrect) {
  const int width = 64;
  RingVec vx = testValues(width, 2, 51), vy = testValues(width, 2, 52);
  size_t n = vx.size();
  for (int corrupt = 0; corrupt < 3; ++corrupt) {
    AdversaryScript sc;
    sc.corrupt = corrupt;
    for (uint32_t k = 0; k < n; ++k)
      sc.decisions[{kSiteMulPreShare, 0, k}] = Deviate::kWrongBit;
    SimNet net(3);
    net.setScript(&sc);
    Tally tally;
    std::array<ShrVec, 3> gz;
    auto errs = runEngines(net, tally, 23, [&](int p, Engine3& eng) {
      ShrVec xs = eng.shPre(0, width, n);
      eng.shOnline(0, xs, p == 0 ? vx : RingVec{});
      ShrVec ys = eng.shPre(1, width, n);
      eng.shOnline(1, ys, p == 1 ? vy : RingVec{});
      auto pre = eng.multPre(xs, ys);
      ShrVec zs = eng.multOnline(xs, ys, pre);
      eng.flushDeferred();
      ASSERT_TRUE(eng.verify().delivered());
      gz[p] = zs;
    });
    expectClean(errs);
    for (size_t i = 0; i < n; ++i)
      EXPECT_EQ(viewOf(gz, i).reconstruct().v, (vx[i] * vy[i]).v) << "corrupt " << corrupt;
  }
}

TEST(Core3, ReconstructionDeliversEverywhere) {
  const int width = 64;
  RingVec vs = testValues(width, 6, 61);
  size_t n = vs.size();
  SimNet net(3);
  Tally tally;
  std::array<RingVec, 3> recd;
  auto errs = runEngines(net, tally, 29, [&](int p, Engine3& eng) {
    ShrVec xs = eng.shPre(1, width, n);
    eng.shOnline(1, xs, p == 1 ? vs : RingVec{});
    auto rp = eng.recPre(xs);
    ASSERT_TRUE(eng.verify().delivered());
    recd[p] = eng.recOnline(xs, rp);
  });
  expectClean(errs);
  for (int p = 0; p < 3; ++p)
    for (size_t i = 0; i < n; ++i) EXPECT_EQ(recd[p][i].v, vs[i].v) << "party " << p;
}

TEST(Core3, ReconstructionSurvivesBadOpening) {
  const int width = 64;
  RingVec vs = testValues(width, 2, 62);
  size_t n = vs.size();

  auto body = [&](std::array<RingVec, 3>& recd) {
    return [&, n](int p, Engine3& eng) {
      ShrVec xs = eng.shPre(1, width, n);
      eng.shOnline(1, xs, p == 1 ? vs : RingVec{});
      auto rp = eng.recPre(xs);
      ASSERT_TRUE(eng.verify().delivered());
      recd[p] = eng.recOnline(xs, rp);
    };
  };

  // find each party's opening frames in an honest recording, then tamper them
  SimNet rec(3);
  rec.setRecording(true);
  Tally rt;
  std::array<RingVec, 3> honest;
  expectClean(runEngines(rec, rt, 31, body(honest)));

  // openings carry the second rec instance; the first is the commitment pass
  int cases = 0;
  for (const SendRecord& sr : rec.sendLog()) {
    if (sr.proto != proto::kRec3 || sr.op != kOpData || sr.instance != 1) continue;
    for (Mut mut : {Mut::kTamperAdd, Mut::kDrop}) {
      AdversaryScript sc;
      sc.corrupt = sr.from;
      sc.wire.push_back({sr.ordinal, mut, 9});
      SimNet net(3);
      net.setScript(&sc);
      Tally tally;
      std::array<RingVec, 3> recd;
      expectClean(runEngines(net, tally, 31, body(recd)));
      for (int p = 0; p < 3; ++p)
        for (size_t i = 0; i < n; ++i)
          EXPECT_EQ(recd[p][i].v, vs[i].v) << "opener " << sr.from << " party " << p;
      ++cases;
    }
  }
  EXPECT_EQ(cases, 12);  // six opening frames, two mutations each
}

TEST(Core3, TallyMatchesCostModel) {
  const int width = 64;
  const size_t n = 64;
  RingVec vx = testValues(width, n - 4, 71), vy = testValues(width, n - 4, 72);
  SimNet net(3);
  Tally tally;
  std::array<RingVec, 3> recd;
  auto errs = runEngines(net, tally, 37, [&](int p, Engine3& eng) {
    for (int dealer = 0; dealer < 3; ++dealer) {
      ShrVec t = eng.shPre(dealer, width, n);
      eng.shOnline(dealer, t, p == dealer ? vx : RingVec{});
    }
    for (JointPair pair : {JointPair::P1P2, JointPair::P1P0, JointPair::P2P0}) {
      ShrVec t = eng.jshPre(pair, width, n);
      eng.jshOnline(pair, t, vx);
    }
    ShrVec xs = eng.shPre(0, width, n);
    eng.shOnline(0, xs, p == 0 ? vx : RingVec{});
    ShrVec ys = eng.shPre(1, width, n);
    eng.shOnline(1, ys, p == 1 ? vy : RingVec{});
    auto pre = eng.multPre(xs, ys);
    ShrVec zs = eng.multOnline(xs, ys, pre);
    eng.flushDeferred();
    auto rp = eng.recPre(zs);
    ASSERT_TRUE(eng.verify().delivered());
    recd[p] = eng.recOnline(zs, rp);
  });
  expectClean(errs);
  for (size_t i = 0; i < n; ++i) EXPECT_EQ(recd[0][i].v, (vx[i] * vy[i]).v);

  EXPECT_DOUBLE_EQ(tally.amortizedData(proto::kSh3, Phase::kOnline), 2.0 * width);
  EXPECT_DOUBLE_EQ(tally.amortizedData(proto::kSh3, Phase::kPre), 0.0);
  EXPECT_DOUBLE_EQ(tally.amortizedData(proto::kJsh3, Phase::kOnline), 1.0 * width);
  EXPECT_DOUBLE_EQ(tally.amortizedData(proto::kMult3, Phase::kPre), 3.0 * width);
  EXPECT_DOUBLE_EQ(tally.amortizedData(proto::kMult3, Phase::kOnline), 3.0 * width);
  EXPECT_DOUBLE_EQ(tally.amortizedData(proto::kRec3, Phase::kOnline), 6.0 * width);
  EXPECT_DOUBLE_EQ(tally.amortizedData(proto::kRec3, Phase::kPre), 0.0);

  Tally::Row mult = tally.row(proto::kMult3);
  EXPECT_EQ(mult.rounds[int(Phase::kOnline)], 1u);
  EXPECT_EQ(mult.onceRounds[int(Phase::kOnline)], 1u);
  Tally::Row sh = tally.row(proto::kSh3);
  EXPECT_EQ(sh.rounds[int(Phase::kOnline)], 10u);  // five dealings, two rounds each
  Tally::Row rc = tally.row(proto::kRec3);
  EXPECT_EQ(rc.rounds[int(Phase::kOnline)], 1u);
  EXPECT_EQ(rc.verifyBits[int(Phase::kPre)], 3u * 256 * n);
  EXPECT_EQ(rc.verifyBits[int(Phase::kOnline)], 6u * 256 * n);
}

TEST(Core3, BooleanMultTruthTable) {
  SimNet net(3);
  Tally tally;
  std::array<ShrVec, 3> gz;
  RingVec va, vb;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      va.push_back(Ring(a, 1));
      vb.push_back(Ring(b, 1));
    }
  auto errs = runEngines(net, tally, 43, [&](int p, Engine3& eng) {
    eng.pushProto(proto::kBoolMult3);
    ShrVec xs = eng.shPre(0, 1, va.size());
    eng.shOnline(0, xs, p == 0 ? va : RingVec{});
    ShrVec ys = eng.shPre(1, 1, vb.size());
    eng.shOnline(1, ys, p == 1 ? vb : RingVec{});
    auto pre = eng.multPre(xs, ys);
    ShrVec zs = eng.multOnline(xs, ys, pre);
    for (size_t i = 0; i < zs.size(); ++i) zs[i] = zs[i] + xs[i] + ys[i];  // (a AND b) XOR a XOR b
    eng.flushDeferred();
    eng.popProto();
    ASSERT_TRUE(eng.verify().delivered());
    gz[p] = zs;
  });
  expectClean(errs);
  for (size_t i = 0; i < va.size(); ++i)
    EXPECT_EQ(viewOf(gz, i).reconstruct().v, uint64_t((va[i].v & vb[i].v) ^ va[i].v ^ vb[i].v));
  // everything billed to the boolean tag, three bits per AND online
  EXPECT_EQ(tally.row(proto::kMult3).dataBits[int(Phase::kOnline)], 0u);
  EXPECT_EQ(tally.row(proto::kBoolMult3).dataBits[int(Phase::kOnline)],
            3 * va.size() + 2 * 2 * va.size());  // AND traffic plus the two sharings
}

TEST(Core3, CircuitParseRejectsMalformed) {
  EXPECT_THROW(Circuit::parse(R"({"width":64,"gates":[{"op":"lin","out":0,"in":[3],"coef":[1]}]})"),
               std::runtime_error);
  EXPECT_THROW(Circuit::parse(R"({"width":0,"gates":[]})"), std::runtime_error);
  EXPECT_THROW(
      Circuit::parse(
          R"({"width":8,"gates":[{"op":"in","out":0,"party":1},{"op":"in","out":0,"party":2}]})"),
      std::runtime_error);
  EXPECT_THROW(
      Circuit::parse(R"({"width":8,"gates":[{"op":"in","out":0,"party":7}]})"),
      std::runtime_error);
  EXPECT_THROW(
      Circuit::parse(R"({"width":8,"gates":[{"op":"frob","out":0}]})"),
      std::runtime_error);
}

namespace {

const char* kDemoCircuit = R"({
  "width": 16,
  "gates": [
    {"op": "in",  "out": 0, "party": 0},
    {"op": "in",  "out": 1, "party": 1},
    {"op": "in",  "out": 2, "party": 2},
    {"op": "lin", "out": 3, "in": [0, 1], "coef": [2, "-1"], "const": "7"},
    {"op": "mul", "out": 4, "in": [3, 2]},
    {"op": "mul", "out": 5, "in": [4, 4]},
    {"op": "lin", "out": 6, "in": [5, 0], "coef": [1, 3], "const": 0},
    {"op": "out", "in": [6]},
    {"op": "out", "in": [4]}
  ]
})";

std::array<std::map<int, Ring>, 3> demoInputs(int width) {
  std::array<std::map<int, Ring>, 3> in;
  in[0][0] = Ring(5, width);
  in[1][1] = Ring(9, width);
  in[2][2] = Ring(3, width);
  return in;
}

std::map<int, Ring> mergedInputs(const std::array<std::map<int, Ring>, 3>& in) {
  std::map<int, Ring> all;
  for (const auto& m : in) all.insert(m.begin(), m.end());
  return all;
}

}  // namespace

TEST(Core3, CircuitHonestMatchesClear) {
  Circuit ckt = Circuit::parse(kDemoCircuit);
  auto inputs = demoInputs(ckt.width);
  RingVec expect = ckt.evalClear(mergedInputs(inputs));
  ASSERT_EQ(expect.size(), 2u);

  SimNet net(3);
  Tally tally;
  CircuitRun run = runCircuitParties(net, tally, 47, ckt, inputs);
  expectClean(run.errs);
  for (int p = 0; p < 3; ++p) {
    EXPECT_EQ(run.res[p].ttp, -1);
    ASSERT_EQ(run.res[p].outputs.size(), expect.size());
    for (size_t i = 0; i < expect.size(); ++i)
      EXPECT_EQ(run.res[p].outputs[i].v, expect[i].v) << "party " << p << " output " << i;
  }
}

TEST(Core3, CircuitDeliversUnderEveryWireMutation) {
  Circuit ckt = Circuit::parse(kDemoCircuit);
  auto inputs = demoInputs(ckt.width);
  RingVec expect = ckt.evalClear(mergedInputs(inputs));

  SimNet rec(3);
  rec.setRecording(true);
  Tally rt;
  CircuitRun honest = runCircuitParties(rec, rt, 53, ckt, inputs);
  expectClean(honest.errs);

  std::map<int, uint32_t> sends;
  for (const SendRecord& sr : rec.sendLog()) sends[sr.from] = std::max(sends[sr.from], sr.ordinal + 1);

  int runs = 0, fallbacks = 0;
  for (const auto& [corrupt, count] : sends) {
    for (uint32_t ord = 0; ord < count; ++ord) {
      for (Mut mut : {Mut::kTamperAdd, Mut::kDrop}) {
        AdversaryScript sc;
        sc.corrupt = corrupt;
        sc.wire.push_back({ord, mut, 0x2D});
        SimNet net(3);
        net.setScript(&sc);
        Tally tally;
        CircuitRun run = runCircuitParties(net, tally, 53, ckt, inputs);
        expectClean(run.errs);
        int ttp = run.res[0].ttp;
        for (int p = 0; p < 3; ++p) {
          EXPECT_EQ(run.res[p].ttp, ttp) << "split trusted-party view";
          EXPECT_NE(run.res[p].ttp, corrupt);
          ASSERT_EQ(run.res[p].outputs.size(), expect.size());
          for (size_t i = 0; i < expect.size(); ++i)
            EXPECT_EQ(run.res[p].outputs[i].v, expect[i].v)
                << "corrupt " << corrupt << " ordinal " << ord << " mut " << int(mut)
                << " party " << p;
        }
        fallbacks += ttp >= 0;
        ++runs;
      }
    }
  }
  EXPECT_GT(runs, 100);
  EXPECT_GT(fallbacks, 0);
}

TEST(Core3, CircuitDeliversUnderScriptedDecisions) {
  Circuit ckt = Circuit::parse(kDemoCircuit);
  auto inputs = demoInputs(ckt.width);
  RingVec expect = ckt.evalClear(mergedInputs(inputs));

  SimNet rec(3);
  rec.setRecording(true);
  Tally rt;
  CircuitRun honest = runCircuitParties(rec, rt, 59, ckt, inputs);
  expectClean(honest.errs);

  std::set<std::pair<int, DecisionKey>> seen;
  for (const DecisionRecord& dr : rec.decisionLog()) seen.insert({dr.party, dr.key});
  int runs = 0;
  for (const auto& [party, key] : seen) {
    for (Deviate dev : {Deviate::kWrongBit, Deviate::kFalseAccuse}) {
      AdversaryScript sc;
      sc.corrupt = party;
      sc.decisions[key] = dev;
      SimNet net(3);
      net.setScript(&sc);
      Tally tally;
      CircuitRun run = runCircuitParties(net, tally, 59, ckt, inputs);
      expectClean(run.errs);
      for (int p = 0; p < 3; ++p) {
        EXPECT_EQ(run.res[p].ttp, run.res[0].ttp);
        EXPECT_NE(run.res[p].ttp, party);
        ASSERT_EQ(run.res[p].outputs.size(), expect.size());
        for (size_t i = 0; i < expect.size(); ++i)
          EXPECT_EQ(run.res[p].outputs[i].v, expect[i].v);
      }
      ++runs;
    }
  }
  EXPECT_GT(runs, 0);
}

TEST(Core3, CircuitLayersBatchTupleCalls) {
  // two independent products share one backend call; a chained product forces a second
  const char* text = R"({
    "width": 32,
    "gates": [
      {"op": "in",  "out": 0, "party": 0},
      {"op": "in",  "out": 1, "party": 1},
      {"op": "mul", "out": 2, "in": [0, 1]},
      {"op": "mul", "out": 3, "in": [1, 1]},
      {"op": "mul", "out": 4, "in": [2, 3]},
      {"op": "out", "in": [4]}
    ]
  })";
  Circuit ckt = Circuit::parse(text);
  std::array<std::map<int, Ring>, 3> inputs;
  inputs[0][0] = Ring(12, 32);
  inputs[1][1] = Ring(10, 32);
  RingVec expect = ckt.evalClear(mergedInputs(inputs));

  SimNet net(3);
  Tally tally;
  CircuitRun run = runCircuitParties(net, tally, 61, ckt, inputs);
  expectClean(run.errs);
  for (int p = 0; p < 3; ++p) EXPECT_EQ(run.res[p].outputs[0].v, expect[0].v);
  // two layers, one preprocessing wave each
  EXPECT_EQ(tally.row(proto::kMult3).rounds[int(Phase::kPre)], 2u);
}

