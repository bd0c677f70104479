#include "rmpc/ppml3.hpp"

#include <algorithm>
#include <cassert>
#include <map>
#include <mutex>
#include <stdexcept>

#include "rmpc/prf.hpp"

namespace rmpc {

namespace {

// Composite ops tag their traffic once at the outermost level; nested calls
// keep billing to the tag already on the stack.
struct ProtoScope {
  Engine3& eng;
  bool pushed;
  ProtoScope(Engine3& e, uint16_t tag) : eng(e), pushed(!e.inProto()) {
    if (pushed) eng.pushProto(tag);
  }
  ~ProtoScope() {
    if (pushed) eng.popProto();
  }
};

struct PhaseScope {
  Engine3& eng;
  explicit PhaseScope(Engine3& e, Phase ph) : eng(e) { eng.pushPhase(ph); }
  ~PhaseScope() { eng.popPhase(); }
};

void bumpInstances(Engine3& eng, const ProtoScope& scope, uint16_t tag, size_t n) {
  if (scope.pushed && eng.me() == 0) eng.tally().addInstances(tag, n);
}

RingVec zeroRings(int width, size_t count) { return RingVec(count, Ring::zero(width)); }

RingVec pairRings(Engine3& eng, const std::string& label, SampleId id, int width, size_t count) {
  if (!eng.keys().has(label)) return zeroRings(width, count);
  return eng.keys().key(label).rings(id, width, count);
}

uint64_t pow2(int e) { return e >= 64 ? 0 : uint64_t(1) << e; }

Shr publicConstShr(Ring v) {
  Shr s(v.w);
  s.b = v;
  s.bg = v;
  s.markOnline();
  return s;
}

void requireOnline(const ShrVec& xs, const char* who) {
  for (const Shr& x : xs)
    if (!x.isOnline()) throw std::logic_error(std::string(who) + ": operand not online");
}

PpaCircuit buildMsbOfSum(int w) {
  if (w < 2) throw std::invalid_argument("msbOfSum: width must be at least 2");
  PpaCircuit c;
  c.width = w;
  int next = 2 * w;
  std::vector<int> s(w), g(w);
  for (int i = 0; i < w; ++i) {
    s[i] = next++;
    c.gates.push_back({s[i], {}, {i, w + i}, 0});
  }
  // the top generate gate feeds nothing; it stays so the layer is one
  // rectangular batch of exactly `width` products
  for (int i = 0; i < w; ++i) {
    g[i] = next++;
    c.gates.push_back({g[i], {{i, w + i}}, {}, 1});
  }
  int carry = g[0];
  for (int i = 1; i <= w - 2; ++i) {
    int out = next++;
    c.gates.push_back({out, {{s[i], carry}}, {g[i]}, i + 1});
    carry = out;
  }
  int out = next++;
  c.gates.push_back({out, {}, {s[w - 1], carry}, 0});
  c.outWire = out;
  c.wires = next;
  c.layers = w - 1;
  return c;
}

// Shared evaluation of a gate list over boolean shares, batching every run of
// same-shaped product gates into one dot-product call.
std::vector<Shr> evalPpaShared(Engine3& eng, const PpaCircuit& ckt,
                               std::vector<std::vector<Shr>>& wires) {
  size_t n = wires.size();
  const auto& gates = ckt.gates;
  size_t gi = 0;
  while (gi < gates.size()) {
    if (gates[gi].prods.empty()) {
      const PpaGate& gt = gates[gi];
      assert(!gt.xors.empty());
      for (size_t i = 0; i < n; ++i) {
        Shr v = wires[i][gt.xors[0]];
        for (size_t t = 1; t < gt.xors.size(); ++t) v = v + wires[i][gt.xors[t]];
        wires[i][gt.out] = v;
      }
      ++gi;
      continue;
    }
    size_t end = gi;
    size_t pp = gates[gi].prods.size();
    while (end < gates.size() && !gates[end].prods.empty() &&
           gates[end].layer == gates[gi].layer && gates[end].prods.size() == pp)
      ++end;
    size_t run = end - gi;
    ShrVec ds, es;
    ds.reserve(n * run * pp);
    es.reserve(n * run * pp);
    for (size_t i = 0; i < n; ++i)
      for (size_t t = gi; t < end; ++t)
        for (auto [p, q] : gates[t].prods) {
          ds.push_back(wires[i][p]);
          es.push_back(wires[i][q]);
        }
    auto pre = eng.dotpPre(ds, es, pp);
    ShrVec prod = eng.dotpOnline(ds, es, pre, pp);
    for (size_t i = 0; i < n; ++i)
      for (size_t t = gi; t < end; ++t) {
        Shr v = prod[i * run + (t - gi)];
        for (int xw : gates[t].xors) v = v + wires[i][xw];
        wires[i][gates[t].out] = v;
      }
    gi = end;
  }
  std::vector<Shr> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) out.push_back(wires[i][ckt.outWire]);
  return out;
}

}  // namespace

const PpaCircuit& PpaCircuit::msbOfSum(int width) {
  static std::mutex m;
  static std::map<int, PpaCircuit> cache;
  std::lock_guard lk(m);
  auto it = cache.find(width);
  if (it == cache.end()) it = cache.emplace(width, buildMsbOfSum(width)).first;
  return it->second;
}

size_t PpaCircuit::andCount() const {
  size_t n = 0;
  for (const auto& g : gates) n += g.prods.empty() ? 0 : 1;
  return n;
}

bool PpaCircuit::evalClear(uint64_t x, uint64_t y) const {
  std::vector<uint8_t> v(wires, 0);
  for (int i = 0; i < width; ++i) {
    v[i] = uint8_t((x >> i) & 1);
    v[width + i] = uint8_t((y >> i) & 1);
  }
  for (const auto& g : gates) {
    uint8_t b = 0;
    for (auto [p, q] : g.prods) b ^= uint8_t(v[p] & v[q]);
    for (int xw : g.xors) b ^= v[xw];
    v[g.out] = b;
  }
  return v[outWire] != 0;
}

ShrVec bitExt3(Engine3& eng, const ShrVec& vs) {
  size_t n = vs.size();
  if (n == 0) return {};
  int w = vs[0].width();
  for (const Shr& v : vs)
    if (v.width() != w) throw std::logic_error("bitExt3: mixed widths");
  requireOnline(vs, "bitExt3");
  const PpaCircuit& ckt = PpaCircuit::msbOfSum(w);

  ProtoScope scope(eng, proto::kBitExt3);
  uint32_t inst = eng.nextInstance(proto::kBitExt3);
  RingVec r = eng.keys().common().rings({proto::kBitExt3, inst, 1}, 1, 3 * size_t(w) * n);

  // value = beta + (-alpha1) + (-alpha2); each summand's bits shared locally
  std::vector<std::array<std::vector<Shr>, 3>> cols;
  cols.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    RingVec ri(r.begin() + 3 * w * i, r.begin() + 3 * w * (i + 1));
    cols.push_back(bitDecomposeLocal(vs[i], eng.me(), ri));
  }

  // carry-save step: three summands to two, carries via one grouped product
  ShrVec ds, es;
  ds.reserve(3 * n * w);
  es.reserve(3 * n * w);
  for (size_t i = 0; i < n; ++i)
    for (int j = 0; j < w; ++j) {
      const Shr &a = cols[i][0][j], &b = cols[i][1][j], &c = cols[i][2][j];
      ds.push_back(a);
      ds.push_back(a);
      ds.push_back(b);
      es.push_back(b);
      es.push_back(c);
      es.push_back(c);
    }
  auto cpre = eng.dotpPre(ds, es, 3);
  ShrVec carry = eng.dotpOnline(ds, es, cpre, 3);

  std::vector<std::vector<Shr>> wires(n);
  Shr zeroBit = publicConstShr(Ring::zero(1));
  for (size_t i = 0; i < n; ++i) {
    wires[i].assign(ckt.wires, Shr(1));
    for (int j = 0; j < w; ++j) {
      wires[i][j] = j == 0 ? zeroBit : carry[i * w + j - 1];
      wires[i][w + j] = cols[i][0][j] + cols[i][1][j] + cols[i][2][j];
    }
  }
  ShrVec out = evalPpaShared(eng, ckt, wires);
  bumpInstances(eng, scope, proto::kBitExt3, n);
  return out;
}

ShrVec cmp3(Engine3& eng, const ShrVec& xs, const ShrVec& ys) {
  if (xs.size() != ys.size()) throw std::logic_error("cmp3: size mismatch");
  ShrVec diff;
  diff.reserve(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) diff.push_back(xs[i] - ys[i]);
  return bitExt3(eng, diff);
}

ShrVec bit2A3(Engine3& eng, const ShrVec& bs, int width) {
  size_t n = bs.size();
  if (n == 0) return {};
  for (const Shr& b : bs)
    if (b.width() != 1) throw std::logic_error("bit2A3: input not boolean");
  requireOnline(bs, "bit2A3");
  int w = width;
  int me = eng.me();

  ProtoScope scope(eng, proto::kBit2A3);
  uint32_t inst = eng.nextInstance(proto::kBit2A3);

  // arithmetic lifts of the two mask-bit halves, known since preprocessing
  RingVec u1v(n, Ring::zero(w)), u2v(n, Ring::zero(w));
  for (size_t i = 0; i < n; ++i) {
    if (holdsSlot(me, '1')) u1v[i] = Ring(bs[i].a1.v & 1, w);
    if (holdsSlot(me, '2')) u2v[i] = Ring(bs[i].a2.v & 1, w);
  }
  ShrVec u1 = eng.jshConst(JointPair::P1P0, u1v);
  ShrVec u2 = eng.jshConst(JointPair::P2P0, u2v);

  ShrVec xsPre = eng.jshPre(JointPair::P1P2, w, n);

  RingVec az1u = pairRings(eng, "k01", {proto::kBit2A3, inst, 1}, w, n);
  RingVec az2u = pairRings(eng, "k02", {proto::kBit2A3, inst, 2}, w, n);
  RingVec gzu = pairRings(eng, "k12", {proto::kBit2A3, inst, 3}, w, n);
  RingVec az1v = pairRings(eng, "k01", {proto::kBit2A3, inst, 4}, w, n);
  RingVec az2v = pairRings(eng, "k02", {proto::kBit2A3, inst, 5}, w, n);
  RingVec gzv = pairRings(eng, "k12", {proto::kBit2A3, inst, 6}, w, n);

  // masked lift of the whole mask bit, assembled before its product exists:
  // the product's alpha and gamma legs are exactly the samples above
  ShrVec aaPre(n, Shr(w));
  for (size_t i = 0; i < n; ++i) {
    aaPre[i].a1 = u1[i].a1 + u2[i].a1 - az1u[i].scaled(2);
    aaPre[i].a2 = u1[i].a2 + u2[i].a2 - az2u[i].scaled(2);
    aaPre[i].g = u1[i].g + u2[i].g - gzu[i].scaled(2);
  }

  // both multiplications ride one dealer call
  std::vector<Sgr> d, e;
  d.reserve(2 * n);
  e.reserve(2 * n);
  for (size_t i = 0; i < n; ++i) {
    d.push_back(buildDE(u1[i], me));
    e.push_back(buildDE(u2[i], me));
  }
  for (size_t i = 0; i < n; ++i) {
    d.push_back(buildDE(xsPre[i], me));
    e.push_back(buildDE(aaPre[i], me));
  }
  MulPreResult res = eng.mulRun(eng.billedProto(proto::kBit2A3), d, e, 1);

  std::vector<MulPre3> preU(n), preV(n);
  for (size_t i = 0; i < n; ++i) {
    preU[i] = mulPreFromLegs(me, res.f[i], az1u[i], az2u[i], gzu[i], u1[i].g * u2[i].g);
    preV[i] =
        mulPreFromLegs(me, res.f[n + i], az1v[i], az2v[i], gzv[i], xsPre[i].g * aaPre[i].g);
  }

  ShrVec us;
  {
    PhaseScope ps(eng, Phase::kPre);
    us = eng.dotpOnline(u1, u2, preU, 1);
  }
  ShrVec aa(n, Shr(w));
  for (size_t i = 0; i < n; ++i) aa[i] = u1[i] + u2[i] - us[i].scaled(2);

  RingVec lb(n, Ring::zero(w));
  if (me != 0)
    for (size_t i = 0; i < n; ++i) lb[i] = Ring(bs[i].b.v & 1, w);
  ShrVec xsL = xsPre;
  eng.jshOnlineDeferred(xsL, me == 0 ? RingVec{} : lb);

  ShrVec vv = eng.dotpOnline(xsL, aa, preV, 1);
  ShrVec out(n, Shr(w));
  for (size_t i = 0; i < n; ++i) out[i] = xsL[i] + aa[i] - vv[i].scaled(2);
  bumpInstances(eng, scope, proto::kBit2A3, n);
  return out;
}

ShrVec bitInj3(Engine3& eng, const ShrVec& bs, const ShrVec& vs) {
  size_t n = bs.size();
  if (vs.size() != n) throw std::logic_error("bitInj3: size mismatch");
  if (n == 0) return {};
  requireOnline(vs, "bitInj3");
  int w = vs[0].width();

  ProtoScope scope(eng, proto::kBitInj3);
  ShrVec bA = bit2A3(eng, bs, w);
  auto pre = eng.multPre(bA, vs);
  ShrVec out = eng.multOnline(bA, vs, pre);
  bumpInstances(eng, scope, proto::kBitInj3, n);
  return out;
}

ShrVec dotp3(Engine3& eng, const ShrVec& xs, const ShrVec& ys, size_t group) {
  ProtoScope scope(eng, proto::kDotp3);
  auto pre = eng.dotpPre(xs, ys, group);
  ShrVec out = eng.dotpOnline(xs, ys, pre, group);
  bumpInstances(eng, scope, proto::kDotp3, out.size());
  return out;
}

Shr dotp3(Engine3& eng, const ShrVec& xs, const ShrVec& ys) {
  if (xs.empty()) throw std::logic_error("dotp3: empty input");
  return dotp3(eng, xs, ys, xs.size())[0];
}

std::vector<TruncPair> truncPair3(Engine3& eng, int width, int fracBits, size_t count) {
  if (fracBits < 0 || fracBits >= width) throw std::invalid_argument("truncPair3: bad shift");
  if (count == 0) return {};
  int w = width;
  int d = fracBits;
  int me = eng.me();

  ProtoScope scope(eng, proto::kTrunc3);
  PhaseScope ph(eng, Phase::kPre);
  uint32_t inst = eng.nextInstance(proto::kTrunc3);

  // per-pair bit vectors; the top bit is cleared on both, keeping r below half
  // the ring so its logical and arithmetic shifts agree
  auto drawBits = [&](const char* label, uint32_t sub) {
    RingVec v = pairRings(eng, label, {proto::kTrunc3, inst, sub}, 1, count * size_t(w));
    for (size_t t = 0; t < count; ++t) v[t * w + (w - 1)] = Ring::zero(1);
    return v;
  };
  RingVec r1 = drawBits("k01", 1);
  RingVec r2 = drawBits("k02", 2);

  auto lift = [&](const RingVec& bits) {
    RingVec out(bits.size(), Ring::zero(w));
    for (size_t i = 0; i < bits.size(); ++i) out[i] = Ring(bits[i].v & 1, w);
    return out;
  };
  ShrVec s1 = eng.jshConst(JointPair::P1P0, lift(r1));
  ShrVec s2 = eng.jshConst(JointPair::P2P0, lift(r2));

  // cross terms: r = sum 2^i (r1_i + r2_i) - sum 2^{i+1} r1_i r2_i, and the
  // same sum started at bit d for the shifted value
  ShrVec xb, yb, xa, ya;
  xb.reserve(count * w);
  yb.reserve(count * w);
  xa.reserve(count * (w - d));
  ya.reserve(count * (w - d));
  for (size_t t = 0; t < count; ++t)
    for (int i = 0; i < w; ++i) {
      xb.push_back(s1[t * w + i].scaled(pow2(i + 1)));
      yb.push_back(s2[t * w + i]);
      if (i >= d) {
        xa.push_back(s1[t * w + i].scaled(pow2(i - d + 1)));
        ya.push_back(s2[t * w + i]);
      }
    }
  auto preB = eng.dotpPre(xb, yb, w);
  ShrVec crossB = eng.dotpOnline(xb, yb, preB, w);
  auto preA = eng.dotpPre(xa, ya, size_t(w - d));
  ShrVec crossA = eng.dotpOnline(xa, ya, preA, size_t(w - d));

  std::vector<TruncPair> out(count);
  for (size_t t = 0; t < count; ++t) {
    Shr accR = s1[t * w] + s2[t * w];
    for (int i = 1; i < w; ++i) accR = accR + (s1[t * w + i] + s2[t * w + i]).scaled(pow2(i));
    Shr rs = accR - crossB[t];

    Shr accD = s1[t * w + d] + s2[t * w + d];
    for (int i = d + 1; i < w; ++i)
      accD = accD + (s1[t * w + i] + s2[t * w + i]).scaled(pow2(i - d));
    out[t].rd = accD - crossA[t];

    Sqr2 q{Ring::zero(w), Ring::zero(w)};
    if (me == 0) {
      uint64_t rv = 0;
      for (int i = 0; i < w; ++i) rv |= ((r1[t * w + i].v ^ r2[t * w + i].v) & 1) << i;
      q.s1 = -rs.a1;
      q.s2 = Ring(rv, w) + rs.a1;
    } else if (me == 1) {
      q.s1 = -rs.a1;
    } else {
      q.s2 = rs.b - rs.a2;
    }
    out[t].r = q;
  }
  bumpInstances(eng, scope, proto::kTrunc3, count);
  return out;
}

ShrVec dotpt3(Engine3& eng, const ShrVec& xs, const ShrVec& ys, size_t group, int fracBits) {
  size_t n = xs.size();
  if (group == 0 || ys.size() != n || n % group != 0)
    throw std::logic_error("dotpt3: batch shape mismatch");
  if (n == 0) return {};
  size_t m = n / group;
  int w = xs[0].width();
  int me = eng.me();
  requireOnline(xs, "dotpt3");
  requireOnline(ys, "dotpt3");

  ProtoScope scope(eng, proto::kDotpt3);
  auto tps = truncPair3(eng, w, fracBits, m);
  auto pre = eng.dotpPre(xs, ys, group);

  uint16_t pr = eng.billedProto(proto::kDotpt3);
  uint32_t inst = eng.nextInstance(proto::kDotpt3);
  Phase ph = eng.billedPhase(Phase::kOnline);

  // open z - r toward the beta holders: the product mask never enters, the
  // truncation mask takes its place
  RingVec t1(m, Ring::zero(w)), t2(m, Ring::zero(w));
  for (size_t k = 0; k < m; ++k) {
    if (me != 2) t1[k] = pre[k].chi1 - tps[k].r.s1;
    if (me != 1) t2[k] = pre[k].chi2 - tps[k].r.s2;
    for (size_t i = k * group; i < (k + 1) * group; ++i) {
      const Shr &x = xs[i], &y = ys[i];
      if (me != 2) t1[k] = t1[k] - x.bg * y.a1 - y.bg * x.a1;
      if (me != 1) t2[k] = t2[k] - x.bg * y.a2 - y.bg * x.a2;
    }
  }
  uint16_t toP2 = eng.hub().batch(1, 0, 2, ph);
  uint16_t toP1 = eng.hub().batch(2, 0, 1, ph);
  if (me == 1) {
    eng.hub().send(toP2, pr, inst, Bucket::kData, serialize(t1), uint64_t(w) * m);
    t2 = decodeRingsOr(eng.hub().recv(toP1), w, m);
  } else if (me == 2) {
    eng.hub().send(toP1, pr, inst, Bucket::kData, serialize(t2), uint64_t(w) * m);
    t1 = decodeRingsOr(eng.hub().recv(toP2), w, m);
  } else {
    eng.hub().echo(toP2, serialize(t1));
    eng.hub().echo(toP1, serialize(t2));
  }

  RingVec tv;
  if (me != 0) {
    tv.assign(m, Ring::zero(w));
    for (size_t k = 0; k < m; ++k) {
      Ring zr = t1[k] + t2[k] + pre[k].psi;
      for (size_t i = k * group; i < (k + 1) * group; ++i) zr = zr + xs[i].b * ys[i].b;
      tv[k] = zr.arithShift(fracBits);
    }
  }
  ShrVec sk = eng.jshPre(JointPair::P1P2, w, m);
  eng.jshOnlineDeferred(sk, tv);

  ShrVec out(m, Shr(w));
  for (size_t k = 0; k < m; ++k) out[k] = sk[k] + tps[k].rd;
  if (me == 0) eng.tally().addRounds(pr, ph, 1);
  bumpInstances(eng, scope, proto::kDotpt3, m);
  return out;
}

Shr dotpt3(Engine3& eng, const ShrVec& xs, const ShrVec& ys, int fracBits) {
  if (xs.empty()) throw std::logic_error("dotpt3: empty input");
  return dotpt3(eng, xs, ys, xs.size(), fracBits)[0];
}

ShrVec relu3(Engine3& eng, const ShrVec& vs) {
  if (vs.empty()) return {};
  ProtoScope scope(eng, proto::kRelu3);
  ShrVec sb = bitExt3(eng, vs);
  for (Shr& b : sb) b = b.flipped();
  ShrVec out = bitInj3(eng, sb, vs);
  bumpInstances(eng, scope, proto::kRelu3, vs.size());
  return out;
}

ShrVec sig3(Engine3& eng, const ShrVec& vs, int fracBits) {
  size_t n = vs.size();
  if (n == 0) return {};
  int w = vs[0].width();
  if (fracBits < 1 || fracBits >= w) throw std::invalid_argument("sig3: bad fracBits");

  ProtoScope scope(eng, proto::kSig3);
  Ring half(pow2(fracBits - 1), w);
  ShrVec args;
  args.reserve(2 * n);
  for (const Shr& v : vs) args.push_back(v.plusConst(half));
  for (const Shr& v : vs) args.push_back(v.plusConst(-half));

  ShrVec msb = bitExt3(eng, args);
  ShrVec nb1(msb.begin(), msb.begin() + n);
  ShrVec b2(msb.begin() + n, msb.end());
  for (Shr& b : nb1) b = b.flipped();

  auto preAnd = eng.multPre(nb1, b2);
  ShrVec inner = eng.multOnline(nb1, b2, preAnd);

  ShrVec mid(args.begin(), args.begin() + n);
  ShrVec inj = bitInj3(eng, inner, mid);

  ShrVec nb2 = b2;
  for (Shr& b : nb2) b = b.flipped();
  ShrVec one = bit2A3(eng, nb2, w);

  ShrVec out(n, Shr(w));
  for (size_t i = 0; i < n; ++i) out[i] = inj[i] + one[i].scaled(pow2(fracBits));
  bumpInstances(eng, scope, proto::kSig3, n);
  return out;
}

Shr maxpool3(Engine3& eng, ShrVec xs) {
  if (xs.empty()) throw std::invalid_argument("maxpool3: empty input");
  while (xs.size() > 1) {
    size_t pairs = xs.size() / 2;
    ShrVec diff;
    diff.reserve(pairs);
    for (size_t p = 0; p < pairs; ++p) diff.push_back(xs[2 * p + 1] - xs[2 * p]);
    ShrVec keepHi = bitExt3(eng, diff);
    for (Shr& b : keepHi) b = b.flipped();
    ShrVec gain = bitInj3(eng, keepHi, diff);
    ShrVec next;
    next.reserve(pairs + xs.size() % 2);
    for (size_t p = 0; p < pairs; ++p) next.push_back(xs[2 * p] + gain[p]);
    if (xs.size() % 2) next.push_back(xs.back());
    xs = std::move(next);
  }
  return xs[0];
}

ShrVec matmul3(Engine3& eng, const ShrVec& a, size_t p, size_t q, const ShrVec& b, size_t r,
               int fracBits) {
  if (a.size() != p * q || b.size() != q * r || q == 0)
    throw std::invalid_argument("matmul3: dimension mismatch");
  ShrVec xs, ys;
  xs.reserve(p * r * q);
  ys.reserve(p * r * q);
  for (size_t i = 0; i < p; ++i)
    for (size_t j = 0; j < r; ++j)
      for (size_t k = 0; k < q; ++k) {
        xs.push_back(a[i * q + k]);
        ys.push_back(b[k * r + j]);
      }
  return fracBits < 0 ? dotp3(eng, xs, ys, q) : dotpt3(eng, xs, ys, q, fracBits);
}

ShrVec convIm2col(Engine3& eng, const ShrVec& x, const ShrVec& k, const ConvDims& cd,
                  int fracBits) {
  if (cd.w <= 0 || cd.h <= 0 || cd.f <= 0 || cd.chans <= 0 || cd.outChans <= 0 ||
      cd.stride <= 0 || cd.pad < 0)
    throw std::invalid_argument("convIm2col: bad dimensions");
  if ((cd.w - cd.f + 2 * cd.pad) % cd.stride != 0 || (cd.h - cd.f + 2 * cd.pad) % cd.stride != 0 ||
      cd.w - cd.f + 2 * cd.pad < 0 || cd.h - cd.f + 2 * cd.pad < 0)
    throw std::invalid_argument("convIm2col: shape does not tile");
  if (x.size() != size_t(cd.w) * cd.h * cd.chans ||
      k.size() != size_t(cd.f) * cd.f * cd.chans * cd.outChans)
    throw std::invalid_argument("convIm2col: tensor size mismatch");
  int w = x.empty() ? k[0].width() : x[0].width();
  Shr zero = publicConstShr(Ring::zero(w));

  size_t rows = size_t(cd.outH()) * cd.outW();
  size_t cols = size_t(cd.f) * cd.f * cd.chans;
  ShrVec a;
  a.reserve(rows * cols);
  for (int oy = 0; oy < cd.outH(); ++oy)
    for (int ox = 0; ox < cd.outW(); ++ox)
      for (int ky = 0; ky < cd.f; ++ky)
        for (int kx = 0; kx < cd.f; ++kx)
          for (int c = 0; c < cd.chans; ++c) {
            int iy = oy * cd.stride + ky - cd.pad;
            int ix = ox * cd.stride + kx - cd.pad;
            bool inside = iy >= 0 && iy < cd.h && ix >= 0 && ix < cd.w;
            a.push_back(inside ? x[(size_t(iy) * cd.w + ix) * cd.chans + c] : zero);
          }
  return matmul3(eng, a, rows, cols, k, size_t(cd.outChans), fracBits);
}

// ---- outsourced input and output ----

namespace {

std::vector<uint8_t> catDigests(const std::vector<RecPre3>& pre, int which) {
  std::vector<uint8_t> out;
  out.reserve(pre.size() * 32);
  for (const auto& p : pre) {
    const Digest& d = which == 0 ? p.ca1 : which == 1 ? p.ca2 : p.cg;
    out.insert(out.end(), d.bytes.begin(), d.bytes.end());
  }
  return out;
}

void appendOpenings(std::vector<uint8_t>& buf, const ShrVec& xs, Ring Shr::* slot,
                    const std::vector<RecPre3>& pre, std::vector<uint8_t> RecPre3::* rand) {
  for (size_t i = 0; i < xs.size(); ++i) {
    (xs[i].*slot).appendTo(buf);
    const std::vector<uint8_t>& r = pre[i].*rand;
    buf.insert(buf.end(), r.begin(), r.end());
  }
}

// majority of three byte strings; ties impossible with one corrupt sender
template <typename T>
bool majority3(const T& a, const T& b, const T& c, T& out) {
  if (a == b || a == c) {
    out = a;
    return true;
  }
  if (b == c) {
    out = b;
    return true;
  }
  return false;
}

Digest digestAt(const std::vector<uint8_t>& payload, size_t off) {
  Digest d;
  std::copy(payload.begin() + off, payload.begin() + off + 32, d.bytes.begin());
  return d;
}

// first opening that matches the agreed digest wins; candidates are
// (frame index, opening set index) pairs
Ring openAgainst(const std::vector<const std::vector<uint8_t>*>& frames,
                 const std::vector<std::pair<int, int>>& cands, const Digest& dig, size_t i,
                 size_t n, size_t step, int w, const char* ctx) {
  for (auto [f, set] : cands) {
    if (!frames[f]) continue;
    size_t base = 1 + 96 * n + size_t(set) * n * (step + 32);
    const uint8_t* p = frames[f]->data() + base + i * (step + 32);
    std::vector<uint8_t> val(p, p + step);
    std::vector<uint8_t> rnd(p + step, p + step + 32);
    if (!commitVerify(dig, val, rnd, ctx)) continue;
    return Ring::parseFrom(val.data(), w);
  }
  throw std::logic_error("soc: no valid opening");
}

}  // namespace

SocShareOut shSocServer(Engine3& eng, int user, int width, size_t count, int ttp) {
  if (user < eng.net().servers() || user >= eng.net().endpoints())
    throw std::invalid_argument("shSocServer: user is not an external endpoint");
  int w = width;
  size_t n = count;
  int me = eng.me();
  SimNet& net = eng.net();

  ProtoScope scope(eng, proto::kSoc);
  uint16_t pr = eng.billedProto(proto::kSoc);
  uint32_t inst = eng.nextInstance(proto::kSoc);

  auto maybeGarble = [&](std::vector<uint8_t> b, uint32_t leg) {
    if (net.decide(me, {kSiteSocGarble, inst, leg}) == Deviate::kWrongBit)
      for (uint8_t& x : b) x ^= 0x01;
    return b;
  };

  SocShareOut out;
  if (ttp >= 0) {
    net.send(me, user, Frame{kOpData, pr, inst, maybeGarble({uint8_t(ttp)}, 0)});
    out.xs.assign(n, publicConstShr(Ring::zero(w)));
    if (me == ttp) {
      Frame f = net.recv(me, user);
      size_t step = size_t((w + 7) / 8);
      out.clearAtTtp = f.silent() || f.payload.size() != step * n ? zeroRings(w, n)
                                                                  : deserialize(f.payload, w, n);
    }
    if (me == 0) {
      eng.tally().addBits(pr, Phase::kOnline, Bucket::kData, 3 * 8 + uint64_t(w) * n);
      eng.tally().addRounds(pr, Phase::kOnline, 2);
      eng.tally().addInstances(pr, n);
    }
    return out;
  }

  // skeleton sampled here, commitments agreed among the servers, openings and
  // digests handed to the user, who answers with every blinded beta
  RingVec a1 = pairRings(eng, "k01", {proto::kSoc, inst, 1}, w, n);
  RingVec a2 = pairRings(eng, "k02", {proto::kSoc, inst, 2}, w, n);
  RingVec g = pairRings(eng, "k12", {proto::kSoc, inst, 3}, w, n);
  ShrVec xs(n, Shr(w));
  for (size_t i = 0; i < n; ++i) {
    xs[i].a1 = a1[i];
    xs[i].a2 = a2[i];
    xs[i].g = g[i];
  }
  auto rp = eng.recPre(xs);

  std::vector<uint8_t> payload{uint8_t(0xFF)};
  for (int which = 0; which < 3; ++which) {
    auto d = catDigests(rp, which);
    payload.insert(payload.end(), d.begin(), d.end());
  }
  if (me == 0) {
    appendOpenings(payload, xs, &Shr::a1, rp, &RecPre3::ra1);
    appendOpenings(payload, xs, &Shr::a2, rp, &RecPre3::ra2);
  } else if (me == 1) {
    appendOpenings(payload, xs, &Shr::a1, rp, &RecPre3::ra1);
    appendOpenings(payload, xs, &Shr::g, rp, &RecPre3::rg);
  } else {
    appendOpenings(payload, xs, &Shr::a2, rp, &RecPre3::ra2);
    appendOpenings(payload, xs, &Shr::g, rp, &RecPre3::rg);
  }
  net.send(me, user, Frame{kOpData, pr, inst, maybeGarble(std::move(payload), 0)});

  Frame rf = net.recv(me, user);
  size_t step = size_t((w + 7) / 8);
  RingVec got = rf.silent() || rf.payload.size() != step * n ? zeroRings(w, n)
                                                             : deserialize(rf.payload, w, n);

  // one agreement exchange pins every server to the same blinded betas even if
  // the user equivocated
  net.broadcast3(me, Frame{kOpData, pr, inst, serialize(got)});
  RingVec o1 = decodeRingsOr(std::nullopt, w, n), o2 = o1;
  for (int from = 0, slot = 0; from < 3; ++from) {
    if (from == me) continue;
    Frame bf = net.recv(me, from);
    RingVec dec = bf.silent() || bf.payload.size() != step * n ? zeroRings(w, n)
                                                               : deserialize(bf.payload, w, n);
    (slot++ == 0 ? o1 : o2) = std::move(dec);
  }
  for (size_t i = 0; i < n; ++i) {
    Ring maj = Ring::zero(w);
    majority3(got[i], o1[i], o2[i], maj);
    if (me == 0) {
      xs[i].bg = maj;
    } else {
      xs[i].b = maj - xs[i].g;
      xs[i].bg = maj;
    }
    xs[i].markOnline();
  }
  out.xs = std::move(xs);

  if (me == 0) {
    eng.tally().addBits(pr, Phase::kOnline, Bucket::kData,
                        3 * (8 + 2 * uint64_t(w) * n) + 6 * uint64_t(w) * n);
    eng.tally().addBits(pr, Phase::kOnline, Bucket::kVerify, 3 * 5 * 256 * uint64_t(n));
    eng.tally().addRounds(pr, Phase::kOnline, 3);
    eng.tally().addInstances(pr, n);
  }
  return out;
}

SocUserShare shSocUser(SimNet& net, int user, const RingVec& vs, int width) {
  int w = width;
  size_t n = vs.size();
  size_t step = size_t((w + 7) / 8);

  std::array<Frame, 3> fr;
  for (int s = 0; s < 3; ++s) fr[s] = net.recv(user, s);

  uint8_t status = 0;
  {
    auto st = [&](int s) { return fr[s].silent() || fr[s].payload.empty() ? uint8_t(0) : fr[s].payload[0]; };
    if (!majority3(st(0), st(1), st(2), status))
      throw std::logic_error("shSocUser: no status majority");
  }
  if (status != 0xFF) {
    int ttp = status;
    if (ttp < 0 || ttp >= net.servers()) throw std::logic_error("shSocUser: bad fallback id");
    net.send(user, ttp, Frame{kOpClear, proto::kSoc, 0, serialize(vs)});
    return {ttp};
  }

  size_t want = 1 + 96 * n + 2 * n * (step + 32);
  std::vector<const std::vector<uint8_t>*> frames(3, nullptr);
  int valid = 0;
  for (int s = 0; s < 3; ++s)
    if (!fr[s].silent() && fr[s].payload.size() == want && fr[s].payload[0] == 0xFF) {
      frames[s] = &fr[s].payload;
      ++valid;
    }
  if (valid < 2) throw std::logic_error("shSocUser: too few well-formed frames");

  auto digFor = [&](int which, size_t i) {
    Digest got;
    std::vector<Digest> copies;
    for (int s = 0; s < 3; ++s)
      if (frames[s]) copies.push_back(digestAt(*frames[s], 1 + (size_t(which) * n + i) * 32));
    if (copies.size() == 3 ? !majority3(copies[0], copies[1], copies[2], got)
                           : !(copies[0] == copies[1]))
      throw std::logic_error("shSocUser: no digest majority");
    if (copies.size() == 2) got = copies[0];
    return got;
  };

  RingVec bg(n, Ring::zero(w));
  for (size_t i = 0; i < n; ++i) {
    Ring a1 = openAgainst(frames, {{0, 0}, {1, 0}}, digFor(0, i), i, n, step, w, "rec/a1");
    Ring a2 = openAgainst(frames, {{0, 1}, {2, 0}}, digFor(1, i), i, n, step, w, "rec/a2");
    Ring g = openAgainst(frames, {{1, 1}, {2, 1}}, digFor(2, i), i, n, step, w, "rec/g");
    bg[i] = vs[i] + a1 + a2 + g;
  }
  for (int s = 0; s < 3; ++s) net.send(user, s, Frame{kOpData, proto::kSoc, 0, serialize(bg)});
  return {-1};
}

void recSocServer(Engine3& eng, int user, const ShrVec& xs, int ttp, const RingVec& clearVs) {
  if (user < eng.net().servers() || user >= eng.net().endpoints())
    throw std::invalid_argument("recSocServer: user is not an external endpoint");
  int me = eng.me();
  SimNet& net = eng.net();

  ProtoScope scope(eng, proto::kSoc);
  uint16_t pr = eng.billedProto(proto::kSoc);
  uint32_t inst = eng.nextInstance(proto::kSoc);

  auto maybeGarble = [&](std::vector<uint8_t> b) {
    if (net.decide(me, {kSiteSocGarble, inst, 1}) == Deviate::kWrongBit)
      for (uint8_t& x : b) x ^= 0x01;
    return b;
  };

  if (ttp >= 0) {
    std::vector<uint8_t> payload{uint8_t(ttp)};
    if (me == ttp) {
      auto ser = serialize(clearVs);
      payload.insert(payload.end(), ser.begin(), ser.end());
    }
    net.send(me, user, Frame{kOpData, pr, inst, maybeGarble(std::move(payload))});
    if (me == 0) {
      int w = xs.empty() ? (clearVs.empty() ? 1 : clearVs[0].w) : xs[0].width();
      eng.tally().addBits(pr, Phase::kOnline, Bucket::kData, 3 * 8 + uint64_t(w) * xs.size());
      eng.tally().addRounds(pr, Phase::kOnline, 1);
      eng.tally().addInstances(pr, xs.size());
    }
    return;
  }

  size_t n = xs.size();
  int w = n ? xs[0].width() : 1;
  requireOnline(xs, "recSocServer");
  auto rp = eng.recPre(xs);

  // blinded betas travel in the clear; three copies let the user majority-vote,
  // the committed openings peel the masks off
  std::vector<uint8_t> payload{uint8_t(0xFF)};
  {
    RingVec bg(n, Ring::zero(w));
    for (size_t i = 0; i < n; ++i) bg[i] = xs[i].bg;
    auto ser = serialize(bg);
    payload.insert(payload.end(), ser.begin(), ser.end());
  }
  for (int which = 0; which < 3; ++which) {
    auto d = catDigests(rp, which);
    payload.insert(payload.end(), d.begin(), d.end());
  }
  if (me == 0) {
    appendOpenings(payload, xs, &Shr::a1, rp, &RecPre3::ra1);
    appendOpenings(payload, xs, &Shr::a2, rp, &RecPre3::ra2);
  } else if (me == 1) {
    appendOpenings(payload, xs, &Shr::a1, rp, &RecPre3::ra1);
    appendOpenings(payload, xs, &Shr::g, rp, &RecPre3::rg);
  } else {
    appendOpenings(payload, xs, &Shr::a2, rp, &RecPre3::ra2);
    appendOpenings(payload, xs, &Shr::g, rp, &RecPre3::rg);
  }
  net.send(me, user, Frame{kOpData, pr, inst, maybeGarble(std::move(payload))});

  if (me == 0) {
    eng.tally().addBits(pr, Phase::kOnline, Bucket::kData, 3 * (8 + 3 * uint64_t(w) * n));
    eng.tally().addBits(pr, Phase::kOnline, Bucket::kVerify, 3 * 5 * 256 * uint64_t(n));
    eng.tally().addRounds(pr, Phase::kOnline, 1);
    eng.tally().addInstances(pr, n);
  }
}

SocUserRec recSocUser(SimNet& net, int user, int width, size_t count) {
  int w = width;
  size_t n = count;
  size_t step = size_t((w + 7) / 8);

  std::array<Frame, 3> fr;
  for (int s = 0; s < 3; ++s) fr[s] = net.recv(user, s);

  uint8_t status = 0;
  {
    auto st = [&](int s) { return fr[s].silent() || fr[s].payload.empty() ? uint8_t(0) : fr[s].payload[0]; };
    if (!majority3(st(0), st(1), st(2), status))
      throw std::logic_error("recSocUser: no status majority");
  }
  if (status != 0xFF) {
    int ttp = status;
    if (ttp < 0 || ttp >= net.servers()) throw std::logic_error("recSocUser: bad fallback id");
    const Frame& f = fr[ttp];
    if (f.silent() || f.payload.size() != 1 + step * n)
      throw std::logic_error("recSocUser: malformed fallback payload");
    std::vector<uint8_t> body(f.payload.begin() + 1, f.payload.end());
    return {deserialize(body, w, n), ttp};
  }

  size_t want = 1 + n * step + 96 * n + 2 * n * (step + 32);
  std::vector<const std::vector<uint8_t>*> frames(3, nullptr);
  int valid = 0;
  for (int s = 0; s < 3; ++s)
    if (!fr[s].silent() && fr[s].payload.size() == want && fr[s].payload[0] == 0xFF) {
      frames[s] = &fr[s].payload;
      ++valid;
    }
  if (valid < 2) throw std::logic_error("recSocUser: too few well-formed frames");

  auto bgAt = [&](int s, size_t i) { return Ring::parseFrom(frames[s]->data() + 1 + i * step, w); };
  auto digFor = [&](int which, size_t i) {
    Digest got;
    std::vector<Digest> copies;
    for (int s = 0; s < 3; ++s)
      if (frames[s]) copies.push_back(digestAt(*frames[s], 1 + n * step + (size_t(which) * n + i) * 32));
    if (copies.size() == 3 ? !majority3(copies[0], copies[1], copies[2], got)
                           : !(copies[0] == copies[1]))
      throw std::logic_error("recSocUser: no digest majority");
    if (copies.size() == 2) got = copies[0];
    return got;
  };
  // openings sit after the status byte, the blinded betas and the digests
  auto openFor = [&](std::vector<std::pair<int, int>> cands, const Digest& dig, size_t i,
                     const char* ctx) {
    for (auto [f, set] : cands) {
      if (!frames[f]) continue;
      size_t base = 1 + n * step + 96 * n + size_t(set) * n * (step + 32);
      const uint8_t* p = frames[f]->data() + base + i * (step + 32);
      std::vector<uint8_t> val(p, p + step);
      std::vector<uint8_t> rnd(p + step, p + step + 32);
      if (!commitVerify(dig, val, rnd, ctx)) continue;
      return Ring::parseFrom(val.data(), w);
    }
    throw std::logic_error("soc: no valid opening");
  };

  RingVec vs(n, Ring::zero(w));
  for (size_t i = 0; i < n; ++i) {
    std::vector<Ring> copies;
    for (int s = 0; s < 3; ++s)
      if (frames[s]) copies.push_back(bgAt(s, i));
    Ring bg = Ring::zero(w);
    bool ok = copies.size() == 3 ? majority3(copies[0], copies[1], copies[2], bg)
                                 : copies[0] == copies[1];
    if (copies.size() == 2) bg = copies[0];
    if (!ok) throw std::logic_error("recSocUser: no agreement on blinded beta");
    Ring a1 = openFor({{0, 0}, {1, 0}}, digFor(0, i), i, "rec/a1");
    Ring a2 = openFor({{0, 1}, {2, 0}}, digFor(1, i), i, "rec/a2");
    Ring g = openFor({{1, 1}, {2, 1}}, digFor(2, i), i, "rec/g");
    vs[i] = bg - g - a1 - a2;
  }
  return {vs, -1};
}

}  // namespace rmpc
