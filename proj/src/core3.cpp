#include "rmpc/core3.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace rmpc {

namespace {

RingVec zeros(int width, size_t count) { return RingVec(count, Ring::zero(width)); }

std::vector<uint8_t> catDigests(const std::vector<Digest>& ds) {
  std::vector<uint8_t> out;
  out.reserve(ds.size() * 32);
  for (const Digest& d : ds) out.insert(out.end(), d.bytes.begin(), d.bytes.end());
  return out;
}

std::vector<Digest> splitDigests(const std::vector<uint8_t>& buf, size_t count) {
  std::vector<Digest> out(count);
  if (buf.size() != count * 32) return out;  // malformed: zero digests, verify will catch
  for (size_t i = 0; i < count; ++i)
    std::copy_n(buf.data() + 32 * i, 32, out[i].bytes.begin());
  return out;
}

// a direct frame that is missing or malformed decodes to zeros; the following
// jmp pass over the same data catches the substitution
RingVec decodeOrZeros(const Frame& f, int width, size_t count) {
  size_t step = size_t((width + 7) / 8);
  if (f.silent() || f.payload.size() != step * count) return zeros(width, count);
  return deserialize(f.payload, width, count);
}

}  // namespace

// ---- IdealMulPre ----

MulPreResult IdealMulPre::run(int me, uint16_t protoId, const std::vector<Sgr>& d,
                              const std::vector<Sgr>& e, size_t group) {
  if (group == 0 || d.size() != e.size() || d.size() % group != 0)
    throw std::logic_error("mulpre: bad group shape");
  std::unique_lock lk(m_);
  uint32_t gen = gen_;
  inD_[me] = d;
  inE_[me] = e;
  if (++arrived_ == 3) {
    computeAll(protoId, group);
    arrived_ = 0;
    ++gen_;
    cv_.notify_all();
  } else {
    cv_.wait(lk, [&] { return gen_ != gen; });
  }
  return {std::move(out_[me]), {}};
}

void IdealMulPre::computeAll(uint16_t protoId, size_t group) {
  size_t n = inD_[0].size();
  if (inD_[1].size() != n || inD_[2].size() != n)
    throw std::logic_error("mulpre: parties disagree on batch size");
  int w = n ? inD_[0][0].lo.w : 1;
  int corrupt = net_.script() ? net_.script()->corrupt : -1;

  // leg t as replicated at party t (lo) and party t+2 (hi); prefer an honest copy
  auto leg = [&](const std::array<std::vector<Sgr>, 3>& in, size_t i, int t) {
    return t == corrupt ? in[(t + 2) % 3][i].hi : in[t][i].lo;
  };

  size_t groups = n / group;
  RingVec f0 = prf_.rings({proto::kMulPre, gen_, 1}, w, groups);
  RingVec f1 = prf_.rings({proto::kMulPre, gen_, 2}, w, groups);
  for (auto& o : out_) o.assign(groups, Sgr{});
  for (size_t k = 0; k < groups; ++k) {
    Ring f = Ring::zero(w);
    for (size_t j = k * group; j < (k + 1) * group; ++j) {
      Ring dv = leg(inD_, j, 0) + leg(inD_, j, 1) + leg(inD_, j, 2);
      Ring ev = leg(inE_, j, 0) + leg(inE_, j, 1) + leg(inE_, j, 2);
      f += dv * ev;
    }
    Ring legs[3] = {f0[k], f1[k], f - f0[k] - f1[k]};
    if (corrupt >= 0 &&
        net_.decide(corrupt, {kSiteMulPreShare, gen_, uint32_t(k)}) == Deviate::kWrongBit) {
      // the adversary picks the corrupt party's legs; the leg it does not hold
      // absorbs the difference so the sum stays f
      legs[corrupt] += Ring(1, w);
      legs[(corrupt + 2) % 3] = f - legs[corrupt] - legs[(corrupt + 1) % 3];
    }
    for (int s = 0; s < 3; ++s) out_[s][k] = {legs[s], legs[(s + 1) % 3]};
  }
  tally_.addBits(protoId, Phase::kPre, Bucket::kData, uint64_t(3) * w * groups);
  tally_.addRounds(protoId, Phase::kPre, 1);
}

// ---- Engine3 ----

Engine3::Engine3(int me, SimNet& net, Tally& tally, const KeyStore& ks, MulPreBackend& mul)
    : me_(me), net_(net), tally_(tally), ks_(ks), mul_(mul), hub_(net, tally, me) {}

RingVec Engine3::sampleIfHeld(const std::string& label, SampleId id, int width, size_t count) {
  if (!ks_.has(label)) return zeros(width, count);
  return ks_.key(label).rings(id, width, count);
}

ShrVec Engine3::shPre(int dealer, int width, size_t count) {
  if (dealer < 0 || dealer > 2) throw std::logic_error("shPre: bad dealer");
  uint32_t inst = nextInstance(proto::kSh3);
  // key owning each component; the dealer always ends up knowing alpha in full
  std::string kA1 = dealer == 2 ? "kP" : "k01";
  std::string kA2 = dealer == 1 ? "kP" : "k02";
  std::string kG = dealer == 0 ? "kP" : "k12";
  RingVec a1 = sampleIfHeld(kA1, {proto::kSh3, inst, 1}, width, count);
  RingVec a2 = sampleIfHeld(kA2, {proto::kSh3, inst, 2}, width, count);
  RingVec g = sampleIfHeld(kG, {proto::kSh3, inst, 3}, width, count);
  ShrVec out(count, Shr(width));
  for (size_t i = 0; i < count; ++i) {
    out[i].a1 = a1[i];
    out[i].a2 = a2[i];
    out[i].g = g[i];
  }
  return out;
}

void Engine3::shOnline(int dealer, ShrVec& xs, const RingVec& vs) {
  size_t n = xs.size();
  if (n == 0) return;
  int w = xs[0].width();
  uint16_t pr = billedProto(proto::kSh3);
  uint32_t inst = nextInstance(proto::kSh3);
  Phase ph = billedPhase(Phase::kOnline);
  RingVec beta(n, Ring::zero(w));
  if (me_ == dealer) {
    if (vs.size() != n) throw std::logic_error("shOnline: dealer input count mismatch");
    for (size_t i = 0; i < n; ++i) beta[i] = vs[i] + xs[i].a1 + xs[i].a2;
  }

  // the dealer hands beta to its online neighbour, then that pair jmp-sends the
  // third party's copy (blinded when the receiver is P0)
  int nb = dealer == 0 ? 1 : (dealer == 1 ? 2 : 1);
  if (me_ == dealer) {
    net_.send(me_, nb, Frame{kOpData, pr, inst, serialize(beta)});
    tally_.addBits(pr, ph, Bucket::kData, uint64_t(w) * n);
  } else if (me_ == nb) {
    beta = decodeOrZeros(net_.recv(me_, dealer), w, n);
  }

  uint16_t bid;
  RingVec fwd = beta;
  switch (dealer) {
    case 0:
      bid = hub_.batch(1, 0, 2, ph);
      break;
    case 1:
      bid = hub_.batch(1, 2, 0, ph);
      for (size_t i = 0; i < n; ++i) fwd[i] = beta[i] + xs[i].g;
      break;
    default:
      bid = hub_.batch(2, 1, 0, ph);
      for (size_t i = 0; i < n; ++i) fwd[i] = beta[i] + xs[i].g;
      break;
  }
  int sender = dealer == 0 ? 1 : dealer;
  int echoer = dealer == 0 ? 0 : nb;
  std::optional<RingVec> got;
  if (me_ == sender) {
    hub_.send(bid, pr, inst, Bucket::kData, serialize(fwd), uint64_t(w) * n);
  } else if (me_ == echoer) {
    hub_.echo(bid, serialize(fwd));
  } else {
    auto bytes = hub_.recv(bid);
    got = bytes ? decodeOrZeros(Frame{kOpData, pr, inst, *bytes}, w, n) : zeros(w, n);
  }

  for (size_t i = 0; i < n; ++i) {
    Shr& x = xs[i];
    switch (dealer) {
      case 0:
        if (me_ == 0) x.bg = beta[i] + x.g;  // gamma is common when P0 deals
        if (me_ == 1) x.b = beta[i];
        if (me_ == 2) x.b = (*got)[i];
        break;
      case 1:
      case 2:
        if (me_ == 0) x.bg = (*got)[i];
        if (me_ == dealer) x.b = beta[i];
        if (me_ == nb) x.b = beta[i];
        break;
    }
    if (me_ != 0) x.bg = x.b + x.g;
    x.markOnline();
  }
  if (scribe()) {
    tally_.addRounds(pr, ph, 2);
    if (ctx_.empty()) tally_.addInstances(pr, n);
  }
}

ShrVec Engine3::jshPre(JointPair pair, int width, size_t count) {
  uint32_t inst = nextInstance(proto::kJsh3);
  ShrVec out(count, Shr(width));
  switch (pair) {
    case JointPair::P1P0: {
      RingVec a1 = sampleIfHeld("k01", {proto::kJsh3, inst, 1}, width, count);
      RingVec a2 = ks_.common().rings({proto::kJsh3, inst, 2}, width, count);
      for (size_t i = 0; i < count; ++i) {
        out[i].a1 = a1[i];
        out[i].a2 = a2[i];
      }
      break;
    }
    case JointPair::P2P0: {
      RingVec a1 = ks_.common().rings({proto::kJsh3, inst, 1}, width, count);
      RingVec a2 = sampleIfHeld("k02", {proto::kJsh3, inst, 2}, width, count);
      for (size_t i = 0; i < count; ++i) {
        out[i].a1 = a1[i];
        out[i].a2 = a2[i];
      }
      break;
    }
    case JointPair::P1P2: {
      RingVec g = sampleIfHeld("k12", {proto::kJsh3, inst, 3}, width, count);
      for (size_t i = 0; i < count; ++i) out[i].g = g[i];
      break;
    }
  }
  return out;
}

void Engine3::jshOnline(JointPair pair, ShrVec& xs, const RingVec& vs) {
  size_t n = xs.size();
  if (n == 0) return;
  int w = xs[0].width();
  uint16_t pr = billedProto(proto::kJsh3);
  uint32_t inst = nextInstance(proto::kJsh3);
  Phase ph = billedPhase(Phase::kOnline);

  int pa, pb, rest;  // pa jmp-sends, pb echoes, rest receives
  switch (pair) {
    case JointPair::P1P0: pa = 0, pb = 1, rest = 2; break;
    case JointPair::P2P0: pa = 0, pb = 2, rest = 1; break;
    default: pa = 1, pb = 2, rest = 0; break;
  }
  bool inPair = me_ == pa || me_ == pb;
  RingVec beta(n, Ring::zero(w));
  if (inPair) {
    if (vs.size() != n) throw std::logic_error("jshOnline: input count mismatch");
    for (size_t i = 0; i < n; ++i) beta[i] = vs[i] + xs[i].a1 + xs[i].a2 + xs[i].g;
  }

  uint16_t bid = hub_.batch(pa, pb, rest, ph);
  if (me_ == pa) {
    hub_.send(bid, pr, inst, Bucket::kData, serialize(beta), uint64_t(w) * n);
  } else if (me_ == pb) {
    hub_.echo(bid, serialize(beta));
  } else {
    auto bytes = hub_.recv(bid);
    beta = bytes ? decodeOrZeros(Frame{kOpData, pr, inst, *bytes}, w, n) : zeros(w, n);
  }

  for (size_t i = 0; i < n; ++i) {
    Shr& x = xs[i];
    if (pair == JointPair::P1P2 && me_ == 0) {
      x.bg = beta[i];
    } else {
      x.b = pair == JointPair::P1P2 ? beta[i] - x.g : beta[i];
      x.bg = x.b + x.g;
    }
    x.markOnline();
  }
  if (scribe()) {
    tally_.addRounds(pr, ph, 1);
    if (ctx_.empty()) tally_.addInstances(pr, n);
  }
}

void Engine3::jshOnlineDeferred(ShrVec& xs, const RingVec& vs) {
  size_t n = xs.size();
  if (n == 0) return;
  int w = xs[0].width();
  uint16_t pr = billedProto(proto::kJsh3);
  uint32_t inst = nextInstance(proto::kJsh3);
  Phase ph = billedPhase(Phase::kOnline);

  RingVec beta(n, Ring::zero(w));
  if (me_ != 0) {
    if (vs.size() != n) throw std::logic_error("jshOnlineDeferred: input count mismatch");
    for (size_t i = 0; i < n; ++i) beta[i] = vs[i] + xs[i].g;
  }

  uint16_t bid = hub_.batch(1, 2, 0, ph);
  if (me_ == 1) {
    hub_.send(bid, pr, inst, Bucket::kData, serialize(beta), uint64_t(w) * n);
  } else if (me_ == 2) {
    hub_.echo(bid, serialize(beta));
  } else {
    auto bytes = hub_.recv(bid);
    beta = bytes ? decodeOrZeros(Frame{kOpData, pr, inst, *bytes}, w, n) : zeros(w, n);
  }

  for (size_t i = 0; i < n; ++i) {
    Shr& x = xs[i];
    if (me_ == 0) {
      x.bg = beta[i];
    } else {
      x.b = beta[i] - x.g;
      x.bg = beta[i];
    }
    x.markOnline();
  }
  flushPending_ = true;
  if (scribe() && ctx_.empty()) tally_.addInstances(pr, n);
}

ShrVec Engine3::jshConst(JointPair pair, const RingVec& vs) {
  size_t n = vs.size();
  if (n == 0) return {};
  int w = vs[0].w;
  uint32_t inst = nextInstance(proto::kJsh3);
  RingVec r = ks_.common().rings({proto::kJsh3, inst, 4}, w, n);
  int third = pair == JointPair::P1P2 ? 0 : (pair == JointPair::P1P0 ? 2 : 1);
  ShrVec out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    Ring v = me_ == third ? Ring::zero(w) : vs[i];
    out.push_back(jointConstShare(pair, me_, v, r[i]));
  }
  return out;
}

std::vector<MulPre3> Engine3::multPre(const ShrVec& xs, const ShrVec& ys) {
  return dotpPre(xs, ys, 1);
}

MulPre3 mulPreFromLegs(int me, const Sgr& f, const Ring& az1, const Ring& az2, const Ring& gz,
                       const Ring& gammaDot) {
  MulPre3 p;
  p.az1 = az1;
  p.az2 = az2;
  p.gz = gz;
  p.chi1 = p.chi2 = p.psi = Ring::zero(az1.w);
  switch (me) {
    case 0:
      p.chi2 = f.lo;
      p.chi1 = f.hi;
      break;
    case 1:
      p.chi1 = f.lo;
      p.psi = f.hi - gammaDot;
      break;
    default:
      p.psi = f.lo - gammaDot;
      p.chi2 = f.hi;
      break;
  }
  return p;
}

RingVec decodeRingsOr(const std::optional<std::vector<uint8_t>>& bytes, int width, size_t count) {
  return bytes ? decodeOrZeros(Frame{kOpData, 0, 0, *bytes}, width, count) : zeros(width, count);
}

MulPreResult Engine3::mulRun(uint16_t protoId, const std::vector<Sgr>& d,
                             const std::vector<Sgr>& e, size_t group) {
  MulPreResult res = mul_.run(me_, protoId, d, e, group);
  backendOutcome_ = res.outcome;
  return res;
}

std::vector<MulPre3> Engine3::dotpPre(const ShrVec& xs, const ShrVec& ys, size_t group) {
  size_t n = xs.size();
  if (group == 0 || ys.size() != n || n % group != 0)
    throw std::logic_error("dotpPre: batch shape mismatch");
  if (n == 0) return {};
  size_t m = n / group;
  int w = xs[0].width();
  uint16_t pr = billedProto(proto::kMult3);
  uint32_t inst = nextInstance(proto::kMult3);

  RingVec az1 = sampleIfHeld("k01", {proto::kMult3, inst, 1}, w, m);
  RingVec az2 = sampleIfHeld("k02", {proto::kMult3, inst, 2}, w, m);
  RingVec gz = sampleIfHeld("k12", {proto::kMult3, inst, 3}, w, m);

  std::vector<Sgr> d(n), e(n);
  for (size_t i = 0; i < n; ++i) {
    d[i] = buildDE(xs[i], me_);
    e[i] = buildDE(ys[i], me_);
  }
  MulPreResult res = mul_.run(me_, pr, d, e, group);
  backendOutcome_ = res.outcome;

  std::vector<MulPre3> out(m);
  for (size_t k = 0; k < m; ++k) {
    Ring gg = Ring::zero(w);
    for (size_t i = k * group; i < (k + 1) * group; ++i) gg = gg + xs[i].g * ys[i].g;
    out[k] = mulPreFromLegs(me_, res.f[k], az1[k], az2[k], gz[k], gg);
  }
  return out;
}

ShrVec Engine3::multOnline(const ShrVec& xs, const ShrVec& ys,
                           const std::vector<MulPre3>& pre) {
  return dotpOnline(xs, ys, pre, 1);
}

ShrVec Engine3::dotpOnline(const ShrVec& xs, const ShrVec& ys, const std::vector<MulPre3>& pre,
                           size_t group) {
  size_t n = xs.size();
  if (group == 0 || ys.size() != n || n % group != 0 || pre.size() != n / group)
    throw std::logic_error("dotpOnline: batch shape mismatch");
  if (n == 0) return {};
  size_t m = n / group;
  int w = xs[0].width();
  uint16_t pr = billedProto(proto::kMult3);
  uint32_t inst = nextInstance(proto::kMult3);
  Phase ph = billedPhase(Phase::kOnline);

  RingVec bs1(m, Ring::zero(w)), bs2(m, Ring::zero(w));
  for (size_t k = 0; k < m; ++k) {
    if (me_ != 2) bs1[k] = pre[k].az1 + pre[k].chi1;
    if (me_ != 1) bs2[k] = pre[k].az2 + pre[k].chi2;
    for (size_t i = k * group; i < (k + 1) * group; ++i) {
      const Shr &x = xs[i], &y = ys[i];
      if (!x.isOnline() || !y.isOnline()) throw std::logic_error("dotpOnline: operand not online");
      if (me_ != 2) bs1[k] = bs1[k] - x.bg * y.a1 - y.bg * x.a1;
      if (me_ != 1) bs2[k] = bs2[k] - x.bg * y.a2 - y.bg * x.a2;
    }
  }

  uint16_t toP2 = hub_.batch(1, 0, 2, ph);
  uint16_t toP1 = hub_.batch(2, 0, 1, ph);
  uint16_t toP0 = hub_.batch(1, 2, 0, ph);

  if (me_ == 1) {
    hub_.send(toP2, pr, inst, Bucket::kData, serialize(bs1), uint64_t(w) * m);
    auto bytes = hub_.recv(toP1);
    bs2 = bytes ? decodeOrZeros(Frame{kOpData, pr, inst, *bytes}, w, m) : zeros(w, m);
  } else if (me_ == 2) {
    hub_.send(toP1, pr, inst, Bucket::kData, serialize(bs2), uint64_t(w) * m);
    auto bytes = hub_.recv(toP2);
    bs1 = bytes ? decodeOrZeros(Frame{kOpData, pr, inst, *bytes}, w, m) : zeros(w, m);
  } else {
    hub_.echo(toP2, serialize(bs1));
    hub_.echo(toP1, serialize(bs2));
  }

  ShrVec zs(m, Shr(w));
  RingVec bg(m, Ring::zero(w));
  for (size_t k = 0; k < m; ++k) {
    Shr& z = zs[k];
    z.a1 = pre[k].az1;
    z.a2 = pre[k].az2;
    z.g = pre[k].gz;
    if (me_ != 0) {
      Ring bz = bs1[k] + bs2[k] + pre[k].psi;
      for (size_t i = k * group; i < (k + 1) * group; ++i) bz = bz + xs[i].b * ys[i].b;
      z.b = bz;
      bg[k] = bz + pre[k].gz;
    }
  }

  // beta+gamma of every product flows to P0 through one queue; its round is
  // recorded once per circuit by flushDeferred
  if (me_ == 1) {
    hub_.send(toP0, pr, inst, Bucket::kData, serialize(bg), uint64_t(w) * m);
  } else if (me_ == 2) {
    hub_.echo(toP0, serialize(bg));
  } else {
    auto bytes = hub_.recv(toP0);
    bg = bytes ? decodeOrZeros(Frame{kOpData, pr, inst, *bytes}, w, m) : zeros(w, m);
  }
  for (size_t k = 0; k < m; ++k) {
    zs[k].bg = me_ == 0 ? bg[k] : zs[k].b + zs[k].g;
    zs[k].markOnline();
  }

  flushPending_ = true;
  if (scribe()) {
    tally_.addRounds(pr, ph, 1);
    if (ctx_.empty()) tally_.addInstances(pr, m);
  }
  return zs;
}

void Engine3::flushDeferred() {
  if (flushPending_ && scribe())
    tally_.addOnceRounds(billedProto(proto::kMult3), billedPhase(Phase::kOnline), 1);
  flushPending_ = false;
}

std::vector<RecPre3> Engine3::recPre(const ShrVec& xs) {
  size_t n = xs.size();
  if (n == 0) return {};
  uint16_t pr = billedProto(proto::kRec3);
  uint32_t inst = nextInstance(proto::kRec3);

  auto randFor = [&](const std::string& label, uint32_t sub) {
    if (!ks_.has(label)) return std::vector<uint8_t>();
    return ks_.key(label).bytes({proto::kRec3, inst, sub}, 32 * n);
  };
  std::vector<uint8_t> ra1 = randFor("k01", 1), ra2 = randFor("k02", 2), rg = randFor("k12", 3);

  auto commitAll = [&](const std::vector<uint8_t>& rand, auto pick, const char* ctx) {
    std::vector<Digest> cs(n);
    for (size_t i = 0; i < n; ++i) {
      std::vector<uint8_t> val;
      pick(xs[i]).appendTo(val);
      cs[i] = commitDigest(val, {rand.begin() + 32 * i, rand.begin() + 32 * (i + 1)}, ctx);
    }
    return cs;
  };

  std::vector<Digest> ca1, ca2, cg;
  if (!ra1.empty()) ca1 = commitAll(ra1, [](const Shr& x) { return x.a1; }, "rec/a1");
  if (!ra2.empty()) ca2 = commitAll(ra2, [](const Shr& x) { return x.a2; }, "rec/a2");
  if (!rg.empty()) cg = commitAll(rg, [](const Shr& x) { return x.g; }, "rec/g");

  struct Leg {
    int s, e, r;
    std::vector<Digest>* cs;
  };
  Leg legs[3] = {{0, 1, 2, &ca1}, {0, 2, 1, &ca2}, {1, 2, 0, &cg}};
  for (const Leg& l : legs) {
    uint16_t bid = hub_.batch(l.s, l.e, l.r, Phase::kPre);
    if (me_ == l.s) {
      hub_.send(bid, pr, inst, Bucket::kVerify, catDigests(*l.cs), 256 * n);
    } else if (me_ == l.e) {
      hub_.echo(bid, catDigests(*l.cs));
    } else {
      auto bytes = hub_.recv(bid);
      *l.cs = splitDigests(bytes ? *bytes : std::vector<uint8_t>(), n);
    }
  }

  std::vector<RecPre3> out(n);
  for (size_t i = 0; i < n; ++i) {
    out[i].ca1 = ca1[i];
    out[i].ca2 = ca2[i];
    out[i].cg = cg[i];
    if (!ra1.empty()) out[i].ra1.assign(ra1.begin() + 32 * i, ra1.begin() + 32 * (i + 1));
    if (!ra2.empty()) out[i].ra2.assign(ra2.begin() + 32 * i, ra2.begin() + 32 * (i + 1));
    if (!rg.empty()) out[i].rg.assign(rg.begin() + 32 * i, rg.begin() + 32 * (i + 1));
  }
  if (scribe()) tally_.addRounds(pr, Phase::kPre, 1);
  return out;
}

RingVec Engine3::recOnline(const ShrVec& xs, const std::vector<RecPre3>& pre) {
  size_t n = xs.size();
  if (pre.size() != n) throw std::logic_error("recOnline: batch mismatch");
  if (n == 0) return {};
  int w = xs[0].width();
  uint16_t pr = billedProto(proto::kRec3);
  uint32_t inst = nextInstance(proto::kRec3);
  size_t step = size_t((w + 7) / 8);

  auto openingFrame = [&](auto pick, auto rand) {
    std::vector<uint8_t> buf;
    buf.reserve(n * (step + 32));
    for (size_t i = 0; i < n; ++i) {
      pick(xs[i]).appendTo(buf);
      const std::vector<uint8_t>& r = rand(pre[i]);
      buf.insert(buf.end(), r.begin(), r.end());
    }
    return buf;
  };
  auto sendOpening = [&](int to, auto pick, auto rand) {
    net_.send(me_, to, Frame{kOpData, pr, inst, openingFrame(pick, rand)});
    tally_.addBits(pr, Phase::kOnline, Bucket::kData, uint64_t(w) * n);
    tally_.addBits(pr, Phase::kOnline, Bucket::kVerify, uint64_t(256) * n);
  };
  // each receiver takes the first opening that matches the agreed commitment;
  // at most one of the two senders can be lying
  auto recvOpenings = [&](int fromA, int fromB, auto digest, const char* ctx) {
    Frame fa = net_.recv(me_, fromA);
    Frame fb = net_.recv(me_, fromB);
    RingVec vals(n, Ring::zero(w));
    for (size_t i = 0; i < n; ++i) {
      bool ok = false;
      for (const Frame* f : {&fa, &fb}) {
        if (f->silent() || f->payload.size() != n * (step + 32)) continue;
        const uint8_t* p = f->payload.data() + i * (step + 32);
        std::vector<uint8_t> val(p, p + step);
        std::vector<uint8_t> rnd(p + step, p + step + 32);
        if (!commitVerify(digest(pre[i]), val, rnd, ctx)) continue;
        vals[i] = Ring::parseFrom(val.data(), w);
        ok = true;
        break;
      }
      if (!ok) throw std::logic_error("recOnline: no valid opening");
    }
    return vals;
  };

  auto a1of = [](const Shr& x) { return x.a1; };
  auto a2of = [](const Shr& x) { return x.a2; };
  auto gof = [](const Shr& x) { return x.g; };
  RingVec vs(n, Ring::zero(w));
  switch (me_) {
    case 0: {
      sendOpening(2, a1of, [](const RecPre3& p) { return p.ra1; });
      sendOpening(1, a2of, [](const RecPre3& p) { return p.ra2; });
      RingVec g = recvOpenings(1, 2, [](const RecPre3& p) { return p.cg; }, "rec/g");
      for (size_t i = 0; i < n; ++i) vs[i] = xs[i].bg - g[i] - xs[i].a1 - xs[i].a2;
      break;
    }
    case 1: {
      sendOpening(2, a1of, [](const RecPre3& p) { return p.ra1; });
      sendOpening(0, gof, [](const RecPre3& p) { return p.rg; });
      RingVec a2 = recvOpenings(0, 2, [](const RecPre3& p) { return p.ca2; }, "rec/a2");
      for (size_t i = 0; i < n; ++i) vs[i] = xs[i].b - xs[i].a1 - a2[i];
      break;
    }
    default: {
      sendOpening(1, a2of, [](const RecPre3& p) { return p.ra2; });
      sendOpening(0, gof, [](const RecPre3& p) { return p.rg; });
      RingVec a1 = recvOpenings(0, 1, [](const RecPre3& p) { return p.ca1; }, "rec/a1");
      for (size_t i = 0; i < n; ++i) vs[i] = xs[i].b - a1[i] - xs[i].a2;
      break;
    }
  }
  if (scribe()) {
    tally_.addRounds(pr, Phase::kOnline, 1);
    if (ctx_.empty()) tally_.addInstances(pr, n);
  }
  return vs;
}

// ---- Circuit ----

namespace {

Ring ringFromJson(const nlohmann::json& j, int width) {
  int64_t v;
  if (j.is_string()) {
    v = std::stoll(j.get<std::string>());
  } else if (j.is_number_integer()) {
    v = j.get<int64_t>();
  } else {
    throw std::runtime_error("circuit: coefficient must be integer or decimal string");
  }
  return Ring(uint64_t(v), width);
}

}  // namespace

Circuit Circuit::parse(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  Circuit c;
  c.width = j.at("width").get<int>();
  if (c.width < 1 || c.width > 64) throw std::runtime_error("circuit: bad width");
  std::vector<bool> written;
  auto readWire = [&](int wi) {
    if (wi < 0 || wi >= (int)written.size() || !written[wi])
      throw std::runtime_error("circuit: wire " + std::to_string(wi) + " read before write");
  };
  for (const auto& gj : j.at("gates")) {
    Gate g;
    std::string op = gj.at("op").get<std::string>();
    if (op == "in") {
      g.kind = Gate::Kind::kIn;
      g.party = gj.at("party").get<int>();
    } else if (op == "lin") {
      g.kind = Gate::Kind::kLin;
      for (const auto& wi : gj.at("in")) g.in.push_back(wi.get<int>());
      for (const auto& cj : gj.at("coef")) g.coef.push_back(ringFromJson(cj, c.width));
      if (g.coef.size() != g.in.size()) throw std::runtime_error("circuit: coef/in mismatch");
      g.cnst = gj.contains("const") ? ringFromJson(gj.at("const"), c.width)
                                    : Ring::zero(c.width);
    } else if (op == "mul") {
      g.kind = Gate::Kind::kMul;
      for (const auto& wi : gj.at("in")) g.in.push_back(wi.get<int>());
      if (g.in.size() != 2) throw std::runtime_error("circuit: mul takes two wires");
    } else if (op == "out") {
      g.kind = Gate::Kind::kOut;
      g.in.push_back(gj.at("in").size() == 1 ? gj.at("in")[0].get<int>()
                                             : throw std::runtime_error("circuit: out takes one wire"));
    } else {
      throw std::runtime_error("circuit: unknown op " + op);
    }
    for (int wi : g.in) readWire(wi);
    if (g.kind != Gate::Kind::kOut) {
      g.out = gj.at("out").get<int>();
      if (g.out < 0) throw std::runtime_error("circuit: bad out wire");
      if (g.out >= (int)written.size()) written.resize(g.out + 1, false);
      if (written[g.out]) throw std::runtime_error("circuit: wire written twice");
      written[g.out] = true;
      c.wireCount = std::max(c.wireCount, g.out + 1);
    }
    if (g.kind == Gate::Kind::kIn && (g.party < 0 || g.party > 2))
      throw std::runtime_error("circuit: bad input party");
    c.gates.push_back(std::move(g));
  }
  return c;
}

Circuit Circuit::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("circuit: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

RingVec Circuit::evalClear(const std::map<int, Ring>& inputs) const {
  RingVec wires(wireCount, Ring::zero(width));
  RingVec outs;
  for (const Gate& g : gates) {
    switch (g.kind) {
      case Gate::Kind::kIn: {
        auto it = inputs.find(g.out);
        wires[g.out] = it == inputs.end() ? Ring::zero(width) : it->second;
        break;
      }
      case Gate::Kind::kLin: {
        Ring acc = g.cnst;
        for (size_t t = 0; t < g.in.size(); ++t) acc += wires[g.in[t]] * g.coef[t];
        wires[g.out] = acc;
        break;
      }
      case Gate::Kind::kMul:
        wires[g.out] = wires[g.in[0]] * wires[g.in[1]];
        break;
      case Gate::Kind::kOut:
        outs.push_back(wires[g.in[0]]);
        break;
    }
  }
  return outs;
}

std::vector<int> Circuit::inputWiresOf(int party) const {
  std::vector<int> ws;
  for (const Gate& g : gates)
    if (g.kind == Gate::Kind::kIn && g.party == party) ws.push_back(g.out);
  return ws;
}

size_t Circuit::outputCount() const {
  size_t n = 0;
  for (const Gate& g : gates) n += g.kind == Gate::Kind::kOut;
  return n;
}

// ---- circuit runner ----

namespace {

Shr linCombine(const std::vector<Shr>& wires, const Gate& g, int width, bool online) {
  Shr acc(width);
  for (size_t t = 0; t < g.in.size(); ++t)
    acc = acc + wires[g.in[t]].scaled(g.coef[t].v);
  acc = acc.plusConst(g.cnst);
  if (online) acc.markOnline();
  return acc;
}

// clear evaluation at the elected party over directly resubmitted inputs
Run3Result fallbackRun(int me, SimNet& net, Tally& tally, const Circuit& ckt,
                       const std::map<int, Ring>& myInputs, int ttp) {
  int w = ckt.width;
  std::vector<int> mine = ckt.inputWiresOf(me);
  RingVec mineVals;
  for (int wi : mine) mineVals.push_back(myInputs.count(wi) ? myInputs.at(wi) : Ring::zero(w));

  if (me != ttp) {
    net.send(me, ttp, Frame{kOpClear, proto::kFallback, 0, serialize(mineVals)});
    tally.addBits(proto::kFallback, Phase::kOnline, Bucket::kData,
                  uint64_t(w) * mineVals.size());
  }

  RingVec outs;
  if (me == ttp) {
    std::map<int, Ring> all;
    for (int p = 0; p < 3; ++p) {
      std::vector<int> ws = ckt.inputWiresOf(p);
      RingVec vals;
      if (p == me) {
        vals = mineVals;
      } else {
        vals = decodeOrZeros(net.recv(me, p), w, ws.size());
      }
      for (size_t i = 0; i < ws.size(); ++i) all[ws[i]] = vals[i];
    }
    outs = ckt.evalClear(all);
    for (int p = 0; p < 3; ++p) {
      if (p == me) continue;
      net.send(me, p, Frame{kOpData, proto::kFallback, 0, serialize(outs)});
      tally.addBits(proto::kFallback, Phase::kOnline, Bucket::kData, uint64_t(w) * outs.size());
    }
  } else {
    outs = decodeOrZeros(net.recv(me, ttp), w, ckt.outputCount());
  }
  if (me == 0) tally.addRounds(proto::kFallback, Phase::kOnline, 2);
  return {outs, ttp};
}

}  // namespace

Run3Result runCircuit3(int me, SimNet& net, Tally& tally, const KeyStore& ks,
                       MulPreBackend& mul, const Circuit& ckt,
                       const std::map<int, Ring>& myInputs) {
  Engine3 eng(me, net, tally, ks, mul);
  int w = ckt.width;
  std::vector<Shr> wire(ckt.wireCount, Shr(w));

  // preprocessing walk; multiplication tuples are grouped per multiplicative
  // layer so one backend call covers every gate whose inputs are already final
  std::vector<int> pendingGate;
  ShrVec pendingX, pendingY;
  std::vector<bool> pendingWire(ckt.wireCount, false);
  std::vector<MulPre3> gatePre(ckt.gates.size());
  auto flushLayer = [&]() {
    if (pendingGate.empty()) return true;
    std::vector<MulPre3> ps = eng.multPre(pendingX, pendingY);
    if (!eng.backendOutcome().delivered()) return false;
    for (size_t t = 0; t < pendingGate.size(); ++t) {
      const Gate& g = ckt.gates[pendingGate[t]];
      gatePre[pendingGate[t]] = ps[t];
      Shr z(w);
      z.a1 = ps[t].az1;
      z.a2 = ps[t].az2;
      z.g = ps[t].gz;
      wire[g.out] = z;
      pendingWire[g.out] = false;
    }
    pendingGate.clear();
    pendingX.clear();
    pendingY.clear();
    return true;
  };
  auto wantWire = [&](int wi) { return pendingWire[wi] ? flushLayer() : true; };

  bool backendTtp = false;
  for (size_t gi = 0; gi < ckt.gates.size() && !backendTtp; ++gi) {
    const Gate& g = ckt.gates[gi];
    switch (g.kind) {
      case Gate::Kind::kIn:
        wire[g.out] = eng.shPre(g.party, w, 1)[0];
        break;
      case Gate::Kind::kLin:
        for (int wi : g.in) backendTtp = backendTtp || !wantWire(wi);
        if (!backendTtp) wire[g.out] = linCombine(wire, g, w, false);
        break;
      case Gate::Kind::kMul:
        for (int wi : g.in) backendTtp = backendTtp || !wantWire(wi);
        if (backendTtp) break;
        pendingGate.push_back(int(gi));
        pendingX.push_back(wire[g.in[0]]);
        pendingY.push_back(wire[g.in[1]]);
        pendingWire[g.out] = true;
        break;
      case Gate::Kind::kOut:
        backendTtp = backendTtp || !wantWire(g.in[0]);
        break;
    }
  }
  if (!backendTtp) backendTtp = !flushLayer();
  if (backendTtp)
    return fallbackRun(me, net, tally, ckt, myInputs, eng.backendOutcome().ttp);

  ShrVec outPre;
  std::vector<int> outWires;
  for (const Gate& g : ckt.gates)
    if (g.kind == Gate::Kind::kOut) outWires.push_back(g.in[0]);
  for (int wi : outWires) outPre.push_back(wire[wi]);
  std::vector<RecPre3> recpre = eng.recPre(outPre);

  JmpOutcome v = eng.verify();
  if (!v.delivered()) return fallbackRun(me, net, tally, ckt, myInputs, v.ttp);

  for (size_t gi = 0; gi < ckt.gates.size(); ++gi) {
    const Gate& g = ckt.gates[gi];
    switch (g.kind) {
      case Gate::Kind::kIn: {
        ShrVec one{wire[g.out]};
        RingVec vin{me == g.party && myInputs.count(g.out) ? myInputs.at(g.out)
                                                           : Ring::zero(w)};
        eng.shOnline(g.party, one, vin);
        wire[g.out] = one[0];
        break;
      }
      case Gate::Kind::kLin:
        wire[g.out] = linCombine(wire, g, w, true);
        break;
      case Gate::Kind::kMul: {
        ShrVec zs = eng.multOnline({wire[g.in[0]]}, {wire[g.in[1]]}, {gatePre[gi]});
        wire[g.out] = zs[0];
        break;
      }
      case Gate::Kind::kOut:
        break;
    }
  }
  eng.flushDeferred();

  v = eng.verify();
  if (!v.delivered()) return fallbackRun(me, net, tally, ckt, myInputs, v.ttp);

  ShrVec outs;
  for (int wi : outWires) outs.push_back(wire[wi]);
  return {eng.recOnline(outs, recpre), -1};
}

}  // namespace rmpc
