#include "rmpc/zkdotp.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <stdexcept>

namespace rmpc {

namespace {

std::vector<uint8_t> serializeGr(const GrCtx& ctx, const std::vector<GrEl>& els) {
  std::vector<uint8_t> out;
  out.reserve(els.size() * ctx.byteLen());
  for (const GrEl& e : els) {
    auto b = ctx.serialize(e);
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

// a missing or malformed transfer decodes to zeros; the jmp pass over the same
// bytes, or the checks themselves, catch the substitution
std::vector<GrEl> grOrZeros(const GrCtx& ctx, const std::vector<uint8_t>& buf, size_t count) {
  std::vector<GrEl> out(count, ctx.zero());
  if (buf.size() != count * ctx.byteLen()) return out;
  for (size_t i = 0; i < count; ++i) out[i] = ctx.deserialize(buf.data() + i * ctx.byteLen());
  return out;
}

RingVec ringsOrZeros(const Frame& f, int width, size_t count) {
  size_t step = size_t((width + 7) / 8);
  if (f.silent() || f.payload.size() != step * count) return RingVec(count, Ring::zero(width));
  return deserialize(f.payload, width, count);
}

std::vector<uint8_t> digestBytes(const Digest& d) {
  return std::vector<uint8_t>(d.bytes.begin(), d.bytes.end());
}

void putU32(std::vector<uint8_t>& v, uint32_t x) {
  for (int i = 0; i < 4; ++i) v.push_back(uint8_t(x >> (8 * i)));
}

void putU64(std::vector<uint8_t>& v, uint64_t x) {
  for (int i = 0; i < 8; ++i) v.push_back(uint8_t(x >> (8 * i)));
}

uint32_t getU32(const uint8_t* p) {
  uint32_t x = 0;
  for (int i = 0; i < 4; ++i) x |= uint32_t(p[i]) << (8 * i);
  return x;
}

uint64_t getU64(const uint8_t* p) {
  uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= uint64_t(p[i]) << (8 * i);
  return x;
}

}  // namespace

ZkParams chooseParams(size_t m, size_t n, int secBits) {
  if (m == 0 || n == 0) throw std::invalid_argument("chooseParams: empty batch");
  ZkParams p;
  p.m = m;
  p.n = n;
  p.u = 4 * n + 2;

  // L doubles until u*L overtakes 2M; past that point the gap only widens
  unsigned __int128 bestDiff = 0;
  for (size_t L = 1;; L *= 2) {
    size_t M = (m + L - 1) / L;
    unsigned __int128 a = (unsigned __int128)p.u * L;
    unsigned __int128 b = (unsigned __int128)2 * M;
    unsigned __int128 diff = a > b ? a - b : b - a;
    if (p.L == 0 || diff < bestDiff) {
      bestDiff = diff;
      p.L = L;
      p.M = M;
    }
    if (a >= b) break;
  }

  p.gamma = std::bit_width(uint64_t(2 * p.M - 1));
  int need = p.gamma + secBits;
  for (int d : grSupportedDegrees())
    if (d >= need) {
      p.d = d;
      break;
    }
  if (p.d == 0)
    throw std::invalid_argument(
        "chooseParams: no supported extension degree reaches slack " + std::to_string(p.gamma) +
        " + " + std::to_string(secBits) + " bits");
  if (p.d < 63 && (uint64_t(1) << p.d) <= 2 * p.M + 1)
    throw std::invalid_argument("chooseParams: extension too small for the node count");

  p.costPerTuple = double(2 * p.M) * p.d / double(m);
  p.elemsPerParty = double(p.u * p.L + 2 * p.M + 3) * p.d / double(m);
  return p;
}

std::vector<uint8_t> ZkProof::serialize(const GrCtx& ctx) const {
  std::vector<uint8_t> out;
  out.reserve(28 + coeffs.size() * ctx.byteLen());
  putU64(out, m);
  putU64(out, n);
  putU32(out, L);
  putU32(out, M);
  putU32(out, d);
  auto body = serializeGr(ctx, coeffs);
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

std::optional<ZkProof> ZkProof::parse(const GrCtx& ctx, const ZkParams& want,
                                      const std::vector<uint8_t>& bytes) {
  size_t nc = 2 * want.M + 1;
  if (bytes.size() != 28 + nc * ctx.byteLen()) return std::nullopt;
  ZkProof pf;
  pf.m = getU64(bytes.data());
  pf.n = getU64(bytes.data() + 8);
  pf.L = getU32(bytes.data() + 16);
  pf.M = getU32(bytes.data() + 20);
  pf.d = getU32(bytes.data() + 24);
  if (pf.m != want.m || pf.n != want.n || pf.L != want.L || pf.M != want.M ||
      int(pf.d) != want.d)
    return std::nullopt;
  pf.coeffs = grOrZeros(ctx, {bytes.begin() + 28, bytes.end()}, nc);
  return pf;
}

VerifiedDotp::VerifiedDotp(SimNet& net, Tally& tally, const KeyStore& ks, int secBits)
    : net_(net), tally_(tally), ks_(ks), me_(ks.self()), secBits_(secBits) {}

MulPreResult VerifiedDotp::run(int me, uint16_t protoId, const std::vector<Sgr>& dIn,
                               const std::vector<Sgr>& eIn, size_t group) {
  if (me != me_) throw std::logic_error("zkdotp: backend bound to another party");
  if (group == 0 || dIn.size() != eIn.size() || dIn.empty() || dIn.size() % group != 0)
    throw std::logic_error("zkdotp: bad tuple shape");

  size_t m0 = dIn.size() / group;   // dot products in this batch
  size_t n = group;
  int w = dIn[0].lo.w;
  uint32_t inst = seq_++;
  int nx = (me_ + 1) % 3, pv = (me_ + 2) % 3;
  bool scribe = me_ == 0;

  ZkParams zp;
  if (pinned_) {
    zp = *pinned_;
    if (zp.n != n || zp.u != 4 * n + 2 || zp.M == 0 || zp.L == 0 || zp.padded() < m0 ||
        (zp.d < 63 && (uint64_t(1) << zp.d) <= 2 * zp.M + 1))
      throw std::logic_error("zkdotp: pinned params do not fit the batch");
  } else {
    zp = chooseParams(m0, n, secBits_);
  }
  size_t u = zp.u, L = zp.L, M = zp.M;
  size_t uL = u * L, nc = 2 * M + 1;
  GrCtx gr(w, zp.d);
  Ring zw = Ring::zero(w);
  std::vector<Sgr> zeroLegs(m0, Sgr{zw, zw});

  // the weights behind each checking wave only become safe to use once the wave
  // that binds them has been verified, hence one hub per stage
  JmpHub hubSemi(net_, tally_, me_);
  JmpHub hubProof(net_, tally_, me_);
  JmpHub hubShares(net_, tally_, me_);
  JmpHub hubVerdict(net_, tally_, me_);

  auto sid = [&](uint32_t sub) { return SampleId{proto::kZkDotp, inst, sub}; };

  // pair streams behind the zero shares; each side of a stream is held by two
  // parties, which is exactly the split the checkers need later
  RingVec rUp = ks_.pairKey(me_, nx).rings(sid(1), w, m0);
  RingVec rDown = ks_.pairKey(pv, me_).rings(sid(1), w, m0);

  // ---- semi-honest pass: f = zeta + sum of the three replicated cross terms ----
  RingVec zeta(m0), cRing(m0), fMine(m0);
  for (size_t t = 0; t < m0; ++t) {
    zeta[t] = rUp[t] - rDown[t];
    Ring acc = zeta[t];
    for (size_t j = 0; j < n; ++j) {
      const Sgr& a = dIn[t * n + j];
      const Sgr& b = eIn[t * n + j];
      acc = acc + a.lo * b.lo + a.lo * b.hi + a.hi * b.lo;
    }
    fMine[t] = acc;
  }
  if (net_.decide(me_, {kSiteZkTamperSent, inst, 0}) == Deviate::kWrongBit)
    fMine[0] = fMine[0] + Ring(1, w);
  for (size_t t = 0; t < m0; ++t) {
    Ring acc = zeta[t];
    for (size_t j = 0; j < n; ++j) {
      const Sgr& a = dIn[t * n + j];
      const Sgr& b = eIn[t * n + j];
      acc = acc + a.lo * b.lo + a.lo * b.hi + a.hi * b.lo;
    }
    cRing[t] = acc - fMine[t];
  }

  std::vector<uint8_t> semiBytes = serialize(fMine);
  net_.send(me_, pv, Frame{kOpData, protoId, inst * 4 + 0, semiBytes});
  tally_.addBits(protoId, Phase::kPre, Bucket::kData, uint64_t(m0) * w);
  Frame semiGot = net_.recv(me_, nx);
  RingVec fNext = ringsOrZeros(semiGot, w, m0);
  if (scribe) tally_.addRounds(protoId, Phase::kPre, 1);

  // ---- bind the sent messages, then derive the inner combination weights ----
  uint16_t bidC[3];
  for (int i = 0; i < 3; ++i) bidC[i] = hubSemi.batch(i, (i + 2) % 3, (i + 1) % 3, Phase::kPre);

  Digest cSeen[3];
  {
    auto salt = ks_.pairKey(me_, pv).bytes(sid(2), 32);
    cSeen[me_] = commitDigest(semiBytes, salt, "zk/fc");
    hubSemi.send(bidC[me_], protoId, inst * 4 + 2, Bucket::kVerify, digestBytes(cSeen[me_]), 256);

    auto saltNx = ks_.pairKey(nx, me_).bytes(sid(2), 32);
    cSeen[nx] = commitDigest(semiGot.silent() ? std::vector<uint8_t>{} : semiGot.payload,
                             saltNx, "zk/fc");
    hubSemi.echo(bidC[nx], digestBytes(cSeen[nx]));

    auto got = hubSemi.recv(bidC[pv]);
    if (got && got->size() == 32) std::copy_n(got->data(), 32, cSeen[pv].bytes.begin());
  }
  // settle the binding before anything derived from it crosses a wire, so honest
  // parties can never be driven into contradicting each other downstream
  if (JmpOutcome oc = hubSemi.verifyAll(); !oc.delivered()) return {std::move(zeroLegs), oc};

  HashAcc thAcc;
  thAcc.put({'z', 'k', '/', 't', 'h'});
  for (int i = 0; i < 3; ++i) thAcc.put(digestBytes(cSeen[i]));
  Prf thGen = ks_.common().seeded(thAcc.done());

  std::vector<std::vector<GrEl>> theta(3);
  for (int i = 0; i < 3; ++i) theta[i] = thGen.grEls(gr, sid(0x10 + i), L);

  // my full view of my own inputs, and the pieces of a neighbour prover's inputs
  // that sit in my replicated share (pads beyond m0 are identically zero)
  auto xFull = [&](size_t t, size_t s) -> Ring {
    if (t >= m0) return zw;
    if (s == 4 * n) return zeta[t];
    if (s == 4 * n + 1) return fMine[t];
    const Sgr& g = (s & 2) ? eIn[t * n + s / 4] : dIn[t * n + s / 4];
    return (s & 1) ? g.hi : g.lo;
  };
  // checker one step behind prover nx: holds the low components and the message
  auto pieceAsB = [&](size_t t, size_t s) -> Ring {
    if (t >= m0) return zw;
    if (s == 4 * n) return zw - rUp[t];
    if (s == 4 * n + 1) return fNext[t];
    if (s & 1) return zw;
    const Sgr& g = (s & 2) ? eIn[t * n + s / 4] : dIn[t * n + s / 4];
    return g.hi;
  };
  // checker one step ahead of prover pv: holds the high components
  auto pieceAsA = [&](size_t t, size_t s) -> Ring {
    if (t >= m0) return zw;
    if (s == 4 * n) return rDown[t];
    if (s == 4 * n + 1 || !(s & 1)) return zw;
    const Sgr& g = (s & 2) ? eIn[t * n + s / 4] : dIn[t * n + s / 4];
    return g.lo;
  };
  // what the checker behind me is about to derive from its own view of my inputs
  auto pieceBSim = [&](size_t t, size_t s) -> Ring {
    if (t >= m0) return zw;
    if (s == 4 * n) return zw - rDown[t];
    if (s == 4 * n + 1) return fMine[t];
    if (s & 1) return zw;
    const Sgr& g = (s & 2) ? eIn[t * n + s / 4] : dIn[t * n + s / 4];
    return g.lo;
  };

  // degree-2 checking circuit over the extension
  auto cGr = [&](const GrEl* x) {
    GrEl acc = x[4 * n];
    for (size_t j = 0; j < n; ++j) {
      acc = gr.add(acc, gr.mul(x[4 * j], x[4 * j + 2]));
      acc = gr.add(acc, gr.mul(x[4 * j], x[4 * j + 3]));
      acc = gr.add(acc, gr.mul(x[4 * j + 1], x[4 * j + 2]));
    }
    return gr.sub(acc, x[4 * n + 1]);
  };
  auto gOf = [&](const std::vector<GrEl>& fr, const std::vector<GrEl>& th) {
    GrEl acc = gr.zero();
    for (size_t t = 0; t < L; ++t) acc = gr.add(acc, gr.mul(th[t], cGr(fr.data() + t * u)));
    return acc;
  };

  NodeBasis fBasis(gr, 0, M + 1);

  std::vector<GrEl> maskMineA = ks_.pairKey(me_, nx).grEls(gr, sid(5), uL);
  std::vector<GrEl> maskMineB = ks_.pairKey(pv, me_).grEls(gr, sid(6), uL);

  // ---- prove my own batch ----
  bool claimClean = net_.decide(me_, {kSiteZkClaimClean, inst, 0}) == Deviate::kWrongBit;
  std::vector<GrEl> myCoeffs;
  {
    std::vector<GrEl> pVals(nc, gr.zero());
    if (!claimClean) {
      for (size_t g2 = 0; g2 < M; ++g2)
        for (size_t t = 0; t < L; ++t) {
          size_t tu = g2 * L + t;
          if (tu >= m0 || cRing[tu].v == 0) continue;
          pVals[g2] = gr.add(pVals[g2], gr.scale(cRing[tu], theta[me_][t]));
        }
    }
    std::vector<GrEl> fx(uL);
    for (size_t ex = 0; ex <= M; ++ex) {
      auto row = fBasis.evalRow(gr.liftPoint(M + 1 + ex));
      for (size_t t = 0; t < L; ++t)
        for (size_t s = 0; s < u; ++s) {
          size_t j = t * u + s;
          GrEl acc = gr.mul(row[0], gr.add(maskMineA[j], maskMineB[j]));
          for (size_t k = 1; k <= M; ++k) {
            Ring x = xFull((k - 1) * L + t, s);
            if (x.v) acc = gr.add(acc, gr.scale(x, row[k]));
          }
          fx[j] = std::move(acc);
        }
      pVals[M + ex] = gOf(fx, theta[me_]);
    }
    NodeBasis pBasis(gr, 1, nc);
    myCoeffs = pBasis.interpolate(pVals);
  }

  std::vector<GrEl> myShareA = ks_.pairKey(me_, nx).grEls(gr, sid(3), nc);
  std::vector<GrEl> myShareB(nc);
  for (size_t t = 0; t < nc; ++t) myShareB[t] = gr.sub(myCoeffs[t], myShareA[t]);
  std::vector<uint8_t> proofMsg =
      ZkProof{m0, n, uint32_t(L), uint32_t(M), uint32_t(zp.d), myShareB}.serialize(gr);
  net_.send(me_, pv, Frame{kOpProof, protoId, inst * 4 + 1, proofMsg});
  tally_.addBits(protoId, Phase::kPre, Bucket::kVerify, uint64_t(nc) * zp.d * w);

  // as the checker behind prover nx, take my explicit share of its proof
  Frame proofGot = net_.recv(me_, nx);
  std::vector<GrEl> pShareOfNext(nc, gr.zero());
  if (!proofGot.silent())
    if (auto pf = ZkProof::parse(gr, zp, proofGot.payload)) pShareOfNext = std::move(pf->coeffs);

  // ---- bind the proofs, then derive the outer weights and the query point ----
  uint16_t bidP[3];
  for (int i = 0; i < 3; ++i) bidP[i] = hubProof.batch(i, (i + 2) % 3, (i + 1) % 3, Phase::kPre);

  Digest piSeen[3];
  {
    auto salt = ks_.pairKey(me_, pv).bytes(sid(4), 32);
    piSeen[me_] = commitDigest(proofMsg, salt, "zk/pc");
    hubProof.send(bidP[me_], protoId, inst * 4 + 3, Bucket::kVerify, digestBytes(piSeen[me_]),
                  256);

    auto saltNx = ks_.pairKey(nx, me_).bytes(sid(4), 32);
    piSeen[nx] = commitDigest(proofGot.silent() ? std::vector<uint8_t>{} : proofGot.payload,
                              saltNx, "zk/pc");
    hubProof.echo(bidP[nx], digestBytes(piSeen[nx]));

    auto got = hubProof.recv(bidP[pv]);
    if (got && got->size() == 32) std::copy_n(got->data(), 32, piSeen[pv].bytes.begin());
  }
  if (JmpOutcome oc = hubProof.verifyAll(); !oc.delivered()) return {std::move(zeroLegs), oc};

  HashAcc erAcc;
  erAcc.put({'z', 'k', '/', 'e', 'r'});
  for (int i = 0; i < 3; ++i) erAcc.put(digestBytes(piSeen[i]));
  Prf erGen = ks_.common().seeded(erAcc.done());

  std::vector<std::vector<GrEl>> eta(3);
  std::vector<GrEl> rPt(3);
  for (int i = 0; i < 3; ++i) {
    eta[i] = erGen.grEls(gr, sid(0x20 + i), M);
    uint64_t kmask = zp.d >= 63 ? ~uint64_t(0) : (uint64_t(1) << zp.d) - 1;
    for (uint32_t at = 0;; ++at) {
      if (at == 256) throw std::logic_error("zkdotp: query point sampling stalled");
      auto kb = erGen.bytes({proto::kZkDotp, inst, 0x30000000u + uint32_t(i << 16) + at}, 8);
      uint64_t k = getU64(kb.data()) & kmask;
      if (k > M) {
        rPt[i] = gr.liftPoint(k);
        break;
      }
    }
  }

  std::vector<GrEl> rowR[3];
  for (int i = 0; i < 3; ++i) rowR[i] = fBasis.evalRow(rPt[i]);

  auto shareOfF = [&](int i, const std::vector<GrEl>& maskHalf, auto&& piece) {
    std::vector<GrEl> out(uL);
    for (size_t t = 0; t < L; ++t)
      for (size_t s = 0; s < u; ++s) {
        size_t j = t * u + s;
        GrEl acc = gr.mul(rowR[i][0], maskHalf[j]);
        for (size_t k = 1; k <= M; ++k) {
          Ring x = piece((k - 1) * L + t, s);
          if (x.v) acc = gr.add(acc, gr.scale(x, rowR[i][k]));
        }
        out[j] = std::move(acc);
      }
    return out;
  };
  auto shareOfB = [&](int i, const std::vector<GrEl>& pShare) {
    GrEl acc = gr.zero();
    for (size_t l = 1; l <= M; ++l)
      acc = gr.add(acc, gr.mul(eta[i][l - 1], gr.evalPoly(pShare, gr.liftPoint(l))));
    return acc;
  };
  auto checkerMsg = [&](int i, const std::vector<GrEl>& pShare, const std::vector<GrEl>& fSh) {
    std::vector<GrEl> out;
    out.reserve(uL + 2);
    out.push_back(shareOfB(i, pShare));
    out.insert(out.end(), fSh.begin(), fSh.end());
    out.push_back(gr.evalPoly(pShare, rPt[i]));
    return out;
  };

  // ---- checker exchange: the party behind each prover sends its half to the
  // party ahead, with the prover backing the relay ----
  uint16_t bidV[3];
  for (int i = 0; i < 3; ++i)
    bidV[i] = hubShares.batch((i + 2) % 3, i, (i + 1) % 3, Phase::kPre);

  std::vector<GrEl> aheadHalf;  // my half for rotation pv, kept for the verdict
  std::vector<GrEl> behindGot;  // the half received as the party ahead of pv
  for (int i = 0; i < 3; ++i) {
    if (i == int(nx)) {
      auto msg = checkerMsg(
          i, pShareOfNext, shareOfF(i, ks_.pairKey(me_, nx).grEls(gr, sid(6), uL), pieceAsB));
      hubShares.send(bidV[i], protoId, inst * 4 + 2, Bucket::kVerify, serializeGr(gr, msg),
               uint64_t(uL + 2) * zp.d * w);
    } else if (i == me_) {
      auto msg = checkerMsg(i, myShareB, shareOfF(i, maskMineB, pieceBSim));
      hubShares.echo(bidV[i], serializeGr(gr, msg));
    } else {
      aheadHalf = checkerMsg(i, ks_.pairKey(pv, me_).grEls(gr, sid(3), nc),
                             shareOfF(i, ks_.pairKey(pv, me_).grEls(gr, sid(5), uL), pieceAsA));
      auto got = hubShares.recv(bidV[i]);
      behindGot = grOrZeros(gr, got.value_or(std::vector<uint8_t>{}), uL + 2);
    }
  }

  // ---- verdicts: the combining checker announces, the prover backs it ----
  auto combine = [&](int i, const std::vector<GrEl>& half1, const std::vector<GrEl>& half2) {
    GrEl b = gr.add(half1[0], half2[0]);
    GrEl pr = gr.add(half1[uL + 1], half2[uL + 1]);
    std::vector<GrEl> fr(uL);
    for (size_t j = 0; j < uL; ++j) fr[j] = gr.add(half1[1 + j], half2[1 + j]);
    return gr.isZero(b) && gr.isZero(gr.sub(pr, gOf(fr, theta[i])));
  };

  if (JmpOutcome oc = hubShares.verifyAll(); !oc.delivered())
    return {std::move(zeroLegs), oc};

  uint16_t bidW[3];
  for (int i = 0; i < 3; ++i)
    bidW[i] = hubVerdict.batch((i + 1) % 3, i, (i + 2) % 3, Phase::kPre);

  bool verdict[3] = {false, false, false};
  for (int i = 0; i < 3; ++i) {
    if (i == int(pv)) {
      verdict[i] = combine(i, aheadHalf, behindGot);
      hubVerdict.send(bidW[i], protoId, inst * 4 + 3, Bucket::kVerify,
               std::vector<uint8_t>{uint8_t(verdict[i] ? 1 : 0)}, 8);
    } else if (i == me_) {
      // simulate both checkers from the full view to back the announcement
      std::vector<GrEl> fr(uL);
      for (size_t t = 0; t < L; ++t)
        for (size_t s = 0; s < u; ++s) {
          size_t j = t * u + s;
          GrEl acc = gr.mul(rowR[i][0], gr.add(maskMineA[j], maskMineB[j]));
          for (size_t k = 1; k <= M; ++k) {
            Ring x = xFull((k - 1) * L + t, s);
            if (x.v) acc = gr.add(acc, gr.scale(x, rowR[i][k]));
          }
          fr[j] = std::move(acc);
        }
      GrEl b = gr.zero();
      for (size_t l = 1; l <= M; ++l)
        b = gr.add(b, gr.mul(eta[i][l - 1], gr.evalPoly(myCoeffs, gr.liftPoint(l))));
      GrEl pr = gr.evalPoly(myCoeffs, rPt[i]);
      verdict[i] = gr.isZero(b) && gr.isZero(gr.sub(pr, gOf(fr, theta[i])));
      hubVerdict.echo(bidW[i], std::vector<uint8_t>{uint8_t(verdict[i] ? 1 : 0)});
    } else {
      auto got = hubVerdict.recv(bidW[i]);
      verdict[i] = got && got->size() == 1 && (*got)[0] == 1;
    }
  }

  if (scribe) tally_.addOnceRounds(protoId, Phase::kPre, 5);

  if (JmpOutcome oc = hubVerdict.verifyAll(); !oc.delivered())
    return {std::move(zeroLegs), oc};
  for (int i = 0; i < 3; ++i)
    if (!verdict[i]) {
      // a cleanly agreed rejection pins the prover, so the party after it is honest
      return {std::move(zeroLegs), JmpOutcome{(i + 1) % 3}};
    }

  std::vector<Sgr> legs(m0);
  for (size_t t = 0; t < m0; ++t) legs[t] = Sgr{fMine[t], fNext[t]};
  return {std::move(legs), {}};
}

}  // namespace rmpc
