#pragma once

#include <array>
#include <cassert>
#include <stdexcept>
#include <vector>

#include "rmpc/ring.hpp"

namespace rmpc {

// Per-party record of a masked sharing of v: beta = v + alpha, alpha = a1 + a2,
// blinding gamma, and bg = beta + gamma. Which slots a party actually holds:
//   P0: a1, a2, bg          P1: a1, b, g          P2: a2, b, g
//   P3 (4PC): a1, a2, g
// All five slots participate in linear ops uniformly; unheld slots carry whatever
// the algebra produces and must never be read for that party (holdsSlot guards).
// A share is preprocessing-complete once alpha and gamma exist, online-complete once
// beta does too. Ops that consume beta assert the online tag.
enum class ShrPhase : uint8_t { kPre, kOnline };

struct Shr {
  Ring a1, a2, b, g, bg;
  ShrPhase phase = ShrPhase::kPre;

  Shr() = default;
  explicit Shr(int w) : a1(0, w), a2(0, w), b(0, w), g(0, w), bg(0, w) {}
  Shr(Ring a1_, Ring a2_, Ring b_, Ring g_)
      : a1(a1_), a2(a2_), b(b_), g(g_), bg(b_ + g_), phase(ShrPhase::kOnline) {}

  int width() const { return b.w; }
  bool isOnline() const { return phase == ShrPhase::kOnline; }
  void markOnline() { phase = ShrPhase::kOnline; }

  friend Shr operator+(const Shr& x, const Shr& y) {
    Shr r;
    r.a1 = x.a1 + y.a1;
    r.a2 = x.a2 + y.a2;
    r.b = x.b + y.b;
    r.g = x.g + y.g;
    r.bg = x.bg + y.bg;
    r.phase = (x.isOnline() && y.isOnline()) ? ShrPhase::kOnline : ShrPhase::kPre;
    return r;
  }
  friend Shr operator-(const Shr& x, const Shr& y) {
    Shr r;
    r.a1 = x.a1 - y.a1;
    r.a2 = x.a2 - y.a2;
    r.b = x.b - y.b;
    r.g = x.g - y.g;
    r.bg = x.bg - y.bg;
    r.phase = (x.isOnline() && y.isOnline()) ? ShrPhase::kOnline : ShrPhase::kPre;
    return r;
  }
  Shr scaled(uint64_t c) const {
    Shr r;
    r.a1 = a1.scaled(c);
    r.a2 = a2.scaled(c);
    r.b = b.scaled(c);
    r.g = g.scaled(c);
    r.bg = bg.scaled(c);
    r.phase = phase;
    return r;
  }
  // v + c shifts beta (and its blinded copy) only
  Shr plusConst(Ring c) const {
    Shr r = *this;
    r.b += c;
    r.bg += c;
    return r;
  }
  // boolean complement: flip beta
  Shr flipped() const {
    assert(width() == 1);
    return plusConst(Ring::one(1));
  }
};

inline bool holdsSlot(int party, char slot) {
  switch (party) {
    case 0: return slot == '1' || slot == '2' || slot == 'c';  // a1, a2, bg
    case 1: return slot == '1' || slot == 'b' || slot == 'g';
    case 2: return slot == '2' || slot == 'b' || slot == 'g';
    case 3: return slot == '1' || slot == '2' || slot == 'g';
    default: return false;
  }
}

// [.]-sharing: v = s1 + s2 (s1 with P1, s2 with P2, both with P0)
struct Sqr2 {
  Ring s1, s2;
};

// (.)-sharing as held by P_s: lo = v_s, hi = v_{s+1 mod 3}
struct Sgr {
  Ring lo, hi;
  friend Sgr operator+(const Sgr& x, const Sgr& y) { return {x.lo + y.lo, x.hi + y.hi}; }
  Sgr scaled(uint64_t c) const { return {lo.scaled(c), hi.scaled(c)}; }
};

// all three additive legs, as held by P3 in the 4PC sgr-sharing
struct SgrFull {
  Ring v0, v1, v2;
  Sgr forParty(int s) const {
    Ring vs[3] = {v0, v1, v2};
    return {vs[s], vs[(s + 1) % 3]};
  }
};

// (.)-shares of d = gamma_x + alpha_x, built locally from a party's masked share:
// legs are (d_0, d_1, d_2) = ([alpha]_2, [alpha]_1, gamma).
inline Sgr buildDE(const Shr& x, int party) {
  switch (party) {
    case 0: return {x.a2, x.a1};
    case 1: return {x.a1, x.g};
    case 2: return {x.g, x.a2};
    default: throw std::logic_error("buildDE: party out of range");
  }
}
inline SgrFull buildDEFull(const Shr& x) { return {x.a2, x.a1, x.g}; }

// Non-interactive joint sharing of v known to a pair since preprocessing, per the
// share-assignment table; r is a fresh common sample. For pair (P1,P2) the value may
// even be online data: P0's component is r alone.
enum class JointPair { P1P2, P1P0, P2P0 };

inline Shr jointConstShare(JointPair pair, int party, Ring v, Ring r) {
  int w = v.w;
  Ring z = Ring::zero(w);
  switch (pair) {
    case JointPair::P1P2: {
      Shr s(z, z, v, r - v);
      if (party == 0) s.bg = r;  // P0 derives beta+gamma without knowing v
      return s;
    }
    case JointPair::P1P0:
      return Shr(-v, z, z, r);
    case JointPair::P2P0:
      return Shr(z, -v, z, r);
  }
  throw std::logic_error("jointConstShare: bad pair");
}

// local conversion of a 4PC (.)-sharing to the masked format:
// [alpha]_1 = -v_1, [alpha]_2 = -v_0, beta = v_2, gamma = -v_2
inline Shr sgrToShr4(const Sgr& s, int party) {
  int w = s.lo.w;
  Shr r(w);
  switch (party) {
    case 0:
      r.a1 = -s.hi;
      r.a2 = -s.lo;
      r.bg = Ring::zero(w);
      break;
    case 1:
      r.a1 = -s.lo;
      r.b = s.hi;
      r.g = -s.hi;
      r.bg = Ring::zero(w);
      break;
    case 2:
      r.a2 = -s.hi;
      r.b = s.lo;
      r.g = -s.lo;
      r.bg = Ring::zero(w);
      break;
    default:
      throw std::logic_error("sgrToShr4: use sgrToShr4Full for P3");
  }
  r.markOnline();
  return r;
}
inline Shr sgrToShr4Full(const SgrFull& s) {
  Shr r(s.v0.w);
  r.a1 = -s.v1;
  r.a2 = -s.v0;
  r.g = -s.v2;
  r.b = s.v2;  // P3 does not hold beta, but it happens to know it here
  r.bg = Ring::zero(s.v0.w);
  r.markOnline();
  return r;
}

// Local bit decomposition of v = beta + (-[alpha]_1) + (-[alpha]_2): every bit of
// each summand is known to one pair, so each gets a non-interactive boolean sharing
// through the matching joint-const column. r must hold 3*width fresh width-1 samples
// common to all parties. Returns the three summands' bit-sharings, LSB first.
inline std::array<std::vector<Shr>, 3> bitDecomposeLocal(const Shr& v, int party,
                                                         const RingVec& r) {
  int w = v.width();
  assert((int)r.size() == 3 * w);
  Ring v0 = v.b, v1 = -v.a1, v2 = -v.a2;
  Ring z = Ring::zero(1);
  std::array<std::vector<Shr>, 3> out;
  for (auto& col : out) col.reserve(w);
  for (int i = 0; i < w; ++i) {
    assert(r[3 * i].w == 1);
    Ring b0(v0.bit(i), 1), b1(v1.bit(i), 1), b2(v2.bit(i), 1);
    out[0].push_back(jointConstShare(JointPair::P1P2, party, party == 0 ? z : b0, r[3 * i]));
    out[1].push_back(jointConstShare(JointPair::P1P0, party, party == 2 ? z : b1, r[3 * i + 1]));
    out[2].push_back(jointConstShare(JointPair::P2P0, party, party == 1 ? z : b2, r[3 * i + 2]));
  }
  return out;
}

// ---- harness-side views (test oracles, not protocol data) ----

template <size_t N>
struct ShareView {
  std::array<Shr, N> p;
  int width() const { return p[1].width(); }

  // replication consistency across the holders of each slot
  void checkConsistent() const {
    if (!(p[0].a1 == p[1].a1)) throw std::logic_error("a1 mismatch P0/P1");
    if (!(p[0].a2 == p[2].a2)) throw std::logic_error("a2 mismatch P0/P2");
    if (!(p[1].b == p[2].b)) throw std::logic_error("beta mismatch P1/P2");
    if (!(p[1].g == p[2].g)) throw std::logic_error("gamma mismatch P1/P2");
    if (!(p[0].bg == p[1].b + p[1].g)) throw std::logic_error("beta+gamma mismatch P0");
    if constexpr (N == 4) {
      if (!(p[3].a1 == p[0].a1)) throw std::logic_error("a1 mismatch P3");
      if (!(p[3].a2 == p[0].a2)) throw std::logic_error("a2 mismatch P3");
      if (!(p[3].g == p[1].g)) throw std::logic_error("gamma mismatch P3");
    }
  }
  Ring reconstruct() const {
    for (const auto& sh : p)
      if (!sh.isOnline()) throw std::logic_error("reconstruct: share not online-complete");
    checkConsistent();
    return p[1].b - p[0].a1 - p[0].a2;
  }
};

using ShareView3 = ShareView<3>;
using ShareView4 = ShareView<4>;

inline Ring reconstructSgr(const Sgr& atP0, const Sgr& atP1, const Sgr& atP2) {
  if (!(atP0.hi == atP1.lo) || !(atP1.hi == atP2.lo) || !(atP2.hi == atP0.lo))
    throw std::logic_error("sgr replication mismatch");
  return atP0.lo + atP1.lo + atP2.lo;
}

using ShrVec = std::vector<Shr>;

}  // namespace rmpc
