#include "rmpc/gr.hpp"

#include <cassert>
#include <stdexcept>

namespace rmpc {

namespace {

struct DegPoly {
  int d;
  uint64_t fLow;
};

// Frozen from a brute-force irreducibility search (smallest-weight, then smallest
// exponents); the gr tests re-verify irreducibility independently.
constexpr DegPoly kModuli[] = {
    {2, 0x3},           // x^2 + x + 1
    {8, 0x1B},          // x^8 + x^4 + x^3 + x + 1
    {15, 0x3},          // x^15 + x + 1
    {16, 0x2B},         // x^16 + x^5 + x^3 + x + 1
    {17, 0x9},          // x^17 + x^3 + 1
    {20, 0x9},          // x^20 + x^3 + 1
    {24, 0x1B},         // x^24 + x^4 + x^3 + x + 1
    {32, 0x8D},         // x^32 + x^7 + x^3 + x^2 + 1
    {47, 0x21},         // x^47 + x^5 + 1
    {57, 0x11},         // x^57 + x^4 + 1
    {62, 0x20000001},   // x^62 + x^29 + 1
    {67, 0x27},         // x^67 + x^5 + x^2 + x + 1
    {72, 0x609},        // x^72 + x^10 + x^9 + x^3 + 1
};

// GF(2)[x] arithmetic on two-limb bitmasks, used only to seed grInv.
struct F2Poly {
  uint64_t lo = 0, hi = 0;
  bool zero() const { return !(lo | hi); }
  bool bit(int i) const { return i < 64 ? (lo >> i) & 1 : (hi >> (i - 64)) & 1; }
  void flip(int i) { (i < 64 ? lo : hi) ^= 1ull << (i & 63); }
  int deg() const {
    if (hi) return 127 - __builtin_clzll(hi);
    if (lo) return 63 - __builtin_clzll(lo);
    return -1;
  }
  F2Poly shl(int s) const {
    F2Poly r;
    if (s == 0) return *this;
    if (s >= 64) {
      r.hi = lo << (s - 64);
    } else {
      r.lo = lo << s;
      r.hi = (hi << s) | (lo >> (64 - s));
    }
    return r;
  }
  friend F2Poly operator^(F2Poly a, F2Poly b) { return {a.lo ^ b.lo, a.hi ^ b.hi}; }
};

F2Poly f2Mod(F2Poly a, const F2Poly& f) {
  int df = f.deg();
  for (int i = a.deg(); i >= df; i = a.deg()) a = a ^ f.shl(i - df);
  return a;
}

F2Poly f2Mul(const F2Poly& a, const F2Poly& b, const F2Poly& f) {
  F2Poly acc;
  for (int i = 0; i <= a.deg(); ++i)
    if (a.bit(i)) acc = acc ^ b.shl(i);
  return f2Mod(acc, f);
}

// inverse of a modulo f via extended Euclid over GF(2)[x]
F2Poly f2Inv(F2Poly a, const F2Poly& f) {
  F2Poly r0 = f, r1 = a, s0, s1;
  s1.lo = 1;
  while (!r1.zero()) {
    // divide r0 by r1
    F2Poly q, r = r0;
    int d1 = r1.deg();
    for (int i = r.deg(); i >= d1; i = r.deg()) {
      q.flip(i - d1);
      r = r ^ r1.shl(i - d1);
    }
    F2Poly s = s0 ^ f2Mul(q, s1, f);
    r0 = r1;
    r1 = r;
    s0 = s1;
    s1 = s;
  }
  assert(r0.deg() == 0);
  return f2Mod(s0, f);
}

}  // namespace

uint64_t grModulusFor(int degree) {
  for (const auto& m : kModuli)
    if (m.d == degree) return m.fLow;
  throw std::invalid_argument("unsupported extension degree " + std::to_string(degree));
}

const std::vector<int>& grSupportedDegrees() {
  static const std::vector<int> ds = {2, 8, 15, 16, 17, 20, 24, 32, 47, 57, 62, 67, 72};
  return ds;
}

GrCtx::GrCtx(int ringBits, int degree)
    : lbits_(ringBits), d_(degree), mask_(Ring::maskFor(ringBits)), fLow_(grModulusFor(degree)) {
  assert(ringBits >= 1 && ringBits <= 64);
}

GrEl GrCtx::one() const {
  GrEl r(d_, 0);
  r[0] = 1;
  return r;
}

GrEl GrCtx::liftConst(Ring v) const {
  assert(v.w == lbits_);
  GrEl r(d_, 0);
  r[0] = v.v;
  return r;
}

GrEl GrCtx::liftPoint(uint64_t k) const {
  assert(d_ >= 64 || k < (1ull << d_));
  GrEl r(d_, 0);
  for (int i = 0; i < d_ && i < 64; ++i) r[i] = (k >> i) & 1;
  return r;
}

GrEl GrCtx::add(const GrEl& a, const GrEl& b) const {
  GrEl r(d_);
  for (int i = 0; i < d_; ++i) r[i] = (a[i] + b[i]) & mask_;
  return r;
}

GrEl GrCtx::sub(const GrEl& a, const GrEl& b) const {
  GrEl r(d_);
  for (int i = 0; i < d_; ++i) r[i] = (a[i] - b[i]) & mask_;
  return r;
}

GrEl GrCtx::neg(const GrEl& a) const {
  GrEl r(d_);
  for (int i = 0; i < d_; ++i) r[i] = (0 - a[i]) & mask_;
  return r;
}

GrEl GrCtx::scale(Ring c, const GrEl& a) const {
  GrEl r(d_);
  for (int i = 0; i < d_; ++i) r[i] = (c.v * a[i]) & mask_;
  return r;
}

bool GrCtx::isZero(const GrEl& a) const {
  for (uint64_t c : a)
    if (c & mask_) return false;
  return true;
}

GrEl GrCtx::mul(const GrEl& a, const GrEl& b) const {
  std::vector<uint64_t> t(2 * d_ - 1, 0);
  for (int i = 0; i < d_; ++i) {
    if (!a[i]) continue;
    for (int j = 0; j < d_; ++j) t[i + j] += a[i] * b[j];
  }
  // fold x^k = x^{k-d} * (x^d mod f) = -x^{k-d} * fLow, top down
  for (int i = 2 * d_ - 2; i >= d_; --i) {
    uint64_t c = t[i];
    if (!c) continue;
    for (uint64_t m = fLow_; m; m &= m - 1) t[i - d_ + __builtin_ctzll(m)] -= c;
  }
  GrEl r(d_);
  for (int i = 0; i < d_; ++i) r[i] = t[i] & mask_;
  return r;
}

bool GrCtx::invertible(const GrEl& a) const {
  for (uint64_t c : a)
    if (c & 1) return true;
  return false;
}

GrEl GrCtx::inv(const GrEl& a) const {
  if (!invertible(a)) throw std::domain_error("element not invertible (even residue)");
  F2Poly f;
  f.flip(d_);
  for (uint64_t m = fLow_; m; m &= m - 1) f.flip(__builtin_ctzll(m));
  F2Poly a2;
  for (int i = 0; i < d_; ++i)
    if (a[i] & 1) a2.flip(i);
  F2Poly z2 = f2Inv(a2, f);
  GrEl z(d_, 0);
  for (int i = 0; i < d_; ++i) z[i] = z2.bit(i);
  // Newton lift: z <- z(2 - a z) doubles the count of correct low bits
  GrEl two(d_, 0);
  two[0] = 2;
  for (int prec = 1; prec < lbits_; prec *= 2) z = mul(z, sub(two, mul(a, z)));
  return z;
}

GrEl GrCtx::evalPoly(const std::vector<GrEl>& coeffs, const GrEl& x) const {
  GrEl acc = zero();
  for (size_t i = coeffs.size(); i-- > 0;) acc = add(mul(acc, x), coeffs[i]);
  return acc;
}

std::vector<uint8_t> GrCtx::serialize(const GrEl& a) const {
  std::vector<uint8_t> out;
  out.reserve(byteLen());
  for (int i = 0; i < d_; ++i) Ring(a[i], lbits_).appendTo(out);
  return out;
}

GrEl GrCtx::deserialize(const uint8_t* p) const {
  GrEl r(d_);
  size_t step = (lbits_ + 7) / 8;
  for (int i = 0; i < d_; ++i) r[i] = Ring::parseFrom(p + i * step, lbits_).v;
  return r;
}

NodeBasis::NodeBasis(const GrCtx& ctx, uint64_t firstNode, size_t count) : ctx_(ctx) {
  assert(count >= 1);
  nodes_.reserve(count);
  for (size_t k = 0; k < count; ++k) nodes_.push_back(ctx.liftPoint(firstNode + k));
  // master(X) = prod (X - x_k), degree count
  std::vector<GrEl> master(count + 1, ctx.zero());
  master[0] = ctx.one();
  for (size_t k = 0; k < count; ++k) {
    // multiply by (X - x_k): m = m*X - x_k*m
    std::vector<GrEl> next(count + 1, ctx.zero());
    for (size_t i = 0; i <= k; ++i) {
      next[i + 1] = ctx.add(next[i + 1], master[i]);
      next[i] = ctx.sub(next[i], ctx.mul(nodes_[k], master[i]));
    }
    master = std::move(next);
  }
  numer_.resize(count);
  for (size_t k = 0; k < count; ++k) {
    // synthetic division of master by (X - x_k)
    std::vector<GrEl> q(count, ctx.zero());
    q[count - 1] = master[count];
    for (size_t i = count - 1; i-- > 0;) q[i] = ctx.add(master[i + 1], ctx.mul(nodes_[k], q[i + 1]));
    GrEl denom = ctx.evalPoly(q, nodes_[k]);
    GrEl dinv = ctx.inv(denom);
    for (auto& c : q) c = ctx.mul(c, dinv);
    numer_[k] = std::move(q);
  }
}

std::vector<GrEl> NodeBasis::interpolate(const std::vector<GrEl>& ys) const {
  assert(ys.size() == nodes_.size());
  std::vector<GrEl> coeffs(nodes_.size(), ctx_.zero());
  for (size_t k = 0; k < nodes_.size(); ++k) {
    if (ctx_.isZero(ys[k])) continue;
    for (size_t i = 0; i < coeffs.size(); ++i)
      coeffs[i] = ctx_.add(coeffs[i], ctx_.mul(ys[k], numer_[k][i]));
  }
  return coeffs;
}

std::vector<GrEl> NodeBasis::evalRow(const GrEl& at) const {
  std::vector<GrEl> row(nodes_.size());
  for (size_t k = 0; k < nodes_.size(); ++k) row[k] = ctx_.evalPoly(numer_[k], at);
  return row;
}

}  // namespace rmpc
