#pragma once

#include <cstdint>
#include <vector>

#include "rmpc/ring.hpp"

namespace rmpc {

// Element of the degree-d extension GR = Z_{2^l}[x]/f(x): d coefficients mod 2^l.
using GrEl = std::vector<uint64_t>;

// Arithmetic context for GR(2^l, d). f(x) = x^d + (monomials in fLow), fLow a bitmask
// of the coefficients below x^d; f is irreducible over Z_2, which makes every element
// with an odd coefficient invertible and the binary-coefficient lifts of 0..2^d-1 an
// exceptional sequence (pairwise differences invertible).
class GrCtx {
 public:
  GrCtx(int ringBits, int degree);

  int lbits() const { return lbits_; }
  int deg() const { return d_; }
  uint64_t mask() const { return mask_; }
  uint64_t fLow() const { return fLow_; }

  GrEl zero() const { return GrEl(d_, 0); }
  GrEl one() const;
  GrEl liftConst(Ring v) const;        // constant polynomial
  GrEl liftPoint(uint64_t k) const;    // binary expansion of k as 0/1 coefficients
  Ring constTerm(const GrEl& a) const { return Ring(a[0], lbits_); }

  GrEl add(const GrEl& a, const GrEl& b) const;
  GrEl sub(const GrEl& a, const GrEl& b) const;
  GrEl neg(const GrEl& a) const;
  GrEl mul(const GrEl& a, const GrEl& b) const;
  GrEl scale(Ring c, const GrEl& a) const;
  bool isZero(const GrEl& a) const;
  bool invertible(const GrEl& a) const;
  GrEl inv(const GrEl& a) const;  // throws std::domain_error if not invertible

  // Horner evaluation of a polynomial over GR (coeffs[i] multiplies X^i).
  GrEl evalPoly(const std::vector<GrEl>& coeffs, const GrEl& x) const;

  std::vector<uint8_t> serialize(const GrEl& a) const;
  GrEl deserialize(const uint8_t* p) const;
  size_t byteLen() const { return size_t(d_) * ((lbits_ + 7) / 8); }

 private:
  int lbits_;
  int d_;
  uint64_t mask_;
  uint64_t fLow_;
};

// Lagrange basis over the exceptional nodes lift(0), ..., lift(K): supports exact
// interpolation of degree-K polynomials and evaluation rows at arbitrary points.
class NodeBasis {
 public:
  NodeBasis(const GrCtx& ctx, uint64_t firstNode, size_t count);

  // coefficients of the unique degree-<count polynomial through (node_k, ys[k])
  std::vector<GrEl> interpolate(const std::vector<GrEl>& ys) const;
  // lambda_k(at) for all k, so f(at) = sum lambda_k(at) * ys[k]
  std::vector<GrEl> evalRow(const GrEl& at) const;

  size_t count() const { return nodes_.size(); }
  const GrEl& node(size_t k) const { return nodes_[k]; }

 private:
  const GrCtx& ctx_;
  std::vector<GrEl> nodes_;
  std::vector<std::vector<GrEl>> numer_;  // N_k = prod_{j!=k} (X - x_j), scaled by 1/N_k(x_k)
};

// Irreducible f(x) over Z_2 for the supported extension degrees; returns the fLow mask.
uint64_t grModulusFor(int degree);
const std::vector<int>& grSupportedDegrees();

}  // namespace rmpc
