#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace rmpc {

// Element of Z_{2^w}, 1 <= w <= 64, stored masked. Boolean sharings use w = 1.
struct Ring {
  uint64_t v = 0;
  uint8_t w = 64;

  Ring() = default;
  Ring(uint64_t value, int width) : v(value & maskFor(width)), w(uint8_t(width)) {
    assert(width >= 1 && width <= 64);
  }

  static uint64_t maskFor(int width) {
    return width >= 64 ? ~0ull : ((1ull << width) - 1);
  }
  uint64_t mask() const { return maskFor(w); }

  bool bit(int i) const { return (v >> i) & 1; }
  bool msb() const { return bit(w - 1); }

  // value as signed integer in [-2^{w-1}, 2^{w-1})
  int64_t toSigned() const {
    if (w == 64) return int64_t(v);
    return msb() ? int64_t(v) - int64_t(1ull << w) : int64_t(v);
  }

  // arithmetic shift on the signed interpretation, result back in the ring
  Ring arithShift(int d) const {
    assert(d >= 0 && d < w);
    return Ring(uint64_t(toSigned() >> d), w);
  }
  // logical shift of the w-bit pattern
  Ring logicShift(int d) const {
    assert(d >= 0 && d < w);
    return Ring(v >> d, w);
  }

  friend Ring operator+(Ring a, Ring b) {
    assert(a.w == b.w);
    return Ring(a.v + b.v, a.w);
  }
  friend Ring operator-(Ring a, Ring b) {
    assert(a.w == b.w);
    return Ring(a.v - b.v, a.w);
  }
  friend Ring operator*(Ring a, Ring b) {
    assert(a.w == b.w);
    return Ring(a.v * b.v, a.w);
  }
  Ring operator-() const { return Ring(~v + 1, w); }
  friend bool operator==(Ring a, Ring b) {
    assert(a.w == b.w);
    return a.v == b.v;
  }
  Ring& operator+=(Ring b) { return *this = *this + b; }
  Ring& operator-=(Ring b) { return *this = *this - b; }

  Ring scaled(uint64_t c) const { return Ring(v * c, w); }

  static Ring zero(int width) { return Ring(0, width); }
  static Ring one(int width) { return Ring(1, width); }
  static Ring fromSigned(int64_t s, int width) { return Ring(uint64_t(s), width); }

  size_t byteLen() const { return (w + 7) / 8; }
  void appendTo(std::vector<uint8_t>& out) const {
    uint64_t x = v;
    for (size_t i = 0; i < byteLen(); ++i, x >>= 8) out.push_back(uint8_t(x));
  }
  static Ring parseFrom(const uint8_t* p, int width) {
    uint64_t x = 0;
    size_t n = (width + 7) / 8;
    for (size_t i = 0; i < n; ++i) x |= uint64_t(p[i]) << (8 * i);
    return Ring(x, width);
  }
};

using RingVec = std::vector<Ring>;

inline std::vector<uint8_t> serialize(const RingVec& xs) {
  std::vector<uint8_t> out;
  for (const Ring& x : xs) x.appendTo(out);
  return out;
}

inline RingVec deserialize(const std::vector<uint8_t>& buf, int width, size_t count) {
  size_t step = (width + 7) / 8;
  if (buf.size() != step * count) throw std::runtime_error("ring payload size mismatch");
  RingVec out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) out.push_back(Ring::parseFrom(buf.data() + i * step, width));
  return out;
}

// Fixed-point encoding: round(r * 2^fracBits) in two's complement.
struct FixedPoint {
  int width;
  int fracBits;

  FixedPoint(int w, int x) : width(w), fracBits(x) {}

  Ring encode(double r) const {
    double scaled = std::round(r * std::ldexp(1.0, fracBits));
    double lim = std::ldexp(1.0, width - 1);
    if (scaled >= lim || scaled < -lim)
      throw std::range_error("fixed point overflow: " + std::to_string(r));
    return Ring::fromSigned(int64_t(scaled), width);
  }
  double decode(Ring v) const {
    assert(v.w == width);
    return std::ldexp(double(v.toSigned()), -fracBits);
  }
};

}  // namespace rmpc
