#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "rmpc/core3.hpp"

namespace rmpc {

// decision site for the outsourced-client protocols: a corrupt server garbles
// everything it sends to the user in one sharing/opening instance
enum : uint16_t { kSiteSocGarble = 9 };

// Boolean carry circuit computing msb(x+y) for w-bit summands. XOR gates are
// free; every gate with a product list costs one boolean multiplication. The
// gate list is data: construction happens once per width, evaluation walks the
// list (clear or shared), and structure tests count gates instead of trusting
// the builder.
struct PpaGate {
  int out = 0;
  std::vector<std::pair<int, int>> prods;  // wire pairs whose products XOR in
  std::vector<int> xors;                   // wires XORed on top
  int layer = 0;                           // product depth; 0 for free gates
};

struct PpaCircuit {
  int width = 0;
  int wires = 0;    // inputs occupy 0..2w-1: x bits then y bits, LSB first
  int outWire = 0;
  int layers = 0;   // number of product layers
  std::vector<PpaGate> gates;

  static const PpaCircuit& msbOfSum(int width);  // cached, width >= 2
  size_t andCount() const;
  bool evalClear(uint64_t x, uint64_t y) const;
};

// Preprocessing truncation pair: square sharing of r next to the masked sharing
// of r shifted right by d. Both per-party bit vectors are drawn with the top
// bit clear, so r stays below half the ring and the signed reconstruction of an
// opened difference wraps only with probability |z|/2^{l-1}.
struct TruncPair {
  Sqr2 r;
  Shr rd;
};

// boolean sharing of the sign bit of each value
ShrVec bitExt3(Engine3& eng, const ShrVec& vs);

// boolean sharing of (x < y), signed
ShrVec cmp3(Engine3& eng, const ShrVec& xs, const ShrVec& ys);

// arithmetic sharing of each bit lifted to `width`
ShrVec bit2A3(Engine3& eng, const ShrVec& bs, int width);

// arithmetic sharing of lift(b) * v
ShrVec bitInj3(Engine3& eng, const ShrVec& bs, const ShrVec& vs);

// inner products of `group` consecutive pairs; cost independent of the group size
ShrVec dotp3(Engine3& eng, const ShrVec& xs, const ShrVec& ys, size_t group);
Shr dotp3(Engine3& eng, const ShrVec& xs, const ShrVec& ys);

std::vector<TruncPair> truncPair3(Engine3& eng, int width, int fracBits, size_t count);

// inner products whose results drop fracBits fractional bits (probabilistic
// one-unit error in the last place)
ShrVec dotpt3(Engine3& eng, const ShrVec& xs, const ShrVec& ys, size_t group, int fracBits);
Shr dotpt3(Engine3& eng, const ShrVec& xs, const ShrVec& ys, int fracBits);

ShrVec relu3(Engine3& eng, const ShrVec& vs);

// piecewise sigmoid: 0 below -1/2, v + 1/2 inside, 1 above 1/2
ShrVec sig3(Engine3& eng, const ShrVec& vs, int fracBits);

// tournament maximum; ties keep the later operand
Shr maxpool3(Engine3& eng, ShrVec xs);

// row-major p x q times q x r; fracBits >= 0 truncates every product
ShrVec matmul3(Engine3& eng, const ShrVec& a, size_t p, size_t q, const ShrVec& b, size_t r,
               int fracBits = -1);

// Convolution dimensions. Tensors are row-major with channels innermost:
// x[(y*w + x)*chans + c], kernel k[((ky*f + kx)*chans + c)*outChans + oc],
// output out[(oy*outW + ox)*outChans + oc].
struct ConvDims {
  int w = 0, h = 0, chans = 1;
  int f = 0, outChans = 1;
  int stride = 1, pad = 0;

  int outW() const { return (w - f + 2 * pad) / stride + 1; }
  int outH() const { return (h - f + 2 * pad) / stride + 1; }
};

ShrVec convIm2col(Engine3& eng, const ShrVec& x, const ShrVec& k, const ConvDims& cd,
                  int fracBits);

// Outsourced input and output. The user is an external endpoint of the same
// SimNet (id >= servers); servers run the *Server halves inside their engine
// threads. A non-negative ttp signals the fallback identity to the user, who
// then exchanges clear values with that server instead of shares.
struct SocShareOut {
  ShrVec xs;          // meaningless when a fallback was signalled
  RingVec clearAtTtp; // inputs received in clear; filled at the fallback server only
};
SocShareOut shSocServer(Engine3& eng, int user, int width, size_t count, int ttp = -1);

struct SocUserShare {
  int ttp = -1;  // >= 0: inputs went to this server in clear
};
SocUserShare shSocUser(SimNet& net, int user, const RingVec& vs, int width);

// xs ignored when ttp >= 0; then clearVs is what the fallback server forwards
void recSocServer(Engine3& eng, int user, const ShrVec& xs, int ttp = -1,
                  const RingVec& clearVs = {});

struct SocUserRec {
  RingVec vs;
  int ttp = -1;
};
SocUserRec recSocUser(SimNet& net, int user, int width, size_t count);

}  // namespace rmpc
