#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "rmpc/core3.hpp"
#include "rmpc/gr.hpp"
#include "rmpc/jmp.hpp"
#include "rmpc/prf.hpp"
#include "rmpc/shares.hpp"
#include "rmpc/transport.hpp"

namespace rmpc {

// prover-state deviation sites consulted through SimNet::decide
enum : uint16_t {
  kSiteZkTamperSent = 7,  // perturb the first sent dot-product message, consistently
  kSiteZkClaimClean = 8,  // build the proof as if every checked tuple came out zero
};

// Verification batch shape. A batch of m dot products of width n is checked with one
// degree-2 circuit of u = 4n+2 inputs per tuple; L circuits are folded into one inner
// combination and M = ceil(m/L) combinations into the final statement, all over the
// degree-d extension of the base ring. gamma is the statistical slack with 2^gamma
// covering 2M; the cheating probability is about 2^-(d-gamma).
struct ZkParams {
  size_t m = 0;
  size_t n = 0;
  size_t u = 0;
  size_t L = 0;
  size_t M = 0;
  int d = 0;
  int gamma = 0;
  double costPerTuple = 0.0;   // headline amortized elements per tuple: 2M*d/m
  double elemsPerParty = 0.0;  // transfer per party per tuple: (uL + 2M + 3)*d/m
  size_t padded() const { return M * L; }
};

// Solves the batch shape for m tuples of width n: L is the power of two balancing
// u*L against 2M, gamma the smallest slack with 2^gamma >= 2M, and d the smallest
// supported extension degree with d - gamma >= secBits. Throws std::invalid_argument
// when no supported degree is large enough.
ZkParams chooseParams(size_t m, size_t n, int secBits);

// On-wire proof: shape header plus the 2M+1 monomial coefficients of the checking
// polynomial (additive shares of them while in transit).
struct ZkProof {
  uint64_t m = 0, n = 0;
  uint32_t L = 0, M = 0, d = 0;
  std::vector<GrEl> coeffs;

  std::vector<uint8_t> serialize(const GrCtx& ctx) const;
  // nullopt on length or header mismatch with the expected shape
  static std::optional<ZkProof> parse(const GrCtx& ctx, const ZkParams& want,
                                      const std::vector<uint8_t>& bytes);
};

// Dot-product tuple preprocessing with distributed verification. Each run computes
// the replicated product messages semi-honestly (three ring elements per tuple, one
// wave), then every party in turn proves over the ring extension that its sent
// messages were consistent with its replicated inputs. The two parties checking a
// proof hold the prover's inputs between them, so they verify on additive shares and
// exchange their findings through jmp; an agreed clean rejection names the prover,
// so the next party takes over as trusted third party. Verification traffic lands in
// the verify bucket; only the product messages count as data.
class VerifiedDotp : public MulPreBackend {
 public:
  VerifiedDotp(SimNet& net, Tally& tally, const KeyStore& ks, int secBits = 8);

  MulPreResult run(int me, uint16_t protoId, const std::vector<Sgr>& d,
                   const std::vector<Sgr>& e, size_t group) override;

  // override the batch shape, mainly to fix the soundness slack in experiments;
  // the pinned shape must fit every batch handed to run()
  void pinParams(const ZkParams& p) { pinned_ = p; }

  int secBits() const { return secBits_; }

 private:
  SimNet& net_;
  Tally& tally_;
  const KeyStore& ks_;
  int me_;
  int secBits_;
  uint32_t seq_ = 0;
  std::optional<ZkParams> pinned_;
};

}  // namespace rmpc
