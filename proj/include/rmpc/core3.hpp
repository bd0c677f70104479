#pragma once

#include <condition_variable>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "rmpc/jmp.hpp"
#include "rmpc/prf.hpp"
#include "rmpc/shares.hpp"
#include "rmpc/transport.hpp"

namespace rmpc {

// decision site for the multiplication-tuple dealer (see MulPreBackend)
enum : uint16_t { kSiteMulPreShare = 6 };

// Backend producing (.)-shares of the products f_k = sum_{j in group k} d_j * e_j,
// one output per group of `group` consecutive positions (group == 1 for plain
// multiplication). Every party calls run with its own replicated legs; the call
// returns that party's legs of a fresh additive sharing of f. outcome reports a
// trusted-party election inside a verified backend; the dealer emulation always
// delivers.
struct MulPreResult {
  std::vector<Sgr> f;
  JmpOutcome outcome;
};

class MulPreBackend {
 public:
  virtual ~MulPreBackend() = default;
  virtual MulPreResult run(int me, uint16_t protoId, const std::vector<Sgr>& d,
                           const std::vector<Sgr>& e, size_t group) = 0;
};

// Harness-resident dealer emulating the multiplication-tuple functionality.
// Reconstructs d and e from the honest parties' replicated legs, samples a fresh
// additive sharing of f, and hands each party its two legs. A corrupt party may
// substitute its own legs (kSiteMulPreShare / kWrongBit); the functionality keeps
// the sum equal to f by recomputing the leg it does not hold, exactly as the
// ideal functionality fixes the last share. Tallies the traffic of the cheapest
// semi-honest realization, three ring elements per group, so cost rows reflect
// the protocol being emulated rather than the emulation.
class IdealMulPre : public MulPreBackend {
 public:
  IdealMulPre(SimNet& net, Tally& tally, Prf sampler)
      : net_(net), tally_(tally), prf_(std::move(sampler)) {}

  MulPreResult run(int me, uint16_t protoId, const std::vector<Sgr>& d,
                   const std::vector<Sgr>& e, size_t group) override;

 private:
  void computeAll(uint16_t protoId, size_t group);

  SimNet& net_;
  Tally& tally_;
  Prf prf_;
  std::mutex m_;
  std::condition_variable cv_;
  uint32_t gen_ = 0;
  int arrived_ = 0;
  std::array<std::vector<Sgr>, 3> inD_, inE_;
  std::array<std::vector<Sgr>, 3> out_;
};

// Per-party preprocessing slots for one multiplication gate z = x*y. Each party
// fills only the slots it holds: P0 az1, az2, chi1, chi2; P1 az1, gz, chi1, psi;
// P2 az2, gz, chi2, psi.
struct MulPre3 {
  Ring az1, az2, gz, chi1, chi2, psi;
};

// Per-value reconstruction preprocessing: the jmp-agreed commitment digests for
// the three missing components ([alpha]_1 toward P2, [alpha]_2 toward P1, gamma
// toward P0) plus the opening randomness this party can produce.
struct RecPre3 {
  Digest ca1, ca2, cg;
  std::vector<uint8_t> ra1, ra2, rg;
};

// Three-party engine: one instance per party thread, SPMD. Every operation is
// batched; a scalar op is a batch of one. Communication goes through a shared
// JmpHub except where the protocol calls for plain point-to-point sends.
class Engine3 {
 public:
  Engine3(int me, SimNet& net, Tally& tally, const KeyStore& ks, MulPreBackend& mul);

  int me() const { return me_; }
  JmpHub& hub() { return hub_; }

  // Composite protocols push their tag so nested ops bill the outermost caller.
  void pushProto(uint16_t id) { ctx_.push_back(id); }
  void popProto() { ctx_.pop_back(); }
  bool inProto() const { return !ctx_.empty(); }

  // Preprocessing protocols that run interactive sub-steps (a truncation pair's
  // dot products, the full multiplication inside a bit lift) push kPre here so
  // the traffic and rounds of those sub-steps land in the preprocessing column.
  void pushPhase(Phase ph) { phCtx_.push_back(ph); }
  void popPhase() { phCtx_.pop_back(); }
  Phase billedPhase(Phase own) const { return phCtx_.empty() ? own : phCtx_.back(); }

  // masked sharing dealt by one party; vs read at the dealer only
  ShrVec shPre(int dealer, int width, size_t count);
  void shOnline(int dealer, ShrVec& xs, const RingVec& vs);

  // joint sharing of values both parties of the pair hold; vs read at the pair
  ShrVec jshPre(JointPair pair, int width, size_t count);
  void jshOnline(JointPair pair, ShrVec& xs, const RingVec& vs);

  // P1P2 joint sharing whose delivery to P0 rides the deferred queue: same wire
  // traffic as jshOnline but the round is covered by the next flushDeferred.
  void jshOnlineDeferred(ShrVec& xs, const RingVec& vs);

  // non-interactive joint sharing of preprocessing-known values
  ShrVec jshConst(JointPair pair, const RingVec& vs);

  std::vector<MulPre3> multPre(const ShrVec& xs, const ShrVec& ys);
  ShrVec multOnline(const ShrVec& xs, const ShrVec& ys, const std::vector<MulPre3>& pre);

  // Inner products of `group` consecutive operand pairs; one output and one
  // tuple per group, with the cost of a single multiplication each. group == 1
  // is plain multiplication (multPre/multOnline delegate here).
  std::vector<MulPre3> dotpPre(const ShrVec& xs, const ShrVec& ys, size_t group);
  ShrVec dotpOnline(const ShrVec& xs, const ShrVec& ys, const std::vector<MulPre3>& pre,
                    size_t group);

  // Direct backend access for protocols that interleave tuple sets in one call.
  MulPreResult mulRun(uint16_t protoId, const std::vector<Sgr>& d, const std::vector<Sgr>& e,
                      size_t group);

  std::vector<RecPre3> recPre(const ShrVec& xs);
  RingVec recOnline(const ShrVec& xs, const std::vector<RecPre3>& pre);

  // records the round of the queued beta+gamma deliveries, once per circuit
  void flushDeferred();

  JmpOutcome verify() { return hub_.verifyAll(); }
  JmpOutcome backendOutcome() const { return backendOutcome_; }

  const KeyStore& keys() const { return ks_; }
  SimNet& net() { return net_; }
  Tally& tally() { return tally_; }
  uint32_t nextInstance(uint16_t tag) { return seq_[tag]++; }
  uint16_t billedProto(uint16_t own) const { return ctx_.empty() ? own : ctx_.back(); }

 private:
  bool scribe() const { return me_ == 0; }
  RingVec sampleIfHeld(const std::string& label, SampleId id, int width, size_t count);

  int me_;
  SimNet& net_;
  Tally& tally_;
  const KeyStore& ks_;
  MulPreBackend& mul_;
  JmpHub hub_;
  std::vector<uint16_t> ctx_;
  std::vector<Phase> phCtx_;
  std::map<uint16_t, uint32_t> seq_;
  JmpOutcome backendOutcome_;
  bool flushPending_ = false;
};

// Assembles one party's tuple slots from its two legs of the backend output.
// gammaDot is that party's sum of gamma_x*gamma_y over the group (unused at P0).
MulPre3 mulPreFromLegs(int me, const Sgr& f, const Ring& az1, const Ring& az2, const Ring& gz,
                       const Ring& gammaDot);

// Shared decode helper for hub deliveries: tombstones and short frames become
// zeros and the verification layer settles who cheated.
RingVec decodeRingsOr(const std::optional<std::vector<uint8_t>>& bytes, int width, size_t count);

// Arithmetic circuit over one ring width, parsed from a small JSON dialect:
//   {"width": 64, "gates": [
//     {"op":"in",  "out":0, "party":1},
//     {"op":"lin", "out":2, "in":[0,1], "coef":[1,"-2"], "const":5},
//     {"op":"mul", "out":3, "in":[2,0]},
//     {"op":"out", "in":[3]} ]}
// Coefficients and constants are signed decimal, given as numbers or strings.
struct Gate {
  enum class Kind { kIn, kLin, kMul, kOut };
  Kind kind;
  int out = -1;
  int party = -1;
  std::vector<int> in;
  RingVec coef;
  Ring cnst;
};

struct Circuit {
  int width = 0;
  int wireCount = 0;
  std::vector<Gate> gates;

  static Circuit parse(const std::string& text);
  static Circuit load(const std::string& path);

  // inputs keyed by wire index of the in gate
  RingVec evalClear(const std::map<int, Ring>& inputs) const;
  std::vector<int> inputWiresOf(int party) const;
  size_t outputCount() const;
};

struct Run3Result {
  RingVec outputs;
  int ttp = -1;
};

// Full circuit evaluation with guaranteed output delivery: preprocessing pass,
// verification, online pass, verification, reconstruction. Any trusted-party
// election falls back to clear evaluation at the elected party over the inputs
// the parties resubmit directly.
Run3Result runCircuit3(int me, SimNet& net, Tally& tally, const KeyStore& ks,
                       MulPreBackend& mul, const Circuit& ckt,
                       const std::map<int, Ring>& myInputs);

}  // namespace rmpc
