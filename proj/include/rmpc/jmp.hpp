#pragma once

#include <map>
#include <optional>
#include <tuple>
#include <vector>

#include "rmpc/prf.hpp"
#include "rmpc/transport.hpp"

namespace rmpc {

// Joint message passing: an ordered sender pair (Pi sends the value, Pj backs it with a
// hash) relays data to Pk so that the relay either succeeds everywhere or all honest
// parties agree on an honest trusted party. Sends happen on the fly; verification runs
// once per batch over the accumulated bytes.
//
// Batches are keyed (Pi, Pj, Pk, phase) and must be created and verified in the same
// order by every party. Pj may accumulate its hash copy lazily (echo), which is how the
// deferred P0 traffic works: P0 reconstructs what it should have echoed before verify.

struct JmpOutcome {
  int ttp = -1;
  bool delivered() const { return ttp < 0; }
  friend bool operator==(const JmpOutcome&, const JmpOutcome&) = default;
};

// engine deviation sites consulted through SimNet::decide
enum : uint16_t {
  kSiteJmpAccuseV2 = 1,        // receiver falsely accuses; b = mask (1:Pi, 2:Pj, 3:both)
  kSiteJmpBitFlipK = 2,        // receiver flips its computed inconsistency bit
  kSiteJmpAccusePkV3 = 3,      // sender falsely accuses the receiver instead of its bit
  kSiteJmpAccusePartnerV4 = 4, // sender falsely accuses its co-sender
  kSiteJmpBitFlipS = 5,        // sender flips its own bit before the exchange
};

class JmpHub {
 public:
  JmpHub(SimNet& net, Tally& tally, int me);

  // stable handle; all parties must call in the same order (first use assigns the id)
  uint16_t batch(int i, int j, int k, Phase ph);

  // role Pi: transmit and accumulate
  void send(uint16_t bid, uint16_t protoId, uint32_t instance, Bucket bucket,
            const std::vector<uint8_t>& bytes, uint64_t logicalBits);
  // role Pj: accumulate the hash copy (callable any time before verify)
  void echo(uint16_t bid, const std::vector<uint8_t>& bytes);
  // role Pk: receive; nullopt when the sender stayed silent
  std::optional<std::vector<uint8_t>> recv(uint16_t bid);
  // four-party bystander: marks the entry live so verification includes this batch
  void bystand(uint16_t bid);

  // verification; every server calls these in lockstep
  JmpOutcome verifyBatch(uint16_t bid);
  JmpOutcome verifyAll();  // batches received by P0 first, then the rest, in id order

  size_t entries(uint16_t bid) const { return batches_.at(bid).entries; }

 private:
  struct Batch {
    int i, j, k;
    Phase ph;
    HashAcc acc;          // Pi: bytes sent; Pj: echo copy; Pk: bytes received
    bool sawSilence = false;  // Pk only
    size_t entries = 0;
    bool done = false;
  };

  JmpOutcome verify3(Batch& b, uint16_t bid);
  JmpOutcome verify4(Batch& b, uint16_t bid);

  Frame ctl(uint8_t op, uint16_t bid, std::vector<uint8_t> body = {}) const;
  // silent-or-malformed classification for control frames
  static bool validCtl(const Frame& f, uint8_t op, uint16_t bid, size_t bodyLen);

  SimNet& net_;
  Tally& tally_;
  int me_, n_;
  std::vector<Batch> batches_;
  std::map<std::tuple<int, int, int, int>, uint16_t> index_;
};

}  // namespace rmpc
