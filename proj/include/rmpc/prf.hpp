#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "rmpc/gr.hpp"
#include "rmpc/ring.hpp"

namespace rmpc {

struct Digest {
  std::array<uint8_t, 32> bytes{};
  friend bool operator==(const Digest& a, const Digest& b) { return a.bytes == b.bytes; }
  friend bool operator!=(const Digest& a, const Digest& b) { return !(a == b); }
  friend bool operator<(const Digest& a, const Digest& b) { return a.bytes < b.bytes; }
  std::string hex() const;
};

Digest sha256(const uint8_t* p, size_t n);
Digest sha256(const std::vector<uint8_t>& v);

// Streaming hash over length-prefixed blocks, so a batch hash is well defined
// independent of how messages were chunked when they were accumulated.
class HashAcc {
 public:
  HashAcc();
  ~HashAcc();
  HashAcc(const HashAcc&) = delete;
  HashAcc& operator=(const HashAcc&) = delete;
  HashAcc(HashAcc&& o) noexcept : mdctx_(o.mdctx_), blocks_(o.blocks_) { o.mdctx_ = nullptr; }
  HashAcc& operator=(HashAcc&& o) noexcept {
    std::swap(mdctx_, o.mdctx_);
    std::swap(blocks_, o.blocks_);
    return *this;
  }
  void put(const uint8_t* p, size_t n);
  void put(const std::vector<uint8_t>& v) { put(v.data(), v.size()); }
  Digest done();  // finalizes; accumulator unusable afterwards
  bool empty() const { return blocks_ == 0; }

 private:
  void* mdctx_;
  size_t blocks_ = 0;
};

struct SampleId {
  uint16_t tag = 0;
  uint32_t instance = 0;
  uint32_t sub = 0;
  friend auto operator<=>(const SampleId&, const SampleId&) = default;
};

// Keyed PRF (block cipher in counter mode). Same key + same SampleId gives the
// same stream on every party holding the key; sample ids must never be reused
// for fresh randomness, which the debug tracker asserts per party.
class Prf {
 public:
  Prf(std::array<uint8_t, 16> key, std::string label);

  const std::string& label() const { return label_; }

  std::vector<uint8_t> bytes(SampleId id, size_t n) const;
  RingVec rings(SampleId id, int width, size_t count) const;
  Ring ring(SampleId id, int width) const { return rings(id, width, 1)[0]; }
  std::vector<GrEl> grEls(const GrCtx& ctx, SampleId id, size_t count) const;

  // Independent PRF keyed by (this key, seed); used for post-transcript challenges.
  Prf seeded(const Digest& seed) const;

  void markFresh(SampleId id) const;  // asserts no reuse within this party's view
  void resetUsage() const { used_.clear(); }

 private:
  std::array<uint8_t, 16> key_;
  std::string label_;
  mutable std::set<SampleId> used_;
};

// Per-party key material as dealt by the setup functionality.
class KeyStore {
 public:
  static std::vector<KeyStore> setup3(uint64_t seed);
  static std::vector<KeyStore> setup4(uint64_t seed);

  int self() const { return self_; }
  bool has(const std::string& label) const { return keys_.count(label) != 0; }
  const Prf& key(const std::string& label) const;
  const Prf& pairKey(int a, int b) const;
  const Prf& tripleKey(int a, int b, int c) const;
  const Prf& common() const { return key("kP"); }

  // zeta_s = r_s - r_{s-1} over the pairwise keys; sums to zero across parties
  RingVec zeroShare3(SampleId id, int width, size_t count) const;

 private:
  int self_ = -1;
  std::map<std::string, Prf> keys_;
};

Digest commitDigest(const std::vector<uint8_t>& value, const std::vector<uint8_t>& rand,
                    const std::string& context);
bool commitVerify(const Digest& c, const std::vector<uint8_t>& value,
                  const std::vector<uint8_t>& rand, const std::string& context);

}  // namespace rmpc
