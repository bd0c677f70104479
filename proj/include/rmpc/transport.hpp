#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <vector>

namespace rmpc {

// frame opcodes
enum : uint8_t {
  kOpData = 1,
  kOpBit = 2,
  kOpHash = 3,
  kOpAccuse = 4,
  kOpCommit = 5,
  kOpProof = 6,
  kOpClear = 7,  // cleartext fallback traffic to an elected trusted party
};

// protocol ids used for accounting and frame headers
namespace proto {
constexpr uint16_t kSh3 = 1, kJsh3 = 2, kMult3 = 3, kDotp3 = 4, kRec3 = 5, kMulPre = 6,
    kTrunc3 = 7, kDotpt3 = 8, kBit2A3 = 9, kBitInj3 = 10, kBitExt3 = 11, kRelu3 = 12,
    kSig3 = 13, kJmpCtl = 14, kZkDotp = 15, kBoolMult3 = 16, kSoc = 17, kFallback = 18,
    kSh4 = 21, kJsh4 = 22, kSgrSh4 = 23, kMult4 = 24, kDotp4 = 25, kRec4 = 26, kTrunc4 = 27,
    kDotpt4 = 28, kBit2A4 = 29, kBitInj4 = 30, kBitExt4 = 31, kRelu4 = 32, kSig4 = 33,
    kBa4 = 34, kBoolMult4 = 35;
}

struct Frame {
  uint8_t op = kOpData;
  uint16_t proto = 0;
  uint32_t instance = 0;
  std::vector<uint8_t> payload;
  bool tombstone = false;  // deterministic stand-in for "nothing arrived"

  bool silent() const { return tombstone; }
};

// wire layout: 4B length (bytes after the length field) | 1B op | 2B proto | 4B instance | payload
std::vector<uint8_t> serializeFrame(const Frame& f);
Frame parseFrame(const uint8_t* p, size_t n);
inline size_t frameWireSize(const Frame& f) { return f.tombstone ? 0 : 11 + f.payload.size(); }

// ---- adversary scripting ----

enum class Mut : uint8_t { kTamperAdd, kTamperSet, kDrop };

// engine-level deviation points (jmp decisions and similar), keyed generically
struct DecisionKey {
  uint16_t site = 0;
  uint32_t a = 0;
  uint32_t b = 0;
  auto operator<=>(const DecisionKey&) const = default;
};

enum class Deviate : uint8_t { kNone, kWrongBit, kFalseAccuse, kWrongHash, kSilent };

// one wire action, applied to the corrupt party's send with this global ordinal
struct WireAct {
  uint32_t ordinal = 0;
  Mut mut = Mut::kDrop;
  uint64_t arg = 0;
};

struct AdversaryScript {
  int corrupt = -1;  // -1: everyone honest

  std::vector<WireAct> wire;

  std::map<DecisionKey, Deviate> decisions;

  Deviate decide(int party, const DecisionKey& k) const {
    if (party != corrupt) return Deviate::kNone;
    auto it = decisions.find(k);
    return it == decisions.end() ? Deviate::kNone : it->second;
  }
};

// ---- accounting ----

enum class Phase : uint8_t { kPre = 0, kOnline = 1 };
enum class Bucket : uint8_t { kData = 0, kVerify = 1 };

// Logical communication tally, bucketed so one-time verification material can be
// reported separately from per-instance data. Bits are logical (a shared bit counts 1).
class Tally {
 public:
  struct Row {
    uint64_t dataBits[2] = {0, 0};    // [phase]
    uint64_t verifyBits[2] = {0, 0};
    uint64_t rounds[2] = {0, 0};      // data waves
    uint64_t onceRounds[2] = {0, 0};  // amortized verification waves
    uint64_t instances = 0;
  };

  void addBits(uint16_t proto, Phase ph, Bucket b, uint64_t bits) {
    std::lock_guard lk(m_);
    auto& r = rows_[proto];
    (b == Bucket::kData ? r.dataBits : r.verifyBits)[int(ph)] += bits;
  }
  void addInstances(uint16_t proto, uint64_t n) {
    std::lock_guard lk(m_);
    rows_[proto].instances += n;
  }
  void addRounds(uint16_t proto, Phase ph, uint64_t waves) {
    std::lock_guard lk(m_);
    rows_[proto].rounds[int(ph)] += waves;
  }
  void addOnceRounds(uint16_t proto, Phase ph, uint64_t waves) {
    std::lock_guard lk(m_);
    rows_[proto].onceRounds[int(ph)] += waves;
  }
  Row row(uint16_t proto) const {
    std::lock_guard lk(m_);
    auto it = rows_.find(proto);
    return it == rows_.end() ? Row{} : it->second;
  }
  double amortizedData(uint16_t proto, Phase ph) const {
    Row r = row(proto);
    if (r.instances == 0) return 0.0;
    return double(r.dataBits[int(ph)]) / double(r.instances);
  }
  std::map<uint16_t, Row> all() const {
    std::lock_guard lk(m_);
    return rows_;
  }
  void clear() {
    std::lock_guard lk(m_);
    rows_.clear();
  }

 private:
  mutable std::mutex m_;
  std::map<uint16_t, Row> rows_;
};

// ---- recording (for adversary-catalog construction) ----

struct SendRecord {
  int from;
  int to;  // -1 for broadcast
  uint8_t op;
  uint16_t proto;
  uint32_t instance;
  uint32_t ordinal;  // sender's global send counter at the time
  std::vector<uint8_t> payload;
};

struct DecisionRecord {
  int party;
  DecisionKey key;
};

// ---- in-process simulated network ----
//
// One object shared by all party executors. Per ordered pair there is one FIFO queue
// with a single pusher and a single popper, so delivery content and order are
// deterministic. Dropped frames become tombstones instead of wall-clock timeouts.
// Round structure comes from an explicit barrier over the server parties; external
// endpoints (ids >= servers()) exchange frames but never join the barrier.
class SimNet {
 public:
  SimNet(int servers, int externals = 0);

  int servers() const { return n_; }
  int endpoints() const { return n_ + ext_; }

  void send(int from, int to, Frame f);
  Frame recv(int to, int from);
  // atomic broadcast among the servers: every receiver gets the identical frame,
  // a scripted mutation included
  void broadcast3(int from, Frame f);

  void roundBarrier(int party);
  uint64_t waves(int party) const { return waveCount_[party]; }

  uint64_t pairBytes(int from, int to) const;
  uint64_t totalBytes() const;

  void setScript(const AdversaryScript* s) { script_ = s; }
  const AdversaryScript* script() const { return script_; }
  Deviate decide(int party, DecisionKey k);  // records the site, then consults the script

  void setRecording(bool on) { recording_ = on; }
  const std::vector<SendRecord>& sendLog() const { return sendLog_; }
  const std::vector<DecisionRecord>& decisionLog() const { return decisionLog_; }

 private:
  struct Queue {
    std::mutex m;
    std::condition_variable cv;
    std::deque<Frame> q;
  };

  Queue& queueFor(int from, int to) { return *qs_[size_t(from) * endpoints() + to]; }
  Frame mutated(int from, Frame f);
  void push(int from, int to, const Frame& f);

  int n_, ext_;
  std::vector<std::unique_ptr<Queue>> qs_;
  std::vector<std::vector<uint64_t>> bytes_;  // [from][to], under byteMu_
  mutable std::mutex byteMu_;

  // wave barrier over servers
  std::mutex barMu_;
  std::condition_variable barCv_;
  int arrived_ = 0;
  uint64_t barGen_ = 0;
  std::vector<uint64_t> waveCount_;

  const AdversaryScript* script_ = nullptr;
  std::vector<uint32_t> sendOrd_;  // per-party global send counters

  bool recording_ = false;
  std::mutex logMu_;
  std::vector<SendRecord> sendLog_;
  std::vector<DecisionRecord> decisionLog_;
};

}  // namespace rmpc
