#include "rmpc/transport.hpp"

#include <chrono>
#include <cstring>

namespace rmpc {

namespace {
constexpr auto kStallLimit = std::chrono::seconds(30);

void putLe(std::vector<uint8_t>& out, uint64_t v, int nbytes) {
  for (int i = 0; i < nbytes; ++i) out.push_back(uint8_t(v >> (8 * i)));
}
uint64_t getLe(const uint8_t* p, int nbytes) {
  uint64_t v = 0;
  for (int i = 0; i < nbytes; ++i) v |= uint64_t(p[i]) << (8 * i);
  return v;
}
}  // namespace

std::vector<uint8_t> serializeFrame(const Frame& f) {
  if (f.tombstone) throw std::logic_error("serializeFrame: tombstones never hit the wire");
  std::vector<uint8_t> out;
  out.reserve(11 + f.payload.size());
  putLe(out, 7 + f.payload.size(), 4);
  out.push_back(f.op);
  putLe(out, f.proto, 2);
  putLe(out, f.instance, 4);
  out.insert(out.end(), f.payload.begin(), f.payload.end());
  return out;
}

Frame parseFrame(const uint8_t* p, size_t n) {
  if (n < 11) throw std::runtime_error("parseFrame: short buffer");
  uint64_t len = getLe(p, 4);
  if (len + 4 != n) throw std::runtime_error("parseFrame: length mismatch");
  Frame f;
  f.op = p[4];
  f.proto = uint16_t(getLe(p + 5, 2));
  f.instance = uint32_t(getLe(p + 7, 4));
  f.payload.assign(p + 11, p + n);
  return f;
}

SimNet::SimNet(int servers, int externals) : n_(servers), ext_(externals) {
  if (servers != 3 && servers != 4) throw std::invalid_argument("SimNet: 3 or 4 servers");
  int e = endpoints();
  qs_.resize(size_t(e) * e);
  for (auto& q : qs_) q = std::make_unique<Queue>();
  bytes_.assign(e, std::vector<uint64_t>(e, 0));
  waveCount_.assign(e, 0);
  sendOrd_.assign(e, 0);
}

Frame SimNet::mutated(int from, Frame f) {
  uint32_t ord = sendOrd_[from]++;
  if (!script_ || script_->corrupt != from) return f;
  for (const WireAct& a : script_->wire) {
    if (a.ordinal != ord) continue;
    switch (a.mut) {
      case Mut::kDrop:
        f.tombstone = true;
        f.payload.clear();
        break;
      case Mut::kTamperAdd: {
        int k = int(std::min<size_t>(8, f.payload.size()));
        uint64_t v = getLe(f.payload.data(), k) + a.arg;
        for (int i = 0; i < k; ++i) f.payload[i] = uint8_t(v >> (8 * i));
        break;
      }
      case Mut::kTamperSet: {
        int k = int(std::min<size_t>(8, f.payload.size()));
        for (int i = 0; i < k; ++i) f.payload[i] = uint8_t(a.arg >> (8 * i));
        break;
      }
    }
  }
  return f;
}

void SimNet::push(int from, int to, const Frame& f) {
  if (!f.tombstone) {
    std::lock_guard lk(byteMu_);
    bytes_[from][to] += frameWireSize(f);
  }
  auto& q = queueFor(from, to);
  {
    std::lock_guard lk(q.m);
    q.q.push_back(f);
  }
  q.cv.notify_one();
}

void SimNet::send(int from, int to, Frame f) {
  if (from == to || from < 0 || to < 0 || from >= endpoints() || to >= endpoints())
    throw std::invalid_argument("send: bad endpoint");
  Frame out = mutated(from, std::move(f));
  if (recording_) {
    std::lock_guard lk(logMu_);
    sendLog_.push_back({from, to, out.op, out.proto, out.instance, sendOrd_[from] - 1,
                        out.payload});
  }
  push(from, to, out);
}

void SimNet::broadcast3(int from, Frame f) {
  if (from < 0 || from >= n_) throw std::invalid_argument("broadcast3: not a server");
  Frame out = mutated(from, std::move(f));
  if (recording_) {
    std::lock_guard lk(logMu_);
    sendLog_.push_back({from, -1, out.op, out.proto, out.instance, sendOrd_[from] - 1,
                        out.payload});
  }
  for (int to = 0; to < n_; ++to)
    if (to != from) push(from, to, out);
}

Frame SimNet::recv(int to, int from) {
  auto& q = queueFor(from, to);
  std::unique_lock lk(q.m);
  if (!q.cv.wait_for(lk, kStallLimit, [&] { return !q.q.empty(); }))
    throw std::runtime_error("recv: transport stalled (harness bug)");
  Frame f = std::move(q.q.front());
  q.q.pop_front();
  return f;
}

void SimNet::roundBarrier(int party) {
  if (party < 0 || party >= n_) throw std::invalid_argument("roundBarrier: not a server");
  std::unique_lock lk(barMu_);
  uint64_t gen = barGen_;
  ++waveCount_[party];
  if (++arrived_ == n_) {
    arrived_ = 0;
    ++barGen_;
    barCv_.notify_all();
    return;
  }
  if (!barCv_.wait_for(lk, kStallLimit, [&] { return barGen_ != gen; }))
    throw std::runtime_error("roundBarrier: stalled (unbalanced barrier calls)");
}

uint64_t SimNet::pairBytes(int from, int to) const {
  std::lock_guard lk(byteMu_);
  return bytes_[from][to];
}

uint64_t SimNet::totalBytes() const {
  std::lock_guard lk(byteMu_);
  uint64_t s = 0;
  for (auto& row : bytes_)
    for (uint64_t b : row) s += b;
  return s;
}

Deviate SimNet::decide(int party, DecisionKey k) {
  if (recording_) {
    std::lock_guard lk(logMu_);
    decisionLog_.push_back({party, k});
  }
  return script_ ? script_->decide(party, k) : Deviate::kNone;
}

}  // namespace rmpc
