#include "rmpc/jmp.hpp"

#include <algorithm>
#include <cstring>

namespace rmpc {

namespace {

// control-frame payload: body bytes first, 2-byte batch id last, so scripted byte
// mutations land on the message body rather than the routing id
std::vector<uint8_t> ctlPayload(uint16_t bid, std::vector<uint8_t> body) {
  body.push_back(uint8_t(bid & 0xFF));
  body.push_back(uint8_t(bid >> 8));
  return body;
}

int majority(int a, int b, int c) { return (a + b + c >= 2) ? 1 : 0; }

}  // namespace

JmpHub::JmpHub(SimNet& net, Tally& tally, int me)
    : net_(net), tally_(tally), me_(me), n_(net.servers()) {}

uint16_t JmpHub::batch(int i, int j, int k, Phase ph) {
  if (i == j || i == k || j == k || i < 0 || j < 0 || k < 0 || i >= n_ || j >= n_ || k >= n_)
    throw std::invalid_argument("jmp batch: bad party triple");
  auto key = std::make_tuple(i, j, k, int(ph));
  auto it = index_.find(key);
  if (it != index_.end()) return it->second;
  uint16_t id = uint16_t(batches_.size());
  batches_.push_back(Batch{i, j, k, ph, HashAcc(), false, 0, false});
  index_.emplace(key, id);
  return id;
}

Frame JmpHub::ctl(uint8_t op, uint16_t bid, std::vector<uint8_t> body) const {
  Frame f;
  f.op = op;
  f.proto = proto::kJmpCtl;
  f.instance = bid;
  f.payload = ctlPayload(bid, std::move(body));
  return f;
}

bool JmpHub::validCtl(const Frame& f, uint8_t op, uint16_t bid, size_t bodyLen) {
  if (f.silent() || f.op != op || f.payload.size() != bodyLen + 2) return false;
  return f.payload[bodyLen] == uint8_t(bid & 0xFF) && f.payload[bodyLen + 1] == uint8_t(bid >> 8);
}

void JmpHub::send(uint16_t bid, uint16_t protoId, uint32_t instance, Bucket bucket,
                  const std::vector<uint8_t>& bytes, uint64_t logicalBits) {
  Batch& b = batches_.at(bid);
  if (me_ != b.i) throw std::logic_error("jmp send: not the data sender");
  Frame f;
  f.op = kOpData;
  f.proto = protoId;
  f.instance = instance;
  f.payload = bytes;
  net_.send(me_, b.k, std::move(f));
  b.acc.put(bytes);
  ++b.entries;
  tally_.addBits(protoId, b.ph, bucket, logicalBits);
}

void JmpHub::echo(uint16_t bid, const std::vector<uint8_t>& bytes) {
  Batch& b = batches_.at(bid);
  if (me_ != b.j) throw std::logic_error("jmp echo: not the hash sender");
  b.acc.put(bytes);
  ++b.entries;
}

std::optional<std::vector<uint8_t>> JmpHub::recv(uint16_t bid) {
  Batch& b = batches_.at(bid);
  if (me_ != b.k) throw std::logic_error("jmp recv: not the receiver");
  ++b.entries;
  Frame f = net_.recv(me_, b.i);
  if (f.silent()) {
    b.sawSilence = true;
    return std::nullopt;
  }
  b.acc.put(f.payload);
  return std::move(f.payload);
}

void JmpHub::bystand(uint16_t bid) {
  Batch& b = batches_.at(bid);
  if (n_ != 4 || me_ == b.i || me_ == b.j || me_ == b.k)
    throw std::logic_error("jmp bystand: only the uninvolved fourth party");
  ++b.entries;
}

JmpOutcome JmpHub::verifyBatch(uint16_t bid) {
  Batch& b = batches_.at(bid);
  if (b.done) throw std::logic_error("jmp verify: batch already verified");
  b.done = true;
  if (b.entries == 0) return {};
  return n_ == 3 ? verify3(b, bid) : verify4(b, bid);
}

JmpOutcome JmpHub::verify3(Batch& b, uint16_t bid) {
  const int i = b.i, j = b.j, k = b.k;
  const Digest own = b.acc.done();

  // wave 1: Pj backs the batch with its hash
  bool hashSilent = false;
  Digest fromJ{};
  if (me_ == j) {
    net_.send(me_, k, ctl(kOpHash, bid, {own.bytes.begin(), own.bytes.end()}));
    tally_.addBits(proto::kJmpCtl, b.ph, Bucket::kVerify, 256);
  } else if (me_ == k) {
    Frame f = net_.recv(me_, j);
    if (validCtl(f, kOpHash, bid, 32))
      std::memcpy(fromJ.bytes.data(), f.payload.data(), 32);
    else
      hashSilent = true;
  }

  // wave 2: Pk accuses silent senders, or distributes its inconsistency bit
  int bitK = 0;
  bool senderGrievance = false;  // at Pi/Pj: no bit arrived from Pk
  if (me_ == k) {
    int mask = (b.sawSilence ? 1 : 0) | (hashSilent ? 2 : 0);
    for (uint32_t t : {1u, 2u, 3u})
      if (net_.decide(me_, {kSiteJmpAccuseV2, bid, t}) == Deviate::kFalseAccuse) mask |= int(t);
    if (mask != 0) {
      net_.broadcast3(me_, ctl(kOpAccuse, bid, {uint8_t(mask)}));
      tally_.addBits(proto::kJmpCtl, b.ph, Bucket::kVerify, 8);
      return {mask == 1 ? j : i};
    }
    bitK = (fromJ != own) ? 1 : 0;
    if (net_.decide(me_, {kSiteJmpBitFlipK, bid, 0}) == Deviate::kWrongBit) bitK ^= 1;
    net_.send(me_, i, ctl(kOpBit, bid, {uint8_t(bitK)}));
    net_.send(me_, j, ctl(kOpBit, bid, {uint8_t(bitK)}));
    tally_.addBits(proto::kJmpCtl, b.ph, Bucket::kVerify, 2);
  } else {
    Frame f = net_.recv(me_, k);
    if (validCtl(f, kOpAccuse, bid, 1)) {
      int mask = f.payload[0] & 3;
      if (mask != 0) return {mask == 1 ? j : i};
      senderGrievance = true;  // malformed accusation, same as silence
    } else if (validCtl(f, kOpBit, bid, 1)) {
      bitK = f.payload[0] & 1;
    } else {
      senderGrievance = true;
    }
  }

  // wave 3: senders exchange bits (with an alignment copy to Pk), or accuse Pk
  const bool isSender = (me_ == i || me_ == j);
  const int partner = (me_ == i) ? j : i;
  int myBit = bitK;
  bool mineAccusedK = false;
  if (isSender) {
    mineAccusedK = senderGrievance ||
                   net_.decide(me_, {kSiteJmpAccusePkV3, bid, 0}) == Deviate::kFalseAccuse;
    if (net_.decide(me_, {kSiteJmpBitFlipS, bid, 0}) == Deviate::kWrongBit) myBit ^= 1;
    if (mineAccusedK) {
      net_.broadcast3(me_, ctl(kOpAccuse, bid, {uint8_t(k)}));
      tally_.addBits(proto::kJmpCtl, b.ph, Bucket::kVerify, 8);
    } else {
      net_.send(me_, partner, ctl(kOpBit, bid, {uint8_t(myBit)}));
      net_.send(me_, k, ctl(kOpBit, bid, {uint8_t(myBit)}));
      tally_.addBits(proto::kJmpCtl, b.ph, Bucket::kVerify, 2);
    }
  }
  bool accusedKByI = false, accusedKByJ = false, partnerSilent = false;
  auto classify = [&](int from, const Frame& f) {
    bool isAccuseK = validCtl(f, kOpAccuse, bid, 1) && f.payload[0] == uint8_t(k);
    if (from == i) accusedKByI = isAccuseK;
    if (from == j) accusedKByJ = isAccuseK;
    return isAccuseK;
  };
  if (me_ == k) {
    classify(i, net_.recv(me_, i));
    classify(j, net_.recv(me_, j));
  } else {
    Frame f = net_.recv(me_, partner);
    if (!classify(partner, f)) {
      if (validCtl(f, kOpBit, bid, 1))
        myBit |= f.payload[0] & 1;
      else
        partnerSilent = true;
    }
    // own broadcast does not loop back to its sender
    if (me_ == i) accusedKByI = mineAccusedK;
    if (me_ == j) accusedKByJ = mineAccusedK;
  }
  if (accusedKByI && accusedKByJ) return {i};
  if (accusedKByI) return {j};
  if (accusedKByJ) return {i};

  // wave 4: everyone broadcasts an accusation, its hash (bit set), or a quiet marker
  bool iAccusedPartner = false;
  if (isSender) {
    bool accusePartner = partnerSilent;
    if (net_.decide(me_, {kSiteJmpAccusePartnerV4, bid, 0}) == Deviate::kFalseAccuse)
      accusePartner = true;
    iAccusedPartner = accusePartner;
    if (accusePartner) {
      net_.broadcast3(me_, ctl(kOpAccuse, bid, {uint8_t(partner)}));
      tally_.addBits(proto::kJmpCtl, b.ph, Bucket::kVerify, 8);
    } else if (myBit == 1) {
      net_.broadcast3(me_, ctl(kOpHash, bid, {own.bytes.begin(), own.bytes.end()}));
      tally_.addBits(proto::kJmpCtl, b.ph, Bucket::kVerify, 256);
    } else {
      net_.broadcast3(me_, ctl(kOpHash, bid, {}));
    }
  } else {
    if (bitK == 1)
      net_.broadcast3(me_, ctl(kOpHash, bid, {own.bytes.begin(), own.bytes.end()}));
    else
      net_.broadcast3(me_, ctl(kOpHash, bid, {}));
  }

  bool accusation[3] = {false, false, false};  // indexed by sender slot: [0]=Pi, [1]=Pj
  bool hasHash[3] = {false, false, false};     // [0]=Pi, [1]=Pj, [2]=Pk
  Digest h[3];
  auto classifyV4 = [&](int slot, int from, const Frame& f) {
    if (validCtl(f, kOpAccuse, bid, 1)) {
      int accused = f.payload[0];
      int expect = (from == i) ? j : i;
      if (slot < 2 && accused == expect) accusation[slot] = true;
      return;
    }
    if (validCtl(f, kOpHash, bid, 32)) {
      hasHash[slot] = true;
      std::memcpy(h[slot].bytes.data(), f.payload.data(), 32);
    }
    // quiet marker, tombstone, or malformed: "did not broadcast"
  };
  for (int from : {i, j, k}) {
    int slot = (from == i) ? 0 : (from == j ? 1 : 2);
    if (from == me_) {  // own action
      if (isSender && iAccusedPartner)
        accusation[slot] = true;
      else if ((isSender && myBit == 1) || (me_ == k && bitK == 1)) {
        hasHash[slot] = true;
        h[slot] = own;
      }
      continue;
    }
    classifyV4(slot, from, net_.recv(me_, from));
  }

  if (accusation[0] || accusation[1]) return {k};
  if (!hasHash[2]) return {};                  // Pk quiet: deliver
  if (!hasHash[0] && !hasHash[1]) return {};   // stray hash from Pk alone: deliver
  if (!hasHash[0] || !hasHash[1]) return {k};  // one sender refused to back its bit
  if (h[0] != h[1]) return {k};
  if (h[0] != h[2]) return {j};
  return {i};
}

JmpOutcome JmpHub::verify4(Batch& b, uint16_t bid) {
  const int i = b.i, j = b.j, k = b.k;
  const int l = 6 - i - j - k;
  const Digest own = b.acc.done();

  // wave 1: hash from Pj to Pk
  bool hashSilent = false;
  Digest fromJ{};
  if (me_ == j) {
    net_.send(me_, k, ctl(kOpHash, bid, {own.bytes.begin(), own.bytes.end()}));
    tally_.addBits(proto::kJmpCtl, b.ph, Bucket::kVerify, 256);
  } else if (me_ == k) {
    Frame f = net_.recv(me_, j);
    if (validCtl(f, kOpHash, bid, 32))
      std::memcpy(fromJ.bytes.data(), f.payload.data(), 32);
    else
      hashSilent = true;
  }

  // wave 2: Pk distributes its bit; silence counts as an inconsistency claim
  int myBit = 0;
  if (me_ == k) {
    myBit = (b.sawSilence || hashSilent || fromJ != own) ? 1 : 0;
    if (net_.decide(me_, {kSiteJmpBitFlipK, bid, 0}) == Deviate::kWrongBit) myBit ^= 1;
    for (int to : {i, j, l}) net_.send(me_, to, ctl(kOpBit, bid, {uint8_t(myBit)}));
    tally_.addBits(proto::kJmpCtl, b.ph, Bucket::kVerify, 3);
    return myBit ? JmpOutcome{l} : JmpOutcome{};
  }
  {
    Frame f = net_.recv(me_, k);
    myBit = validCtl(f, kOpBit, bid, 1) ? (f.payload[0] & 1) : 1;
  }

  // wave 3: Pi, Pj, Pl exchange adopted bits and take the majority
  int others[2], oi = 0;
  for (int s : {i, j, l})
    if (s != me_) others[oi++] = s;
  for (int to : others) net_.send(me_, to, ctl(kOpBit, bid, {uint8_t(myBit)}));
  tally_.addBits(proto::kJmpCtl, b.ph, Bucket::kVerify, 2);
  int got[2];
  for (int t = 0; t < 2; ++t) {
    Frame f = net_.recv(me_, others[t]);
    got[t] = validCtl(f, kOpBit, bid, 1) ? (f.payload[0] & 1) : 1;
  }
  return majority(myBit, got[0], got[1]) ? JmpOutcome{l} : JmpOutcome{};
}

JmpOutcome JmpHub::verifyAll() {
  std::vector<uint16_t> order;
  for (uint16_t id = 0; id < batches_.size(); ++id)
    if (!batches_[id].done && batches_[id].entries > 0 && batches_[id].k == 0)
      order.push_back(id);
  bool stage0 = !order.empty();
  size_t split = order.size();
  for (uint16_t id = 0; id < batches_.size(); ++id)
    if (!batches_[id].done && batches_[id].entries > 0 && batches_[id].k != 0)
      order.push_back(id);
  bool stage1 = order.size() > split;
  int waves = n_ == 3 ? 4 : 3;
  // round counts describe the whole protocol run, so only one party records them
  if (me_ == 0)
    tally_.addOnceRounds(proto::kJmpCtl, Phase::kOnline,
                         uint64_t(waves) * ((stage0 ? 1 : 0) + (stage1 ? 1 : 0)));
  for (uint16_t id : order) {
    JmpOutcome o = verifyBatch(id);
    if (!o.delivered()) return o;
  }
  return {};
}

}  // namespace rmpc
