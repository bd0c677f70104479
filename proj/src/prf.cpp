#include "rmpc/prf.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cassert>
#include <cstring>
#include <stdexcept>

namespace rmpc {

std::string Digest::hex() const {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(64);
  for (uint8_t b : bytes) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 15]);
  }
  return s;
}

Digest sha256(const uint8_t* p, size_t n) {
  Digest d;
  unsigned int len = 32;
  EVP_Digest(p, n, d.bytes.data(), &len, EVP_sha256(), nullptr);
  return d;
}

Digest sha256(const std::vector<uint8_t>& v) { return sha256(v.data(), v.size()); }

HashAcc::HashAcc() {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  mdctx_ = ctx;
}

HashAcc::~HashAcc() {
  if (mdctx_) EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(mdctx_));
}

void HashAcc::put(const uint8_t* p, size_t n) {
  auto* ctx = static_cast<EVP_MD_CTX*>(mdctx_);
  uint8_t lenle[8];
  for (int i = 0; i < 8; ++i) lenle[i] = uint8_t(n >> (8 * i));
  EVP_DigestUpdate(ctx, lenle, 8);
  EVP_DigestUpdate(ctx, p, n);
  ++blocks_;
}

Digest HashAcc::done() {
  Digest d;
  unsigned int len = 32;
  EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(mdctx_), d.bytes.data(), &len);
  return d;
}

Prf::Prf(std::array<uint8_t, 16> key, std::string label) : key_(key), label_(std::move(label)) {}

void Prf::markFresh(SampleId id) const {
  bool inserted = used_.insert(id).second;
  assert(inserted && "PRF sample id reused");
  (void)inserted;
}

std::vector<uint8_t> Prf::bytes(SampleId id, size_t n) const {
  // counter-mode IV: 12-byte nonce from the sample id, low 4 bytes count blocks
  uint8_t iv[16] = {};
  iv[0] = uint8_t(id.tag);
  iv[1] = uint8_t(id.tag >> 8);
  std::memcpy(iv + 2, &id.instance, 4);
  std::memcpy(iv + 6, &id.sub, 4);
  assert(n < (size_t(1) << 36));

  std::vector<uint8_t> out(n, 0);
  if (n == 0) return out;
  EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
  if (!ctx || EVP_EncryptInit_ex(ctx, EVP_aes_128_ctr(), nullptr, key_.data(), iv) != 1)
    throw std::runtime_error("cipher init failed");
  int outl = 0;
  EVP_EncryptUpdate(ctx, out.data(), &outl, out.data(), int(n));
  EVP_CIPHER_CTX_free(ctx);
  return out;
}

RingVec Prf::rings(SampleId id, int width, size_t count) const {
  size_t step = (width + 7) / 8;
  auto buf = bytes(id, step * count);
  RingVec out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) out.push_back(Ring::parseFrom(buf.data() + i * step, width));
  return out;
}

std::vector<GrEl> Prf::grEls(const GrCtx& ctx, SampleId id, size_t count) const {
  auto coeffs = rings(id, ctx.lbits(), count * ctx.deg());
  std::vector<GrEl> out(count, GrEl(ctx.deg()));
  for (size_t i = 0; i < count; ++i)
    for (int j = 0; j < ctx.deg(); ++j) out[i][j] = coeffs[i * ctx.deg() + j].v;
  return out;
}

Prf Prf::seeded(const Digest& seed) const {
  std::vector<uint8_t> material(key_.begin(), key_.end());
  material.insert(material.end(), seed.bytes.begin(), seed.bytes.end());
  Digest derived = sha256(material);
  std::array<uint8_t, 16> k;
  std::memcpy(k.data(), derived.bytes.data(), 16);
  return Prf(k, label_ + "/seeded");
}

namespace {

std::array<uint8_t, 16> deriveKey(uint64_t seed, const std::string& label) {
  std::vector<uint8_t> material(8);
  for (int i = 0; i < 8; ++i) material[i] = uint8_t(seed >> (8 * i));
  material.insert(material.end(), label.begin(), label.end());
  Digest d = sha256(material);
  std::array<uint8_t, 16> k;
  std::memcpy(k.data(), d.bytes.data(), 16);
  return k;
}

std::string pairLabel(int a, int b) {
  if (a > b) std::swap(a, b);
  return "k" + std::to_string(a) + std::to_string(b);
}

std::string tripleLabel(int a, int b, int c) {
  int v[3] = {a, b, c};
  std::sort(v, v + 3);
  return "k" + std::to_string(v[0]) + std::to_string(v[1]) + std::to_string(v[2]);
}

}  // namespace

std::vector<KeyStore> KeyStore::setup3(uint64_t seed) {
  std::vector<KeyStore> stores(3);
  for (int s = 0; s < 3; ++s) {
    stores[s].self_ = s;
    for (int a = 0; a < 3; ++a)
      for (int b = a + 1; b < 3; ++b)
        if (s == a || s == b) {
          std::string l = pairLabel(a, b);
          stores[s].keys_.emplace(l, Prf(deriveKey(seed, l), l));
        }
    stores[s].keys_.emplace("kP", Prf(deriveKey(seed, "kP"), "kP"));
  }
  return stores;
}

std::vector<KeyStore> KeyStore::setup4(uint64_t seed) {
  std::vector<KeyStore> stores(4);
  for (int s = 0; s < 4; ++s) {
    stores[s].self_ = s;
    for (int a = 0; a < 4; ++a)
      for (int b = a + 1; b < 4; ++b)
        if (s == a || s == b) {
          std::string l = pairLabel(a, b);
          stores[s].keys_.emplace(l, Prf(deriveKey(seed, l), l));
        }
    for (int a = 0; a < 4; ++a)
      for (int b = a + 1; b < 4; ++b)
        for (int c = b + 1; c < 4; ++c)
          if (s == a || s == b || s == c) {
            std::string l = tripleLabel(a, b, c);
            stores[s].keys_.emplace(l, Prf(deriveKey(seed, l), l));
          }
    stores[s].keys_.emplace("kP", Prf(deriveKey(seed, "kP"), "kP"));
  }
  return stores;
}

const Prf& KeyStore::key(const std::string& label) const {
  auto it = keys_.find(label);
  if (it == keys_.end())
    throw std::logic_error("party " + std::to_string(self_) + " lacks key " + label);
  return it->second;
}

const Prf& KeyStore::pairKey(int a, int b) const { return key(pairLabel(a, b)); }

const Prf& KeyStore::tripleKey(int a, int b, int c) const { return key(tripleLabel(a, b, c)); }

RingVec KeyStore::zeroShare3(SampleId id, int width, size_t count) const {
  int s = self_;
  RingVec rs = pairKey(s, (s + 1) % 3).rings(id, width, count);
  RingVec rprev = pairKey((s + 2) % 3, s).rings(id, width, count);
  for (size_t i = 0; i < count; ++i) rs[i] = rs[i] - rprev[i];
  return rs;
}

Digest commitDigest(const std::vector<uint8_t>& value, const std::vector<uint8_t>& rand,
                    const std::string& context) {
  HashAcc acc;
  acc.put(reinterpret_cast<const uint8_t*>(context.data()), context.size());
  acc.put(value);
  acc.put(rand);
  return acc.done();
}

bool commitVerify(const Digest& c, const std::vector<uint8_t>& value,
                  const std::vector<uint8_t>& rand, const std::string& context) {
  return commitDigest(value, rand, context) == c;
}

}  // namespace rmpc
