#include "seslayer/crypto_suite.hpp"

#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/kdf.h>
#include <openssl/rand.h>
#include <openssl/sha.h>

#include <cstring>

namespace seslayer {

std::uint64_t RandomSource::next_u64() {
  std::array<std::uint8_t, 8> b{};
  fill(b);
  return get_u64(b.data());
}

void SystemRandom::fill(std::span<std::uint8_t> out) {
  if (out.empty()) return;
  if (RAND_bytes(out.data(), static_cast<int>(out.size())) != 1)
    throw Error(errc::kCryptoFailure, subsys::kCrypto, "system randomness unavailable");
}

SeededRandom::SeededRandom(std::uint64_t seed) {
  Bytes s;
  put_u64(s, seed);
  auto k = crypto::sha256(s);
  std::copy(k.begin(), k.end(), key_.begin());
}

void SeededRandom::fill(std::span<std::uint8_t> out) {
  std::lock_guard lk(mu_);
  for (auto& byte : out) {
    if (used_ == block_.size()) {
      Bytes ctr;
      put_u64(ctr, counter_++);
      auto b = crypto::hmac_sha256(key_, ctr);
      std::copy(b.begin(), b.end(), block_.begin());
      used_ = 0;
    }
    byte = block_[used_++];
  }
}

}  // namespace seslayer

namespace seslayer::crypto {

namespace {

[[noreturn]] void crypto_fail(std::string msg) {
  throw Error(errc::kCryptoFailure, subsys::kCrypto, std::move(msg));
}

[[noreturn]] void unknown(std::string_view kind, std::string_view id) {
  throw Error(errc::kUnknownSuite, subsys::kCrypto,
              "unknown " + std::string(kind) + " '" + std::string(id) + "'");
}

class NullCipher final : public Cipher {
 public:
  std::string_view id() const override { return kNullCipher; }
  bool encrypts() const override { return false; }
  Bytes encrypt(ByteView, ByteView p, RandomSource&) const override { return {p.begin(), p.end()}; }
  Bytes decrypt(ByteView, ByteView c) const override { return {c.begin(), c.end()}; }
};

struct CipherCtx {
  EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
  ~CipherCtx() { EVP_CIPHER_CTX_free(ctx); }
};

// Output is IV (16 bytes) followed by the keystream-xored payload.
class Aes192Ctr final : public Cipher {
 public:
  static constexpr std::size_t kIvSize = 16;

  std::string_view id() const override { return kAes192Ctr; }
  bool encrypts() const override { return true; }

  Bytes encrypt(ByteView key, ByteView plaintext, RandomSource& rng) const override {
    Bytes out(kIvSize + plaintext.size());
    rng.fill(std::span(out.data(), kIvSize));
    run(key, std::span(out.data(), kIvSize), plaintext, out.data() + kIvSize);
    return out;
  }

  Bytes decrypt(ByteView key, ByteView ciphertext) const override {
    if (ciphertext.size() < kIvSize) crypto_fail("ciphertext shorter than IV");
    Bytes out(ciphertext.size() - kIvSize);
    run(key, ciphertext.first(kIvSize), ciphertext.subspan(kIvSize), out.data());
    return out;
  }

 private:
  static void run(ByteView key, ByteView iv, ByteView in, std::uint8_t* out) {
    if (key.size() != kSessionKeySize) crypto_fail("AES-192 requires a 24-byte key");
    CipherCtx c;
    if (!c.ctx || EVP_EncryptInit_ex(c.ctx, EVP_aes_192_ctr(), nullptr, key.data(), iv.data()) != 1)
      crypto_fail("cipher init failed");
    std::size_t done = 0;
    while (done < in.size()) {
      int chunk = static_cast<int>(std::min<std::size_t>(in.size() - done, 1 << 30));
      int outl = 0;
      if (EVP_EncryptUpdate(c.ctx, out + done, &outl, in.data() + done, chunk) != 1)
        crypto_fail("cipher update failed");
      done += static_cast<std::size_t>(outl);
    }
  }
};

class HmacSha256 final : public Digest {
 public:
  std::string_view id() const override { return kHmacSha256; }
  std::size_t size() const override { return 32; }
  Bytes mac(ByteView key, ByteView data) const override { return hmac_sha256(key, data); }
};

}  // namespace

SessionKey::SessionKey(ByteView bytes) {
  if (bytes.size() != kSessionKeySize)
    crypto_fail("session key must be 24 bytes, got " + std::to_string(bytes.size()));
  std::copy(bytes.begin(), bytes.end(), bytes_.begin());
}

SessionKey generate_session_key(RandomSource& rng) {
  std::array<std::uint8_t, kSessionKeySize> b{};
  rng.fill(b);
  return SessionKey(b);
}

std::unique_ptr<Cipher> make_null_cipher() { return std::make_unique<NullCipher>(); }
std::unique_ptr<Cipher> make_aes192_ctr() { return std::make_unique<Aes192Ctr>(); }
std::unique_ptr<Digest> make_hmac_sha256() { return std::make_unique<HmacSha256>(); }

// ---------------------------------------------------------------------------
// Registry

SuiteRegistry::Builder& SuiteRegistry::Builder::add_cipher(std::unique_ptr<Cipher> c) {
  std::string id(c->id());
  ciphers_[id] = std::move(c);
  return *this;
}

SuiteRegistry::Builder& SuiteRegistry::Builder::add_digest(std::unique_ptr<Digest> d) {
  std::string id(d->id());
  digests_[id] = std::move(d);
  return *this;
}

SuiteRegistry::Builder& SuiteRegistry::Builder::add_suite(std::string id, std::string cipher_id,
                                                          std::string digest_id) {
  auto c = ciphers_.find(cipher_id);
  if (c == ciphers_.end()) unknown("cipher", cipher_id);
  if (!digests_.contains(digest_id)) unknown("digest", digest_id);
  SuiteCapabilities caps{c->second->encrypts(), true};
  suites_.push_back(SuiteDescriptor{std::move(id), std::move(cipher_id), std::move(digest_id), caps});
  return *this;
}

SuiteRegistry SuiteRegistry::Builder::build() {
  if (!ciphers_.contains(kNullCipher)) crypto_fail("registry lacks the NULL cipher");
  if (digests_.empty()) crypto_fail("registry lacks a keyed digest");
  SuiteRegistry r;
  r.ciphers_ = std::move(ciphers_);
  r.digests_ = std::move(digests_);
  r.suites_ = std::move(suites_);
  return r;
}

const SuiteRegistry& SuiteRegistry::builtin() {
  static const SuiteRegistry registry = [] {
    Builder b;
    b.add_cipher(make_null_cipher()).add_cipher(make_aes192_ctr()).add_digest(make_hmac_sha256());
    b.add_suite(std::string(kNullSuite), std::string(kNullCipher), std::string(kHmacSha256));
    b.add_suite(std::string(kAesSuite), std::string(kAes192Ctr), std::string(kHmacSha256));
    return b.build();
  }();
  return registry;
}

const SuiteDescriptor* SuiteRegistry::find_suite(std::string_view id) const {
  for (const auto& s : suites_)
    if (s.id == id) return &s;
  return nullptr;
}

const SuiteDescriptor& SuiteRegistry::suite(std::string_view id) const {
  const auto* s = find_suite(id);
  if (!s) unknown("suite", id);
  return *s;
}

const Cipher& SuiteRegistry::cipher(std::string_view id) const {
  auto it = ciphers_.find(id);
  if (it == ciphers_.end()) unknown("cipher", id);
  return *it->second;
}

const Digest& SuiteRegistry::digest(std::string_view id) const {
  auto it = digests_.find(id);
  if (it == digests_.end()) unknown("digest", id);
  return *it->second;
}

Bytes SuiteRegistry::mac(ByteView key, ByteView data, std::string_view digest_id) const {
  return digest(digest_id).mac(key, data);
}

std::size_t SuiteRegistry::digest_size(std::string_view digest_id) const {
  return digest(digest_id).size();
}

Bytes SuiteRegistry::encrypt(ByteView key, ByteView plaintext, std::string_view cipher_id,
                             RandomSource& rng) const {
  return cipher(cipher_id).encrypt(key, plaintext, rng);
}

Bytes SuiteRegistry::decrypt(ByteView key, ByteView ciphertext, std::string_view cipher_id) const {
  return cipher(cipher_id).decrypt(key, ciphertext);
}

bool SuiteRegistry::verify_mac(ByteView key, ByteView data, ByteView tag,
                               std::string_view digest_id) const {
  return equal_ct(mac(key, data, digest_id), tag);
}

Bytes mac(const SessionKey& key, ByteView data, std::string_view digest_id) {
  return SuiteRegistry::builtin().mac(key.view(), data, digest_id);
}

Bytes encrypt(const SessionKey& key, ByteView plaintext, std::string_view cipher_id, RandomSource& rng) {
  return SuiteRegistry::builtin().encrypt(key.view(), plaintext, cipher_id, rng);
}

Bytes decrypt(const SessionKey& key, ByteView ciphertext, std::string_view cipher_id) {
  return SuiteRegistry::builtin().decrypt(key.view(), ciphertext, cipher_id);
}

// ---------------------------------------------------------------------------
// Primitives

Bytes sha256(ByteView data) {
  Bytes out(SHA256_DIGEST_LENGTH);
  if (!SHA256(data.data(), data.size(), out.data())) crypto_fail("sha256 failed");
  return out;
}

Bytes hmac_sha256(ByteView key, ByteView data) {
  Bytes out(32);
  unsigned int len = 0;
  static const std::uint8_t kEmpty = 0;
  const void* k = key.empty() ? static_cast<const void*>(&kEmpty) : key.data();
  const std::uint8_t* d = data.empty() ? &kEmpty : data.data();
  if (!HMAC(EVP_sha256(), k, static_cast<int>(key.size()), d, data.size(), out.data(), &len) || len != 32)
    crypto_fail("hmac failed");
  return out;
}

Bytes hkdf_sha256(ByteView ikm, ByteView salt, ByteView info, std::size_t length) {
  EVP_PKEY_CTX* ctx = EVP_PKEY_CTX_new_id(EVP_PKEY_HKDF, nullptr);
  if (!ctx) crypto_fail("hkdf context");
  static const std::uint8_t kZero = 0;
  Bytes out(length);
  std::size_t outlen = length;
  bool ok = EVP_PKEY_derive_init(ctx) > 0 && EVP_PKEY_CTX_set_hkdf_md(ctx, EVP_sha256()) > 0 &&
            EVP_PKEY_CTX_set1_hkdf_salt(ctx, salt.empty() ? &kZero : salt.data(),
                                        static_cast<int>(salt.size())) > 0 &&
            EVP_PKEY_CTX_set1_hkdf_key(ctx, ikm.empty() ? &kZero : ikm.data(),
                                       static_cast<int>(ikm.size())) > 0 &&
            EVP_PKEY_CTX_add1_hkdf_info(ctx, info.empty() ? &kZero : info.data(),
                                        static_cast<int>(info.size())) > 0 &&
            EVP_PKEY_derive(ctx, out.data(), &outlen) > 0;
  EVP_PKEY_CTX_free(ctx);
  if (!ok || outlen != length) crypto_fail("hkdf derive failed");
  return out;
}

SessionKey derive_subkey(const SessionKey& key, std::string_view label) {
  static constexpr std::string_view kSalt = "seslayer-subkey";
  return SessionKey(hkdf_sha256(key.view(), as_bytes(kSalt), as_bytes(label), kSessionKeySize));
}

X25519KeyPair::X25519KeyPair(RandomSource& rng) : private_(rng.bytes(kKeySize)) {
  EVP_PKEY* pk = EVP_PKEY_new_raw_private_key(EVP_PKEY_X25519, nullptr, private_.data(), private_.size());
  if (!pk) crypto_fail("x25519 key creation failed");
  public_.resize(kKeySize);
  std::size_t len = kKeySize;
  int rc = EVP_PKEY_get_raw_public_key(pk, public_.data(), &len);
  EVP_PKEY_free(pk);
  if (rc != 1 || len != kKeySize) crypto_fail("x25519 public key extraction failed");
}

Bytes X25519KeyPair::shared_secret(ByteView peer_public) const {
  if (peer_public.size() != kKeySize) crypto_fail("x25519 peer key must be 32 bytes");
  EVP_PKEY* mine = EVP_PKEY_new_raw_private_key(EVP_PKEY_X25519, nullptr, private_.data(), private_.size());
  EVP_PKEY* peer = EVP_PKEY_new_raw_public_key(EVP_PKEY_X25519, nullptr, peer_public.data(), peer_public.size());
  EVP_PKEY_CTX* ctx = mine ? EVP_PKEY_CTX_new(mine, nullptr) : nullptr;
  Bytes secret(kKeySize);
  std::size_t len = kKeySize;
  bool ok = mine && peer && ctx && EVP_PKEY_derive_init(ctx) > 0 && EVP_PKEY_derive_set_peer(ctx, peer) > 0 &&
            EVP_PKEY_derive(ctx, secret.data(), &len) > 0 && len == kKeySize;
  EVP_PKEY_CTX_free(ctx);
  EVP_PKEY_free(peer);
  EVP_PKEY_free(mine);
  if (!ok) crypto_fail("x25519 key agreement failed");
  return secret;
}

}  // namespace seslayer::crypto
