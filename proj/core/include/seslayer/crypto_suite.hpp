#pragma once

// Registry of cipher and digest suites plus the key material they operate on.
// Algorithms are pluggable and addressed by string id. The built-in registry
// carries:
//   "NULL"                    identity cipher, HMAC-SHA256 integrity
//   "AES192-CTR-HMAC-SHA256"  AES-192 in CTR mode with a random IV, HMAC-SHA256
// Frames are protected encrypt-then-MAC.

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "seslayer/bytes.hpp"
#include "seslayer/errstack.hpp"
#include "seslayer/random.hpp"

namespace seslayer::crypto {

inline constexpr std::size_t kSessionKeySize = 24;  // 192 bits

class SessionKey {
 public:
  SessionKey() = default;
  // Throws Error(kCryptoFailure) unless exactly 24 bytes.
  explicit SessionKey(ByteView bytes);

  ByteView view() const { return {bytes_.data(), bytes_.size()}; }
  Bytes to_bytes() const { return {bytes_.begin(), bytes_.end()}; }

  friend bool operator==(const SessionKey&, const SessionKey&) = default;

 private:
  std::array<std::uint8_t, kSessionKeySize> bytes_{};
};

SessionKey generate_session_key(RandomSource& rng);

inline constexpr std::string_view kNullCipher = "NULL";
inline constexpr std::string_view kAes192Ctr = "AES192-CTR";
inline constexpr std::string_view kHmacSha256 = "HMAC-SHA256";

inline constexpr std::string_view kNullSuite = "NULL";
inline constexpr std::string_view kAesSuite = "AES192-CTR-HMAC-SHA256";

class Cipher {
 public:
  virtual ~Cipher() = default;
  virtual std::string_view id() const = 0;
  virtual bool encrypts() const = 0;
  virtual Bytes encrypt(ByteView key, ByteView plaintext, RandomSource& rng) const = 0;
  virtual Bytes decrypt(ByteView key, ByteView ciphertext) const = 0;
};

class Digest {
 public:
  virtual ~Digest() = default;
  virtual std::string_view id() const = 0;
  virtual std::size_t size() const = 0;
  virtual Bytes mac(ByteView key, ByteView data) const = 0;
};

struct SuiteCapabilities {
  bool encryption = false;
  bool integrity = false;
};

struct SuiteDescriptor {
  std::string id;
  std::string cipher_id;
  std::string digest_id;
  SuiteCapabilities capabilities;
};

// Immutable once built; safe for concurrent use.
class SuiteRegistry {
 public:
  class Builder {
   public:
    Builder& add_cipher(std::unique_ptr<Cipher> c);
    Builder& add_digest(std::unique_ptr<Digest> d);
    // Throws Error(kUnknownSuite) if the cipher or digest is not registered.
    Builder& add_suite(std::string id, std::string cipher_id, std::string digest_id);
    // Throws Error(kCryptoFailure) unless the NULL cipher and at least one
    // keyed digest are present.
    SuiteRegistry build();

   private:
    std::map<std::string, std::shared_ptr<const Cipher>, std::less<>> ciphers_;
    std::map<std::string, std::shared_ptr<const Digest>, std::less<>> digests_;
    std::vector<SuiteDescriptor> suites_;
  };

  static const SuiteRegistry& builtin();

  const SuiteDescriptor* find_suite(std::string_view id) const;
  // Throws Error(kUnknownSuite).
  const SuiteDescriptor& suite(std::string_view id) const;
  const std::vector<SuiteDescriptor>& suites() const { return suites_; }

  // Throw Error(kUnknownSuite) for an unregistered id.
  Bytes mac(ByteView key, ByteView data, std::string_view digest_id) const;
  std::size_t digest_size(std::string_view digest_id) const;
  Bytes encrypt(ByteView key, ByteView plaintext, std::string_view cipher_id, RandomSource& rng) const;
  Bytes decrypt(ByteView key, ByteView ciphertext, std::string_view cipher_id) const;

  // Constant-time check of a MAC produced by mac().
  bool verify_mac(ByteView key, ByteView data, ByteView tag, std::string_view digest_id) const;

 private:
  const Cipher& cipher(std::string_view id) const;
  const Digest& digest(std::string_view id) const;

  std::map<std::string, std::shared_ptr<const Cipher>, std::less<>> ciphers_;
  std::map<std::string, std::shared_ptr<const Digest>, std::less<>> digests_;
  std::vector<SuiteDescriptor> suites_;
};

std::unique_ptr<Cipher> make_null_cipher();
std::unique_ptr<Cipher> make_aes192_ctr();
std::unique_ptr<Digest> make_hmac_sha256();

// Free-function forms over the built-in registry.
Bytes mac(const SessionKey& key, ByteView data, std::string_view digest_id);
Bytes encrypt(const SessionKey& key, ByteView plaintext, std::string_view cipher_id, RandomSource& rng);
Bytes decrypt(const SessionKey& key, ByteView ciphertext, std::string_view cipher_id);

// ---------------------------------------------------------------------------
// Primitives used by key exchange and key separation.

Bytes sha256(ByteView data);
Bytes hmac_sha256(ByteView key, ByteView data);
Bytes hkdf_sha256(ByteView ikm, ByteView salt, ByteView info, std::size_t length);

// Derives an independent 24-byte key for one purpose ("enc", "mac", ...).
SessionKey derive_subkey(const SessionKey& key, std::string_view label);

// Ephemeral X25519 key pair.
class X25519KeyPair {
 public:
  static constexpr std::size_t kKeySize = 32;
  explicit X25519KeyPair(RandomSource& rng);
  const Bytes& public_key() const { return public_; }
  // Throws Error(kCryptoFailure) for an invalid peer key.
  Bytes shared_secret(ByteView peer_public) const;

 private:
  Bytes private_;
  Bytes public_;
};

}  // namespace seslayer::crypto
