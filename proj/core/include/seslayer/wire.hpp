#pragma once

// Architecture-independent encoding of primitive values, key-value records and
// framed messages.
//
// Every value starts with one tag byte. Integers travel as 8-byte big-endian
// two's complement (narrower sources are sign-extended), floats as 8-byte
// big-endian IEEE-754 doubles (single precision is widened exactly), strings as
// a 4-byte length plus raw bytes. Records carry an entry count, the
// (name, value) pairs in insertion order, and an END tag. File blobs carry a
// declared 8-byte total length followed by length-prefixed chunks of at most
// 64 KiB. Nested records are an extension: a record value may itself be a record.

#include <concepts>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "seslayer/bytes.hpp"
#include "seslayer/errstack.hpp"

namespace seslayer::wire {

enum class Tag : std::uint8_t {
  End = 0x00,
  Int = 0x01,
  Float = 0x02,
  String = 0x03,
  Record = 0x04,
  FileBlob = 0x05,
};

inline constexpr std::size_t kMaxBlobChunk = 64 * 1024;

struct FileBlob {
  Bytes data;
  friend bool operator==(const FileBlob&, const FileBlob&) = default;
};

struct RecordEntry;
struct WireValue;

// Ordered attribute list. Encoding preserves insertion order; equality ignores
// it.
class RecordAd {
 public:
  RecordAd();
  RecordAd(const RecordAd&);
  RecordAd(RecordAd&&) noexcept;
  RecordAd& operator=(const RecordAd&);
  RecordAd& operator=(RecordAd&&) noexcept;
  ~RecordAd();

  // Entries are taken as-is; validity is checked when encoding.
  static RecordAd from_entries(std::vector<RecordEntry> entries);

  // Replaces an existing attribute of the same name in place.
  RecordAd& set(std::string name, WireValue value);
  RecordAd& set_int(std::string name, std::int64_t v);
  RecordAd& set_float(std::string name, double v);
  RecordAd& set_string(std::string name, std::string v);
  RecordAd& set_bytes(std::string name, ByteView v);
  RecordAd& set_record(std::string name, RecordAd v);

  const WireValue* get(std::string_view name) const;
  bool contains(std::string_view name) const { return get(name) != nullptr; }
  bool erase(std::string_view name);

  // Typed lookups; throw Error(kDecodeError) when missing or of the wrong type.
  std::int64_t require_int(std::string_view name) const;
  double require_float(std::string_view name) const;
  const std::string& require_string(std::string_view name) const;
  Bytes require_bytes(std::string_view name) const;
  const RecordAd& require_record(std::string_view name) const;

  std::optional<std::string> find_string(std::string_view name) const;

  const std::vector<RecordEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  // Order-insensitive.
  friend bool operator==(const RecordAd& a, const RecordAd& b);

 private:
  std::vector<RecordEntry> entries_;
};

struct WireValue {
  using Storage = std::variant<std::int64_t, double, std::string, RecordAd, FileBlob>;
  Storage v;

  WireValue() : v(std::int64_t{0}) {}
  template <std::signed_integral T>
  WireValue(T i) : v(static_cast<std::int64_t>(i)) {}
  WireValue(double d) : v(d) {}
  WireValue(float f) : v(static_cast<double>(f)) {}
  WireValue(std::string s) : v(std::move(s)) {}
  WireValue(const char* s) : v(std::string(s)) {}
  WireValue(RecordAd r) : v(std::move(r)) {}
  WireValue(FileBlob b) : v(std::move(b)) {}

  Tag tag() const;
  bool is_int() const { return std::holds_alternative<std::int64_t>(v); }
  bool is_float() const { return std::holds_alternative<double>(v); }
  bool is_string() const { return std::holds_alternative<std::string>(v); }
  bool is_record() const { return std::holds_alternative<RecordAd>(v); }
  bool is_blob() const { return std::holds_alternative<FileBlob>(v); }

  std::int64_t as_int() const { return std::get<std::int64_t>(v); }
  double as_float() const { return std::get<double>(v); }
  const std::string& as_string() const { return std::get<std::string>(v); }
  const RecordAd& as_record() const { return std::get<RecordAd>(v); }
  const FileBlob& as_blob() const { return std::get<FileBlob>(v); }

  // Floats compare by bit pattern so NaN payloads round-trip as equal.
  friend bool operator==(const WireValue& a, const WireValue& b);
};

struct RecordEntry {
  std::string name;
  WireValue value;
  friend bool operator==(const RecordEntry&, const RecordEntry&) = default;
};

// Thrown for malformed input; offset is the byte position of the fault.
class DecodeError : public Error {
 public:
  DecodeError(std::size_t offset, std::string message);
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class EncodeError : public Error {
 public:
  explicit EncodeError(std::string message);
};

Bytes encode_int(std::int64_t value);
template <std::signed_integral T>
  requires(!std::same_as<T, std::int64_t>)
Bytes encode_int(T value) {
  return encode_int(static_cast<std::int64_t>(value));
}

Bytes encode_float(double value);
Bytes encode_float(float value);
Bytes encode_string(std::string_view value);
Bytes encode_record(const RecordAd& ad);
Bytes encode_blob(ByteView data);
// Streams the file in chunks; throws Error(kIoError) if it cannot be read.
Bytes encode_file(const std::filesystem::path& path);
Bytes encode(const WireValue& value);
void encode_to(const WireValue& value, Bytes& out);

struct Decoded {
  WireValue value;
  std::size_t consumed = 0;
};

// Decodes one value from the front of `input`.
Decoded decode_prefix(ByteView input);
// Decodes exactly one value; trailing bytes are an error.
WireValue decode(ByteView input);
RecordAd decode_record(ByteView input);

// Encoded sizes are fixed for scalars.
inline constexpr std::size_t kScalarEncodedSize = 9;
inline constexpr std::size_t string_encoded_size(std::size_t n) { return 5 + n; }

// ---------------------------------------------------------------------------
// Message frames: u32 body length, u8 flags, body, then (iff MAC_PRESENT) a
// u8 mac length and the mac bytes.

enum FrameFlags : std::uint8_t {
  kFramePlain = 0x00,
  kFrameEncrypted = 0x01,
  kFrameMacPresent = 0x02,
};

struct MessageFrame {
  std::uint8_t flags = kFramePlain;
  Bytes body;
  std::optional<Bytes> mac;

  friend bool operator==(const MessageFrame&, const MessageFrame&) = default;
};

inline constexpr std::size_t kFrameHeaderSize = 5;
inline constexpr std::uint32_t kMaxFrameBody = 256u * 1024u * 1024u;

Bytes encode_frame(const MessageFrame& frame);
void encode_frame_to(const MessageFrame& frame, Bytes& out);
struct DecodedFrame {
  MessageFrame frame;
  std::size_t consumed = 0;
};
DecodedFrame decode_frame_prefix(ByteView input);

}  // namespace seslayer::wire
