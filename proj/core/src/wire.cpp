#include "seslayer/wire.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_set>

namespace seslayer {

std::string to_hex(ByteView b) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(b.size() * 2);
  for (auto c : b) {
    out.push_back(kDigits[c >> 4]);
    out.push_back(kDigits[c & 0xF]);
  }
  return out;
}

Bytes from_hex(std::string_view hex) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  Bytes out;
  int hi = -1;
  for (char c : hex) {
    if (c == ' ' || c == '\n' || c == '\t' || c == '\r') continue;
    int n = nibble(c);
    if (n < 0) throw std::invalid_argument("invalid hex digit");
    if (hi < 0) {
      hi = n;
    } else {
      out.push_back(static_cast<std::uint8_t>((hi << 4) | n));
      hi = -1;
    }
  }
  if (hi >= 0) throw std::invalid_argument("odd number of hex digits");
  return out;
}

bool equal_ct(ByteView a, ByteView b) {
  if (a.size() != b.size()) return false;
  std::uint8_t acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc |= static_cast<std::uint8_t>(a[i] ^ b[i]);
  return acc == 0;
}

bool contains_subsequence(ByteView haystack, ByteView needle) {
  if (needle.empty()) return true;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) !=
         haystack.end();
}

}  // namespace seslayer

namespace seslayer::wire {

// ---------------------------------------------------------------------------
// RecordAd

RecordAd::RecordAd() = default;
RecordAd::RecordAd(const RecordAd&) = default;
RecordAd::RecordAd(RecordAd&&) noexcept = default;
RecordAd& RecordAd::operator=(const RecordAd&) = default;
RecordAd& RecordAd::operator=(RecordAd&&) noexcept = default;
RecordAd::~RecordAd() = default;

RecordAd RecordAd::from_entries(std::vector<RecordEntry> entries) {
  RecordAd ad;
  ad.entries_ = std::move(entries);
  return ad;
}

RecordAd& RecordAd::set(std::string name, WireValue value) {
  for (auto& e : entries_) {
    if (e.name == name) {
      e.value = std::move(value);
      return *this;
    }
  }
  entries_.push_back(RecordEntry{std::move(name), std::move(value)});
  return *this;
}

RecordAd& RecordAd::set_int(std::string name, std::int64_t v) { return set(std::move(name), v); }
RecordAd& RecordAd::set_float(std::string name, double v) { return set(std::move(name), v); }
RecordAd& RecordAd::set_string(std::string name, std::string v) {
  return set(std::move(name), WireValue(std::move(v)));
}
RecordAd& RecordAd::set_bytes(std::string name, ByteView v) {
  return set(std::move(name), WireValue(to_string(v)));
}
RecordAd& RecordAd::set_record(std::string name, RecordAd v) {
  return set(std::move(name), WireValue(std::move(v)));
}

const WireValue* RecordAd::get(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e.value;
  return nullptr;
}

bool RecordAd::erase(std::string_view name) {
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const RecordEntry& e) { return e.name == name; });
  if (it == entries_.end()) return false;
  entries_.erase(it);
  return true;
}

namespace {
[[noreturn]] void missing(std::string_view name, std::string_view want) {
  throw Error(errc::kDecodeError, subsys::kWire,
              "attribute '" + std::string(name) + "' missing or not " + std::string(want));
}
}  // namespace

std::int64_t RecordAd::require_int(std::string_view name) const {
  const auto* v = get(name);
  if (!v || !v->is_int()) missing(name, "an integer");
  return v->as_int();
}
double RecordAd::require_float(std::string_view name) const {
  const auto* v = get(name);
  if (!v || !v->is_float()) missing(name, "a float");
  return v->as_float();
}
const std::string& RecordAd::require_string(std::string_view name) const {
  const auto* v = get(name);
  if (!v || !v->is_string()) missing(name, "a string");
  return v->as_string();
}
Bytes RecordAd::require_bytes(std::string_view name) const {
  return to_bytes(require_string(name));
}
const RecordAd& RecordAd::require_record(std::string_view name) const {
  const auto* v = get(name);
  if (!v || !v->is_record()) missing(name, "a record");
  return v->as_record();
}
std::optional<std::string> RecordAd::find_string(std::string_view name) const {
  const auto* v = get(name);
  if (!v || !v->is_string()) return std::nullopt;
  return v->as_string();
}

bool operator==(const RecordAd& a, const RecordAd& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (const auto& e : a.entries_) {
    const auto* other = b.get(e.name);
    if (!other || !(e.value == *other)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// WireValue

Tag WireValue::tag() const {
  switch (v.index()) {
    case 0: return Tag::Int;
    case 1: return Tag::Float;
    case 2: return Tag::String;
    case 3: return Tag::Record;
    default: return Tag::FileBlob;
  }
}

bool operator==(const WireValue& a, const WireValue& b) {
  if (a.v.index() != b.v.index()) return false;
  if (a.is_float())
    return std::bit_cast<std::uint64_t>(a.as_float()) == std::bit_cast<std::uint64_t>(b.as_float());
  return a.v == b.v;
}

DecodeError::DecodeError(std::size_t offset, std::string message)
    : Error(errc::kDecodeError, subsys::kWire,
            message + " at offset " + std::to_string(offset)),
      offset_(offset) {}

EncodeError::EncodeError(std::string message)
    : Error(errc::kEncodeError, subsys::kWire, std::move(message)) {}

// ---------------------------------------------------------------------------
// Encoding

namespace {

void put_tag(Bytes& out, Tag t) { out.push_back(static_cast<std::uint8_t>(t)); }

void put_int(Bytes& out, std::int64_t value) {
  put_tag(out, Tag::Int);
  put_u64(out, static_cast<std::uint64_t>(value));
}

void put_float(Bytes& out, double value) {
  put_tag(out, Tag::Float);
  put_u64(out, std::bit_cast<std::uint64_t>(value));
}

void put_string(Bytes& out, std::string_view s, Tag tag = Tag::String) {
  if (s.size() > UINT32_MAX) throw EncodeError("string longer than 4 GiB");
  put_tag(out, tag);
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  put_bytes(out, as_bytes(s));
}

void put_blob_header(Bytes& out, std::uint64_t total) {
  put_tag(out, Tag::FileBlob);
  put_u64(out, total);
}

void put_blob(Bytes& out, ByteView data) {
  put_blob_header(out, data.size());
  for (std::size_t off = 0; off < data.size(); off += kMaxBlobChunk) {
    auto n = std::min(kMaxBlobChunk, data.size() - off);
    put_u32(out, static_cast<std::uint32_t>(n));
    put_bytes(out, data.subspan(off, n));
  }
}

void put_record(Bytes& out, const RecordAd& ad) {
  std::unordered_set<std::string_view> seen;
  if (ad.size() > UINT32_MAX) throw EncodeError("record has too many entries");
  put_tag(out, Tag::Record);
  put_u32(out, static_cast<std::uint32_t>(ad.size()));
  for (const auto& e : ad.entries()) {
    if (e.name.empty()) throw EncodeError("record attribute name is empty");
    if (!seen.insert(e.name).second)
      throw EncodeError("duplicate record attribute '" + e.name + "'");
    put_string(out, e.name);
    encode_to(e.value, out);
  }
  put_tag(out, Tag::End);
}

}  // namespace

Bytes encode_int(std::int64_t value) {
  Bytes out;
  out.reserve(kScalarEncodedSize);
  put_int(out, value);
  return out;
}

Bytes encode_float(double value) {
  Bytes out;
  out.reserve(kScalarEncodedSize);
  put_float(out, value);
  return out;
}

Bytes encode_float(float value) { return encode_float(static_cast<double>(value)); }

Bytes encode_string(std::string_view value) {
  Bytes out;
  out.reserve(string_encoded_size(value.size()));
  put_string(out, value);
  return out;
}

Bytes encode_record(const RecordAd& ad) {
  Bytes out;
  put_record(out, ad);
  return out;
}

Bytes encode_blob(ByteView data) {
  Bytes out;
  put_blob(out, data);
  return out;
}

Bytes encode_file(const std::filesystem::path& path) {
  std::error_code ec;
  auto size = std::filesystem::file_size(path, ec);
  std::ifstream in(path, std::ios::binary);
  if (ec || !in) throw Error(errc::kIoError, subsys::kWire, "cannot read file " + path.string());
  Bytes out;
  put_blob_header(out, size);
  std::vector<char> chunk(kMaxBlobChunk);
  std::uint64_t remaining = size;
  while (remaining > 0) {
    auto want = static_cast<std::streamsize>(std::min<std::uint64_t>(remaining, kMaxBlobChunk));
    in.read(chunk.data(), want);
    if (in.gcount() != want)
      throw Error(errc::kIoError, subsys::kWire, "short read on " + path.string());
    put_u32(out, static_cast<std::uint32_t>(want));
    out.insert(out.end(), chunk.begin(), chunk.begin() + want);
    remaining -= static_cast<std::uint64_t>(want);
  }
  return out;
}

void encode_to(const WireValue& value, Bytes& out) {
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, std::int64_t>) put_int(out, x);
        else if constexpr (std::is_same_v<T, double>) put_float(out, x);
        else if constexpr (std::is_same_v<T, std::string>) put_string(out, x);
        else if constexpr (std::is_same_v<T, RecordAd>) put_record(out, x);
        else put_blob(out, x.data);
      },
      value.v);
}

Bytes encode(const WireValue& value) {
  Bytes out;
  encode_to(value, out);
  return out;
}

// ---------------------------------------------------------------------------
// Decoding

namespace {

class Reader {
 public:
  explicit Reader(ByteView in) : in_(in) {}

  std::size_t pos() const { return pos_; }

  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) throw DecodeError(in_.size(), std::string("truncated ") + what);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return in_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    auto v = get_u32(in_.data() + pos_);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    auto v = get_u64(in_.data() + pos_);
    pos_ += 8;
    return v;
  }
  ByteView take(std::size_t n, const char* what) {
    need(n, what);
    auto v = in_.subspan(pos_, n);
    pos_ += n;
    return v;
  }

  WireValue value(int depth);

 private:
  std::string string_body() {
    auto n = u32("string length");
    auto b = take(n, "string payload");
    return to_string(b);
  }

  ByteView in_;
  std::size_t pos_ = 0;
};

constexpr int kMaxNesting = 64;

WireValue Reader::value(int depth) {
  if (depth > kMaxNesting) throw DecodeError(pos_, "record nesting too deep");
  std::size_t tag_at = pos_;
  auto tag = u8("tag");
  switch (static_cast<Tag>(tag)) {
    case Tag::Int:
      return WireValue(static_cast<std::int64_t>(u64("integer payload")));
    case Tag::Float:
      return WireValue(std::bit_cast<double>(u64("float payload")));
    case Tag::String:
      return WireValue(string_body());
    case Tag::Record: {
      auto count = u32("record entry count");
      std::vector<RecordEntry> entries;
      std::unordered_set<std::string> seen;
      for (std::uint32_t i = 0; i < count; ++i) {
        std::size_t name_at = pos_;
        if (u8("attribute name tag") != static_cast<std::uint8_t>(Tag::String))
          throw DecodeError(name_at, "attribute name is not a string");
        auto name = string_body();
        if (name.empty()) throw DecodeError(name_at, "empty attribute name");
        if (!seen.insert(name).second) throw DecodeError(name_at, "duplicate attribute '" + name + "'");
        auto v = value(depth + 1);
        entries.push_back(RecordEntry{std::move(name), std::move(v)});
      }
      std::size_t end_at = pos_;
      if (u8("record terminator") != static_cast<std::uint8_t>(Tag::End))
        throw DecodeError(end_at, "missing record terminator");
      return WireValue(RecordAd::from_entries(std::move(entries)));
    }
    case Tag::FileBlob: {
      auto total = u64("blob length");
      FileBlob blob;
      std::uint64_t got = 0;
      while (got < total) {
        std::size_t chunk_at = pos_;
        auto n = u32("blob chunk length");
        if (n == 0 || n > kMaxBlobChunk || n > total - got)
          throw DecodeError(chunk_at, "invalid blob chunk length");
        auto b = take(n, "blob chunk");
        blob.data.insert(blob.data.end(), b.begin(), b.end());
        got += n;
      }
      return WireValue(std::move(blob));
    }
    case Tag::End:
    default:
      throw DecodeError(tag_at, "unknown tag 0x" + to_hex(ByteView(&in_[tag_at], 1)));
  }
}

}  // namespace

Decoded decode_prefix(ByteView input) {
  Reader r(input);
  auto v = r.value(0);
  return Decoded{std::move(v), r.pos()};
}

WireValue decode(ByteView input) {
  auto d = decode_prefix(input);
  if (d.consumed != input.size()) throw DecodeError(d.consumed, "trailing bytes after value");
  return std::move(d.value);
}

RecordAd decode_record(ByteView input) {
  auto v = decode(input);
  if (!v.is_record()) throw DecodeError(0, "expected a record");
  return v.as_record();
}

// ---------------------------------------------------------------------------
// Frames

void encode_frame_to(const MessageFrame& frame, Bytes& out) {
  const bool mac_flag = (frame.flags & kFrameMacPresent) != 0;
  if (mac_flag != frame.mac.has_value())
    throw EncodeError("frame MAC_PRESENT flag does not match mac field");
  if (frame.flags & ~(kFrameEncrypted | kFrameMacPresent)) throw EncodeError("unknown frame flags");
  if (frame.body.size() > kMaxFrameBody) throw EncodeError("frame body too large");
  if (frame.mac && frame.mac->size() > 255) throw EncodeError("frame mac too long");
  put_u32(out, static_cast<std::uint32_t>(frame.body.size()));
  put_u8(out, frame.flags);
  put_bytes(out, frame.body);
  if (frame.mac) {
    put_u8(out, static_cast<std::uint8_t>(frame.mac->size()));
    put_bytes(out, *frame.mac);
  }
}

Bytes encode_frame(const MessageFrame& frame) {
  Bytes out;
  encode_frame_to(frame, out);
  return out;
}

DecodedFrame decode_frame_prefix(ByteView input) {
  Reader r(input);
  auto len = r.u32("frame length");
  if (len > kMaxFrameBody) throw DecodeError(0, "frame body too large");
  std::size_t flags_at = r.pos();
  auto flags = r.u8("frame flags");
  if (flags & ~(kFrameEncrypted | kFrameMacPresent)) throw DecodeError(flags_at, "unknown frame flags");
  MessageFrame f;
  f.flags = flags;
  auto body = r.take(len, "frame body");
  f.body.assign(body.begin(), body.end());
  if (flags & kFrameMacPresent) {
    auto n = r.u8("frame mac length");
    auto mac = r.take(n, "frame mac");
    f.mac = Bytes(mac.begin(), mac.end());
  }
  return DecodedFrame{std::move(f), r.pos()};
}

}  // namespace seslayer::wire
