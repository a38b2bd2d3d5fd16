#include "seslayer/fragment.hpp"

#include <algorithm>
#include <stdexcept>

namespace seslayer {

void PacingPolicy::validate() const {
  if (max_fragment_payload == 0 || max_fragment_payload > kMaxFragmentPayload)
    throw std::invalid_argument("max_fragment_payload must be in (0, 65000]");
  if (inter_fragment_delay.count() < 0) throw std::invalid_argument("negative pacing delay");
}

Bytes encode_fragment(const Fragment& f) {
  Bytes out;
  out.reserve(FragmentHeader::kSize + f.payload.size());
  put_u64(out, f.header.datagram_id);
  put_u16(out, f.header.index);
  put_u16(out, f.header.total);
  put_u16(out, f.header.payload_len);
  put_bytes(out, f.payload);
  return out;
}

Fragment decode_fragment(ByteView d) {
  if (d.size() < FragmentHeader::kSize)
    throw Error(errc::kProtocolError, subsys::kSocket, "short fragment");
  Fragment f;
  f.header.datagram_id = get_u64(d.data());
  f.header.index = get_u16(d.data() + 8);
  f.header.total = get_u16(d.data() + 10);
  f.header.payload_len = get_u16(d.data() + 12);
  if (!f.header.valid()) throw Error(errc::kProtocolError, subsys::kSocket, "invalid fragment header");
  if (d.size() - FragmentHeader::kSize != f.header.payload_len)
    throw Error(errc::kProtocolError, subsys::kSocket, "fragment length mismatch");
  f.payload.assign(d.begin() + FragmentHeader::kSize, d.end());
  return f;
}

std::vector<Fragment> fragment(ByteView payload, const PacingPolicy& policy,
                               std::uint64_t datagram_id) {
  policy.validate();
  if (payload.empty()) throw std::invalid_argument("cannot fragment an empty payload");
  const std::size_t max = policy.max_fragment_payload;
  const std::size_t count = (payload.size() + max - 1) / max;
  if (count > UINT16_MAX)
    throw Error(errc::kOversize, subsys::kSocket,
                "datagram of " + std::to_string(payload.size()) + " bytes needs too many fragments");
  std::vector<Fragment> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto off = i * max;
    auto n = std::min(max, payload.size() - off);
    Fragment f;
    f.header = {datagram_id, static_cast<std::uint16_t>(i), static_cast<std::uint16_t>(count),
                static_cast<std::uint16_t>(n)};
    f.payload.assign(payload.begin() + off, payload.begin() + off + n);
    out.push_back(std::move(f));
  }
  return out;
}

void send_paced(const std::vector<Fragment>& fragments, const PacingPolicy& policy,
                DatagramSocket& socket, const Address& to, Network& net) {
  for (std::size_t i = 0; i < fragments.size(); ++i) {
    if (i > 0 && policy.inter_fragment_delay.count() > 0) net.sleep_for(policy.inter_fragment_delay);
    try {
      socket.send_to(to, encode_fragment(fragments[i]));
    } catch (Error& e) {
      e.stack().push(errc::kIoError, subsys::kSocket,
                     "failed sending fragment " + std::to_string(i) + " to " + to.to_string());
      throw;
    }
  }
}

void ReassemblyBuffer::evict_expired(Micros now) {
  for (auto it = partial_.begin(); it != partial_.end();) {
    if (it->second.expires <= now) {
      it = partial_.erase(it);
      ++evicted_;
    } else {
      ++it;
    }
  }
  std::erase_if(completed_, [&](const auto& kv) { return kv.second <= now; });
}

std::optional<Bytes> ReassemblyBuffer::reassemble(const std::string& sender,
                                                  const FragmentHeader& header, ByteView payload,
                                                  Micros now) {
  if (!header.valid()) throw Error(errc::kProtocolError, subsys::kSocket, "invalid fragment header");
  evict_expired(now);
  Key key{sender, header.datagram_id};
  if (completed_.contains(key)) return std::nullopt;

  auto [it, inserted] = partial_.try_emplace(key);
  Partial& p = it->second;
  if (inserted) {
    p.total = header.total;
    p.expires = now + eviction_;
  } else if (p.total != header.total) {
    partial_.erase(it);
    ++evicted_;
    throw Error(errc::kProtocolError, subsys::kSocket,
                "conflicting fragment total for datagram " + std::to_string(header.datagram_id));
  }
  p.pieces.try_emplace(header.index, payload.begin(), payload.end());
  if (p.pieces.size() < p.total) return std::nullopt;

  Bytes out;
  for (auto& [idx, piece] : p.pieces) put_bytes(out, piece);
  completed_.emplace(key, p.expires);
  partial_.erase(it);
  return out;
}

}  // namespace seslayer
