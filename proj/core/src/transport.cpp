#include "seslayer/transport.hpp"

#include <charconv>

namespace seslayer {

std::string Address::to_string() const { return host + ":" + std::to_string(port); }

Address Address::parse(std::string_view text) {
  auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0)
    throw Error(errc::kConfigError, subsys::kConfig, "address '" + std::string(text) + "' is not host:port");
  auto port_text = text.substr(colon + 1);
  unsigned port = 0;
  auto [p, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
  if (ec != std::errc{} || p != port_text.data() + port_text.size() || port > 65535)
    throw Error(errc::kConfigError, subsys::kConfig, "bad port in address '" + std::string(text) + "'");
  return Address{std::string(text.substr(0, colon)), static_cast<std::uint16_t>(port)};
}

TransportError::TransportError(std::int64_t code, std::string message, std::size_t transferred)
    : Error(code, subsys::kSocket, std::move(message)), transferred_(transferred) {}

void throw_timeout(std::string_view what, std::size_t transferred) {
  throw TransportError(errc::kTimedOut,
                       std::string(what) + " timed out after " + std::to_string(transferred) + " bytes",
                       transferred);
}

void throw_refused(const Address&) {
  throw TransportError(errc::kConnectionRefused, "connection refused");
}

void throw_closed(std::string_view what, std::size_t transferred) {
  throw TransportError(errc::kConnectionClosed,
                       std::string(what) + ": connection closed by peer after " +
                           std::to_string(transferred) + " bytes",
                       transferred);
}

}  // namespace seslayer
