#pragma once

// Stack-of-errors failure model. A low layer records the root cause, and every
// layer above either handles it or pushes its own frame and propagates.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace seslayer {

// Well-known codes used by the library's own layers. Codes are opaque integers;
// foreign subsystems (authentication back ends, OS errors) bring their own.
namespace errc {
inline constexpr std::int64_t kConnectionRefused = 111;
inline constexpr std::int64_t kTimedOut = 110;
inline constexpr std::int64_t kConnectionClosed = 104;
inline constexpr std::int64_t kAuthenticationFailed = 1003;
inline constexpr std::int64_t kNegotiationFailed = 1004;
inline constexpr std::int64_t kAuthorizationDenied = 1005;
inline constexpr std::int64_t kSessionExpired = 1010;
inline constexpr std::int64_t kSessionUnknown = 1011;
inline constexpr std::int64_t kSessionInvalidated = 1012;
inline constexpr std::int64_t kDelegationRejected = 1013;
inline constexpr std::int64_t kIntegrityFailure = 1020;
inline constexpr std::int64_t kCryptoFailure = 1021;
inline constexpr std::int64_t kUnknownSuite = 1022;
inline constexpr std::int64_t kDecodeError = 1030;
inline constexpr std::int64_t kEncodeError = 1031;
inline constexpr std::int64_t kProtocolError = 1040;
inline constexpr std::int64_t kOversize = 1041;
inline constexpr std::int64_t kConfigError = 1050;
inline constexpr std::int64_t kIoError = 1060;
}  // namespace errc

// Subsystem tags of the library's own layers. Frames from these render their
// message bare; frames from any other subsystem get a "<SUBSYSTEM>: " prefix.
namespace subsys {
inline constexpr std::string_view kSocket = "CEDAR";
inline constexpr std::string_view kAuth = "AUTH";
inline constexpr std::string_view kSession = "SESSION";
inline constexpr std::string_view kWire = "WIRE";
inline constexpr std::string_view kCrypto = "CRYPTO";
inline constexpr std::string_view kConfig = "CONFIG";
inline constexpr std::string_view kHarness = "HARNESS";
}  // namespace subsys

bool is_library_subsystem(std::string_view subsystem);

struct ErrorFrame {
  std::int64_t code = 0;
  std::string subsystem;
  std::string message;

  ErrorFrame() = default;
  // Throws std::invalid_argument on a negative code or empty subsystem.
  ErrorFrame(std::int64_t code, std::string subsystem, std::string message);

  // "<SUBSYSTEM>: <message>" for foreign subsystems unless the message already
  // carries that prefix; the bare message otherwise.
  std::string rendered_message() const;

  friend bool operator==(const ErrorFrame&, const ErrorFrame&) = default;
};

class EmptyStackError : public std::logic_error {
 public:
  EmptyStackError() : std::logic_error("pop on empty error stack") {}
};

// Frames are held bottom (root cause) first; format() lists the top first.
class ErrorStack {
 public:
  ErrorStack() = default;

  ErrorStack& push(ErrorFrame frame);
  ErrorStack& push(std::int64_t code, std::string_view subsystem, std::string message);

  // Returns the topmost frame and removes it. Throws EmptyStackError.
  ErrorFrame pop();

  const ErrorFrame& top() const;
  bool empty() const { return frames_.empty(); }
  std::size_t depth() const { return frames_.size(); }

  // True when any frame carries `code`.
  bool contains(std::int64_t code) const;
  std::optional<ErrorFrame> find(std::int64_t code) const;

  // Bottom-first view.
  const std::vector<ErrorFrame>& frames() const { return frames_; }

  // One "<code> -- <message>" line per frame, topmost first, joined by '\n'
  // with no trailing newline. Empty stack formats to "".
  std::string format() const;

  friend bool operator==(const ErrorStack&, const ErrorStack&) = default;

 private:
  std::vector<ErrorFrame> frames_;
};

// Value-returning forms of push/pop.
ErrorStack push(ErrorStack stack, ErrorFrame frame);
std::pair<ErrorFrame, ErrorStack> pop(ErrorStack stack);
std::string format(const ErrorStack& stack);

// Exception carrying an ErrorStack. Layers catch it, push their own frame onto
// stack(), and rethrow.
class Error : public std::runtime_error {
 public:
  explicit Error(ErrorStack stack);
  Error(std::int64_t code, std::string_view subsystem, std::string message);

  ErrorStack& stack() { return stack_; }
  const ErrorStack& stack() const { return stack_; }
  std::int64_t code() const { return stack_.top().code; }

  const char* what() const noexcept override;

 private:
  ErrorStack stack_;
  mutable std::string what_;
};

}  // namespace seslayer
