#include "seslayer/errstack.hpp"

#include <algorithm>
#include <array>

namespace seslayer {

bool is_library_subsystem(std::string_view subsystem) {
  static constexpr std::array kOwn = {subsys::kSocket, subsys::kAuth,   subsys::kSession,
                                      subsys::kWire,   subsys::kCrypto, subsys::kConfig,
                                      subsys::kHarness};
  return std::find(kOwn.begin(), kOwn.end(), subsystem) != kOwn.end();
}

ErrorFrame::ErrorFrame(std::int64_t c, std::string s, std::string m)
    : code(c), subsystem(std::move(s)), message(std::move(m)) {
  if (code < 0) throw std::invalid_argument("error code must be non-negative");
  if (subsystem.empty()) throw std::invalid_argument("error subsystem must be non-empty");
}

std::string ErrorFrame::rendered_message() const {
  if (is_library_subsystem(subsystem)) return message;
  std::string prefix = subsystem + ": ";
  if (message.starts_with(prefix)) return message;
  return prefix + message;
}

ErrorStack& ErrorStack::push(ErrorFrame frame) {
  frames_.push_back(std::move(frame));
  return *this;
}

ErrorStack& ErrorStack::push(std::int64_t code, std::string_view subsystem, std::string message) {
  return push(ErrorFrame(code, std::string(subsystem), std::move(message)));
}

ErrorFrame ErrorStack::pop() {
  if (frames_.empty()) throw EmptyStackError();
  ErrorFrame f = std::move(frames_.back());
  frames_.pop_back();
  return f;
}

const ErrorFrame& ErrorStack::top() const {
  if (frames_.empty()) throw EmptyStackError();
  return frames_.back();
}

bool ErrorStack::contains(std::int64_t code) const { return find(code).has_value(); }

std::optional<ErrorFrame> ErrorStack::find(std::int64_t code) const {
  for (auto it = frames_.rbegin(); it != frames_.rend(); ++it)
    if (it->code == code) return *it;
  return std::nullopt;
}

std::string ErrorStack::format() const {
  std::string out;
  for (auto it = frames_.rbegin(); it != frames_.rend(); ++it) {
    if (!out.empty()) out += '\n';
    out += std::to_string(it->code);
    out += " -- ";
    out += it->rendered_message();
  }
  return out;
}

ErrorStack push(ErrorStack stack, ErrorFrame frame) {
  stack.push(std::move(frame));
  return stack;
}

std::pair<ErrorFrame, ErrorStack> pop(ErrorStack stack) {
  ErrorFrame f = stack.pop();
  return {std::move(f), std::move(stack)};
}

std::string format(const ErrorStack& stack) { return stack.format(); }

Error::Error(ErrorStack stack) : std::runtime_error("seslayer error"), stack_(std::move(stack)) {
  if (stack_.empty()) stack_.push(errc::kProtocolError, subsys::kSession, "unspecified error");
}

Error::Error(std::int64_t code, std::string_view subsystem, std::string message)
    : std::runtime_error("seslayer error") {
  stack_.push(code, subsystem, std::move(message));
}

const char* Error::what() const noexcept {
  try {
    what_ = stack_.format();
    return what_.c_str();
  } catch (...) {
    return "seslayer error";
  }
}

}  // namespace seslayer
