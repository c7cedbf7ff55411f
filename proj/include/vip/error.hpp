#pragma once

#include <stdexcept>
#include <string>

namespace vip {

enum class ErrorCode {
  invalid_input,
  degenerate_geometry,
  infeasible,
  numerical,
  not_found,
  conflict,
  version,
  integrity,
  io,
};

const char* to_string(ErrorCode code) noexcept;

/// Every failure raised by the core carries one of the codes above; the C API
/// and the service map them onto status codes without inspecting messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace vip
