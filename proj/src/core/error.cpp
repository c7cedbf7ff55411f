#include "vip/error.hpp"

namespace vip {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_input: return "invalid_input";
    case ErrorCode::degenerate_geometry: return "degenerate_geometry";
    case ErrorCode::infeasible: return "infeasible";
    case ErrorCode::numerical: return "numerical";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::version: return "version";
    case ErrorCode::integrity: return "integrity";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

}  // namespace vip
