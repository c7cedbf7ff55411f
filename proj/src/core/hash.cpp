#include "vip/hash.hpp"

#include <bit>
#include <charconv>
#include <cstdio>

#include "vip/error.hpp"

namespace vip {

Fnv1a& Fnv1a::bytes(std::span<const unsigned char> data) noexcept {
  for (unsigned char c : data) {
    state_ ^= c;
    state_ *= 0x100000001b3ULL;
  }
  return *this;
}

Fnv1a& Fnv1a::text(std::string_view s) noexcept {
  u64(s.size());
  return bytes({reinterpret_cast<const unsigned char*>(s.data()), s.size()});
}

Fnv1a& Fnv1a::u64(std::uint64_t v) noexcept {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  return bytes(buf);
}

Fnv1a& Fnv1a::f64(double v) noexcept { return u64(std::bit_cast<std::uint64_t>(v)); }

std::string to_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t from_hex(std::string_view s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    fail(ErrorCode::invalid_input, "malformed hex digest '" + std::string(s) + "'");
  return v;
}

}  // namespace vip
