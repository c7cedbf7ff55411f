#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace vip {

// 64-bit FNV-1a; used for kernel fingerprints and snapshot checksums, not for
// anything adversarial.
class Fnv1a {
 public:
  Fnv1a& bytes(std::span<const unsigned char> data) noexcept;
  Fnv1a& text(std::string_view s) noexcept;
  Fnv1a& u64(std::uint64_t v) noexcept;
  Fnv1a& f64(double v) noexcept;
  std::uint64_t digest() const noexcept { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t v);
std::uint64_t from_hex(std::string_view s);

}  // namespace vip
