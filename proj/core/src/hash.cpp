#include "psim/hash.hpp"

#include <cstdio>

namespace psim {

void Fnv1a::update(std::span<const std::byte> bytes) {
  for (std::byte b : bytes) {
    state_ ^= static_cast<std::uint64_t>(b);
    state_ *= 0x100000001b3ULL;
  }
}

void Fnv1a::update(std::string_view text) { update(std::as_bytes(std::span(text.data(), text.size()))); }

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string Fnv1a::hex() const { return hex64(state_); }

}  // namespace psim
