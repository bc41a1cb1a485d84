#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>


namespace psim {

/// FNV-1a, 64-bit.
class Fnv1a {
 public:
  void update(std::span<const std::byte> bytes);
  void update(std::string_view text);
  template <typename T>
  void update_value(const T& value) {
    update(std::as_bytes(std::span<const T>(&value, 1)));
  }
  std::uint64_t digest() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hex64(std::uint64_t value);

inline std::uint64_t fnv1a64(std::string_view text) {
  Fnv1a h;
  h.update(text);
  return h.digest();
}

}  // namespace psim
