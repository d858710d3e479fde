#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

namespace embedloc {

/// FNV-1a, 64 bit. Used for content ids of configs and checkpoints.
class Fnv64 {
 public:
  Fnv64& update(std::span<const unsigned char> bytes) {
    for (unsigned char b : bytes) {
      state_ ^= b;
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fnv64& update(std::string_view text) {
    return update({reinterpret_cast<const unsigned char*>(text.data()), text.size()});
  }
  template <class T>
  Fnv64& update_values(std::span<const T> values) {
    return update({reinterpret_cast<const unsigned char*>(values.data()),
                   values.size_bytes()});
  }
  std::uint64_t value() const { return state_; }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
    return buf;
  }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string content_hash(std::string_view text) {
  return Fnv64().update(text).hex();
}

}  // namespace embedloc
