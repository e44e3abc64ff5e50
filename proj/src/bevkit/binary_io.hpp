#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <type_traits>

#include "bevkit/error.hpp"

namespace bevkit::binary {

template <typename T>
T to_little(T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::little) {
    return value;
  } else {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) {
      std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }
}

template <typename T>
void put(std::ostream& out, T value) {
  value = to_little(value);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) fail(ErrorKind::kIo, "unexpected end of binary stream");
  return to_little(value);
}

inline void expect_magic(std::istream& in, const char (&magic)[5]) {
  char got[4] = {};
  in.read(got, 4);
  if (!in || std::memcmp(got, magic, 4) != 0) {
    fail(ErrorKind::kParse, std::string("bad magic, expected ") + magic);
  }
}

}  // namespace bevkit::binary
