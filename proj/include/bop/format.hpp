#pragma once

#include <array>
#include <charconv>
#include <string>

namespace bop {

// Shortest decimal text that parses back to exactly `value`.
inline std::string format_double(double value) {
  std::array<char, 64> buffer{};
  const auto [ptr, ec] = std::to_chars(buffer.data(), buffer.data() + buffer.size(), value);
  return std::string(buffer.data(), ptr);
}

}  // namespace bop
