#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace btlab {

struct MacAddress {
  std::array<uint8_t, 6> bytes{};

  // Accepts "de:ad:be:ef:00:00"; throws Error{MalformedMac} otherwise.
  static MacAddress parse(std::string_view text);
  std::string to_string() const;

  auto operator<=>(const MacAddress&) const = default;
};

}  // namespace btlab
