#include "btlab/mac.hpp"

#include "btlab/errors.hpp"

namespace btlab {

static int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

MacAddress MacAddress::parse(std::string_view text) {
  MacAddress mac;
  if (text.size() != 17) {
    throw Error(Errc::MalformedMac,
                "MAC address must look like de:ad:be:ef:00:00, got \"" +
                    std::string(text) + "\"");
  }
  for (int i = 0; i < 6; i++) {
    int hi = hex_digit(text[i * 3]);
    int lo = hex_digit(text[i * 3 + 1]);
    if (hi < 0 || lo < 0 || (i < 5 && text[i * 3 + 2] != ':')) {
      throw Error(Errc::MalformedMac,
                  "malformed MAC address \"" + std::string(text) + "\"");
    }
    mac.bytes[i] = static_cast<uint8_t>((hi << 4) | lo);
  }
  return mac;
}

std::string MacAddress::to_string() const {
  char buf[18];
  snprintf(buf, sizeof(buf), "%02x:%02x:%02x:%02x:%02x:%02x", bytes[0],
           bytes[1], bytes[2], bytes[3], bytes[4], bytes[5]);
  return buf;
}

}  // namespace btlab
