#include "btlab/bytes.hpp"

#include <cctype>

#include "btlab/errors.hpp"

namespace btlab {

static int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

Bytes parse_hex(std::string_view text) {
  Bytes out;
  int hi = -1;
  for (size_t i = 0; i < text.size(); i++) {
    char c = text[i];
    if (c == ' ' || c == ':' || c == '\t') {
      if (hi >= 0) {
        throw Error(Errc::ParseError, "odd hex digit before separator", i);
      }
      continue;
    }
    int d = hex_digit(c);
    if (d < 0) {
      throw Error(Errc::ParseError,
                  std::string("invalid hex character '") + c + "'", i);
    }
    if (hi < 0) {
      hi = d;
    } else {
      out.push_back(static_cast<uint8_t>((hi << 4) | d));
      hi = -1;
    }
  }
  if (hi >= 0) {
    throw Error(Errc::ParseError, "odd number of hex digits", text.size());
  }
  return out;
}

static const char kHexDigits[] = "0123456789abcdef";

std::string to_hex(ByteView data) {
  std::string s;
  s.reserve(data.size() * 2);
  for (uint8_t b : data) {
    s.push_back(kHexDigits[b >> 4]);
    s.push_back(kHexDigits[b & 0xf]);
  }
  return s;
}

std::string to_hex_spaced(ByteView data) {
  std::string s;
  s.reserve(data.size() * 3);
  for (size_t i = 0; i < data.size(); i++) {
    if (i) s.push_back(' ');
    s.push_back(kHexDigits[data[i] >> 4]);
    s.push_back(kHexDigits[data[i] & 0xf]);
  }
  return s;
}

std::string hexdump(uint32_t base_address, ByteView data) {
  std::string out;
  for (size_t row = 0; row < data.size(); row += 16) {
    char addr[16];
    snprintf(addr, sizeof(addr), "%08x  ", base_address + (uint32_t)row);
    out += addr;
    size_t n = std::min<size_t>(16, data.size() - row);
    for (size_t i = 0; i < 16; i++) {
      if (i < n) {
        out.push_back(kHexDigits[data[row + i] >> 4]);
        out.push_back(kHexDigits[data[row + i] & 0xf]);
        out.push_back(' ');
      } else {
        out += "   ";
      }
      if (i == 7) out.push_back(' ');
    }
    out += " |";
    for (size_t i = 0; i < n; i++) {
      char c = static_cast<char>(data[row + i]);
      out.push_back((c >= 0x20 && c < 0x7f) ? c : '.');
    }
    out += "|\n";
  }
  return out;
}

}  // namespace btlab
