#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace btlab {

using Bytes = std::vector<uint8_t>;
using ByteView = std::span<const uint8_t>;

// Little-endian field accessors. Every multi-byte integer that travels to or
// from the controller is little-endian; the snoop format is the one
// big-endian exception and has its own helpers.

inline void put_u16le(Bytes& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

inline void put_u32le(Bytes& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

inline uint16_t get_u16le(ByteView in, size_t offset) {
  return static_cast<uint16_t>(in[offset] | (in[offset + 1] << 8));
}

inline uint32_t get_u32le(ByteView in, size_t offset) {
  return static_cast<uint32_t>(in[offset]) |
         (static_cast<uint32_t>(in[offset + 1]) << 8) |
         (static_cast<uint32_t>(in[offset + 2]) << 16) |
         (static_cast<uint32_t>(in[offset + 3]) << 24);
}

inline void put_u32be(Bytes& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<uint8_t>(v & 0xff));
}

inline void put_u64be(Bytes& out, uint64_t v) {
  put_u32be(out, static_cast<uint32_t>(v >> 32));
  put_u32be(out, static_cast<uint32_t>(v & 0xffffffffu));
}

inline uint32_t get_u32be(ByteView in, size_t offset) {
  return (static_cast<uint32_t>(in[offset]) << 24) |
         (static_cast<uint32_t>(in[offset + 1]) << 16) |
         (static_cast<uint32_t>(in[offset + 2]) << 8) |
         static_cast<uint32_t>(in[offset + 3]);
}

inline uint64_t get_u64be(ByteView in, size_t offset) {
  return (static_cast<uint64_t>(get_u32be(in, offset)) << 32) |
         get_u32be(in, offset + 4);
}

// Hex text. Accepts "deadbeef", "de ad be ef", "de:ad:be:ef"; parse errors
// report the offending character position.
Bytes parse_hex(std::string_view text);
std::string to_hex(ByteView data);             // "deadbeef"
std::string to_hex_spaced(ByteView data);      // "de ad be ef"

// Fixed hexdump format: 16 bytes per row, address gutter, ASCII column.
std::string hexdump(uint32_t base_address, ByteView data);

}  // namespace btlab
