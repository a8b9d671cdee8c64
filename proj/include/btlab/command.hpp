#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "btlab/bytes.hpp"
#include "btlab/mac.hpp"

namespace btlab::cli {

struct CmdConnect {
  MacAddress mac;
  bool operator==(const CmdConnect&) const = default;
};
struct CmdInfoConnections {
  bool operator==(const CmdInfoConnections&) const = default;
};
struct CmdReadMem {
  uint32_t address = 0;
  uint32_t length = 0;
  bool operator==(const CmdReadMem&) const = default;
};
struct CmdWriteMem {
  uint32_t address = 0;
  Bytes data;
  bool operator==(const CmdWriteMem&) const = default;
};
struct CmdSearchMem {
  bool ascii = false;
  std::string ascii_text;  // when ascii
  Bytes pattern;           // when hex
  bool operator==(const CmdSearchMem&) const = default;
};
struct CmdLaunch {
  uint32_t address = 0;
  bool operator==(const CmdLaunch&) const = default;
};
struct CmdPatchRom {
  uint32_t address = 0;
  uint32_t word = 0;
  bool operator==(const CmdPatchRom&) const = default;
};
struct CmdLoadHcd {
  std::string path;
  bool operator==(const CmdLoadHcd&) const = default;
};
struct CmdSendHci {
  Bytes bytes;
  bool operator==(const CmdSendHci&) const = default;
};
struct CmdSendLmp {
  bool fuzz = false;
  uint8_t opcode = 0;
  Bytes payload;
  bool operator==(const CmdSendLmp&) const = default;
};
struct CmdMonitor {
  enum class Layer { Hci, Lmp };
  Layer layer = Layer::Hci;
  bool start = true;
  std::optional<std::string> file;
  bool operator==(const CmdMonitor&) const = default;
};
struct CmdTracepoint {
  bool add = true;
  uint32_t address = 0;
  bool operator==(const CmdTracepoint&) const = default;
};
struct CmdScanBpcs {
  bool operator==(const CmdScanBpcs&) const = default;
};
struct CmdMacFilter {
  bool add = true;  // false = clear
  std::optional<MacAddress> mac;
  bool operator==(const CmdMacFilter&) const = default;
};
struct CmdDemo {
  enum class Kind { Nino, Ecdh, Jammer };
  Kind kind = Kind::Nino;
  std::vector<std::string> args;
  bool operator==(const CmdDemo&) const = default;
};
struct CmdReset {
  bool operator==(const CmdReset&) const = default;
};

using Command =
    std::variant<CmdConnect, CmdInfoConnections, CmdReadMem, CmdWriteMem,
                 CmdSearchMem, CmdLaunch, CmdPatchRom, CmdLoadHcd, CmdSendHci,
                 CmdSendLmp, CmdMonitor, CmdTracepoint, CmdScanBpcs,
                 CmdMacFilter, CmdDemo, CmdReset>;

// One command per line. Addresses and words accept 0x-prefixed hex;
// opcodes are decimal unless 0x-prefixed. Throws Error{ParseError} with
// the column (offset = position) and an expected-token hint.
Command parse_command(const std::string& line);

// Canonical text form; format(parse(line)) parses back to the same value.
std::string format_command(const Command& command);

}  // namespace btlab::cli
