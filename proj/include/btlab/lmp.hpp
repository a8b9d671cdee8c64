#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "btlab/bytes.hpp"

namespace btlab::lmp {

// First wire byte is (opcode << 1) | tid. Opcodes 124-127 escape to a
// second opcode byte. ext_opcode is meaningful only for those escapes;
// a malformed escape frame (no second byte) decodes with ext_opcode unset.
struct LmpPdu {
  uint8_t tid = 0;      // 0 = master-initiated transaction, 1 = slave
  uint8_t opcode = 0;   // 7-bit
  std::optional<uint8_t> ext_opcode;
  Bytes payload;

  bool operator==(const LmpPdu&) const = default;
};

inline constexpr uint8_t kOpcodeVendorBpcs = 0;
inline constexpr uint8_t kOpcodeAccepted = 3;
inline constexpr uint8_t kOpcodeNotAccepted = 4;
inline constexpr uint8_t kOpcodeVersionReq = 37;
inline constexpr uint8_t kOpcodeVersionRes = 38;
inline constexpr uint8_t kOpcodeFeaturesReq = 39;
inline constexpr uint8_t kOpcodeFeaturesRes = 40;
inline constexpr uint8_t kOpcodeTestActivate = 56;
inline constexpr uint8_t kOpcodeTestControl = 57;
inline constexpr uint8_t kOpcodeSetAfh = 60;

inline constexpr bool is_escape_opcode(uint8_t opcode) {
  return opcode >= 124 && opcode <= 127;
}

// Standard PDUs never exceed this; the dissector flags longer frames but
// keeps decoding them, since fuzzing deliberately produces such frames.
inline constexpr size_t kMaxWellFormedPduLen = 17;

// Throws Error{OpcodeOutOfRange} for opcodes above 127.
Bytes encode_pdu(const LmpPdu& pdu);

// Throws Error{EmptyPdu} on empty input; anything else decodes.
LmpPdu decode_pdu(ByteView bytes);

struct OpcodeInfo {
  uint8_t opcode = 0;
  std::string name = "unknown";
  // Expected total wire length in bytes (opcode byte included);
  // 0 = unknown or variable.
  uint16_t expected_length = 0;
};

class OpcodeCatalog {
 public:
  // Built-in catalog covering the standard opcodes plus vendor BPCS.
  static const OpcodeCatalog& builtin();
  // Versioned JSON data file; throws Error{ParseError} on malformed input.
  static OpcodeCatalog load(const std::string& path);

  OpcodeInfo lookup(uint8_t opcode) const;
  std::string bpcs_sub_name(uint8_t sub) const;  // "" when unnamed
  int version() const { return version_; }

 private:
  int version_ = 0;
  std::map<uint8_t, OpcodeInfo> opcodes_;
  std::map<uint8_t, std::string> bpcs_subs_;
};

struct Dissection {
  OpcodeInfo info;
  size_t wire_length = 0;
  // Set when the catalog knows the expected length: true = matches.
  std::optional<bool> length_ok;
  bool oversized = false;  // wire length above kMaxWellFormedPduLen
  std::string text;        // one stable, line-oriented description
};

// Never rejects a PDU; unknown opcodes dissect with name "unknown".
Dissection describe(const LmpPdu& pdu,
                    const OpcodeCatalog& catalog = OpcodeCatalog::builtin());

struct AfhConfig {
  uint32_t instant = 0;
  uint8_t mode = 0;  // 0 = hopping disabled, 1 = enabled
  std::array<uint8_t, 10> channel_map{};  // 79 channel bits, bit 79 padding

  bool channel_set(int channel) const {
    return (channel_map[channel / 8] >> (channel % 8)) & 1;
  }
  bool operator==(const AfhConfig&) const = default;
};

// 15-byte LMP_set_AFH payload: instant(4 LE) + mode(1) + map(10).
// Throws Error{BadLength} for any other size.
AfhConfig parse_set_afh(ByteView payload);

// Inverse of parse_set_afh. Throws Error{BadLength} when the padding bit
// (bit 79) is set.
Bytes encode_set_afh(const AfhConfig& config);

struct TestControlParams {
  uint8_t scenario = 0;
  uint8_t hopping_mode = 0;  // 0 = single frequency
  uint8_t tx_freq_index = 0;
  uint8_t rx_freq_index = 0;
  uint8_t power_mode = 0;
  uint8_t poll_period = 0;
  uint8_t packet_type = 0;
  uint16_t payload_length = 0;

  bool operator==(const TestControlParams&) const = default;
};

inline constexpr uint8_t kTestControlWhitening = 0x55;

// Index 0-78 maps to 2402 + index MHz.
inline constexpr int freq_index_to_mhz(uint8_t index) { return 2402 + index; }

// 9-byte whitened LMP_test_control payload; every byte is XORed with 0x55
// before field extraction. Throws Error{BadLength} for any other size.
TestControlParams decode_test_control(ByteView payload);

Bytes encode_test_control(const TestControlParams& params);

// Response builders used by the simulator and the injection path.
LmpPdu make_not_accepted(uint8_t tid, uint8_t rejected_opcode, uint8_t reason);
LmpPdu make_accepted(uint8_t tid, uint8_t accepted_opcode);
LmpPdu make_version_res(uint8_t tid, uint8_t version, uint16_t company,
                        uint16_t subversion);

}  // namespace btlab::lmp
