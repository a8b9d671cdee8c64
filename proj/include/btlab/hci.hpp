#pragma once

#include <cstdint>
#include <string>
#include <variant>

#include "btlab/bytes.hpp"

namespace btlab::hci {

// 16-bit HCI opcode, split into opcode group (6 bits) and command (10 bits).
// Vendor commands live in group 0x3f.
struct HciOpcode {
  uint8_t ogf = 0;    // 6-bit group
  uint16_t ocf = 0;   // 10-bit command

  static constexpr uint8_t kVendorOgf = 0x3f;

  constexpr uint16_t value() const {
    return static_cast<uint16_t>((ogf << 10) | (ocf & 0x3ff));
  }
  static constexpr HciOpcode from_value(uint16_t v) {
    return HciOpcode{static_cast<uint8_t>(v >> 10),
                     static_cast<uint16_t>(v & 0x3ff)};
  }
  bool operator==(const HciOpcode&) const = default;
};

struct HciCommand {
  HciOpcode opcode;
  Bytes params;

  bool operator==(const HciCommand&) const = default;
};

struct HciEvent {
  uint8_t event_code = 0;
  Bytes params;

  bool operator==(const HciEvent&) const = default;
};

// Event codes the toolkit interprets.
inline constexpr uint8_t kEventCommandComplete = 0x0e;
inline constexpr uint8_t kEventCommandStatus = 0x0f;
inline constexpr uint8_t kEventConnectionComplete = 0x03;
inline constexpr uint8_t kEventDisconnectionComplete = 0x05;
inline constexpr uint8_t kEventVendor = 0xff;

// HCI status codes used by the simulated controller.
inline constexpr uint8_t kStatusSuccess = 0x00;
inline constexpr uint8_t kStatusUnknownCommand = 0x01;
inline constexpr uint8_t kStatusPageTimeout = 0x04;
inline constexpr uint8_t kStatusMemoryCapacityExceeded = 0x07;
inline constexpr uint8_t kStatusCommandDisallowed = 0x0c;
inline constexpr uint8_t kStatusInvalidParameters = 0x12;
// Vendor-defined statuses (0xa0+ is outside the assigned core range).
inline constexpr uint8_t kStatusAlreadyArmed = 0xa0;
inline constexpr uint8_t kStatusSlotOutOfRange = 0xa1;

// The four Broadcom-style RAM access commands. Numeric command values are
// not hardwired: they come from a VendorOpcodeTable so that a controller
// profile can remap them.
struct ReadRam {
  uint32_t address = 0;
  uint8_t length = 0;
  bool operator==(const ReadRam&) const = default;
};
struct WriteRam {
  uint32_t address = 0;
  Bytes data;
  bool operator==(const WriteRam&) const = default;
};
struct LaunchRam {
  uint32_t address = 0;
  bool operator==(const LaunchRam&) const = default;
};
struct DownloadMinidriver {
  bool operator==(const DownloadMinidriver&) const = default;
};

using VendorCommandKind =
    std::variant<ReadRam, WriteRam, LaunchRam, DownloadMinidriver>;

// Launch_RAM with this pseudo-address applies staged patches and reboots
// back into normal Bluetooth mode instead of jumping anywhere.
inline constexpr uint32_t kLaunchApplyPatches = 0xffffffff;

// Largest Read_RAM chunk whose data still fits a command-complete event
// (255 params minus the 4-byte complete header).
inline constexpr uint8_t kMaxReadChunk = 251;

struct VendorOpcodeTable {
  // Defaults are the values from the public Broadcom datasheet; profiles
  // may override any of them.
  uint16_t write_ram_ocf = 0x4c;
  uint16_t read_ram_ocf = 0x4d;
  uint16_t launch_ram_ocf = 0x4e;
  uint16_t download_minidriver_ocf = 0x2e;

  HciOpcode write_ram() const { return {HciOpcode::kVendorOgf, write_ram_ocf}; }
  HciOpcode read_ram() const { return {HciOpcode::kVendorOgf, read_ram_ocf}; }
  HciOpcode launch_ram() const {
    return {HciOpcode::kVendorOgf, launch_ram_ocf};
  }
  HciOpcode download_minidriver() const {
    return {HciOpcode::kVendorOgf, download_minidriver_ocf};
  }
  bool operator==(const VendorOpcodeTable&) const = default;
};

// Wire form: opcode (2 bytes LE) + param length (1 byte) + params.
// Throws Error{OversizedParams} when params exceed 255 bytes.
Bytes encode_command(const HciCommand& cmd);

// Wire form: event code (1 byte) + param length (1 byte) + params.
Bytes encode_event(const HciEvent& evt);

// The wire form does not carry a direction, so the caller states it.
enum class PacketDirection { HostToController, ControllerToHost };

using HciPacket = std::variant<HciCommand, HciEvent>;

// Inverse of the encoders; byte-exact round trip. Throws Error{Truncated}
// when bytes end mid-frame and Error{LengthMismatch} when the declared
// parameter length disagrees with the bytes present.
HciPacket decode_packet(ByteView bytes, PacketDirection direction);
HciCommand decode_command(ByteView bytes);
HciEvent decode_event(ByteView bytes);

// Parameters are laid out little-endian, address first. Rejecting bad
// addresses is the controller's job, not the codec's.
HciCommand build_vendor_command(const VendorCommandKind& kind,
                                const VendorOpcodeTable& table);

// Attempts the inverse of build_vendor_command; returns false when cmd is
// not one of the table's four vendor commands (or is malformed).
bool parse_vendor_command(const HciCommand& cmd, const VendorOpcodeTable& table,
                          VendorCommandKind& out);

struct CommandCompleteView {
  uint8_t num_hci_command_packets = 1;
  HciOpcode opcode;
  uint8_t status = 0;
  Bytes payload;  // Read_RAM data when the opcode matches read_ram
};

// Throws Error{WrongEventCode} unless evt is a Command Complete event.
CommandCompleteView parse_command_complete(const HciEvent& evt);

HciEvent build_command_complete(HciOpcode opcode, uint8_t status,
                                ByteView payload = {});

}  // namespace btlab::hci
