#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "btlab/bytes.hpp"
#include "btlab/hci.hpp"

namespace btlab::hcd {

// A firmware-update container: back-to-back HCI command frames, no
// transport byte. A flashable file ends with Launch_RAM(0xffffffff).
struct HcdFile {
  std::vector<hci::HciCommand> records;
  bool terminated = false;

  bool operator==(const HcdFile&) const = default;
};

// Throws Error{Truncated} with the byte offset of the broken record.
HcdFile parse_hcd(ByteView bytes,
                  const hci::VendorOpcodeTable& table = {});

Bytes serialize_hcd(const HcdFile& file);

// One 4-byte ROM overlay. The trailing four bytes of the on-wire TLV
// payload are undocumented; they are kept verbatim so decode/encode round
// trips exactly, and default to zero.
struct PatchramEntry {
  uint8_t slot = 0;
  uint32_t address = 0;
  uint32_t value = 0;
  std::array<uint8_t, 4> unknown{{0, 0, 0, 0}};

  bool operator==(const PatchramEntry&) const = default;
};

struct TlvObject {
  uint8_t tlv_type = 0;
  Bytes payload;

  bool operator==(const TlvObject&) const = default;
};

inline constexpr uint8_t kTlvTypePatchram = 0x08;
inline constexpr size_t kPatchramPayloadLen = 15;

// One type-0x08 TLV per entry:
//   08 | 0f 00 | slot(1) | address(4 LE) | value(4 LE) | 00 00 | unknown(4)
// Throws Error{DuplicateSlot} on repeated slot numbers and
// Error{UnalignedAddress} for addresses that are not word-aligned.
Bytes encode_patchram_block(const std::vector<PatchramEntry>& entries);

struct PatchramBlock {
  std::vector<PatchramEntry> entries;
  std::vector<TlvObject> other_tlvs;  // non-0x08 objects, passed through
  // Decode tolerates unaligned target addresses but reports them.
  std::vector<uint8_t> unaligned_slots;
};

// Throws Error{BadLength} when a type-0x08 payload length is not 15, and
// Error{Truncated} when the chain ends mid-object.
PatchramBlock decode_patchram_block(ByteView bytes);

Bytes encode_tlv(const TlvObject& tlv);

}  // namespace btlab::hcd
