#include "btlab/hcd.hpp"

#include <set>

#include "btlab/errors.hpp"

namespace btlab::hcd {

HcdFile parse_hcd(ByteView bytes, const hci::VendorOpcodeTable& table) {
  HcdFile file;
  size_t offset = 0;
  while (offset < bytes.size()) {
    if (bytes.size() - offset < 3) {
      throw Error(Errc::Truncated, "HCD record header cut short", offset);
    }
    uint8_t len = bytes[offset + 2];
    if (bytes.size() - offset < 3u + len) {
      throw Error(Errc::Truncated, "HCD record parameters cut short", offset);
    }
    file.records.push_back(
        hci::decode_command(bytes.subspan(offset, 3 + len)));
    offset += 3 + len;
  }
  if (!file.records.empty()) {
    hci::VendorCommandKind kind;
    if (hci::parse_vendor_command(file.records.back(), table, kind)) {
      if (const auto* launch = std::get_if<hci::LaunchRam>(&kind)) {
        file.terminated = launch->address == hci::kLaunchApplyPatches;
      }
    }
  }
  return file;
}

Bytes serialize_hcd(const HcdFile& file) {
  Bytes out;
  for (const auto& record : file.records) {
    Bytes frame = hci::encode_command(record);
    out.insert(out.end(), frame.begin(), frame.end());
  }
  return out;
}

Bytes encode_tlv(const TlvObject& tlv) {
  Bytes out;
  out.push_back(tlv.tlv_type);
  put_u16le(out, static_cast<uint16_t>(tlv.payload.size()));
  out.insert(out.end(), tlv.payload.begin(), tlv.payload.end());
  return out;
}

Bytes encode_patchram_block(const std::vector<PatchramEntry>& entries) {
  std::set<uint8_t> seen;
  Bytes out;
  for (const auto& entry : entries) {
    if (!seen.insert(entry.slot).second) {
      throw Error(Errc::DuplicateSlot,
                  "patchram slot " + std::to_string(entry.slot) +
                      " appears twice");
    }
    if (entry.address % 4 != 0) {
      char msg[64];
      snprintf(msg, sizeof(msg), "patchram target 0x%08x is not word-aligned",
               entry.address);
      throw Error(Errc::UnalignedAddress, msg);
    }
    TlvObject tlv;
    tlv.tlv_type = kTlvTypePatchram;
    tlv.payload.push_back(entry.slot);
    put_u32le(tlv.payload, entry.address);
    put_u32le(tlv.payload, entry.value);
    tlv.payload.push_back(0x00);
    tlv.payload.push_back(0x00);
    tlv.payload.insert(tlv.payload.end(), entry.unknown.begin(),
                       entry.unknown.end());
    Bytes encoded = encode_tlv(tlv);
    out.insert(out.end(), encoded.begin(), encoded.end());
  }
  return out;
}

PatchramBlock decode_patchram_block(ByteView bytes) {
  PatchramBlock block;
  size_t offset = 0;
  while (offset < bytes.size()) {
    if (bytes.size() - offset < 3) {
      throw Error(Errc::Truncated, "TLV header cut short", offset);
    }
    uint8_t type = bytes[offset];
    uint16_t len = get_u16le(bytes, offset + 1);
    if (bytes.size() - offset < 3u + len) {
      throw Error(Errc::Truncated, "TLV payload cut short", offset);
    }
    ByteView payload = bytes.subspan(offset + 3, len);
    if (type == kTlvTypePatchram) {
      if (len != kPatchramPayloadLen) {
        throw Error(Errc::BadLength,
                    "type-0x08 TLV payload length " + std::to_string(len) +
                        ", expected 15",
                    offset);
      }
      PatchramEntry entry;
      entry.slot = payload[0];
      entry.address = get_u32le(payload, 1);
      entry.value = get_u32le(payload, 5);
      std::copy(payload.begin() + 11, payload.end(), entry.unknown.begin());
      if (entry.address % 4 != 0) {
        block.unaligned_slots.push_back(entry.slot);
      }
      block.entries.push_back(entry);
    } else {
      block.other_tlvs.push_back(
          TlvObject{type, Bytes(payload.begin(), payload.end())});
    }
    offset += 3 + len;
  }
  return block;
}

}  // namespace btlab::hcd
