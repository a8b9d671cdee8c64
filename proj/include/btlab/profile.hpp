#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "btlab/bytes.hpp"
#include "btlab/hci.hpp"

namespace btlab::sim {

enum class RegionKind { Rom, Ram, Io };

struct MemoryRegion {
  uint32_t start = 0;
  uint32_t size = 0;
  RegionKind kind = RegionKind::Rom;
  std::string label;

  uint32_t end() const { return start + size; }
  bool contains(uint32_t address) const {
    return address >= start && address < end();
  }
};

// What a synthetic handler does when the dispatcher calls it. The firmware
// is described by behaviors instead of machine code; the observable
// semantics (responses, crashes, state changes) are what the simulator
// reproduces.
enum class HandlerBehavior {
  Benign,
  RespondNotAccepted,
  RespondFeatures,
  NullCrash,
  EnableTestMode,
  HciHandlerWrongArgs,
  BpcsDispatch,
  AcceptedIn,
  NotAcceptedIn,
  VersionReq,
  VersionRes,
  FeaturesReq,
  FeaturesRes,
  SetAfh,
  TestActivate,
  TestControl,
};

HandlerBehavior behavior_from_name(const std::string& name);
const char* behavior_name(HandlerBehavior behavior);

// One 8-byte handler-table entry: handler code address (4 LE), declared
// packet length (1), info (3). The behavior is attached by looking the
// code address up in the profile's behavior map.
struct HandlerEntry {
  uint32_t handler_ref = 0;
  uint8_t declared_len = 0;
  std::array<uint8_t, 3> info{{0, 0, 0}};
  HandlerBehavior behavior = HandlerBehavior::Benign;

  static constexpr size_t kWireSize = 8;
  void encode_into(Bytes& out) const;
};

inline constexpr size_t kBpcsValidSubcommands = 6;    // subs 0x00-0x05
inline constexpr size_t kBpcsOverflowEntries = 250;   // subs 0x06-0xff

struct HandlerLayout {
  uint32_t lmp_table_base = 0;   // 128 standard entries, 8 bytes each
  uint32_t bpcs_table_base = 0;  // 6 valid entries + 250 overflow entries

  // Entries keyed by standard opcode; opcodes without an entry fall back
  // to default_standard.
  std::map<uint8_t, HandlerEntry> standard;
  HandlerEntry default_standard;
  // Keyed by BPCS subcommand (0x00-0xff). Subs 0x00-0x05 are the intended
  // table; higher subs describe whatever memory follows it.
  std::map<uint8_t, HandlerEntry> bpcs;
  HandlerEntry overflow_default;

  HandlerEntry standard_entry(uint8_t opcode) const;
  HandlerEntry bpcs_entry(uint8_t sub) const;
  uint32_t standard_entry_address(uint8_t opcode) const {
    return lmp_table_base + 8u * opcode;
  }
  uint32_t bpcs_entry_address(uint8_t sub) const {
    return bpcs_table_base + 8u * sub;
  }
};

struct ControllerProfile {
  std::string chip_name;
  uint8_t lmp_version = 0;
  uint16_t lmp_subversion = 0;
  uint16_t company_id = 0x000f;  // Broadcom's assigned identifier
  uint16_t patchram_slots = 128;
  bool vulnerable_bpcs = false;
  bool tracepoints_supported = true;
  std::string mac_address = "ca:fe:ba:be:00:01";
  std::string rom_seed;  // deterministic ROM fill; defaults to chip_name

  std::vector<MemoryRegion> memory_regions;
  uint32_t patchram_value_table = 0x0d0000;
  uint32_t patchram_address_table = 0x310000;
  uint32_t lm_cur_cmd = 0x200478;
  uint32_t dispatcher_address = 0;
  uint32_t send_path_address = 0;
  uint32_t io_capability_address = 0;
  uint8_t io_capability = 0x01;  // DisplayYesNo unless overridden
  uint32_t test_mode_config_address = 0;
  uint32_t patch_staging_address = 0;
  uint32_t scratch_window_start = 0;
  uint32_t scratch_window_size = 0;

  hci::VendorOpcodeTable vendor_opcodes;
  HandlerLayout handler_layout;

  // Behavior attached to each handler code address; built from the layout.
  std::map<uint32_t, HandlerBehavior> behavior_map;

  const MemoryRegion* region_at(uint32_t address) const;
  bool range_mapped(uint32_t address, uint32_t length) const;

  static ControllerProfile load(const std::string& path);
  static ControllerProfile from_json_text(const std::string& text,
                                          const std::string& origin);
  void validate() const;  // throws Error{ParseError} on inconsistencies
};

// Region blobs indexed like profile.memory_regions. ROM content is a
// deterministic pseudo-random fill seeded from rom_seed with the handler
// tables serialized on top; RAM and IO start zeroed.
std::vector<Bytes> build_firmware_image(const ControllerProfile& profile);

}  // namespace btlab::sim
