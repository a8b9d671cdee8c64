#pragma once

#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <vector>

#include "btlab/bytes.hpp"
#include "btlab/hcd.hpp"
#include "btlab/hci.hpp"
#include "btlab/lmp.hpp"
#include "btlab/mac.hpp"
#include "btlab/profile.hpp"

namespace btlab::sim {

enum class ChipMode { Normal, DownloadMode, Crashed, TestModeArmed,
                      TestModeRunning };

const char* chip_mode_name(ChipMode mode);

struct RegisterSet {
  uint32_t pc = 0;
  uint32_t lr = 0;
  uint32_t sp = 0;
  uint32_t cpsr = 0;
  std::array<uint32_t, 13> r{};  // r0-r12

  bool operator==(const RegisterSet&) const = default;
};

enum class TraceEventKind { BranchEnter, RegisterDump, InvalidMemory, Crash };

struct TraceEvent {
  TraceEventKind kind = TraceEventKind::BranchEnter;
  uint32_t address = 0;  // branch target / tracepoint / fault address
  RegisterSet registers;

  bool operator==(const TraceEvent&) const = default;
};

enum class ConnectionState { Initiating, Established, Failed };
enum class LinkRole { Master, Slave };

struct ConnectionEntry {
  MacAddress peer_mac;
  uint16_t handle = 0;
  ConnectionState state = ConnectionState::Initiating;
  uint64_t created_at_us = 0;
  LinkRole role = LinkRole::Master;

  // Collected by the LMP receive handlers.
  bool has_peer_version = false;
  uint8_t peer_version = 0;
  uint16_t peer_company = 0;
  uint16_t peer_subversion = 0;
  uint32_t rejection_count = 0;   // LMP_not_accepted PDUs seen from peer
  uint8_t last_rejected_opcode = 0;
  uint8_t last_rejection_reason = 0;
};

struct DispatchResult {
  std::vector<lmp::LmpPdu> responses;
  std::vector<TraceEvent> trace;
  std::vector<std::string> state_changes;
};

enum class SendOutcome { Sent, SilentlyDropped };

// Vendor sub-event identifiers used on the HCI event feed.
inline constexpr uint8_t kVendorSubCrashDump = 0xf0;
inline constexpr uint8_t kVendorSubTracepoint = 0xf1;
inline constexpr uint8_t kVendorSubLmpMonitor = 0xf2;

// Sim-control vendor command OCFs, at the top of the 10-bit OCF space,
// well away from the datasheet commands. These model the firmware hooks
// the real toolkit installs by patching; exposing them as vendor commands
// keeps the in-process and TCP transports on one surface.
inline constexpr uint16_t kOcfInstallMonitor = 0x3e0;
inline constexpr uint16_t kOcfRemoveMonitor = 0x3e1;
inline constexpr uint16_t kOcfInstallMacFilter = 0x3e2;
inline constexpr uint16_t kOcfClearMacFilter = 0x3e3;
inline constexpr uint16_t kOcfTracepointAdd = 0x3e4;
inline constexpr uint16_t kOcfTracepointRemove = 0x3e5;
inline constexpr uint16_t kOcfGetConnections = 0x3e6;
inline constexpr uint16_t kOcfApplyPatchram = 0x3e7;
inline constexpr uint16_t kOcfAdvanceTime = 0x3e8;

// Standard command opcodes the controller interprets.
inline constexpr uint16_t kOpcodeCreateConnection = 0x0405;
inline constexpr uint16_t kOpcodeReset = 0x0c03;

// Launch_RAM stub: magic(4) action(4) handle(4) payload_len(4) payload.
inline constexpr uint32_t kStubMagic = 0x42555453;  // "STUB"
inline constexpr uint32_t kStubActionSendLmp = 1;
inline constexpr uint32_t kStubActionSendLmpFuzz = 2;

// The lm_curCmd scratch area holds at most this many raw PDU bytes.
inline constexpr size_t kLmCurCmdWindow = 256;

// Size of the download-mode staging window for patch TLV chains; large
// enough for a full 192-entry block (18 bytes each).
inline constexpr uint32_t kPatchStagingWindow = 0x1000;

struct LmpMonitorRecord {
  enum class Direction : uint8_t { Rx = 0, Tx = 1 };
  Direction direction = Direction::Rx;
  uint16_t handle = 0;
  Bytes pdu_bytes;
};

// Pseudo-header: direction(1) handle(2 LE) reserved(1), then PDU bytes.
Bytes encode_monitor_record(const LmpMonitorRecord& record);
LmpMonitorRecord decode_monitor_record(ByteView bytes);

class Medium;

// One simulated Broadcom-style controller. Single logical state machine:
// callers serialize access (the session layer owns a command queue).
class Controller {
 public:
  explicit Controller(ControllerProfile profile);

  const ControllerProfile& profile() const { return profile_; }
  const MacAddress& mac() const { return mac_; }
  ChipMode mode() const { return mode_; }
  uint64_t now_us() const { return sim_time_us_; }
  const RegisterSet& registers() const { return registers_; }
  const lmp::AfhConfig& afh() const { return afh_; }
  const lmp::TestControlParams& test_params() const { return test_params_; }
  int active_tx_frequency_mhz() const;
  const std::vector<ConnectionEntry>& connections() const {
    return connections_;
  }
  const ConnectionEntry* connection_by_handle(uint16_t handle) const;
  ConnectionEntry* connection_by_handle(uint16_t handle);
  const ConnectionEntry* connection_by_mac(const MacAddress& mac) const;

  // Direct-response events only; monitor records, crash dumps and
  // tracepoint dumps are queued and fetched with take_pending_events().
  std::vector<hci::HciEvent> handle_hci_command(const hci::HciCommand& cmd);
  std::vector<hci::HciEvent> take_pending_events();

  // Memory view with active Patchram overlays applied word-wise; the
  // dispatcher fetches handler-table entries through this same view.
  // Throws Error{OutOfMap} for unmapped ranges.
  Bytes read_view(uint32_t address, uint32_t length) const;

  // Writes the value/address tables and activates the slots. Throws
  // Error{SlotOutOfRange} above the profile's capacity.
  void apply_patchram(const std::vector<hcd::PatchramEntry>& entries);
  size_t active_patch_count() const { return active_slots_.size(); }

  DispatchResult dispatch_lmp(uint16_t conn_handle, const lmp::LmpPdu& pdu);
  SendOutcome send_lmp_tx(uint16_t conn_handle, lmp::LmpPdu pdu, bool fuzz);

  std::vector<ConnectionEntry> tick(double dt_seconds);
  void reset();

  // Hook state (modeled after the monitor/filter/tracepoint firmware
  // patches; installed through the sim-control vendor commands).
  bool monitor_installed() const { return monitor_installed_; }
  bool mac_filter_installed() const { return mac_filter_installed_; }
  const std::set<MacAddress>& mac_whitelist() const { return mac_whitelist_; }
  const std::set<uint32_t>& armed_tracepoints() const { return tracepoints_; }

  // Full frozen state captured when a tracepoint fired; consumed by the
  // replay harness.
  struct FrozenState {
    std::string chip_name;
    RegisterSet registers;
    uint64_t sim_time_us = 0;
    std::vector<Bytes> memory;  // per region, overlays already applied
  };
  const FrozenState* last_tracepoint_state() const {
    return tracepoint_state_.get();
  }

  // Constructs a controller whose memory is taken verbatim from a frozen
  // state instead of the profile image (replay harness use).
  static std::unique_ptr<Controller> from_frozen(
      const ControllerProfile& profile, const FrozenState& state);

  // Deterministic digest over memory, patch state and connections.
  uint64_t state_hash() const;

  void attach_medium(Medium* medium) { medium_ = medium; }

  // Called by the medium when a peer transmits to us.
  void receive_lmp(const MacAddress& from, ByteView pdu_bytes);

 private:
  friend class Medium;

  const MemoryRegion* region_at(uint32_t address) const;
  uint8_t* raw_ptr(uint32_t address);
  const uint8_t* raw_ptr(uint32_t address) const;
  void write_raw(uint32_t address, ByteView data, bool allow_rom);
  uint32_t raw_u32(uint32_t address) const;

  void crash(uint32_t fault_pc, uint32_t fault_lr);
  hci::HciEvent crash_dump_event() const;
  void queue_event(hci::HciEvent evt);
  void emit_monitor(LmpMonitorRecord::Direction direction, uint16_t handle,
                    ByteView pdu_bytes);

  void branch_enter(uint32_t address, DispatchResult& result);
  void run_handler(const HandlerEntry& entry, const ConnectionEntry& conn,
                   const lmp::LmpPdu& pdu, DispatchResult& result);
  void transmit_response(ConnectionEntry& conn, const lmp::LmpPdu& response,
                         DispatchResult& result);
  uint8_t cur_cmd_byte(size_t offset) const;

  std::vector<hci::HciEvent> do_vendor_command(const hci::HciCommand& cmd);
  std::vector<hci::HciEvent> do_sim_control(const hci::HciCommand& cmd);
  std::vector<hci::HciEvent> do_create_connection(const hci::HciCommand& cmd);
  hci::HciEvent do_launch_ram(uint32_t address, hci::HciOpcode opcode);
  void apply_staged_patches();
  uint32_t send_effective_length(const lmp::LmpPdu& pdu, size_t wire_len) const;

  ControllerProfile profile_;
  MacAddress mac_;
  std::vector<Bytes> memory_;
  std::vector<Bytes> initial_memory_;
  std::set<uint16_t> active_slots_;
  std::set<uint16_t> hook_slots_;

  ChipMode mode_ = ChipMode::Normal;
  RegisterSet registers_;
  lmp::AfhConfig afh_;
  lmp::TestControlParams test_params_;
  double test_elapsed_s_ = 0;
  uint64_t sim_time_us_ = 0;
  uint16_t next_handle_ = 0x000b;
  std::vector<ConnectionEntry> connections_;

  bool monitor_installed_ = false;
  bool mac_filter_installed_ = false;
  std::set<MacAddress> mac_whitelist_;
  std::set<uint32_t> tracepoints_;
  std::unique_ptr<FrozenState> tracepoint_state_;

  // Download-mode staging: extent of bytes written into the staging window.
  uint32_t staged_bytes_ = 0;

  std::deque<hci::HciEvent> pending_events_;
  Medium* medium_ = nullptr;
};

// The shared radio world: routes LMP frames between attached controllers
// and drives their clocks together.
class Medium {
 public:
  void attach(Controller& controller);
  Controller* find(const MacAddress& mac, const Controller* except);
  void tick(double dt_seconds);

 private:
  std::vector<Controller*> controllers_;
};

namespace simctl {

// Payload builders/parsers for the sim-control command surface.
hci::HciCommand make_install_monitor(uint8_t dispatcher_slot,
                                     uint8_t send_path_slot);
hci::HciCommand make_remove_monitor();
hci::HciCommand make_install_mac_filter(uint8_t slot,
                                        const std::vector<MacAddress>& macs);
hci::HciCommand make_clear_mac_filter();
hci::HciCommand make_tracepoint_add(uint32_t address, uint8_t slot);
hci::HciCommand make_tracepoint_remove(uint32_t address);
hci::HciCommand make_get_connections();
hci::HciCommand make_apply_patchram(
    const std::vector<hcd::PatchramEntry>& entries);
hci::HciCommand make_advance_time(uint64_t dt_us);
hci::HciCommand make_create_connection(const MacAddress& mac);
hci::HciCommand make_reset();

std::vector<ConnectionEntry> parse_connections_payload(ByteView payload);

}  // namespace simctl

}  // namespace btlab::sim
