#pragma once

#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>

#include "btlab/controller.hpp"
#include "btlab/profile.hpp"
#include "btlab/snoop.hpp"

namespace btlab::core {

// Direction of an HCI packet relative to the host.
enum class HciDirection { HostToController, ControllerToHost };

struct HciTrafficRecord {
  HciDirection direction = HciDirection::HostToController;
  Bytes h4_bytes;  // H4 type byte + packet bytes
  uint64_t timestamp_us = 0;
};

using HciSink = std::function<void(const HciTrafficRecord&)>;
using LmpSink =
    std::function<void(const sim::LmpMonitorRecord&, uint64_t timestamp_us)>;
using TracepointSink =
    std::function<void(uint32_t address, const sim::RegisterSet&)>;

// Transport to a controller: the in-process simulator or a TCP debug
// bridge client. issue() returns the direct-response events for the
// command; spontaneous events are fetched with drain_events().
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::vector<hci::HciEvent> issue(const hci::HciCommand& cmd) = 0;
  virtual std::vector<hci::HciEvent> drain_events() = 0;
  virtual uint64_t now_us() = 0;
  // True when the far side echoes all traffic back (the TCP bridge does);
  // the session then mirrors the echo stream into its capture sinks
  // instead of logging locally.
  virtual bool echoes_traffic() const { return false; }
};

class InProcessTransport : public Transport {
 public:
  explicit InProcessTransport(sim::Controller& controller)
      : controller_(controller) {}
  std::vector<hci::HciEvent> issue(const hci::HciCommand& cmd) override {
    return controller_.handle_hci_command(cmd);
  }
  std::vector<hci::HciEvent> drain_events() override {
    return controller_.take_pending_events();
  }
  uint64_t now_us() override { return controller_.now_us(); }
  sim::Controller& controller() { return controller_; }

 private:
  sim::Controller& controller_;
};

enum class WriteResult { Ok, RomNoEffect };

struct BpcsScanReport {
  enum class Verdict { Vulnerable, NotVulnerable, NoResponse };
  Verdict verdict = Verdict::NoResponse;
  bool has_peer_version = false;
  uint8_t peer_version = 0;
  uint16_t peer_subversion = 0;
};

// Host-side session. All operations are serialized; sinks are invoked
// after the command path completes and must not call back into the
// session (rejected with Error{ReentrantCall}).
class Session {
 public:
  Session(sim::ControllerProfile profile, std::unique_ptr<Transport> transport);
  ~Session();

  const sim::ControllerProfile& profile() const { return profile_; }
  uint64_t now_us();

  // -- raw HCI ------------------------------------------------------------
  std::vector<hci::HciEvent> send_raw(const hci::HciCommand& cmd);

  // -- memory -------------------------------------------------------------
  // Chunked Read_RAM; refuses unmapped ranges unless force (crashing the
  // chip is sometimes the experiment). Throws Error{OutOfMap},
  // Error{ChipCrashed}.
  Bytes read_memory(uint32_t address, uint32_t length, bool force = false);
  WriteResult write_memory(uint32_t address, ByteView data,
                           bool verify = true);
  std::vector<uint32_t> search_memory(ByteView pattern, size_t max_hits = 32);
  void launch(uint32_t address);

  // -- patching -----------------------------------------------------------
  // Allocates the lowest free Patchram slot. Throws Error{NotRom},
  // Error{UnalignedAddress}, Error{NoFreeSlots}.
  uint8_t patch_rom(uint32_t address, uint32_t word);
  size_t slots_used() const;
  size_t slot_capacity() const { return slot_used_.size(); }

  struct HcdLoadResult {
    size_t records = 0;
    bool terminated = false;
  };
  HcdLoadResult load_hcd(const hcd::HcdFile& file);

  // -- LMP monitor and injection -------------------------------------------
  // Hooks the dispatcher and send paths; each hook debits a Patchram slot.
  void install_lmp_monitor(LmpSink sink);
  void remove_lmp_monitor();
  bool lmp_monitor_installed() const { return monitor_installed_; }

  size_t add_hci_sink(HciSink sink);
  void remove_hci_sink(size_t id);
  void set_tracepoint_sink(TracepointSink sink);

  // Writes the injection stub + payload to the scratch window and fires
  // Launch_RAM at it. Throws Error{NoSuchConnection}.
  sim::SendOutcome send_lmp(uint16_t conn_handle, const lmp::LmpPdu& pdu,
                            bool fuzz);

  // -- connections ----------------------------------------------------------
  sim::ConnectionEntry connect(const MacAddress& mac);
  std::vector<sim::ConnectionEntry> connections();

  // -- tracepoints ----------------------------------------------------------
  void add_tracepoint(uint32_t address);
  void remove_tracepoint(uint32_t address);

  // -- security helpers ------------------------------------------------------
  BpcsScanReport scan_bpcs(uint16_t conn_handle, uint8_t probe_sub = 0x06);
  void install_mac_filter(const std::vector<MacAddress>& whitelist);
  void clear_mac_filter();

  // -- lifecycle --------------------------------------------------------------
  void reset();
  size_t tick(double dt_seconds);  // returns expired-connection count
  bool crashed() const { return crashed_; }
  std::optional<sim::RegisterSet> last_crash_registers() const {
    return last_crash_;
  }

  static constexpr double kScanTimeoutS = 5.0;

 private:
  class DeliveryGuard;

  struct SinkWork {
    std::optional<HciTrafficRecord> hci;
    std::optional<std::pair<sim::LmpMonitorRecord, uint64_t>> lmp;
    std::optional<std::pair<uint32_t, sim::RegisterSet>> tracepoint;
  };

  void guard_reentrancy() const;
  std::vector<hci::HciEvent> issue_locked(const hci::HciCommand& cmd);
  hci::CommandCompleteView issue_expect_complete(const hci::HciCommand& cmd);
  void process_event(const hci::HciEvent& evt, uint64_t ts);
  void log_hci(HciDirection direction, ByteView packet, uint8_t h4_type,
               uint64_t ts);
  void deliver_pending();
  uint8_t allocate_slot();
  void release_slot(uint8_t slot);
  void release_all_slots();
  Bytes read_chunked(uint32_t address, uint32_t length);

  sim::ControllerProfile profile_;
  std::unique_ptr<Transport> transport_;
  mutable std::mutex mutex_;

  std::vector<bool> slot_used_;
  std::optional<std::pair<uint8_t, uint8_t>> monitor_slots_;
  std::optional<uint8_t> filter_slot_;
  std::map<uint32_t, uint8_t> tracepoint_slots_;

  bool monitor_installed_ = false;
  bool crashed_ = false;
  std::optional<sim::RegisterSet> last_crash_;

  std::vector<LmpSink> lmp_sinks_;
  std::map<size_t, HciSink> hci_sinks_;
  size_t next_hci_sink_id_ = 1;
  TracepointSink tracepoint_sink_;

  std::vector<SinkWork> pending_work_;
};

// Parsed forms of the vendor debug events.
std::optional<sim::RegisterSet> parse_crash_dump(const hci::HciEvent& evt);

struct TracepointDump {
  uint32_t address = 0;
  sim::RegisterSet registers;
  Bytes stack;
  Bytes heap;
};
std::optional<TracepointDump> parse_tracepoint_dump(const hci::HciEvent& evt);

std::string format_register_dump(const sim::RegisterSet& regs);

}  // namespace btlab::core
