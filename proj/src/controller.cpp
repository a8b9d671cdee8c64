#include "btlab/controller.hpp"

#include <algorithm>
#include <cstring>

#include "btlab/errors.hpp"

namespace btlab::sim {

namespace {

// LMP_not_accepted reason codes used by the synthetic firmware.
constexpr uint8_t kReasonUnknownPdu = 0x1a;      // unsupported LMP feature
constexpr uint8_t kReasonBpcsRejected = 0x02;    // out-of-range BPCS sub
constexpr uint8_t kReasonPduNotAllowed = 0x24;

constexpr uint8_t kStatusNoConnection = 0x02;
constexpr uint32_t kLmpTxBufferLimit = 32;
constexpr uint64_t kCommandTimeQuantumUs = 100;
constexpr double kFailedConnectionLifetimeS = 30.0;

uint64_t fnv1a(uint64_t seed, ByteView data) {
  uint64_t h = seed;
  for (uint8_t b : data) {
    h = (h ^ b) * 0x100000001b3ull;
  }
  return h;
}

uint64_t fnv1a_str(const std::string& s) {
  return fnv1a(0xcbf29ce484222325ull,
               ByteView(reinterpret_cast<const uint8_t*>(s.data()), s.size()));
}

void put_registers(Bytes& out, const RegisterSet& regs) {
  put_u32le(out, regs.pc);
  put_u32le(out, regs.lr);
  put_u32le(out, regs.sp);
  put_u32le(out, regs.cpsr);
  for (uint32_t r : regs.r) put_u32le(out, r);
}

}  // namespace

const char* chip_mode_name(ChipMode mode) {
  switch (mode) {
    case ChipMode::Normal: return "normal";
    case ChipMode::DownloadMode: return "download";
    case ChipMode::Crashed: return "crashed";
    case ChipMode::TestModeArmed: return "test-armed";
    case ChipMode::TestModeRunning: return "test-running";
  }
  return "?";
}

Bytes encode_monitor_record(const LmpMonitorRecord& record) {
  Bytes out;
  out.push_back(static_cast<uint8_t>(record.direction));
  put_u16le(out, record.handle);
  out.push_back(0);  // reserved
  out.insert(out.end(), record.pdu_bytes.begin(), record.pdu_bytes.end());
  return out;
}

LmpMonitorRecord decode_monitor_record(ByteView bytes) {
  if (bytes.size() < 4) {
    throw Error(Errc::Truncated, "LMP monitor record shorter than 4 bytes");
  }
  LmpMonitorRecord record;
  record.direction = bytes[0] == 0 ? LmpMonitorRecord::Direction::Rx
                                   : LmpMonitorRecord::Direction::Tx;
  record.handle = get_u16le(bytes, 1);
  record.pdu_bytes.assign(bytes.begin() + 4, bytes.end());
  return record;
}

Controller::Controller(ControllerProfile profile)
    : profile_(std::move(profile)), mac_(MacAddress::parse(profile_.mac_address)) {
  memory_ = build_firmware_image(profile_);
  initial_memory_ = memory_;
  reset();
}

const MemoryRegion* Controller::region_at(uint32_t address) const {
  return profile_.region_at(address);
}

const uint8_t* Controller::raw_ptr(uint32_t address) const {
  for (size_t i = 0; i < profile_.memory_regions.size(); i++) {
    const auto& region = profile_.memory_regions[i];
    if (region.contains(address)) {
      return memory_[i].data() + (address - region.start);
    }
  }
  return nullptr;
}

uint8_t* Controller::raw_ptr(uint32_t address) {
  return const_cast<uint8_t*>(
      static_cast<const Controller*>(this)->raw_ptr(address));
}

uint32_t Controller::raw_u32(uint32_t address) const {
  uint32_t value = 0;
  for (int i = 0; i < 4; i++) {
    const uint8_t* p = raw_ptr(address + i);
    if (p != nullptr) value |= static_cast<uint32_t>(*p) << (8 * i);
  }
  return value;
}

void Controller::write_raw(uint32_t address, ByteView data, bool allow_rom) {
  for (size_t i = 0; i < data.size(); i++) {
    uint32_t a = address + static_cast<uint32_t>(i);
    const MemoryRegion* region = region_at(a);
    if (region == nullptr) continue;
    if (region->kind == RegionKind::Rom && !allow_rom) continue;
    *raw_ptr(a) = data[i];
  }
}

Bytes Controller::read_view(uint32_t address, uint32_t length) const {
  if (!profile_.range_mapped(address, length)) {
    char msg[64];
    snprintf(msg, sizeof(msg), "unmapped read at 0x%08x+%u", address, length);
    throw Error(Errc::OutOfMap, msg);
  }
  Bytes out(length);
  for (uint32_t i = 0; i < length; i++) {
    out[i] = *raw_ptr(address + i);
  }
  // Word-wise overlays: an active slot shadows [target, target+4) with the
  // value word stored in the tables, which themselves live in memory.
  for (uint16_t slot : active_slots_) {
    uint32_t target = raw_u32(profile_.patchram_address_table + 4u * slot);
    uint32_t value = raw_u32(profile_.patchram_value_table + 4u * slot);
    for (uint32_t i = 0; i < 4; i++) {
      uint32_t a = target + i;
      if (a >= address && a < address + length) {
        out[a - address] = static_cast<uint8_t>(value >> (8 * i));
      }
    }
  }
  return out;
}

void Controller::apply_patchram(const std::vector<hcd::PatchramEntry>& entries) {
  for (const auto& entry : entries) {
    if (entry.slot >= profile_.patchram_slots) {
      throw Error(Errc::SlotOutOfRange,
                  "slot " + std::to_string(entry.slot) + " exceeds the " +
                      std::to_string(profile_.patchram_slots) +
                      "-slot capacity of " + profile_.chip_name);
    }
  }
  for (const auto& entry : entries) {
    Bytes word;
    put_u32le(word, entry.value);
    write_raw(profile_.patchram_value_table + 4u * entry.slot, word, false);
    word.clear();
    put_u32le(word, entry.address);
    // The address table is an IO region, not ROM; plain write.
    write_raw(profile_.patchram_address_table + 4u * entry.slot, word, false);
    active_slots_.insert(entry.slot);
  }
}

int Controller::active_tx_frequency_mhz() const {
  if (mode_ != ChipMode::TestModeRunning) return -1;
  if (test_params_.hopping_mode != 0) return -1;
  return lmp::freq_index_to_mhz(test_params_.tx_freq_index);
}

const ConnectionEntry* Controller::connection_by_handle(uint16_t handle) const {
  for (const auto& c : connections_) {
    if (c.handle == handle) return &c;
  }
  return nullptr;
}

ConnectionEntry* Controller::connection_by_handle(uint16_t handle) {
  return const_cast<ConnectionEntry*>(
      static_cast<const Controller*>(this)->connection_by_handle(handle));
}

const ConnectionEntry* Controller::connection_by_mac(
    const MacAddress& mac) const {
  for (const auto& c : connections_) {
    if (c.peer_mac == mac) return &c;
  }
  return nullptr;
}

void Controller::queue_event(hci::HciEvent evt) {
  pending_events_.push_back(std::move(evt));
}

std::vector<hci::HciEvent> Controller::take_pending_events() {
  std::vector<hci::HciEvent> out(pending_events_.begin(),
                                 pending_events_.end());
  pending_events_.clear();
  return out;
}

hci::HciEvent Controller::crash_dump_event() const {
  hci::HciEvent evt;
  evt.event_code = hci::kEventVendor;
  evt.params.push_back(kVendorSubCrashDump);
  put_registers(evt.params, registers_);
  return evt;
}

void Controller::crash(uint32_t fault_pc, uint32_t fault_lr) {
  registers_.pc = fault_pc;
  registers_.lr = fault_lr;
  mode_ = ChipMode::Crashed;
  queue_event(crash_dump_event());
}

void Controller::emit_monitor(LmpMonitorRecord::Direction direction,
                              uint16_t handle, ByteView pdu_bytes) {
  if (!monitor_installed_) return;
  LmpMonitorRecord record;
  record.direction = direction;
  record.handle = handle;
  size_t n = std::min<size_t>(pdu_bytes.size(), 250);
  record.pdu_bytes.assign(pdu_bytes.begin(), pdu_bytes.begin() + n);
  hci::HciEvent evt;
  evt.event_code = hci::kEventVendor;
  evt.params.push_back(kVendorSubLmpMonitor);
  Bytes payload = encode_monitor_record(record);
  evt.params.insert(evt.params.end(), payload.begin(), payload.end());
  queue_event(std::move(evt));
}

void Controller::branch_enter(uint32_t address, DispatchResult& result) {
  registers_.lr = registers_.pc | 1;
  registers_.pc = address;
  result.trace.push_back(
      TraceEvent{TraceEventKind::BranchEnter, address, registers_});
  if (tracepoints_.count(address)) {
    tracepoints_.erase(address);
    result.trace.push_back(
        TraceEvent{TraceEventKind::RegisterDump, address, registers_});

    hci::HciEvent evt;
    evt.event_code = hci::kEventVendor;
    evt.params.push_back(kVendorSubTracepoint);
    put_u32le(evt.params, address);
    put_registers(evt.params, registers_);
    auto snapshot64 = [this](uint32_t base) {
      Bytes snap(64, 0);
      for (uint32_t i = 0; i < 64; i++) {
        const MemoryRegion* region = region_at(base + i);
        if (region != nullptr) snap[i] = read_view(base + i, 1)[0];
      }
      return snap;
    };
    Bytes stack = snapshot64(registers_.sp);
    Bytes heap = snapshot64(profile_.lm_cur_cmd);
    evt.params.insert(evt.params.end(), stack.begin(), stack.end());
    evt.params.insert(evt.params.end(), heap.begin(), heap.end());
    queue_event(std::move(evt));

    auto frozen = std::make_unique<FrozenState>();
    frozen->chip_name = profile_.chip_name;
    frozen->registers = registers_;
    frozen->sim_time_us = sim_time_us_;
    for (const auto& region : profile_.memory_regions) {
      frozen->memory.push_back(read_view(region.start, region.size));
    }
    tracepoint_state_ = std::move(frozen);
  }
}

uint8_t Controller::cur_cmd_byte(size_t offset) const {
  return read_view(profile_.lm_cur_cmd + static_cast<uint32_t>(offset), 1)[0];
}

void Controller::transmit_response(ConnectionEntry& conn,
                                   const lmp::LmpPdu& response,
                                   DispatchResult& result) {
  result.responses.push_back(response);
  Bytes wire = lmp::encode_pdu(response);
  emit_monitor(LmpMonitorRecord::Direction::Tx, conn.handle, wire);
  if (medium_ != nullptr && conn.state == ConnectionState::Established) {
    Controller* peer = medium_->find(conn.peer_mac, this);
    if (peer != nullptr) peer->receive_lmp(mac_, wire);
  }
}

void Controller::run_handler(const HandlerEntry& entry,
                             const ConnectionEntry& conn,
                             const lmp::LmpPdu& pdu, DispatchResult& result) {
  ConnectionEntry* mutable_conn = connection_by_handle(conn.handle);
  switch (entry.behavior) {
    case HandlerBehavior::Benign:
    case HandlerBehavior::BpcsDispatch:
    case HandlerBehavior::FeaturesRes:
      break;
    case HandlerBehavior::RespondNotAccepted:
      transmit_response(*mutable_conn,
                        lmp::make_not_accepted(pdu.tid, pdu.opcode,
                                               kReasonUnknownPdu),
                        result);
      break;
    case HandlerBehavior::RespondFeatures: {
      uint8_t arg = cur_cmd_byte(2);
      branch_enter(entry.handler_ref + 0x10 + (arg & 1) * 8, result);
      if (mode_ == ChipMode::Crashed) break;
      uint64_t h = fnv1a_str(profile_.chip_name);
      lmp::LmpPdu response{pdu.tid, lmp::kOpcodeVendorBpcs, std::nullopt, {}};
      response.payload = {0x01, arg, static_cast<uint8_t>(h),
                          static_cast<uint8_t>(h >> 8),
                          static_cast<uint8_t>(h >> 16),
                          static_cast<uint8_t>(h >> 24)};
      transmit_response(*mutable_conn, response, result);
      break;
    }
    case HandlerBehavior::NullCrash:
    case HandlerBehavior::HciHandlerWrongArgs: {
      // Executing data as code: the garbage word at the branch target ends
      // up dereferenced as a pointer outside the memory map.
      uint32_t fault;
      try {
        fault = get_u32le(read_view(entry.handler_ref & ~3u, 4), 0) |
                0x40000000u;
      } catch (const Error&) {
        fault = entry.handler_ref;
      }
      result.trace.push_back(
          TraceEvent{TraceEventKind::InvalidMemory, fault, registers_});
      crash(entry.handler_ref, registers_.lr);
      result.trace.push_back(
          TraceEvent{TraceEventKind::Crash, entry.handler_ref, registers_});
      result.state_changes.push_back("chip crashed");
      break;
    }
    case HandlerBehavior::EnableTestMode: {
      // Reached over the BPCS overflow: enables device-under-test mode
      // without any HCI traffic, so nothing shows up in a host-side log.
      if (mode_ == ChipMode::Normal) mode_ = ChipMode::TestModeArmed;
      Bytes marker = {0x01, 0x00, 0x00, 0x00};
      write_raw(profile_.test_mode_config_address, marker, false);
      result.state_changes.push_back("test mode armed");
      break;
    }
    case HandlerBehavior::AcceptedIn:
      break;
    case HandlerBehavior::NotAcceptedIn:
      if (mutable_conn != nullptr) {
        mutable_conn->rejection_count++;
        mutable_conn->last_rejected_opcode = cur_cmd_byte(1);
        mutable_conn->last_rejection_reason = cur_cmd_byte(2);
      }
      break;
    case HandlerBehavior::VersionReq:
    case HandlerBehavior::VersionRes:
      if (mutable_conn != nullptr) {
        mutable_conn->has_peer_version = true;
        mutable_conn->peer_version = cur_cmd_byte(1);
        mutable_conn->peer_company = static_cast<uint16_t>(
            cur_cmd_byte(2) | (cur_cmd_byte(3) << 8));
        mutable_conn->peer_subversion = static_cast<uint16_t>(
            cur_cmd_byte(4) | (cur_cmd_byte(5) << 8));
      }
      if (entry.behavior == HandlerBehavior::VersionReq) {
        transmit_response(*mutable_conn,
                          lmp::make_version_res(pdu.tid, profile_.lmp_version,
                                                profile_.company_id,
                                                profile_.lmp_subversion),
                          result);
      }
      break;
    case HandlerBehavior::FeaturesReq: {
      uint64_t h = fnv1a_str(profile_.chip_name + "/features");
      lmp::LmpPdu response{pdu.tid, lmp::kOpcodeFeaturesRes, std::nullopt, {}};
      for (int i = 0; i < 8; i++) {
        response.payload.push_back(static_cast<uint8_t>(h >> (8 * i)));
      }
      transmit_response(*mutable_conn, response, result);
      break;
    }
    case HandlerBehavior::SetAfh: {
      Bytes payload = read_view(profile_.lm_cur_cmd + 1, 15);
      afh_ = lmp::parse_set_afh(payload);
      result.state_changes.push_back(
          afh_.mode == 0 ? "afh disabled" : "afh enabled");
      break;
    }
    case HandlerBehavior::TestActivate:
      if (mode_ == ChipMode::TestModeArmed ||
          mode_ == ChipMode::TestModeRunning) {
        transmit_response(*mutable_conn,
                          lmp::make_accepted(pdu.tid, lmp::kOpcodeTestActivate),
                          result);
        result.state_changes.push_back("test mode activated");
      } else {
        transmit_response(
            *mutable_conn,
            lmp::make_not_accepted(pdu.tid, lmp::kOpcodeTestActivate,
                                   kReasonPduNotAllowed),
            result);
      }
      break;
    case HandlerBehavior::TestControl:
      if (mode_ == ChipMode::TestModeArmed ||
          mode_ == ChipMode::TestModeRunning) {
        Bytes payload = read_view(profile_.lm_cur_cmd + 1, 9);
        test_params_ = lmp::decode_test_control(payload);
        mode_ = ChipMode::TestModeRunning;
        test_elapsed_s_ = 0;
        char note[64];
        snprintf(note, sizeof(note), "test running: hopping=%u tx=%d MHz",
                 test_params_.hopping_mode,
                 lmp::freq_index_to_mhz(test_params_.tx_freq_index));
        result.state_changes.push_back(note);
        transmit_response(*mutable_conn,
                          lmp::make_accepted(pdu.tid, lmp::kOpcodeTestControl),
                          result);
      } else {
        transmit_response(
            *mutable_conn,
            lmp::make_not_accepted(pdu.tid, lmp::kOpcodeTestControl,
                                   kReasonPduNotAllowed),
            result);
      }
      break;
  }
}

DispatchResult Controller::dispatch_lmp(uint16_t conn_handle,
                                        const lmp::LmpPdu& pdu) {
  DispatchResult result;
  ConnectionEntry* conn = connection_by_handle(conn_handle);
  if (conn == nullptr) {
    throw Error(Errc::NoSuchConnection,
                "no connection with handle " + std::to_string(conn_handle));
  }
  if (mode_ == ChipMode::Crashed || mode_ == ChipMode::DownloadMode) {
    return result;
  }
  sim_time_us_ += kCommandTimeQuantumUs;

  Bytes wire = lmp::encode_pdu(pdu);
  Bytes stored(wire.begin(),
               wire.begin() + std::min(wire.size(), kLmCurCmdWindow));
  write_raw(profile_.lm_cur_cmd, stored, false);

  // Synthetic thread context entering the dispatcher.
  const MemoryRegion* stack_region = region_at(profile_.lm_cur_cmd);
  registers_ = RegisterSet{};
  registers_.sp = stack_region->end() - 0xcb4;
  registers_.pc = profile_.dispatcher_address - 0xd2;
  registers_.r[0] = profile_.lm_cur_cmd;
  registers_.r[1] = profile_.scratch_window_start;

  branch_enter(profile_.dispatcher_address, result);
  emit_monitor(LmpMonitorRecord::Direction::Rx, conn_handle, wire);

  if (mac_filter_installed_ && !mac_whitelist_.count(conn->peer_mac)) {
    result.state_changes.push_back("mac filter rejected peer");
    transmit_response(*conn,
                      lmp::make_not_accepted(pdu.tid, pdu.opcode,
                                             kReasonPduNotAllowed),
                      result);
    return result;
  }

  const auto& layout = profile_.handler_layout;
  auto entry_at = [this](uint32_t address) {
    Bytes bytes = read_view(address, HandlerEntry::kWireSize);
    HandlerEntry entry;
    entry.handler_ref = get_u32le(bytes, 0);
    entry.declared_len = bytes[4];
    std::copy(bytes.begin() + 5, bytes.end(), entry.info.begin());
    auto it = profile_.behavior_map.find(entry.handler_ref);
    if (it != profile_.behavior_map.end()) {
      entry.behavior = it->second;
    } else {
      // Not a known function entry point: executing it crashes.
      entry.behavior = HandlerBehavior::NullCrash;
    }
    return entry;
  };

  if (pdu.opcode == lmp::kOpcodeVendorBpcs) {
    HandlerEntry bpcs_root =
        entry_at(layout.standard_entry_address(lmp::kOpcodeVendorBpcs));
    branch_enter(bpcs_root.handler_ref, result);
    // The handler takes its arguments from lm_curCmd, whatever length the
    // frame actually had.
    uint8_t sub = cur_cmd_byte(1);
    if (sub >= kBpcsValidSubcommands && !profile_.vulnerable_bpcs) {
      transmit_response(*conn,
                        lmp::make_not_accepted(pdu.tid,
                                               lmp::kOpcodeVendorBpcs,
                                               kReasonBpcsRejected),
                        result);
      return result;
    }
    HandlerEntry entry = entry_at(layout.bpcs_entry_address(sub));
    branch_enter(entry.handler_ref, result);
    if (mode_ != ChipMode::Crashed) {
      run_handler(entry, *conn, pdu, result);
    }
    return result;
  }

  HandlerEntry entry = entry_at(layout.standard_entry_address(pdu.opcode));
  branch_enter(entry.handler_ref, result);
  if (mode_ != ChipMode::Crashed) {
    run_handler(entry, *conn, pdu, result);
  }
  return result;
}

uint32_t Controller::send_effective_length(const lmp::LmpPdu& pdu,
                                           size_t wire_len) const {
  const auto& layout = profile_.handler_layout;
  uint32_t declared = 0;
  if (pdu.opcode == lmp::kOpcodeVendorBpcs) {
    uint8_t sub = pdu.payload.empty() ? 0 : pdu.payload[0];
    declared =
        read_view(layout.bpcs_entry_address(sub), HandlerEntry::kWireSize)[4];
  } else {
    declared = read_view(layout.standard_entry_address(pdu.opcode),
                         HandlerEntry::kWireSize)[4];
  }
  return std::max<uint32_t>(declared, static_cast<uint32_t>(wire_len));
}

SendOutcome Controller::send_lmp_tx(uint16_t conn_handle, lmp::LmpPdu pdu,
                                    bool fuzz) {
  ConnectionEntry* conn = connection_by_handle(conn_handle);
  if (conn == nullptr) {
    throw Error(Errc::NoSuchConnection,
                "no connection with handle " + std::to_string(conn_handle));
  }
  sim_time_us_ += kCommandTimeQuantumUs;
  if (!fuzz) {
    pdu.tid = conn->role == LinkRole::Master ? 0 : 1;
  }
  Bytes wire = lmp::encode_pdu(pdu);
  // The send-path hook sees every packet, even ones the firmware then
  // refuses to transmit.
  emit_monitor(LmpMonitorRecord::Direction::Tx, conn_handle, wire);

  if (!fuzz) {
    bool known = pdu.opcode == lmp::kOpcodeVendorBpcs ||
                 profile_.handler_layout.standard.count(pdu.opcode) > 0;
    if (!known) return SendOutcome::SilentlyDropped;
    uint32_t declared = send_effective_length(pdu, wire.size());
    if (pdu.opcode != lmp::kOpcodeVendorBpcs) {
      uint8_t expected = static_cast<uint8_t>(
          read_view(profile_.handler_layout.standard_entry_address(pdu.opcode),
                    HandlerEntry::kWireSize)[4]);
      if (expected != 0 && wire.size() != expected) {
        return SendOutcome::SilentlyDropped;
      }
    } else if (declared != wire.size()) {
      return SendOutcome::SilentlyDropped;
    }
    if (declared > kLmpTxBufferLimit || wire.size() > kLmpTxBufferLimit) {
      return SendOutcome::SilentlyDropped;
    }
  }

  if (medium_ != nullptr && conn->state == ConnectionState::Established) {
    Controller* peer = medium_->find(conn->peer_mac, this);
    if (peer != nullptr) peer->receive_lmp(mac_, wire);
  }
  return SendOutcome::Sent;
}

void Controller::receive_lmp(const MacAddress& from, ByteView pdu_bytes) {
  if (mode_ == ChipMode::Crashed || mode_ == ChipMode::DownloadMode) return;
  const ConnectionEntry* conn = connection_by_mac(from);
  if (conn == nullptr || pdu_bytes.empty()) return;
  dispatch_lmp(conn->handle, lmp::decode_pdu(pdu_bytes));
}

std::vector<ConnectionEntry> Controller::tick(double dt_seconds) {
  sim_time_us_ += static_cast<uint64_t>(dt_seconds * 1e6);
  if (mode_ == ChipMode::TestModeRunning) test_elapsed_s_ += dt_seconds;
  std::vector<ConnectionEntry> expired;
  auto it = connections_.begin();
  while (it != connections_.end()) {
    double age_s = (sim_time_us_ - it->created_at_us) / 1e6;
    if (it->state == ConnectionState::Failed &&
        age_s > kFailedConnectionLifetimeS) {
      expired.push_back(*it);
      it = connections_.erase(it);
    } else {
      ++it;
    }
  }
  return expired;
}

void Controller::reset() {
  memory_ = initial_memory_;
  active_slots_.clear();
  hook_slots_.clear();
  mode_ = ChipMode::Normal;
  registers_ = RegisterSet{};
  // Fresh chips hop over all 79 channels.
  afh_ = lmp::AfhConfig{};
  afh_.mode = 1;
  for (int i = 0; i < 9; i++) afh_.channel_map[i] = 0xff;
  afh_.channel_map[9] = 0x7f;
  test_params_ = lmp::TestControlParams{};
  test_elapsed_s_ = 0;
  connections_.clear();
  monitor_installed_ = false;
  mac_filter_installed_ = false;
  mac_whitelist_.clear();
  tracepoints_.clear();
  staged_bytes_ = 0;
}

void Controller::apply_staged_patches() {
  if (staged_bytes_ == 0) return;
  Bytes staged(staged_bytes_);
  for (uint32_t i = 0; i < staged_bytes_; i++) {
    staged[i] = *raw_ptr(profile_.patch_staging_address + i);
  }
  staged_bytes_ = 0;
  try {
    hcd::PatchramBlock block = hcd::decode_patchram_block(staged);
    std::vector<hcd::PatchramEntry> valid;
    for (const auto& entry : block.entries) {
      if (entry.slot < profile_.patchram_slots) valid.push_back(entry);
    }
    apply_patchram(valid);
  } catch (const Error&) {
    // Garbage in the staging area: boot clean.
  }
}

hci::HciEvent Controller::do_launch_ram(uint32_t address,
                                        hci::HciOpcode opcode) {
  if (address == hci::kLaunchApplyPatches) {
    // Reboot into Bluetooth mode, applying whatever was staged first.
    Bytes staged;
    uint32_t staged_len = staged_bytes_;
    for (uint32_t i = 0; i < staged_len; i++) {
      staged.push_back(*raw_ptr(profile_.patch_staging_address + i));
    }
    reset();
    if (staged_len > 0) {
      write_raw(profile_.patch_staging_address, staged, false);
      staged_bytes_ = staged_len;
      apply_staged_patches();
    }
    return hci::build_command_complete(opcode, hci::kStatusSuccess);
  }

  const MemoryRegion* region = region_at(address);
  if (region == nullptr || region->kind == RegionKind::Rom ||
      !profile_.range_mapped(address, 16)) {
    crash(address, registers_.pc);
    return hci::HciEvent{};  // never delivered; caller drops it
  }
  Bytes header = read_view(address, 16);
  if (get_u32le(header, 0) != kStubMagic) {
    crash(address, registers_.pc);
    return hci::HciEvent{};
  }
  uint32_t action = get_u32le(header, 4);
  if (action != kStubActionSendLmp && action != kStubActionSendLmpFuzz) {
    crash(address, registers_.pc);
    return hci::HciEvent{};
  }
  uint16_t handle = static_cast<uint16_t>(get_u32le(header, 8));
  uint32_t payload_len = get_u32le(header, 12);
  if (payload_len == 0 || payload_len > 1024 ||
      !profile_.range_mapped(address + 16, payload_len)) {
    return hci::build_command_complete(opcode, hci::kStatusInvalidParameters);
  }
  Bytes pdu_bytes = read_view(address + 16, payload_len);
  if (connection_by_handle(handle) == nullptr) {
    return hci::build_command_complete(opcode, kStatusNoConnection);
  }
  SendOutcome outcome = send_lmp_tx(handle, lmp::decode_pdu(pdu_bytes),
                                    action == kStubActionSendLmpFuzz);
  uint8_t sent = outcome == SendOutcome::Sent ? 1 : 0;
  return hci::build_command_complete(opcode, hci::kStatusSuccess, {&sent, 1});
}

std::vector<hci::HciEvent> Controller::do_vendor_command(
    const hci::HciCommand& cmd) {
  hci::VendorCommandKind kind;
  if (!hci::parse_vendor_command(cmd, profile_.vendor_opcodes, kind)) {
    return {hci::build_command_complete(cmd.opcode,
                                        hci::kStatusInvalidParameters)};
  }
  if (const auto* read = std::get_if<hci::ReadRam>(&kind)) {
    if (!profile_.range_mapped(read->address, read->length)) {
      crash(read->address, registers_.pc);
      return {};
    }
    Bytes data = read_view(read->address, read->length);
    return {hci::build_command_complete(cmd.opcode, hci::kStatusSuccess,
                                        data)};
  }
  if (const auto* write = std::get_if<hci::WriteRam>(&kind)) {
    if (!profile_.range_mapped(write->address,
                               static_cast<uint32_t>(write->data.size()))) {
      crash(write->address, registers_.pc);
      return {};
    }
    write_raw(write->address, write->data, false);
    if (mode_ == ChipMode::DownloadMode) {
      uint32_t staging = profile_.patch_staging_address;
      uint32_t staging_end = staging + kPatchStagingWindow;
      uint32_t end = write->address + static_cast<uint32_t>(write->data.size());
      if (write->address < staging_end && end > staging) {
        staged_bytes_ =
            std::max(staged_bytes_, std::min(end, staging_end) - staging);
      }
    }
    return {hci::build_command_complete(cmd.opcode, hci::kStatusSuccess)};
  }
  if (const auto* launch = std::get_if<hci::LaunchRam>(&kind)) {
    hci::HciEvent evt = do_launch_ram(launch->address, cmd.opcode);
    if (mode_ == ChipMode::Crashed) return {};
    return {evt};
  }
  // Download_Minidriver
  mode_ = ChipMode::DownloadMode;
  return {hci::build_command_complete(cmd.opcode, hci::kStatusSuccess)};
}

std::vector<hci::HciEvent> Controller::do_create_connection(
    const hci::HciCommand& cmd) {
  if (cmd.params.size() != 6) {
    return {hci::build_command_complete(cmd.opcode,
                                        hci::kStatusInvalidParameters)};
  }
  MacAddress mac;
  std::copy(cmd.params.begin(), cmd.params.end(), mac.bytes.begin());

  hci::HciEvent status;
  status.event_code = hci::kEventCommandStatus;
  status.params.push_back(hci::kStatusSuccess);
  status.params.push_back(1);
  put_u16le(status.params, cmd.opcode.value());

  // Reuse a live entry to the same peer instead of stacking duplicates.
  const ConnectionEntry* existing = connection_by_mac(mac);
  if (existing != nullptr && existing->state != ConnectionState::Failed) {
    hci::HciEvent complete;
    complete.event_code = hci::kEventConnectionComplete;
    complete.params.push_back(hci::kStatusSuccess);
    put_u16le(complete.params, existing->handle);
    complete.params.insert(complete.params.end(), mac.bytes.begin(),
                           mac.bytes.end());
    complete.params.push_back(0x01);  // ACL
    complete.params.push_back(0x00);  // no encryption
    return {status, complete};
  }

  ConnectionEntry entry;
  entry.peer_mac = mac;
  entry.handle = next_handle_++;
  entry.created_at_us = sim_time_us_;
  entry.role = LinkRole::Master;
  entry.state = ConnectionState::Initiating;

  Controller* peer = medium_ ? medium_->find(mac, this) : nullptr;
  bool peer_alive = peer != nullptr && peer->mode_ != ChipMode::Crashed &&
                    peer->mode_ != ChipMode::DownloadMode;
  if (peer_alive) {
    entry.state = ConnectionState::Established;
    ConnectionEntry theirs;
    theirs.peer_mac = mac_;
    theirs.handle = peer->next_handle_++;
    theirs.created_at_us = peer->sim_time_us_;
    theirs.role = LinkRole::Slave;
    theirs.state = ConnectionState::Established;
    peer->connections_.push_back(theirs);
  } else {
    entry.state = ConnectionState::Failed;
  }
  connections_.push_back(entry);

  hci::HciEvent complete;
  complete.event_code = hci::kEventConnectionComplete;
  complete.params.push_back(peer_alive ? hci::kStatusSuccess
                                       : hci::kStatusPageTimeout);
  put_u16le(complete.params, entry.handle);
  complete.params.insert(complete.params.end(), mac.bytes.begin(),
                         mac.bytes.end());
  complete.params.push_back(0x01);
  complete.params.push_back(0x00);
  return {status, complete};
}

std::vector<hci::HciEvent> Controller::do_sim_control(
    const hci::HciCommand& cmd) {
  auto complete = [&](uint8_t code, ByteView payload = {}) {
    return std::vector<hci::HciEvent>{
        hci::build_command_complete(cmd.opcode, code, payload)};
  };
  const Bytes& p = cmd.params;
  switch (cmd.opcode.ocf) {
    case kOcfInstallMonitor: {
      if (p.size() != 2) return complete(hci::kStatusInvalidParameters);
      if (p[0] >= profile_.patchram_slots || p[1] >= profile_.patchram_slots) {
        return complete(hci::kStatusSlotOutOfRange);
      }
      hook_slots_.insert(p[0]);
      hook_slots_.insert(p[1]);
      monitor_installed_ = true;
      return complete(hci::kStatusSuccess);
    }
    case kOcfRemoveMonitor:
      monitor_installed_ = false;
      return complete(hci::kStatusSuccess);
    case kOcfInstallMacFilter: {
      if (p.size() < 2 || (p.size() - 2) % 6 != 0) {
        return complete(hci::kStatusInvalidParameters);
      }
      if (p[0] >= profile_.patchram_slots) {
        return complete(hci::kStatusSlotOutOfRange);
      }
      hook_slots_.insert(p[0]);
      mac_whitelist_.clear();
      size_t count = p[1];
      if (p.size() != 2 + count * 6) {
        return complete(hci::kStatusInvalidParameters);
      }
      for (size_t i = 0; i < count; i++) {
        MacAddress mac;
        std::copy(p.begin() + 2 + i * 6, p.begin() + 2 + (i + 1) * 6,
                  mac.bytes.begin());
        mac_whitelist_.insert(mac);
      }
      mac_filter_installed_ = true;
      return complete(hci::kStatusSuccess);
    }
    case kOcfClearMacFilter:
      mac_filter_installed_ = false;
      mac_whitelist_.clear();
      return complete(hci::kStatusSuccess);
    case kOcfTracepointAdd: {
      if (p.size() != 5) return complete(hci::kStatusInvalidParameters);
      if (!profile_.tracepoints_supported) {
        return complete(hci::kStatusCommandDisallowed);
      }
      uint32_t address = get_u32le(p, 0);
      if (region_at(address) == nullptr) {
        return complete(hci::kStatusInvalidParameters);
      }
      if (tracepoints_.count(address)) {
        return complete(hci::kStatusAlreadyArmed);
      }
      if (p[4] >= profile_.patchram_slots) {
        return complete(hci::kStatusSlotOutOfRange);
      }
      tracepoints_.insert(address);
      hook_slots_.insert(p[4]);
      return complete(hci::kStatusSuccess);
    }
    case kOcfTracepointRemove: {
      if (p.size() != 4) return complete(hci::kStatusInvalidParameters);
      uint32_t address = get_u32le(p, 0);
      if (!tracepoints_.erase(address)) {
        return complete(hci::kStatusInvalidParameters);
      }
      return complete(hci::kStatusSuccess);
    }
    case kOcfGetConnections: {
      Bytes payload;
      size_t count = std::min<size_t>(connections_.size(), 8);
      payload.push_back(static_cast<uint8_t>(count));
      for (size_t i = 0; i < count; i++) {
        const auto& c = connections_[i];
        payload.insert(payload.end(), c.peer_mac.bytes.begin(),
                       c.peer_mac.bytes.end());
        put_u16le(payload, c.handle);
        payload.push_back(static_cast<uint8_t>(c.state));
        payload.push_back(c.role == LinkRole::Master ? 0 : 1);
        put_u32le(payload, static_cast<uint32_t>(c.created_at_us / 1000));
        payload.push_back(c.has_peer_version ? 1 : 0);
        payload.push_back(c.peer_version);
        put_u16le(payload, c.peer_company);
        put_u16le(payload, c.peer_subversion);
        put_u32le(payload, c.rejection_count);
        payload.push_back(c.last_rejected_opcode);
        payload.push_back(c.last_rejection_reason);
      }
      return complete(hci::kStatusSuccess, payload);
    }
    case kOcfApplyPatchram: {
      if (p.empty() || p.size() != 1 + p[0] * 9u) {
        return complete(hci::kStatusInvalidParameters);
      }
      std::vector<hcd::PatchramEntry> entries;
      for (size_t i = 0; i < p[0]; i++) {
        hcd::PatchramEntry entry;
        size_t base = 1 + i * 9;
        entry.slot = p[base];
        entry.address = get_u32le(p, base + 1);
        entry.value = get_u32le(p, base + 5);
        entries.push_back(entry);
      }
      try {
        apply_patchram(entries);
      } catch (const Error& e) {
        if (e.code() == Errc::SlotOutOfRange) {
          return complete(hci::kStatusSlotOutOfRange);
        }
        throw;
      }
      return complete(hci::kStatusSuccess);
    }
    case kOcfAdvanceTime: {
      if (p.size() != 8) return complete(hci::kStatusInvalidParameters);
      uint64_t dt_us = static_cast<uint64_t>(get_u32le(p, 0)) |
                       (static_cast<uint64_t>(get_u32le(p, 4)) << 32);
      double dt_s = static_cast<double>(dt_us) / 1e6;
      size_t expired;
      if (medium_ != nullptr) {
        // The whole radio world advances together.
        size_t before = connections_.size();
        medium_->tick(dt_s);
        expired = before - connections_.size();
      } else {
        expired = tick(dt_s).size();
      }
      uint8_t count = static_cast<uint8_t>(std::min<size_t>(expired, 255));
      return complete(hci::kStatusSuccess, {&count, 1});
    }
    default:
      return complete(hci::kStatusUnknownCommand);
  }
}

std::vector<hci::HciEvent> Controller::handle_hci_command(
    const hci::HciCommand& cmd) {
  sim_time_us_ += kCommandTimeQuantumUs;

  if (mode_ == ChipMode::Crashed) {
    if (cmd.opcode.value() == kOpcodeReset) {
      reset();
      return {hci::build_command_complete(cmd.opcode, hci::kStatusSuccess)};
    }
    return {};  // dead until reset
  }

  if (mode_ == ChipMode::DownloadMode) {
    hci::VendorCommandKind kind;
    bool is_ram_command =
        hci::parse_vendor_command(cmd, profile_.vendor_opcodes, kind) &&
        !std::holds_alternative<hci::DownloadMinidriver>(kind);
    if (!is_ram_command) {
      return {hci::build_command_complete(cmd.opcode,
                                          hci::kStatusCommandDisallowed)};
    }
    return do_vendor_command(cmd);
  }

  if (cmd.opcode.value() == kOpcodeReset) {
    reset();
    return {hci::build_command_complete(cmd.opcode, hci::kStatusSuccess)};
  }
  if (cmd.opcode.value() == kOpcodeCreateConnection) {
    return do_create_connection(cmd);
  }
  if (cmd.opcode.ogf == hci::HciOpcode::kVendorOgf) {
    if (cmd.opcode.ocf >= kOcfInstallMonitor &&
        cmd.opcode.ocf <= kOcfAdvanceTime) {
      return do_sim_control(cmd);
    }
    hci::VendorCommandKind kind;
    if (hci::parse_vendor_command(cmd, profile_.vendor_opcodes, kind)) {
      return do_vendor_command(cmd);
    }
  }
  return {hci::build_command_complete(cmd.opcode, hci::kStatusUnknownCommand)};
}

std::unique_ptr<Controller> Controller::from_frozen(
    const ControllerProfile& profile, const FrozenState& state) {
  auto controller = std::make_unique<Controller>(profile);
  if (state.memory.size() != controller->memory_.size()) {
    throw Error(Errc::RangeMismatch,
                "frozen state does not match the profile's memory map");
  }
  for (size_t i = 0; i < state.memory.size(); i++) {
    if (state.memory[i].size() != controller->memory_[i].size()) {
      throw Error(Errc::RangeMismatch,
                  "frozen region size differs from the profile");
    }
    controller->memory_[i] = state.memory[i];
  }
  controller->registers_ = state.registers;
  controller->sim_time_us_ = state.sim_time_us;
  return controller;
}

uint64_t Controller::state_hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& blob : memory_) {
    h = fnv1a(h, blob);
  }
  Bytes tail;
  tail.push_back(static_cast<uint8_t>(mode_));
  for (uint16_t slot : active_slots_) put_u16le(tail, slot);
  for (const auto& c : connections_) {
    tail.insert(tail.end(), c.peer_mac.bytes.begin(), c.peer_mac.bytes.end());
    put_u16le(tail, c.handle);
    tail.push_back(static_cast<uint8_t>(c.state));
  }
  tail.push_back(afh_.mode);
  tail.push_back(test_params_.tx_freq_index);
  return fnv1a(h, tail);
}

void Medium::attach(Controller& controller) {
  controllers_.push_back(&controller);
  controller.attach_medium(this);
}

Controller* Medium::find(const MacAddress& mac, const Controller* except) {
  for (Controller* c : controllers_) {
    if (c != except && c->mac() == mac) return c;
  }
  return nullptr;
}

void Medium::tick(double dt_seconds) {
  for (Controller* c : controllers_) {
    c->tick(dt_seconds);
  }
}

namespace simctl {

namespace {
hci::HciCommand make(uint16_t ocf, Bytes params = {}) {
  return hci::HciCommand{{hci::HciOpcode::kVendorOgf, ocf}, std::move(params)};
}
}  // namespace

hci::HciCommand make_install_monitor(uint8_t dispatcher_slot,
                                     uint8_t send_path_slot) {
  return make(kOcfInstallMonitor, {dispatcher_slot, send_path_slot});
}

hci::HciCommand make_remove_monitor() { return make(kOcfRemoveMonitor); }

hci::HciCommand make_install_mac_filter(uint8_t slot,
                                        const std::vector<MacAddress>& macs) {
  Bytes params = {slot, static_cast<uint8_t>(macs.size())};
  for (const auto& mac : macs) {
    params.insert(params.end(), mac.bytes.begin(), mac.bytes.end());
  }
  return make(kOcfInstallMacFilter, std::move(params));
}

hci::HciCommand make_clear_mac_filter() { return make(kOcfClearMacFilter); }

hci::HciCommand make_tracepoint_add(uint32_t address, uint8_t slot) {
  Bytes params;
  put_u32le(params, address);
  params.push_back(slot);
  return make(kOcfTracepointAdd, std::move(params));
}

hci::HciCommand make_tracepoint_remove(uint32_t address) {
  Bytes params;
  put_u32le(params, address);
  return make(kOcfTracepointRemove, std::move(params));
}

hci::HciCommand make_get_connections() { return make(kOcfGetConnections); }

hci::HciCommand make_apply_patchram(
    const std::vector<hcd::PatchramEntry>& entries) {
  Bytes params;
  params.push_back(static_cast<uint8_t>(entries.size()));
  for (const auto& entry : entries) {
    params.push_back(entry.slot);
    put_u32le(params, entry.address);
    put_u32le(params, entry.value);
  }
  return make(kOcfApplyPatchram, std::move(params));
}

hci::HciCommand make_advance_time(uint64_t dt_us) {
  Bytes params;
  put_u32le(params, static_cast<uint32_t>(dt_us & 0xffffffffu));
  put_u32le(params, static_cast<uint32_t>(dt_us >> 32));
  return make(kOcfAdvanceTime, std::move(params));
}

hci::HciCommand make_create_connection(const MacAddress& mac) {
  hci::HciCommand cmd;
  cmd.opcode = hci::HciOpcode::from_value(kOpcodeCreateConnection);
  cmd.params.assign(mac.bytes.begin(), mac.bytes.end());
  return cmd;
}

hci::HciCommand make_reset() {
  return hci::HciCommand{hci::HciOpcode::from_value(kOpcodeReset), {}};
}

std::vector<ConnectionEntry> parse_connections_payload(ByteView payload) {
  if (payload.empty()) {
    throw Error(Errc::Truncated, "empty connection list payload");
  }
  size_t count = payload[0];
  constexpr size_t kEntrySize = 26;
  if (payload.size() < 1 + count * kEntrySize) {
    throw Error(Errc::Truncated, "connection list payload cut short");
  }
  std::vector<ConnectionEntry> out;
  for (size_t i = 0; i < count; i++) {
    size_t base = 1 + i * kEntrySize;
    ConnectionEntry c;
    std::copy(payload.begin() + base, payload.begin() + base + 6,
              c.peer_mac.bytes.begin());
    c.handle = get_u16le(payload, base + 6);
    c.state = static_cast<ConnectionState>(payload[base + 8]);
    c.role = payload[base + 9] == 0 ? LinkRole::Master : LinkRole::Slave;
    c.created_at_us = static_cast<uint64_t>(get_u32le(payload, base + 10)) * 1000;
    c.has_peer_version = payload[base + 14] != 0;
    c.peer_version = payload[base + 15];
    c.peer_company = get_u16le(payload, base + 16);
    c.peer_subversion = get_u16le(payload, base + 18);
    c.rejection_count = get_u32le(payload, base + 20);
    c.last_rejected_opcode = payload[base + 24];
    c.last_rejection_reason = payload[base + 25];
    out.push_back(c);
  }
  return out;
}

}  // namespace simctl

}  // namespace btlab::sim
