#include "btlab/session.hpp"

#include <algorithm>
#include <cstring>

#include "btlab/errors.hpp"

namespace btlab::core {

namespace {
constexpr uint32_t kWriteChunk = 251;  // 255 params minus the address

// Session whose sinks are being invoked on this thread, if any.
thread_local const void* t_delivering_session = nullptr;
}  // namespace

std::optional<sim::RegisterSet> parse_crash_dump(const hci::HciEvent& evt) {
  if (evt.event_code != hci::kEventVendor || evt.params.size() < 1 + 17 * 4 ||
      evt.params[0] != sim::kVendorSubCrashDump) {
    return std::nullopt;
  }
  sim::RegisterSet regs;
  ByteView p(evt.params.data() + 1, evt.params.size() - 1);
  regs.pc = get_u32le(p, 0);
  regs.lr = get_u32le(p, 4);
  regs.sp = get_u32le(p, 8);
  regs.cpsr = get_u32le(p, 12);
  for (size_t i = 0; i < 13; i++) {
    regs.r[i] = get_u32le(p, 16 + i * 4);
  }
  return regs;
}

std::optional<TracepointDump> parse_tracepoint_dump(const hci::HciEvent& evt) {
  constexpr size_t kMinSize = 1 + 4 + 17 * 4 + 64 + 64;
  if (evt.event_code != hci::kEventVendor || evt.params.size() < kMinSize ||
      evt.params[0] != sim::kVendorSubTracepoint) {
    return std::nullopt;
  }
  TracepointDump dump;
  ByteView p(evt.params.data() + 1, evt.params.size() - 1);
  dump.address = get_u32le(p, 0);
  dump.registers.pc = get_u32le(p, 4);
  dump.registers.lr = get_u32le(p, 8);
  dump.registers.sp = get_u32le(p, 12);
  dump.registers.cpsr = get_u32le(p, 16);
  for (size_t i = 0; i < 13; i++) {
    dump.registers.r[i] = get_u32le(p, 20 + i * 4);
  }
  dump.stack.assign(p.begin() + 72, p.begin() + 136);
  dump.heap.assign(p.begin() + 136, p.begin() + 200);
  return dump;
}

std::string format_register_dump(const sim::RegisterSet& regs) {
  char buf[512];
  int n = snprintf(buf, sizeof(buf),
                   "    pc:  0x%08x\tlr:   0x%08x\n"
                   "    sp:  0x%08x\tcpsr: 0x%08x\n",
                   regs.pc, regs.lr, regs.sp, regs.cpsr);
  std::string out(buf, n);
  for (size_t i = 0; i < 13; i += 2) {
    if (i + 1 < 13) {
      snprintf(buf, sizeof(buf), "    r%zu:%s 0x%08x\tr%zu:%s  0x%08x\n", i,
               i < 10 ? " " : "", regs.r[i], i + 1, i + 1 < 10 ? " " : "",
               regs.r[i + 1]);
    } else {
      snprintf(buf, sizeof(buf), "    r%zu:%s 0x%08x\n", i, i < 10 ? " " : "",
               regs.r[i]);
    }
    out += buf;
  }
  return out;
}

// Runs sink delivery on scope exit, after the command-path lock is gone.
// Declared before the lock guard so it destructs after it.
class Session::DeliveryGuard {
 public:
  explicit DeliveryGuard(Session& session) : session_(session) {}
  ~DeliveryGuard() { session_.deliver_pending(); }
  DeliveryGuard(const DeliveryGuard&) = delete;

 private:
  Session& session_;
};

Session::Session(sim::ControllerProfile profile,
                 std::unique_ptr<Transport> transport)
    : profile_(std::move(profile)), transport_(std::move(transport)) {
  slot_used_.assign(profile_.patchram_slots, false);
}

Session::~Session() = default;

void Session::guard_reentrancy() const {
  if (t_delivering_session == this) {
    throw Error(Errc::ReentrantCall,
                "session commands may not be issued from a sink callback");
  }
}

uint64_t Session::now_us() {
  guard_reentrancy();
  std::lock_guard lock(mutex_);
  return transport_->now_us();
}

uint8_t Session::allocate_slot() {
  for (size_t i = 0; i < slot_used_.size(); i++) {
    if (!slot_used_[i]) {
      slot_used_[i] = true;
      return static_cast<uint8_t>(i);
    }
  }
  throw Error(Errc::NoFreeSlots,
              "all " + std::to_string(slot_used_.size()) +
                  " patchram slots are in use");
}

void Session::release_slot(uint8_t slot) {
  if (slot < slot_used_.size()) slot_used_[slot] = false;
}

void Session::release_all_slots() {
  std::fill(slot_used_.begin(), slot_used_.end(), false);
  monitor_slots_.reset();
  filter_slot_.reset();
  tracepoint_slots_.clear();
}

size_t Session::slots_used() const {
  return static_cast<size_t>(
      std::count(slot_used_.begin(), slot_used_.end(), true));
}

void Session::log_hci(HciDirection direction, ByteView packet, uint8_t h4_type,
                      uint64_t ts) {
  if (hci_sinks_.empty()) return;
  HciTrafficRecord record;
  record.direction = direction;
  record.h4_bytes.push_back(h4_type);
  record.h4_bytes.insert(record.h4_bytes.end(), packet.begin(), packet.end());
  record.timestamp_us = ts;
  SinkWork work;
  work.hci = std::move(record);
  pending_work_.push_back(std::move(work));
}

void Session::process_event(const hci::HciEvent& evt, uint64_t ts) {
  log_hci(HciDirection::ControllerToHost, hci::encode_event(evt),
          snoop::kH4Event, ts);
  if (auto crash = parse_crash_dump(evt)) {
    crashed_ = true;
    last_crash_ = *crash;
    return;
  }
  if (auto dump = parse_tracepoint_dump(evt)) {
    // The tracepoint disarmed itself on the chip; return its slot.
    auto it = tracepoint_slots_.find(dump->address);
    if (it != tracepoint_slots_.end()) {
      release_slot(it->second);
      tracepoint_slots_.erase(it);
    }
    SinkWork work;
    work.tracepoint = {dump->address, dump->registers};
    pending_work_.push_back(std::move(work));
    return;
  }
  if (evt.event_code == hci::kEventVendor && !evt.params.empty() &&
      evt.params[0] == sim::kVendorSubLmpMonitor) {
    SinkWork work;
    work.lmp = {sim::decode_monitor_record(
                    ByteView(evt.params.data() + 1, evt.params.size() - 1)),
                ts};
    pending_work_.push_back(std::move(work));
    return;
  }
}

std::vector<hci::HciEvent> Session::issue_locked(const hci::HciCommand& cmd) {
  if (!transport_->echoes_traffic()) {
    log_hci(HciDirection::HostToController, hci::encode_command(cmd),
            snoop::kH4Command, transport_->now_us());
  }
  std::vector<hci::HciEvent> events = transport_->issue(cmd);
  std::vector<hci::HciEvent> pending = transport_->drain_events();
  uint64_t ts = transport_->now_us();
  for (const auto& evt : events) process_event(evt, ts);
  for (const auto& evt : pending) process_event(evt, ts);
  return events;
}

hci::CommandCompleteView Session::issue_expect_complete(
    const hci::HciCommand& cmd) {
  auto events = issue_locked(cmd);
  for (const auto& evt : events) {
    if (evt.event_code == hci::kEventCommandComplete) {
      auto view = hci::parse_command_complete(evt);
      if (view.opcode == cmd.opcode) return view;
    }
  }
  if (crashed_) {
    throw Error(Errc::ChipCrashed,
                "controller crashed while handling the command");
  }
  throw Error(Errc::TransportLost, "no Command Complete for the command");
}

void Session::deliver_pending() {
  std::vector<SinkWork> work;
  std::vector<HciSink> hci_sinks;
  std::vector<LmpSink> lmp_sinks;
  TracepointSink tp_sink;
  {
    std::lock_guard lock(mutex_);
    if (pending_work_.empty()) return;
    work.swap(pending_work_);
    for (auto& [id, sink] : hci_sinks_) hci_sinks.push_back(sink);
    lmp_sinks = lmp_sinks_;
    tp_sink = tracepoint_sink_;
  }
  const void* previous = t_delivering_session;
  t_delivering_session = this;
  for (const auto& item : work) {
    if (item.hci) {
      for (auto& sink : hci_sinks) sink(*item.hci);
    }
    if (item.lmp) {
      for (auto& sink : lmp_sinks) sink(item.lmp->first, item.lmp->second);
    }
    if (item.tracepoint && tp_sink) {
      tp_sink(item.tracepoint->first, item.tracepoint->second);
    }
  }
  t_delivering_session = previous;
}

std::vector<hci::HciEvent> Session::send_raw(const hci::HciCommand& cmd) {
  guard_reentrancy();
  DeliveryGuard delivery(*this);
  std::lock_guard lock(mutex_);
  return issue_locked(cmd);
}

Bytes Session::read_chunked(uint32_t address, uint32_t length) {
  Bytes out;
  uint32_t cursor = address;
  uint32_t remaining = length;
  while (remaining > 0) {
    uint8_t chunk =
        static_cast<uint8_t>(std::min<uint32_t>(remaining, hci::kMaxReadChunk));
    auto cmd = hci::build_vendor_command(hci::ReadRam{cursor, chunk},
                                         profile_.vendor_opcodes);
    auto view = issue_expect_complete(cmd);
    if (view.status != hci::kStatusSuccess) {
      throw Error(Errc::TransportLost, "Read_RAM failed with status " +
                                           std::to_string(view.status));
    }
    out.insert(out.end(), view.payload.begin(), view.payload.end());
    cursor += chunk;
    remaining -= chunk;
  }
  return out;
}

Bytes Session::read_memory(uint32_t address, uint32_t length, bool force) {
  guard_reentrancy();
  if (length == 0) {
    throw Error(Errc::BadLength, "read length must be positive");
  }
  DeliveryGuard delivery(*this);
  std::lock_guard lock(mutex_);
  if (crashed_) {
    throw Error(Errc::ChipCrashed, "controller is crashed; reset first");
  }
  if (!force && !profile_.range_mapped(address, length)) {
    char msg[80];
    snprintf(msg, sizeof(msg),
             "0x%08x+%u is outside the memory map (use force to crash anyway)",
             address, length);
    throw Error(Errc::OutOfMap, msg);
  }
  return read_chunked(address, length);
}

WriteResult Session::write_memory(uint32_t address, ByteView data,
                                  bool verify) {
  guard_reentrancy();
  DeliveryGuard delivery(*this);
  std::lock_guard lock(mutex_);
  if (crashed_) {
    throw Error(Errc::ChipCrashed, "controller is crashed; reset first");
  }
  uint32_t cursor = address;
  size_t offset = 0;
  while (offset < data.size()) {
    size_t n = std::min<size_t>(kWriteChunk, data.size() - offset);
    hci::WriteRam write;
    write.address = cursor;
    write.data.assign(data.begin() + offset, data.begin() + offset + n);
    auto view = issue_expect_complete(
        hci::build_vendor_command(write, profile_.vendor_opcodes));
    if (view.status != hci::kStatusSuccess) {
      throw Error(Errc::TransportLost, "Write_RAM failed with status " +
                                           std::to_string(view.status));
    }
    cursor += static_cast<uint32_t>(n);
    offset += n;
  }
  if (verify && !data.empty()) {
    Bytes readback = read_chunked(address, static_cast<uint32_t>(data.size()));
    if (!std::equal(data.begin(), data.end(), readback.begin())) {
      const sim::MemoryRegion* region = profile_.region_at(address);
      if (region != nullptr && region->kind == sim::RegionKind::Rom) {
        return WriteResult::RomNoEffect;
      }
      throw Error(Errc::VerifyMismatch,
                  "read-back does not match the written data");
    }
  }
  return WriteResult::Ok;
}

std::vector<uint32_t> Session::search_memory(ByteView pattern,
                                             size_t max_hits) {
  guard_reentrancy();
  std::vector<uint32_t> hits;
  if (pattern.empty()) return hits;
  DeliveryGuard delivery(*this);
  std::lock_guard lock(mutex_);
  constexpr uint32_t kScanChunk = 4096;
  for (const auto& region : profile_.memory_regions) {
    uint32_t offset = 0;
    Bytes window;
    uint32_t window_start = region.start;
    while (offset < region.size && hits.size() < max_hits) {
      uint32_t n = std::min<uint32_t>(kScanChunk, region.size - offset);
      Bytes chunk = read_chunked(region.start + offset, n);
      window_start = region.start + offset - static_cast<uint32_t>(window.size());
      window.insert(window.end(), chunk.begin(), chunk.end());
      auto it = window.begin();
      while (hits.size() < max_hits) {
        it = std::search(it, window.end(), pattern.begin(), pattern.end());
        if (it == window.end()) break;
        hits.push_back(window_start +
                       static_cast<uint32_t>(it - window.begin()));
        ++it;
      }
      // Keep a pattern-sized tail so matches across chunk borders are seen.
      if (window.size() >= pattern.size()) {
        uint32_t consumed =
            static_cast<uint32_t>(window.size() - (pattern.size() - 1));
        window_start += consumed;
        window.erase(window.begin(), window.begin() + consumed);
      }
      offset += n;
    }
    if (hits.size() >= max_hits) break;
  }
  return hits;
}

void Session::launch(uint32_t address) {
  guard_reentrancy();
  DeliveryGuard delivery(*this);
  std::lock_guard lock(mutex_);
  auto events = issue_locked(hci::build_vendor_command(
      hci::LaunchRam{address}, profile_.vendor_opcodes));
  if (events.empty() && crashed_) {
    throw Error(Errc::ChipCrashed, "Launch_RAM crashed the controller");
  }
  if (address == hci::kLaunchApplyPatches) {
    // The chip rebooted: slots, hooks and crash state start over.
    release_all_slots();
    monitor_installed_ = false;
    lmp_sinks_.clear();
    crashed_ = false;
    last_crash_.reset();
  }
}

uint8_t Session::patch_rom(uint32_t address, uint32_t word) {
  guard_reentrancy();
  DeliveryGuard delivery(*this);
  std::lock_guard lock(mutex_);
  const sim::MemoryRegion* region = profile_.region_at(address);
  if (region == nullptr || region->kind != sim::RegionKind::Rom) {
    throw Error(Errc::NotRom, "patch target must be a ROM address");
  }
  if (address % 4 != 0) {
    throw Error(Errc::UnalignedAddress, "patch target must be word-aligned");
  }
  uint8_t slot = allocate_slot();
  hcd::PatchramEntry entry;
  entry.slot = slot;
  entry.address = address;
  entry.value = word;
  try {
    auto view =
        issue_expect_complete(sim::simctl::make_apply_patchram({entry}));
    if (view.status == hci::kStatusSlotOutOfRange) {
      throw Error(Errc::SlotOutOfRange, "controller rejected the slot");
    }
    if (view.status != hci::kStatusSuccess) {
      throw Error(Errc::TransportLost, "patch apply failed");
    }
  } catch (...) {
    release_slot(slot);
    throw;
  }
  return slot;
}

Session::HcdLoadResult Session::load_hcd(const hcd::HcdFile& file) {
  guard_reentrancy();
  DeliveryGuard delivery(*this);
  std::lock_guard lock(mutex_);
  HcdLoadResult result;
  issue_locked(hci::build_vendor_command(hci::DownloadMinidriver{},
                                         profile_.vendor_opcodes));
  for (const auto& record : file.records) {
    issue_locked(record);
    result.records++;
  }
  result.terminated = file.terminated;
  if (file.terminated) {
    // The terminating Launch_RAM rebooted the chip; session-side patch
    // bookkeeping starts over.
    release_all_slots();
    monitor_installed_ = false;
    crashed_ = false;
  }
  return result;
}

void Session::install_lmp_monitor(LmpSink sink) {
  guard_reentrancy();
  DeliveryGuard delivery(*this);
  std::lock_guard lock(mutex_);
  if (!monitor_installed_) {
    uint8_t dispatcher_slot = allocate_slot();
    uint8_t send_slot;
    try {
      send_slot = allocate_slot();
    } catch (...) {
      release_slot(dispatcher_slot);
      throw;
    }
    try {
      auto view = issue_expect_complete(sim::simctl::make_install_monitor(
          dispatcher_slot, send_slot));
      if (view.status != hci::kStatusSuccess) {
        throw Error(Errc::TransportLost, "monitor install failed");
      }
    } catch (...) {
      release_slot(dispatcher_slot);
      release_slot(send_slot);
      throw;
    }
    monitor_slots_ = {dispatcher_slot, send_slot};
    monitor_installed_ = true;
  }
  lmp_sinks_.push_back(std::move(sink));
}

void Session::remove_lmp_monitor() {
  guard_reentrancy();
  DeliveryGuard delivery(*this);
  std::lock_guard lock(mutex_);
  if (monitor_installed_) {
    issue_expect_complete(sim::simctl::make_remove_monitor());
    if (monitor_slots_) {
      release_slot(monitor_slots_->first);
      release_slot(monitor_slots_->second);
      monitor_slots_.reset();
    }
    monitor_installed_ = false;
  }
  lmp_sinks_.clear();
}

size_t Session::add_hci_sink(HciSink sink) {
  std::lock_guard lock(mutex_);
  size_t id = next_hci_sink_id_++;
  hci_sinks_[id] = std::move(sink);
  return id;
}

void Session::remove_hci_sink(size_t id) {
  std::lock_guard lock(mutex_);
  hci_sinks_.erase(id);
}

void Session::set_tracepoint_sink(TracepointSink sink) {
  std::lock_guard lock(mutex_);
  tracepoint_sink_ = std::move(sink);
}

sim::SendOutcome Session::send_lmp(uint16_t conn_handle,
                                   const lmp::LmpPdu& pdu, bool fuzz) {
  guard_reentrancy();
  DeliveryGuard delivery(*this);
  std::lock_guard lock(mutex_);
  if (crashed_) {
    throw Error(Errc::ChipCrashed, "controller is crashed; reset first");
  }
  Bytes wire = lmp::encode_pdu(pdu);
  Bytes stub;
  put_u32le(stub, sim::kStubMagic);
  put_u32le(stub,
            fuzz ? sim::kStubActionSendLmpFuzz : sim::kStubActionSendLmp);
  put_u32le(stub, conn_handle);
  put_u32le(stub, static_cast<uint32_t>(wire.size()));
  stub.insert(stub.end(), wire.begin(), wire.end());
  if (stub.size() > profile_.scratch_window_size) {
    throw Error(Errc::OversizedParams,
                "injection stub exceeds the scratch window");
  }
  uint32_t stub_address = profile_.scratch_window_start;
  uint32_t cursor = stub_address;
  size_t offset = 0;
  while (offset < stub.size()) {
    size_t n = std::min<size_t>(kWriteChunk, stub.size() - offset);
    hci::WriteRam write;
    write.address = cursor;
    write.data.assign(stub.begin() + offset, stub.begin() + offset + n);
    issue_expect_complete(
        hci::build_vendor_command(write, profile_.vendor_opcodes));
    cursor += static_cast<uint32_t>(n);
    offset += n;
  }
  auto view = issue_expect_complete(hci::build_vendor_command(
      hci::LaunchRam{stub_address}, profile_.vendor_opcodes));
  if (view.status == 0x02) {
    throw Error(Errc::NoSuchConnection,
                "no connection with handle " + std::to_string(conn_handle));
  }
  if (view.status != hci::kStatusSuccess || view.payload.empty()) {
    throw Error(Errc::TransportLost, "injection stub launch failed");
  }
  return view.payload[0] != 0 ? sim::SendOutcome::Sent
                              : sim::SendOutcome::SilentlyDropped;
}

sim::ConnectionEntry Session::connect(const MacAddress& mac) {
  guard_reentrancy();
  DeliveryGuard delivery(*this);
  std::lock_guard lock(mutex_);
  auto events = issue_locked(sim::simctl::make_create_connection(mac));
  for (const auto& evt : events) {
    if (evt.event_code == hci::kEventConnectionComplete &&
        evt.params.size() >= 11) {
      sim::ConnectionEntry entry;
      entry.peer_mac = mac;
      entry.handle = get_u16le(evt.params, 1);
      entry.state = evt.params[0] == hci::kStatusSuccess
                        ? sim::ConnectionState::Established
                        : sim::ConnectionState::Failed;
      entry.role = sim::LinkRole::Master;
      return entry;
    }
  }
  throw Error(Errc::TransportLost, "no Connection Complete event");
}

std::vector<sim::ConnectionEntry> Session::connections() {
  guard_reentrancy();
  DeliveryGuard delivery(*this);
  std::lock_guard lock(mutex_);
  auto view = issue_expect_complete(sim::simctl::make_get_connections());
  return sim::simctl::parse_connections_payload(view.payload);
}

void Session::add_tracepoint(uint32_t address) {
  guard_reentrancy();
  DeliveryGuard delivery(*this);
  std::lock_guard lock(mutex_);
  if (tracepoint_slots_.count(address)) {
    throw Error(Errc::AlreadyArmed, "tracepoint already armed there");
  }
  uint8_t slot = allocate_slot();
  hci::CommandCompleteView view;
  try {
    view = issue_expect_complete(
        sim::simctl::make_tracepoint_add(address, slot));
  } catch (...) {
    release_slot(slot);
    throw;
  }
  if (view.status != hci::kStatusSuccess) {
    release_slot(slot);
    switch (view.status) {
      case hci::kStatusAlreadyArmed:
        throw Error(Errc::AlreadyArmed, "tracepoint already armed there");
      case hci::kStatusCommandDisallowed:
        throw Error(Errc::CommandDisallowedInMode,
                    "profile does not support tracepoints");
      default:
        throw Error(Errc::OutOfMap,
                    "tracepoint target is outside mapped memory");
    }
  }
  tracepoint_slots_[address] = slot;
}

void Session::remove_tracepoint(uint32_t address) {
  guard_reentrancy();
  DeliveryGuard delivery(*this);
  std::lock_guard lock(mutex_);
  auto it = tracepoint_slots_.find(address);
  if (it == tracepoint_slots_.end()) {
    throw Error(Errc::OutOfMap, "no tracepoint armed at that address");
  }
  issue_expect_complete(sim::simctl::make_tracepoint_remove(address));
  release_slot(it->second);
  tracepoint_slots_.erase(it);
}

BpcsScanReport Session::scan_bpcs(uint16_t conn_handle, uint8_t probe_sub) {
  guard_reentrancy();
  BpcsScanReport report;

  auto conn_state = [&]() -> sim::ConnectionEntry {
    for (const auto& c : connections()) {
      if (c.handle == conn_handle) return c;
    }
    throw Error(Errc::NoSuchConnection,
                "no connection with handle " + std::to_string(conn_handle));
  };
  conn_state();  // validates the handle up front

  // Version exchange first: the subversion hints at the firmware build.
  lmp::LmpPdu version_req{0, lmp::kOpcodeVersionReq, std::nullopt, {}};
  version_req.payload.push_back(profile_.lmp_version);
  put_u16le(version_req.payload, profile_.company_id);
  put_u16le(version_req.payload, profile_.lmp_subversion);
  send_lmp(conn_handle, version_req, false);

  sim::ConnectionEntry before = conn_state();
  if (!before.has_peer_version) {
    tick(kScanTimeoutS);
    before = conn_state();
    if (!before.has_peer_version) {
      report.verdict = BpcsScanReport::Verdict::NoResponse;
      return report;
    }
  }
  report.has_peer_version = true;
  report.peer_version = before.peer_version;
  report.peer_subversion = before.peer_subversion;

  uint32_t rejections_before = before.rejection_count;
  lmp::LmpPdu probe{0, lmp::kOpcodeVendorBpcs, std::nullopt, {probe_sub}};
  send_lmp(conn_handle, probe, false);

  sim::ConnectionEntry after = conn_state();
  if (after.rejection_count == rejections_before) {
    tick(kScanTimeoutS);
    after = conn_state();
  }
  bool rejected = after.rejection_count > rejections_before &&
                  after.last_rejected_opcode == lmp::kOpcodeVendorBpcs;
  report.verdict = rejected ? BpcsScanReport::Verdict::NotVulnerable
                            : BpcsScanReport::Verdict::Vulnerable;
  return report;
}

void Session::install_mac_filter(const std::vector<MacAddress>& whitelist) {
  guard_reentrancy();
  DeliveryGuard delivery(*this);
  std::lock_guard lock(mutex_);
  uint8_t slot = filter_slot_ ? *filter_slot_ : allocate_slot();
  try {
    auto view = issue_expect_complete(
        sim::simctl::make_install_mac_filter(slot, whitelist));
    if (view.status != hci::kStatusSuccess) {
      throw Error(Errc::TransportLost, "mac filter install failed");
    }
  } catch (...) {
    if (!filter_slot_) release_slot(slot);
    throw;
  }
  filter_slot_ = slot;
}

void Session::clear_mac_filter() {
  guard_reentrancy();
  DeliveryGuard delivery(*this);
  std::lock_guard lock(mutex_);
  issue_expect_complete(sim::simctl::make_clear_mac_filter());
  if (filter_slot_) {
    release_slot(*filter_slot_);
    filter_slot_.reset();
  }
}

void Session::reset() {
  guard_reentrancy();
  DeliveryGuard delivery(*this);
  std::lock_guard lock(mutex_);
  issue_expect_complete(sim::simctl::make_reset());
  release_all_slots();
  monitor_installed_ = false;
  lmp_sinks_.clear();
  crashed_ = false;
  last_crash_.reset();
}

size_t Session::tick(double dt_seconds) {
  guard_reentrancy();
  DeliveryGuard delivery(*this);
  std::lock_guard lock(mutex_);
  auto view = issue_expect_complete(
      sim::simctl::make_advance_time(static_cast<uint64_t>(dt_seconds * 1e6)));
  return view.payload.empty() ? 0 : view.payload[0];
}

}  // namespace btlab::core
