#include "btlab/controller.hpp"

#include <set>

#include "btlab/errors.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace btlab;
using namespace btlab::sim;

namespace {

std::vector<hci::HciEvent> issue(Controller& c, const hci::HciCommand& cmd) {
  return c.handle_hci_command(cmd);
}

hci::CommandCompleteView complete_of(const std::vector<hci::HciEvent>& events) {
  REQUIRE(!events.empty());
  return hci::parse_command_complete(events.front());
}

Bytes read_ram(Controller& c, uint32_t address, uint8_t length) {
  auto events = issue(c, hci::build_vendor_command(
                             hci::ReadRam{address, length},
                             c.profile().vendor_opcodes));
  auto view = complete_of(events);
  REQUIRE(view.status == hci::kStatusSuccess);
  return view.payload;
}

void write_ram(Controller& c, uint32_t address, const Bytes& data) {
  auto events = issue(c, hci::build_vendor_command(hci::WriteRam{address, data},
                                                   c.profile().vendor_opcodes));
  REQUIRE(complete_of(events).status == hci::kStatusSuccess);
}

uint16_t connect_failed_peer(Controller& c) {
  auto events =
      issue(c, simctl::make_create_connection(
                   MacAddress::parse("de:ad:be:ef:00:00")));
  for (const auto& evt : events) {
    if (evt.event_code == hci::kEventConnectionComplete) {
      return get_u16le(evt.params, 1);
    }
  }
  FAIL("no connection complete");
  return 0;
}

}  // namespace

TEST_CASE("ReadRam works in every mapped region and crashes outside") {
  Controller c(test::bcm4339());
  for (const auto& region : c.profile().memory_regions) {
    CHECK(read_ram(c, region.start, 4).size() == 4);
    CHECK(read_ram(c, region.end() - 4, 4).size() == 4);
  }
  auto events = issue(c, hci::build_vendor_command(
                             hci::ReadRam{0x100000, 4},
                             c.profile().vendor_opcodes));
  CHECK(events.empty());
  CHECK(c.mode() == ChipMode::Crashed);
  // A vendor crash-dump event was emitted.
  auto pending = c.take_pending_events();
  REQUIRE(pending.size() == 1);
  CHECK(pending[0].event_code == hci::kEventVendor);
  CHECK(pending[0].params[0] == kVendorSubCrashDump);
}

TEST_CASE("WriteRam to ROM completes successfully but changes nothing") {
  Controller c(test::bcm4339());
  Bytes before = read_ram(c, 0x001000, 4);
  write_ram(c, 0x001000, {0xaa, 0xbb, 0xcc, 0xdd});
  CHECK(read_ram(c, 0x001000, 4) == before);
}

TEST_CASE("WriteRam to RAM sticks") {
  Controller c(test::bcm4339());
  write_ram(c, 0x200100, {0xde, 0xad, 0xbe, 0xef});
  CHECK(read_ram(c, 0x200100, 4) == Bytes{0xde, 0xad, 0xbe, 0xef});
}

TEST_CASE("nothing but reset is accepted after a crash") {
  Controller c(test::bcm4339());
  issue(c, hci::build_vendor_command(hci::ReadRam{0x100000, 4},
                                     c.profile().vendor_opcodes));
  REQUIRE(c.mode() == ChipMode::Crashed);
  c.take_pending_events();
  CHECK(issue(c, hci::build_vendor_command(hci::ReadRam{0x200000, 4},
                                           c.profile().vendor_opcodes))
            .empty());
  auto events = issue(c, simctl::make_reset());
  CHECK(complete_of(events).status == hci::kStatusSuccess);
  CHECK(c.mode() == ChipMode::Normal);
  CHECK(read_ram(c, 0x200000, 4).size() == 4);
}

TEST_CASE("download mode accepts exactly the three RAM commands") {
  Controller c(test::bcm4339());
  auto events = issue(c, hci::build_vendor_command(
                             hci::DownloadMinidriver{},
                             c.profile().vendor_opcodes));
  CHECK(complete_of(events).status == hci::kStatusSuccess);
  CHECK(c.mode() == ChipMode::DownloadMode);

  // The three whitelisted commands work.
  CHECK(read_ram(c, 0x200000, 4).size() == 4);
  write_ram(c, 0x200100, {0x01});

  // Everything else is disallowed, including Download_Minidriver itself,
  // reset, connection setup and the sim-control surface.
  std::vector<hci::HciCommand> rejected = {
      hci::build_vendor_command(hci::DownloadMinidriver{},
                                c.profile().vendor_opcodes),
      simctl::make_reset(),
      simctl::make_create_connection(MacAddress::parse("de:ad:be:ef:00:00")),
      simctl::make_get_connections(),
      simctl::make_install_monitor(0, 1),
      hci::HciCommand{hci::HciOpcode::from_value(0x0000), {}},
      hci::HciCommand{hci::HciOpcode::from_value(0x1234), {}},
  };
  for (const auto& cmd : rejected) {
    auto view = complete_of(issue(c, cmd));
    CHECK(view.status == hci::kStatusCommandDisallowed);
  }
  CHECK(c.mode() == ChipMode::DownloadMode);

  // Launch_RAM with the pseudo-address reboots back to normal.
  auto reboot = issue(c, hci::build_vendor_command(
                             hci::LaunchRam{hci::kLaunchApplyPatches},
                             c.profile().vendor_opcodes));
  CHECK(complete_of(reboot).status == hci::kStatusSuccess);
  CHECK(c.mode() == ChipMode::Normal);
}

TEST_CASE("staged patchram TLVs are applied by the reboot") {
  Controller c(test::bcm4339());
  issue(c, hci::build_vendor_command(hci::DownloadMinidriver{},
                                     c.profile().vendor_opcodes));
  hcd::PatchramEntry entry{9, 0x00002000, 0x11223344, {}};
  Bytes block = hcd::encode_patchram_block({entry});
  write_ram(c, c.profile().patch_staging_address, block);
  issue(c, hci::build_vendor_command(hci::LaunchRam{hci::kLaunchApplyPatches},
                                     c.profile().vendor_opcodes));
  CHECK(c.mode() == ChipMode::Normal);
  CHECK(read_ram(c, 0x00002000, 4) == Bytes{0x44, 0x33, 0x22, 0x11});
  CHECK(c.active_patch_count() == 1);
}

TEST_CASE("patchram overlay semantics") {
  Controller c(test::bcm4339());
  Bytes raw = c.read_view(0x002000, 4);
  c.apply_patchram({hcd::PatchramEntry{5, 0x002000, 0x11223344, {}}});

  // Overlay visible through the view.
  CHECK(c.read_view(0x002000, 4) == Bytes{0x44, 0x33, 0x22, 0x11});

  // Tables populated at 4*slot.
  CHECK(c.read_view(c.profile().patchram_value_table + 4 * 5, 4) ==
        Bytes{0x44, 0x33, 0x22, 0x11});
  CHECK(c.read_view(c.profile().patchram_address_table + 4 * 5, 4) ==
        Bytes{0x00, 0x20, 0x00, 0x00});

  // A read offset by two straddles patched and raw bytes.
  Bytes straddle = c.read_view(0x002000 + 2, 4);
  CHECK(straddle[0] == 0x22);
  CHECK(straddle[1] == 0x11);
  Bytes after = c.read_view(0x002004, 2);
  CHECK(straddle[2] == after[0]);
  CHECK(straddle[3] == after[1]);

  // Reset clears the overlay.
  c.reset();
  CHECK(c.read_view(0x002000, 4) == raw);
  CHECK(c.active_patch_count() == 0);
}

TEST_CASE("slot capacity is enforced per profile") {
  Controller bcm4339(test::bcm4339());
  CHECK_THROWS_AS(
      bcm4339.apply_patchram({hcd::PatchramEntry{128, 0x1000, 1, {}}}),
      Error);
  Controller bcm4358(test::bcm4358());
  bcm4358.apply_patchram({hcd::PatchramEntry{128, 0x1000, 1, {}}});
  CHECK(bcm4358.active_patch_count() == 1);
  CHECK_THROWS_AS(
      bcm4358.apply_patchram({hcd::PatchramEntry{192, 0x1000, 1, {}}}),
      Error);
}

TEST_CASE("patchram equivalence against a byte-wise oracle") {
  Controller c(test::bcm4339());
  test::TestRng rng(0x9a7c);

  // Oracle: compose the overlay over a plain byte image.
  constexpr uint32_t kBase = 0x010000;
  constexpr uint32_t kSize = 0x10000;  // 64 kB window
  Bytes oracle = c.read_view(kBase, kSize);

  std::vector<hcd::PatchramEntry> entries;
  std::set<uint8_t> slots;
  for (int i = 0; i < 60; i++) {
    hcd::PatchramEntry entry;
    entry.slot = static_cast<uint8_t>(rng.below(128));
    if (!slots.insert(entry.slot).second) continue;
    entry.address = kBase + static_cast<uint32_t>(rng.below(kSize - 4)) / 4 * 4;
    entry.value = rng.u32();
    entries.push_back(entry);
  }
  c.apply_patchram(entries);
  for (const auto& entry : entries) {
    for (int i = 0; i < 4; i++) {
      oracle[entry.address - kBase + i] =
          static_cast<uint8_t>(entry.value >> (8 * i));
    }
  }
  CHECK(c.read_view(kBase, kSize) == oracle);
}

TEST_CASE("dispatching BPCS 0x0a on the vulnerable profile crashes") {
  Controller c(test::bcm4339());
  uint16_t handle = connect_failed_peer(c);
  auto result = c.dispatch_lmp(handle, lmp::LmpPdu{0, 0, std::nullopt, {0x0a}});
  CHECK(c.mode() == ChipMode::Crashed);
  REQUIRE(result.trace.size() >= 3);
  size_t n = result.trace.size();
  CHECK(result.trace[n - 3].kind == TraceEventKind::BranchEnter);
  CHECK(result.trace[n - 3].address == 0x00000);
  CHECK(result.trace[n - 2].kind == TraceEventKind::InvalidMemory);
  CHECK(result.trace[n - 1].kind == TraceEventKind::Crash);
  // The fault address is outside the memory map.
  CHECK(c.profile().region_at(result.trace[n - 2].address) == nullptr);
}

TEST_CASE("BPCS 0x95 arms test mode without any host-visible event") {
  Controller c(test::bcm4339());
  uint16_t handle = connect_failed_peer(c);
  c.take_pending_events();
  auto result = c.dispatch_lmp(handle, lmp::LmpPdu{0, 0, std::nullopt, {0x95}});
  CHECK(c.mode() == ChipMode::TestModeArmed);
  CHECK(result.responses.empty());
  CHECK(c.take_pending_events().empty());  // nothing for the HCI log
  // The test-mode configuration region changed.
  CHECK(c.read_view(c.profile().test_mode_config_address, 1)[0] == 0x01);
}

TEST_CASE("BPCS 0xbd executes an HCI handler with wrong args and crashes") {
  Controller c(test::bcm4339());
  uint16_t handle = connect_failed_peer(c);
  auto result = c.dispatch_lmp(handle, lmp::LmpPdu{0, 0, std::nullopt, {0xbd}});
  CHECK(c.mode() == ChipMode::Crashed);
  CHECK(result.trace.back().kind == TraceEventKind::Crash);
}

TEST_CASE("fixed profile rejects every out-of-range subcommand") {
  Controller c(test::bcm4339_fixed());
  uint16_t handle = connect_failed_peer(c);
  for (int sub = 6; sub < 256; sub++) {
    auto result = c.dispatch_lmp(
        handle, lmp::LmpPdu{0, 0, std::nullopt, {static_cast<uint8_t>(sub)}});
    CHECK(c.mode() == ChipMode::Normal);
    REQUIRE(result.responses.size() == 1);
    CHECK(result.responses[0].opcode == lmp::kOpcodeNotAccepted);
    CHECK(result.responses[0].payload[0] == 0x00);  // rejected opcode 0
  }
}

TEST_CASE("no BPCS subcommand at all can crash a fixed chip") {
  Controller c(test::bcm4339_fixed());
  uint16_t handle = connect_failed_peer(c);
  for (int sub = 0; sub < 256; sub++) {
    c.dispatch_lmp(handle, lmp::LmpPdu{0, 0, std::nullopt,
                                       {static_cast<uint8_t>(sub), 0x55}});
    REQUIRE(c.mode() == ChipMode::Normal);
  }
}

TEST_CASE("reset discards staged patches") {
  Controller c(test::bcm4339());
  issue(c, hci::build_vendor_command(hci::DownloadMinidriver{},
                                     c.profile().vendor_opcodes));
  Bytes block =
      hcd::encode_patchram_block({hcd::PatchramEntry{0, 0x2000, 0x1, {}}});
  write_ram(c, c.profile().patch_staging_address, block);
  c.reset();
  // Rebooting now has nothing to apply.
  issue(c, hci::build_vendor_command(hci::LaunchRam{hci::kLaunchApplyPatches},
                                     c.profile().vendor_opcodes));
  CHECK(c.active_patch_count() == 0);
}

TEST_CASE("in-range BPCS subcommands behave on both profiles") {
  for (auto profile : {test::bcm4339(), test::bcm4339_fixed()}) {
    Controller c(profile);
    uint16_t handle = connect_failed_peer(c);
    auto result =
        c.dispatch_lmp(handle, lmp::LmpPdu{0, 0, std::nullopt, {0x00, 0x07}});
    REQUIRE(result.responses.size() == 1);
    CHECK(result.responses[0].opcode == lmp::kOpcodeVendorBpcs);
    CHECK(result.responses[0].payload[0] == 0x01);  // features response
    CHECK(result.responses[0].payload[1] == 0x07);  // echoes the argument
    CHECK(c.mode() == ChipMode::Normal);
  }
}

TEST_CASE("dispatch stores the raw PDU at lm_curCmd") {
  Controller c(test::bcm4339());
  uint16_t handle = connect_failed_peer(c);
  lmp::LmpPdu pdu{1, 37, std::nullopt, {0x07, 0x0f, 0x00, 0x09, 0x61}};
  c.dispatch_lmp(handle, pdu);
  Bytes stored = c.read_view(c.profile().lm_cur_cmd, 6);
  CHECK(stored == lmp::encode_pdu(pdu));
}

TEST_CASE("the BPCS handler reads its subcommand from memory, not the frame") {
  // "Wrong length" semantics: a bare opcode byte still dispatches on
  // whatever the subcommand slot in lm_curCmd happens to hold.
  Controller c(test::bcm4339());
  uint16_t handle = connect_failed_peer(c);
  c.dispatch_lmp(handle, lmp::LmpPdu{0, 0, std::nullopt, {0x95}});
  REQUIRE(c.mode() == ChipMode::TestModeArmed);
  // A length-0 BPCS frame re-reads the stale 0x95 at lm_curCmd+1; with a
  // fresh chip the same frame would hit sub 0x00 instead.
  auto result = c.dispatch_lmp(handle, lmp::LmpPdu{0, 0, std::nullopt, {}});
  CHECK(c.mode() == ChipMode::TestModeArmed);
  CHECK(result.responses.empty());  // enable-test-mode, not features
}

TEST_CASE("handler table in memory is what the dispatcher uses") {
  Controller c(test::bcm4339());
  const auto& layout = c.profile().handler_layout;
  for (int opcode = 0; opcode < 128; opcode++) {
    Bytes bytes = c.read_view(
        layout.standard_entry_address(static_cast<uint8_t>(opcode)), 8);
    HandlerEntry expected = layout.standard_entry(static_cast<uint8_t>(opcode));
    CHECK(get_u32le(bytes, 0) == expected.handler_ref);
    CHECK(bytes[4] == expected.declared_len);
  }
  for (int sub = 0; sub < 256; sub++) {
    Bytes bytes =
        c.read_view(layout.bpcs_entry_address(static_cast<uint8_t>(sub)), 8);
    HandlerEntry expected = layout.bpcs_entry(static_cast<uint8_t>(sub));
    CHECK(get_u32le(bytes, 0) == expected.handler_ref);
    CHECK(bytes[4] == expected.declared_len);
  }
}

TEST_CASE("patching a handler-table word changes dispatch behavior") {
  // Overlay applies to the dispatcher's own table fetches: pointing the
  // benign sub 0x06 entry at the null pointer makes it crash.
  Controller c(test::bcm4339());
  uint16_t handle = connect_failed_peer(c);
  uint32_t entry_address = c.profile().handler_layout.bpcs_entry_address(0x06);
  c.apply_patchram({hcd::PatchramEntry{0, entry_address, 0x00000000, {}}});
  auto result = c.dispatch_lmp(handle, lmp::LmpPdu{0, 0, std::nullopt, {0x06}});
  CHECK(c.mode() == ChipMode::Crashed);
  CHECK(result.trace.back().kind == TraceEventKind::Crash);
}

TEST_CASE("version_req draws a version_res carrying the profile identity") {
  Controller c(test::bcm4339());
  uint16_t handle = connect_failed_peer(c);
  auto result = c.dispatch_lmp(
      handle, lmp::LmpPdu{0, 37, std::nullopt, {0x08, 0x0f, 0x00, 0x34, 0x12}});
  REQUIRE(result.responses.size() == 1);
  const auto& res = result.responses[0];
  CHECK(res.opcode == 38);
  CHECK(res.payload[0] == 7);
  CHECK(get_u16le(res.payload, 3) == 24841);
  // The request's version was recorded on the connection.
  CHECK(c.connection_by_handle(handle)->has_peer_version);
  CHECK(c.connection_by_handle(handle)->peer_version == 8);
}

TEST_CASE("unknown standard opcode draws not_accepted") {
  Controller c(test::bcm4339());
  uint16_t handle = connect_failed_peer(c);
  auto result = c.dispatch_lmp(handle, lmp::LmpPdu{0, 99, std::nullopt, {}});
  REQUIRE(result.responses.size() == 1);
  CHECK(result.responses[0].opcode == lmp::kOpcodeNotAccepted);
  CHECK(result.responses[0].payload[0] == 99);
}

TEST_CASE("send path drops oversized PDUs but the monitor still sees them") {
  Controller c(test::bcm4339());
  uint16_t handle = connect_failed_peer(c);
  issue(c, simctl::make_install_monitor(0, 1));
  c.take_pending_events();

  lmp::LmpPdu big{0, 2, std::nullopt, Bytes(32, 0xaa)};  // 33 bytes on wire
  CHECK(c.send_lmp_tx(handle, big, false) == SendOutcome::SilentlyDropped);
  auto pending = c.take_pending_events();
  REQUIRE(pending.size() == 1);
  CHECK(pending[0].params[0] == kVendorSubLmpMonitor);

  CHECK(c.send_lmp_tx(handle, big, true) == SendOutcome::Sent);
}

TEST_CASE("send path sizes BPCS packets from its own handler table") {
  Controller c(test::bcm4339());
  uint16_t handle = connect_failed_peer(c);
  // Sub 0x95 is declared 219 bytes long; the 32-byte transmit buffer can
  // never hold that, so an unpatched sender silently drops it.
  lmp::LmpPdu exploit{0, 0, std::nullopt, {0x95}};
  CHECK(c.send_lmp_tx(handle, exploit, false) == SendOutcome::SilentlyDropped);
  CHECK(c.send_lmp_tx(handle, exploit, true) == SendOutcome::Sent);
  // A benign sub with matching declared length goes out unpatched.
  lmp::LmpPdu benign{0, 0, std::nullopt, {0x06}};
  CHECK(c.send_lmp_tx(handle, benign, false) == SendOutcome::Sent);
}

TEST_CASE("tid is stamped from the role unless fuzzing") {
  Controller c(test::bcm4339());
  uint16_t handle = connect_failed_peer(c);
  issue(c, simctl::make_install_monitor(0, 1));
  c.take_pending_events();

  c.send_lmp_tx(handle, lmp::LmpPdu{1, 37, std::nullopt,
                                    {0x07, 0x0f, 0x00, 0x09, 0x61}},
                false);
  auto pending = c.take_pending_events();
  REQUIRE(pending.size() == 1);
  auto record = decode_monitor_record(
      ByteView(pending[0].params.data() + 1, pending[0].params.size() - 1));
  CHECK((record.pdu_bytes[0] & 1) == 0);  // master -> tid 0

  c.send_lmp_tx(handle, lmp::LmpPdu{1, 0, std::nullopt, {0x06}}, true);
  pending = c.take_pending_events();
  REQUIRE(pending.size() == 1);
  record = decode_monitor_record(
      ByteView(pending[0].params.data() + 1, pending[0].params.size() - 1));
  CHECK((record.pdu_bytes[0] & 1) == 1);  // fuzzing preserves the tid
}

TEST_CASE("failed connections expire after half a minute of sim time") {
  Controller c(test::bcm4339());
  uint16_t handle = connect_failed_peer(c);
  CHECK(c.connection_by_handle(handle)->state == ConnectionState::Failed);

  CHECK(c.tick(29.0).empty());
  CHECK(c.connection_by_handle(handle) != nullptr);

  auto expired = c.tick(2.0);  // now at 31 s
  REQUIRE(expired.size() == 1);
  CHECK(expired[0].handle == handle);
  CHECK(c.connection_by_handle(handle) == nullptr);
}

TEST_CASE("established connections never expire via tick") {
  Controller a(test::bcm4339());
  ControllerProfile victim_profile = test::bcm4339();
  victim_profile.mac_address = "de:ad:be:ef:00:00";
  Controller b(victim_profile);
  Medium medium;
  medium.attach(a);
  medium.attach(b);
  auto events = issue(a, simctl::make_create_connection(b.mac()));
  uint16_t handle = 0;
  for (const auto& evt : events) {
    if (evt.event_code == hci::kEventConnectionComplete) {
      CHECK(evt.params[0] == hci::kStatusSuccess);
      handle = get_u16le(evt.params, 1);
    }
  }
  REQUIRE(a.connection_by_handle(handle)->state ==
          ConnectionState::Established);
  CHECK(a.tick(3600.0).empty());
  CHECK(a.connection_by_handle(handle) != nullptr);
  // The peer got its own slave-side entry.
  REQUIRE(b.connections().size() == 1);
  CHECK(b.connections()[0].role == LinkRole::Slave);
}

TEST_CASE("reset restores a crashed chip and is idempotent") {
  Controller c(test::bcm4339());
  issue(c, hci::build_vendor_command(hci::ReadRam{0x100000, 1},
                                     c.profile().vendor_opcodes));
  REQUIRE(c.mode() == ChipMode::Crashed);
  c.reset();
  CHECK(c.mode() == ChipMode::Normal);
  uint64_t hash = c.state_hash();
  c.reset();
  CHECK(c.state_hash() == hash);
  CHECK(read_ram(c, 0x200000, 4).size() == 4);
}

TEST_CASE("version exchange across the medium records peer identity") {
  Controller attacker(test::bcm4339());
  ControllerProfile victim_profile = test::bcm4339();
  victim_profile.mac_address = "de:ad:be:ef:00:00";
  Controller victim(victim_profile);
  Medium medium;
  medium.attach(attacker);
  medium.attach(victim);

  auto events = issue(attacker, simctl::make_create_connection(victim.mac()));
  uint16_t handle = 0;
  for (const auto& evt : events) {
    if (evt.event_code == hci::kEventConnectionComplete) {
      handle = get_u16le(evt.params, 1);
    }
  }
  lmp::LmpPdu version_req{0, 37, std::nullopt, {0x07, 0x0f, 0x00, 0x09, 0x61}};
  CHECK(attacker.send_lmp_tx(handle, version_req, false) == SendOutcome::Sent);
  const auto* conn = attacker.connection_by_handle(handle);
  REQUIRE(conn->has_peer_version);
  CHECK(conn->peer_version == 7);
  CHECK(conn->peer_subversion == 24841);
}

TEST_CASE("mac filter rejects unlisted peers before handler lookup") {
  Controller c(test::bcm4339());
  uint16_t handle = connect_failed_peer(c);
  MacAddress trusted = MacAddress::parse("11:22:33:44:55:66");
  issue(c, simctl::make_install_mac_filter(2, {trusted}));

  // The connected peer (de:ad:...) is not whitelisted: BPCS 0x0a cannot
  // crash the chip anymore.
  auto result = c.dispatch_lmp(handle, lmp::LmpPdu{0, 0, std::nullopt, {0x0a}});
  CHECK(c.mode() == ChipMode::Normal);
  REQUIRE(result.responses.size() == 1);
  CHECK(result.responses[0].opcode == lmp::kOpcodeNotAccepted);

  // Whitelisting the peer lets the crash through again.
  issue(c, simctl::make_install_mac_filter(
               2, {MacAddress::parse("de:ad:be:ef:00:00")}));
  c.dispatch_lmp(handle, lmp::LmpPdu{0, 0, std::nullopt, {0x0a}});
  CHECK(c.mode() == ChipMode::Crashed);
}

TEST_CASE("an empty whitelist rejects every peer") {
  Controller c(test::bcm4339());
  uint16_t handle = connect_failed_peer(c);
  issue(c, simctl::make_install_mac_filter(2, {}));
  auto result = c.dispatch_lmp(handle, lmp::LmpPdu{0, 37, std::nullopt, {}});
  REQUIRE(result.responses.size() == 1);
  CHECK(result.responses[0].opcode == lmp::kOpcodeNotAccepted);
}

TEST_CASE("exhaustive BPCS fuzz with the filter never crashes the victim") {
  Controller c(test::bcm4339());
  uint16_t handle = connect_failed_peer(c);
  issue(c, simctl::make_install_mac_filter(
               2, {MacAddress::parse("11:22:33:44:55:66")}));
  for (int sub = 0; sub < 256; sub++) {
    c.dispatch_lmp(handle,
                   lmp::LmpPdu{0, 0, std::nullopt,
                               {static_cast<uint8_t>(sub), 0x00}});
    REQUIRE(c.mode() == ChipMode::Normal);
  }
}

TEST_CASE("tracepoint at the dispatcher dumps once and disarms") {
  Controller c(test::bcm4339());
  uint16_t handle = connect_failed_peer(c);
  uint32_t dispatcher = c.profile().dispatcher_address;
  issue(c, simctl::make_tracepoint_add(dispatcher, 3));
  c.take_pending_events();

  auto result = c.dispatch_lmp(handle, lmp::LmpPdu{0, 99, std::nullopt, {}});
  bool dumped = false;
  for (const auto& evt : result.trace) {
    if (evt.kind == TraceEventKind::RegisterDump) {
      dumped = true;
      CHECK(evt.registers.pc == dispatcher);
      CHECK(evt.registers.r[0] == c.profile().lm_cur_cmd);
    }
  }
  CHECK(dumped);
  auto pending = c.take_pending_events();
  REQUIRE(pending.size() == 1);
  CHECK(pending[0].params[0] == kVendorSubTracepoint);
  CHECK(c.armed_tracepoints().empty());
  CHECK(c.last_tracepoint_state() != nullptr);

  // Second dispatch produces no dump.
  auto again = c.dispatch_lmp(handle, lmp::LmpPdu{0, 99, std::nullopt, {}});
  for (const auto& evt : again.trace) {
    CHECK(evt.kind != TraceEventKind::RegisterDump);
  }
  CHECK(c.take_pending_events().empty());
}

TEST_CASE("two tracepoints on consecutive handlers dump in call order") {
  Controller c(test::bcm4339());
  uint16_t handle = connect_failed_peer(c);
  uint32_t dispatcher = c.profile().dispatcher_address;
  uint32_t handler = c.profile().handler_layout.standard_entry(37).handler_ref;
  issue(c, simctl::make_tracepoint_add(dispatcher, 3));
  issue(c, simctl::make_tracepoint_add(handler, 4));

  auto result = c.dispatch_lmp(
      handle, lmp::LmpPdu{0, 37, std::nullopt, {0x07, 0x0f, 0x00, 0x09, 0x61}});
  std::vector<uint32_t> dump_order;
  for (const auto& evt : result.trace) {
    if (evt.kind == TraceEventKind::RegisterDump) {
      dump_order.push_back(evt.address);
    }
  }
  CHECK(dump_order == std::vector<uint32_t>{dispatcher, handler});
}

TEST_CASE("tracepoint validation statuses") {
  Controller c(test::bcm4339());
  auto unmapped =
      complete_of(issue(c, simctl::make_tracepoint_add(0x100000, 3)));
  CHECK(unmapped.status == hci::kStatusInvalidParameters);

  issue(c, simctl::make_tracepoint_add(0x3f3f4, 3));
  auto again = complete_of(issue(c, simctl::make_tracepoint_add(0x3f3f4, 4)));
  CHECK(again.status == hci::kStatusAlreadyArmed);

  Controller no_tp(test::bcm4358());
  auto disallowed =
      complete_of(issue(no_tp, simctl::make_tracepoint_add(0x3f3f4, 3)));
  CHECK(disallowed.status == hci::kStatusCommandDisallowed);
}

TEST_CASE("launch stub format sends LMP from RAM") {
  Controller c(test::bcm4339());
  uint16_t handle = connect_failed_peer(c);
  issue(c, simctl::make_install_monitor(0, 1));
  c.take_pending_events();

  Bytes stub;
  put_u32le(stub, kStubMagic);
  put_u32le(stub, kStubActionSendLmp);
  put_u32le(stub, handle);
  Bytes wire = lmp::encode_pdu(lmp::LmpPdu{0, 0, std::nullopt, {0x06}});
  put_u32le(stub, static_cast<uint32_t>(wire.size()));
  stub.insert(stub.end(), wire.begin(), wire.end());
  uint32_t scratch = c.profile().scratch_window_start;
  write_ram(c, scratch, stub);
  auto events = issue(c, hci::build_vendor_command(
                             hci::LaunchRam{scratch},
                             c.profile().vendor_opcodes));
  auto view = complete_of(events);
  CHECK(view.status == hci::kStatusSuccess);
  REQUIRE(view.payload.size() == 1);
  CHECK(view.payload[0] == 1);  // Sent
  CHECK(c.take_pending_events().size() == 1);  // tx monitor record
}

TEST_CASE("launching garbage RAM crashes the chip") {
  Controller c(test::bcm4339());
  write_ram(c, 0x210000, {0x01, 0x02, 0x03, 0x04});
  auto events = issue(c, hci::build_vendor_command(
                             hci::LaunchRam{0x210000},
                             c.profile().vendor_opcodes));
  CHECK(events.empty());
  CHECK(c.mode() == ChipMode::Crashed);
}

TEST_CASE("monitor record pseudo-header round trip") {
  LmpMonitorRecord record;
  record.direction = LmpMonitorRecord::Direction::Tx;
  record.handle = 0x0c;
  record.pdu_bytes = {0x4f, 0x01, 0x02};
  Bytes encoded = encode_monitor_record(record);
  CHECK(encoded.size() == 4 + 3);
  auto decoded = decode_monitor_record(encoded);
  CHECK(decoded.direction == record.direction);
  CHECK(decoded.handle == record.handle);
  CHECK(decoded.pdu_bytes == record.pdu_bytes);
}
