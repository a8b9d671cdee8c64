#include "btlab/tracer.hpp"

#include <cstdio>

#include "btlab/errors.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace btlab;
using namespace btlab::tracer;

namespace {

Snapshot snapshot_of(const sim::ControllerProfile& profile) {
  sim::Controller controller(profile);
  return freeze(controller);
}

}  // namespace

TEST_CASE("replay of BPCS 0x0a ends in null-entry, invalid memory, crash") {
  auto profile = test::bcm4339();
  auto snapshot = snapshot_of(profile);
  auto result = run_trace(profile, snapshot,
                          lmp::LmpPdu{0, 0, std::nullopt, {0x0a}});
  CHECK(result.final_mode == sim::ChipMode::Crashed);
  REQUIRE(result.trace.size() >= 3);
  size_t n = result.trace.size();
  CHECK(result.trace[n - 3].kind == sim::TraceEventKind::BranchEnter);
  CHECK(result.trace[n - 3].address == 0x00000);
  CHECK(result.trace[n - 2].kind == sim::TraceEventKind::InvalidMemory);
  CHECK(result.trace[n - 1].kind == sim::TraceEventKind::Crash);
}

TEST_CASE("replay of a valid BPCS features response completes") {
  auto profile = test::bcm4339();
  auto result = run_trace(profile, snapshot_of(profile),
                          lmp::LmpPdu{0, 0, std::nullopt, {0x01}});
  CHECK(result.final_mode == sim::ChipMode::Normal);
  for (const auto& evt : result.trace) {
    CHECK(evt.kind != sim::TraceEventKind::Crash);
  }
}

TEST_CASE("replay of an unknown standard opcode is a short rejection path") {
  auto profile = test::bcm4339();
  auto result = run_trace(profile, snapshot_of(profile),
                          lmp::LmpPdu{0, 99, std::nullopt, {}});
  CHECK(result.final_mode == sim::ChipMode::Normal);
  CHECK(result.trace.size() <= 4);
}

TEST_CASE("run_trace is deterministic") {
  auto profile = test::bcm4339();
  auto snapshot = snapshot_of(profile);
  lmp::LmpPdu pdu{0, 0, std::nullopt, {0x95}};
  auto a = run_trace(profile, snapshot, pdu);
  auto b = run_trace(profile, snapshot, pdu);
  CHECK(a.trace == b.trace);
  CHECK(a.final_mode == b.final_mode);
  REQUIRE(a.mem_dump.size() == b.mem_dump.size());
  for (size_t i = 0; i < a.mem_dump.size(); i++) {
    CHECK(a.mem_dump[i].bytes == b.mem_dump[i].bytes);
  }
}

TEST_CASE("run_trace never touches the live controller") {
  auto profile = test::bcm4339();
  sim::Controller live(profile);
  uint64_t hash = live.state_hash();
  auto snapshot = freeze(live);
  run_trace(profile, snapshot, lmp::LmpPdu{0, 0, std::nullopt, {0x0a}});
  run_trace(profile, snapshot, lmp::LmpPdu{0, 0, std::nullopt, {0x95}});
  CHECK(live.state_hash() == hash);
}

TEST_CASE("step budget flags and truncates, trace still returned") {
  auto profile = test::bcm4339();
  auto result = run_trace(profile, snapshot_of(profile),
                          lmp::LmpPdu{0, 0, std::nullopt, {0x0a}}, 2);
  CHECK(result.step_budget_exceeded);
  CHECK(result.trace.size() == 2);
}

TEST_CASE("diff of identical dumps is empty") {
  auto profile = test::bcm4339();
  auto snapshot = snapshot_of(profile);
  auto dump = dump_from_snapshot(profile, snapshot);
  CHECK(diff_memory(dump, dump).empty());
}

TEST_CASE("a patched word shows as one 4-byte run") {
  auto profile = test::bcm4339();
  sim::Controller controller(profile);
  auto before = dump_from_snapshot(profile, freeze(controller));
  controller.apply_patchram({hcd::PatchramEntry{0, 0x002000, 0x12345678, {}}});
  auto after = dump_from_snapshot(profile, freeze(controller));
  auto runs = diff_memory(before, after);
  // The patch also populates both patchram tables, so runs appear at the
  // target and inside each table window, sorted by address. Table runs can
  // be shorter than a word when written bytes match the old zeroes.
  REQUIRE(runs.size() == 3);
  CHECK(runs[0].address == 0x002000);
  CHECK(runs[0].new_bytes == Bytes{0x78, 0x56, 0x34, 0x12});
  auto within = [](uint32_t address, uint32_t base) {
    return address >= base && address < base + 4;
  };
  CHECK(within(runs[1].address, profile.patchram_value_table));
  CHECK(within(runs[2].address, profile.patchram_address_table));
  for (size_t i = 1; i < runs.size(); i++) {
    CHECK(runs[i].address > runs[i - 1].address);
  }
}

TEST_CASE("replaying the test-mode exploit changes high memory") {
  auto profile = test::bcm4339();
  auto snapshot = snapshot_of(profile);
  auto result = run_trace(profile, snapshot,
                          lmp::LmpPdu{0, 0, std::nullopt, {0x95}});
  auto baseline = dump_from_snapshot(profile, snapshot);
  auto runs = diff_memory(baseline, result.mem_dump);
  bool config_changed = false;
  for (const auto& run : runs) {
    if (run.address == profile.test_mode_config_address) config_changed = true;
  }
  CHECK(config_changed);
}

TEST_CASE("range mismatch is rejected") {
  auto profile = test::bcm4339();
  auto dump = dump_from_snapshot(profile, snapshot_of(profile));
  auto other = dump;
  other.pop_back();
  CHECK_THROWS_AS(diff_memory(dump, other), Error);
  other = dump;
  other[0].start += 4;
  CHECK_THROWS_AS(diff_memory(dump, other), Error);
}

TEST_CASE("snapshot files round trip") {
  auto profile = test::bcm4339();
  auto snapshot = snapshot_of(profile);
  std::string path = "/tmp/btlab_test_snapshot.bin";
  save_snapshot(snapshot, profile, path);
  Snapshot loaded = load_snapshot(path);
  CHECK(loaded.chip_name == snapshot.chip_name);
  CHECK(loaded.registers == snapshot.registers);
  CHECK(loaded.sim_time_us == snapshot.sim_time_us);
  CHECK(loaded.memory == snapshot.memory);
  std::remove(path.c_str());

  // Replays from the loaded snapshot behave identically.
  auto a = run_trace(profile, snapshot, lmp::LmpPdu{0, 0, std::nullopt, {0x0a}});
  auto b = run_trace(profile, loaded, lmp::LmpPdu{0, 0, std::nullopt, {0x0a}});
  CHECK(a.trace == b.trace);
}

TEST_CASE("fuzzing the vulnerable profile flags the dangerous subcommands") {
  auto profile = test::bcm4339();
  auto report = fuzz_bpcs(profile, snapshot_of(profile));
  REQUIRE(report.entries.size() == 256);
  CHECK(report.entries[0x0a].verdict == SubcommandVerdict::Crash);
  CHECK(report.entries[0x95].verdict == SubcommandVerdict::StateChange);
  CHECK(report.entries[0xbd].verdict == SubcommandVerdict::Crash);
  // The features-request handler branches on its argument byte.
  CHECK(report.entries[0x00].verdict == SubcommandVerdict::ArgSensitive);
  CHECK_FALSE(report.with_verdict(SubcommandVerdict::Crash).empty());
  CHECK_FALSE(report.with_verdict(SubcommandVerdict::StateChange).empty());
}

TEST_CASE("fuzzing the fixed profile classifies every overflow sub inert") {
  auto profile = test::bcm4339_fixed();
  auto report = fuzz_bpcs(profile, snapshot_of(profile));
  for (int sub = 6; sub < 256; sub++) {
    CHECK(report.entries[sub].verdict == SubcommandVerdict::Inert);
  }
}

TEST_CASE("an overflow entry that reads its argument is arg-sensitive") {
  // Fixture profile with a features-response handler parked in the
  // overflow region.
  auto profile = sim::ControllerProfile::load(
      test::test_data_dir() + "/profile_argsense.json");
  auto report = fuzz_bpcs(profile, snapshot_of(profile));
  CHECK(report.entries[0x20].verdict == SubcommandVerdict::ArgSensitive);
}

TEST_CASE("report renders as text and json") {
  auto profile = test::bcm4339();
  auto report = fuzz_bpcs(profile, snapshot_of(profile), 2);
  std::string text = render_report(report);
  CHECK(text.find("0x0a") != std::string::npos);
  CHECK(text.find("crash") != std::string::npos);
  CHECK(text.find("0x95") != std::string::npos);
  std::string json = report_to_json(report);
  CHECK(json.find("\"verdict\"") != std::string::npos);
}
