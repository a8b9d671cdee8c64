#pragma once

#include <string>
#include <vector>

#include "btlab/controller.hpp"

namespace btlab::tracer {

using Snapshot = sim::Controller::FrozenState;

// Versioned binary snapshot files, so a tracepoint dump taken in one run
// can be replayed in another.
void save_snapshot(const Snapshot& snapshot,
                   const sim::ControllerProfile& profile,
                   const std::string& path);
Snapshot load_snapshot(const std::string& path);

// Captures the live controller as a snapshot (equivalent to what a
// dispatcher tracepoint freezes, minus the dispatch-time registers).
Snapshot freeze(const sim::Controller& controller);

struct MemDumpRegion {
  uint32_t start = 0;
  Bytes bytes;
};
using MemDump = std::vector<MemDumpRegion>;

struct TraceResult {
  std::vector<sim::TraceEvent> trace;
  sim::ChipMode final_mode = sim::ChipMode::Normal;
  MemDump mem_dump;
  bool step_budget_exceeded = false;
};

inline constexpr size_t kDefaultStepBudget = 10000;

// Replays the dispatch of one PDU on a scratch controller built from the
// snapshot; the live session is never touched.
TraceResult run_trace(const sim::ControllerProfile& profile,
                      const Snapshot& snapshot, const lmp::LmpPdu& pdu,
                      size_t step_budget = kDefaultStepBudget);

MemDump dump_from_snapshot(const sim::ControllerProfile& profile,
                           const Snapshot& snapshot);

struct MemDiffRun {
  uint32_t address = 0;
  Bytes old_bytes;
  Bytes new_bytes;
};

// Minimal list of changed byte runs, sorted by address. Throws
// Error{RangeMismatch} when the dumps cover different ranges.
std::vector<MemDiffRun> diff_memory(const MemDump& before,
                                    const MemDump& after);

enum class SubcommandVerdict { Crash, StateChange, ArgSensitive, Inert };
const char* verdict_name(SubcommandVerdict verdict);

struct FuzzEntry {
  uint8_t sub = 0;
  SubcommandVerdict verdict = SubcommandVerdict::Inert;
  std::string detail;
};

struct FuzzReport {
  std::string chip_name;
  std::vector<FuzzEntry> entries;  // ordered by subcommand

  std::vector<FuzzEntry> with_verdict(SubcommandVerdict verdict) const;
};

// Dispatches every BPCS subcommand with `variants` different argument
// bytes each, classifying by crash, memory difference against the
// snapshot, or trace divergence. The lm_curCmd input window is excluded
// from the state-change comparison since dispatch always writes the
// incoming PDU there.
FuzzReport fuzz_bpcs(const sim::ControllerProfile& profile,
                     const Snapshot& snapshot, int variants = 3);

std::string render_report(const FuzzReport& report);
std::string report_to_json(const FuzzReport& report);

}  // namespace btlab::tracer
