#include "btlab/tracer.hpp"

#include <fstream>

#include "btlab/errors.hpp"
#include "json.hpp"

namespace btlab::tracer {

namespace {
constexpr uint32_t kSnapshotMagic = 0x53534254;  // "TBSS"
constexpr uint32_t kSnapshotVersion = 1;

void put_registers(Bytes& out, const sim::RegisterSet& regs) {
  put_u32le(out, regs.pc);
  put_u32le(out, regs.lr);
  put_u32le(out, regs.sp);
  put_u32le(out, regs.cpsr);
  for (uint32_t r : regs.r) put_u32le(out, r);
}

sim::RegisterSet get_registers(ByteView in, size_t offset) {
  sim::RegisterSet regs;
  regs.pc = get_u32le(in, offset);
  regs.lr = get_u32le(in, offset + 4);
  regs.sp = get_u32le(in, offset + 8);
  regs.cpsr = get_u32le(in, offset + 12);
  for (size_t i = 0; i < 13; i++) {
    regs.r[i] = get_u32le(in, offset + 16 + i * 4);
  }
  return regs;
}
}  // namespace

void save_snapshot(const Snapshot& snapshot,
                   const sim::ControllerProfile& profile,
                   const std::string& path) {
  Bytes out;
  put_u32le(out, kSnapshotMagic);
  put_u32le(out, kSnapshotVersion);
  put_u32le(out, static_cast<uint32_t>(snapshot.chip_name.size()));
  out.insert(out.end(), snapshot.chip_name.begin(), snapshot.chip_name.end());
  put_registers(out, snapshot.registers);
  put_u32le(out, static_cast<uint32_t>(snapshot.sim_time_us & 0xffffffffu));
  put_u32le(out, static_cast<uint32_t>(snapshot.sim_time_us >> 32));
  put_u32le(out, static_cast<uint32_t>(snapshot.memory.size()));
  for (size_t i = 0; i < snapshot.memory.size(); i++) {
    put_u32le(out, profile.memory_regions[i].start);
    put_u32le(out, static_cast<uint32_t>(snapshot.memory[i].size()));
    out.insert(out.end(), snapshot.memory[i].begin(), snapshot.memory[i].end());
  }
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) {
    throw Error(Errc::SinkFailure, "cannot write snapshot: " + path);
  }
}

Snapshot load_snapshot(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw Error(Errc::SinkFailure, "cannot open snapshot: " + path);
  }
  Bytes in((std::istreambuf_iterator<char>(f)),
           std::istreambuf_iterator<char>());
  if (in.size() < 12 || get_u32le(in, 0) != kSnapshotMagic) {
    throw Error(Errc::BadMagic, "not a snapshot file: " + path);
  }
  if (get_u32le(in, 4) != kSnapshotVersion) {
    throw Error(Errc::BadMagic, "unsupported snapshot version");
  }
  Snapshot snapshot;
  size_t offset = 8;
  uint32_t name_len = get_u32le(in, offset);
  offset += 4;
  snapshot.chip_name.assign(in.begin() + offset, in.begin() + offset + name_len);
  offset += name_len;
  snapshot.registers = get_registers(in, offset);
  offset += 17 * 4;
  snapshot.sim_time_us = static_cast<uint64_t>(get_u32le(in, offset)) |
                         (static_cast<uint64_t>(get_u32le(in, offset + 4)) << 32);
  offset += 8;
  uint32_t regions = get_u32le(in, offset);
  offset += 4;
  for (uint32_t i = 0; i < regions; i++) {
    offset += 4;  // region start; implied by the profile on replay
    uint32_t size = get_u32le(in, offset);
    offset += 4;
    snapshot.memory.emplace_back(in.begin() + offset,
                                 in.begin() + offset + size);
    offset += size;
  }
  return snapshot;
}

Snapshot freeze(const sim::Controller& controller) {
  Snapshot snapshot;
  snapshot.chip_name = controller.profile().chip_name;
  snapshot.registers = controller.registers();
  snapshot.sim_time_us = controller.now_us();
  for (const auto& region : controller.profile().memory_regions) {
    snapshot.memory.push_back(controller.read_view(region.start, region.size));
  }
  return snapshot;
}

MemDump dump_from_snapshot(const sim::ControllerProfile& profile,
                           const Snapshot& snapshot) {
  MemDump dump;
  for (size_t i = 0; i < snapshot.memory.size(); i++) {
    dump.push_back(MemDumpRegion{profile.memory_regions[i].start,
                                 snapshot.memory[i]});
  }
  return dump;
}

TraceResult run_trace(const sim::ControllerProfile& profile,
                      const Snapshot& snapshot, const lmp::LmpPdu& pdu,
                      size_t step_budget) {
  auto scratch = sim::Controller::from_frozen(profile, snapshot);

  // The replayed dispatch needs a connection to hang off; it never leaves
  // the scratch controller since no medium is attached.
  hci::HciCommand connect = sim::simctl::make_create_connection(
      MacAddress::parse("00:00:00:00:00:01"));
  auto events = scratch->handle_hci_command(connect);
  uint16_t handle = 0;
  for (const auto& evt : events) {
    if (evt.event_code == hci::kEventConnectionComplete) {
      handle = get_u16le(evt.params, 1);
    }
  }

  TraceResult result;
  sim::DispatchResult dispatch = scratch->dispatch_lmp(handle, pdu);
  result.trace = std::move(dispatch.trace);
  if (result.trace.size() > step_budget) {
    result.trace.resize(step_budget);
    result.step_budget_exceeded = true;
  }
  result.final_mode = scratch->mode();
  for (const auto& region : profile.memory_regions) {
    result.mem_dump.push_back(MemDumpRegion{
        region.start, scratch->read_view(region.start, region.size)});
  }
  return result;
}

std::vector<MemDiffRun> diff_memory(const MemDump& before,
                                    const MemDump& after) {
  if (before.size() != after.size()) {
    throw Error(Errc::RangeMismatch, "dumps cover different region counts");
  }
  std::vector<MemDiffRun> runs;
  for (size_t r = 0; r < before.size(); r++) {
    if (before[r].start != after[r].start ||
        before[r].bytes.size() != after[r].bytes.size()) {
      throw Error(Errc::RangeMismatch, "dumps cover different ranges");
    }
    const Bytes& a = before[r].bytes;
    const Bytes& b = after[r].bytes;
    size_t i = 0;
    while (i < a.size()) {
      if (a[i] == b[i]) {
        i++;
        continue;
      }
      size_t j = i;
      while (j < a.size() && a[j] != b[j]) j++;
      MemDiffRun run;
      run.address = before[r].start + static_cast<uint32_t>(i);
      run.old_bytes.assign(a.begin() + i, a.begin() + j);
      run.new_bytes.assign(b.begin() + i, b.begin() + j);
      runs.push_back(std::move(run));
      i = j;
    }
  }
  return runs;
}

const char* verdict_name(SubcommandVerdict verdict) {
  switch (verdict) {
    case SubcommandVerdict::Crash: return "crash";
    case SubcommandVerdict::StateChange: return "state-change";
    case SubcommandVerdict::ArgSensitive: return "arg-sensitive";
    case SubcommandVerdict::Inert: return "inert";
  }
  return "?";
}

std::vector<FuzzEntry> FuzzReport::with_verdict(
    SubcommandVerdict verdict) const {
  std::vector<FuzzEntry> out;
  for (const auto& entry : entries) {
    if (entry.verdict == verdict) out.push_back(entry);
  }
  return out;
}

FuzzReport fuzz_bpcs(const sim::ControllerProfile& profile,
                     const Snapshot& snapshot, int variants) {
  FuzzReport report;
  report.chip_name = profile.chip_name;
  MemDump baseline = dump_from_snapshot(profile, snapshot);

  // Dispatch always stores the incoming PDU at lm_curCmd; mask that window
  // out so it does not read as a state change.
  auto masked_diff = [&](const MemDump& dump) {
    auto runs = diff_memory(baseline, dump);
    std::vector<MemDiffRun> significant;
    uint32_t mask_start = profile.lm_cur_cmd;
    uint32_t mask_end = mask_start + sim::kLmCurCmdWindow;
    for (auto& run : runs) {
      uint32_t run_end = run.address + static_cast<uint32_t>(run.old_bytes.size());
      if (run_end <= mask_start || run.address >= mask_end) {
        significant.push_back(std::move(run));
      }
    }
    return significant;
  };

  for (int sub = 0; sub < 256; sub++) {
    std::vector<TraceResult> results;
    for (int v = 0; v < variants; v++) {
      lmp::LmpPdu pdu{0, lmp::kOpcodeVendorBpcs, std::nullopt,
                      {static_cast<uint8_t>(sub), static_cast<uint8_t>(v),
                       static_cast<uint8_t>(v ^ 0x5a)}};
      results.push_back(run_trace(profile, snapshot, pdu));
    }

    FuzzEntry entry;
    entry.sub = static_cast<uint8_t>(sub);
    bool crashed = false;
    for (const auto& r : results) {
      if (r.final_mode == sim::ChipMode::Crashed) crashed = true;
    }
    if (crashed) {
      entry.verdict = SubcommandVerdict::Crash;
      for (const auto& evt : results[0].trace) {
        if (evt.kind == sim::TraceEventKind::InvalidMemory) {
          char buf[48];
          snprintf(buf, sizeof(buf), "invalid memory 0x%08x", evt.address);
          entry.detail = buf;
          break;
        }
      }
    } else {
      auto diff = masked_diff(results[0].mem_dump);
      if (!diff.empty()) {
        entry.verdict = SubcommandVerdict::StateChange;
        char buf[64];
        snprintf(buf, sizeof(buf), "%zu changed run(s), first at 0x%08x",
                 diff.size(), diff[0].address);
        entry.detail = buf;
      } else {
        bool diverged = false;
        for (size_t v = 1; v < results.size(); v++) {
          if (results[v].trace.size() != results[0].trace.size()) {
            diverged = true;
            break;
          }
          for (size_t i = 0; i < results[v].trace.size(); i++) {
            if (results[v].trace[i].kind != results[0].trace[i].kind ||
                results[v].trace[i].address != results[0].trace[i].address) {
              diverged = true;
              break;
            }
          }
          if (diverged) break;
        }
        entry.verdict = diverged ? SubcommandVerdict::ArgSensitive
                                 : SubcommandVerdict::Inert;
        if (diverged) entry.detail = "traces diverge across variants";
      }
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

std::string render_report(const FuzzReport& report) {
  std::string out = "BPCS subcommand fuzz report for " + report.chip_name +
                    "\nsub   verdict        detail\n";
  for (const auto& entry : report.entries) {
    if (entry.verdict == SubcommandVerdict::Inert) continue;
    char line[160];
    snprintf(line, sizeof(line), "0x%02x  %-13s  %s\n", entry.sub,
             verdict_name(entry.verdict), entry.detail.c_str());
    out += line;
  }
  size_t inert = report.with_verdict(SubcommandVerdict::Inert).size();
  out += "(" + std::to_string(inert) + " inert subcommands omitted)\n";
  return out;
}

std::string report_to_json(const FuzzReport& report) {
  nlohmann::json doc;
  doc["chip_name"] = report.chip_name;
  doc["entries"] = nlohmann::json::array();
  for (const auto& entry : report.entries) {
    doc["entries"].push_back({{"sub", entry.sub},
                              {"verdict", verdict_name(entry.verdict)},
                              {"detail", entry.detail}});
  }
  return doc.dump(2);
}

}  // namespace btlab::tracer
