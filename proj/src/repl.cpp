#include "btlab/repl.hpp"

#include <termios.h>
#include <unistd.h>

#include <iostream>

#include "btlab/ecdh.hpp"
#include "btlab/errors.hpp"
#include "btlab/hcd.hpp"
#include "btlab/security.hpp"

namespace btlab::cli {

namespace {

std::string state_name(sim::ConnectionState state) {
  switch (state) {
    case sim::ConnectionState::Initiating: return "initiating";
    case sim::ConnectionState::Established: return "established";
    case sim::ConnectionState::Failed: return "failed";
  }
  return "?";
}

}  // namespace

Repl::Repl(core::Session& session, WorldView world, std::ostream& out,
           ReplOptions options)
    : session_(session), world_(world), out_(out), options_(std::move(options)) {
  load_history();
}

Repl::~Repl() = default;

void Repl::load_history() {
  if (options_.history_path.empty()) return;
  std::ifstream in(options_.history_path);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) history_.push_back(line);
  }
}

void Repl::append_history(const std::string& line) {
  history_.push_back(line);
  if (options_.history_path.empty()) return;
  std::ofstream out(options_.history_path, std::ios::app);
  out << line << "\n";
}

void Repl::print_crash_if_new() {
  if (session_.crashed() && !was_crashed_) {
    was_crashed_ = true;
    out_ << "[!] controller crashed:\n";
    if (auto regs = session_.last_crash_registers()) {
      out_ << core::format_register_dump(*regs);
    }
    out_ << "    run 'reset' to recover\n";
  } else if (!session_.crashed()) {
    was_crashed_ = false;
  }
}

int Repl::run(std::istream& in) {
  bool tty = options_.interactive && &in == &std::cin &&
             isatty(fileno(stdin)) != 0;
  for (;;) {
    std::string line;
    if (tty) {
      bool eof = false;
      line = read_line_interactive(in, eof);
      if (eof) break;
    } else {
      if (!std::getline(in, line)) break;
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();
    execute_line(line);
    if (transport_lost_) return 1;
  }
  return 0;
}

void Repl::execute_line(const std::string& line) {
  std::string trimmed = line;
  size_t first = trimmed.find_first_not_of(" \t");
  if (first == std::string::npos || trimmed[first] == '#') return;
  if (options_.echo && !options_.interactive) {
    out_ << "> " << line << "\n";
  }
  append_history(line);
  try {
    Command command = parse_command(line);
    execute(command);
  } catch (const Error& e) {
    if (e.code() == Errc::ParseError) {
      out_ << "parse error at column " << e.offset() << ": " << e.what()
           << "\n";
    } else if (e.code() == Errc::ChipCrashed) {
      out_ << "error: " << e.what() << "\n";
      print_crash_if_new();
    } else if (e.code() == Errc::TransportLost) {
      out_ << "transport lost: " << e.what() << "\n";
      transport_lost_ = true;
    } else {
      out_ << "error: " << errc_name(e.code()) << ": " << e.what() << "\n";
    }
    return;
  } catch (const std::exception& e) {
    out_ << "error: " << e.what() << "\n";
    return;
  }
  print_crash_if_new();
}

void Repl::execute(const Command& command) {
  std::visit(
      [this](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, CmdConnect>) {
          do_connect(c);
        } else if constexpr (std::is_same_v<T, CmdInfoConnections>) {
          do_info_connections();
        } else if constexpr (std::is_same_v<T, CmdReadMem>) {
          do_readmem(c);
        } else if constexpr (std::is_same_v<T, CmdWriteMem>) {
          do_writemem(c);
        } else if constexpr (std::is_same_v<T, CmdSearchMem>) {
          do_searchmem(c);
        } else if constexpr (std::is_same_v<T, CmdLaunch>) {
          do_launch(c);
        } else if constexpr (std::is_same_v<T, CmdPatchRom>) {
          do_patchrom(c);
        } else if constexpr (std::is_same_v<T, CmdLoadHcd>) {
          do_loadhcd(c);
        } else if constexpr (std::is_same_v<T, CmdSendHci>) {
          do_sendhci(c);
        } else if constexpr (std::is_same_v<T, CmdSendLmp>) {
          do_sendlmp(c);
        } else if constexpr (std::is_same_v<T, CmdMonitor>) {
          do_monitor(c);
        } else if constexpr (std::is_same_v<T, CmdTracepoint>) {
          do_tracepoint(c);
        } else if constexpr (std::is_same_v<T, CmdScanBpcs>) {
          do_scan_bpcs();
        } else if constexpr (std::is_same_v<T, CmdMacFilter>) {
          do_macfilter(c);
        } else if constexpr (std::is_same_v<T, CmdDemo>) {
          do_demo(c);
        } else if constexpr (std::is_same_v<T, CmdReset>) {
          do_reset();
        }
      },
      command);
}

void Repl::do_connect(const CmdConnect& c) {
  auto entry = session_.connect(c.mac);
  current_handle_ = entry.handle;
  char buf[96];
  snprintf(buf, sizeof(buf), "connection to %s: %s, handle 0x%04x\n",
           c.mac.to_string().c_str(), state_name(entry.state).c_str(),
           entry.handle);
  out_ << buf;
  if (entry.state == sim::ConnectionState::Failed) {
    out_ << "  (failed entries stay usable for about 30 s)\n";
  }
}

void Repl::do_info_connections() {
  auto list = session_.connections();
  if (list.empty()) {
    out_ << "no connections\n";
    return;
  }
  for (const auto& c : list) {
    char buf[160];
    snprintf(buf, sizeof(buf), "handle 0x%04x  %s  %-11s %s", c.handle,
             c.peer_mac.to_string().c_str(), state_name(c.state).c_str(),
             c.role == sim::LinkRole::Master ? "master" : "slave");
    out_ << buf;
    if (c.has_peer_version) {
      snprintf(buf, sizeof(buf), "  lmp %u/%u", c.peer_version,
               c.peer_subversion);
      out_ << buf;
    }
    if (c.rejection_count > 0) {
      snprintf(buf, sizeof(buf), "  rejections %u", c.rejection_count);
      out_ << buf;
    }
    out_ << "\n";
  }
}

void Repl::do_readmem(const CmdReadMem& c) {
  Bytes data = session_.read_memory(c.address, c.length);
  out_ << hexdump(c.address, data);
}

void Repl::do_writemem(const CmdWriteMem& c) {
  auto result = session_.write_memory(c.address, c.data, true);
  if (result == core::WriteResult::RomNoEffect) {
    out_ << "target is ROM: write had no effect, use patchrom\n";
  } else {
    out_ << "wrote " << c.data.size() << " bytes\n";
  }
}

void Repl::do_searchmem(const CmdSearchMem& c) {
  auto hits = session_.search_memory(c.pattern);
  if (hits.empty()) {
    out_ << "no matches\n";
    return;
  }
  for (uint32_t address : hits) {
    char buf[32];
    snprintf(buf, sizeof(buf), "match at 0x%08x\n", address);
    out_ << buf;
  }
}

void Repl::do_launch(const CmdLaunch& c) {
  session_.launch(c.address);
  char buf[32];
  snprintf(buf, sizeof(buf), "launched 0x%08x\n", c.address);
  out_ << buf;
}

void Repl::do_patchrom(const CmdPatchRom& c) {
  uint8_t slot = session_.patch_rom(c.address, c.word);
  char buf[64];
  snprintf(buf, sizeof(buf), "patched 0x%08x = 0x%08x (slot %u)\n", c.address,
           c.word, slot);
  out_ << buf;
}

void Repl::do_loadhcd(const CmdLoadHcd& c) {
  std::ifstream in(c.path, std::ios::binary);
  if (!in) {
    out_ << "error: cannot open " << c.path << "\n";
    return;
  }
  Bytes bytes((std::istreambuf_iterator<char>(in)),
              std::istreambuf_iterator<char>());
  auto file = hcd::parse_hcd(bytes, session_.profile().vendor_opcodes);
  auto result = session_.load_hcd(file);
  out_ << "applied " << result.records << " records, terminated="
       << (result.terminated ? "true" : "false") << "\n";
  if (!result.terminated) {
    out_ << "  (no Launch_RAM terminator; chip is still in download mode)\n";
  }
}

void Repl::do_sendhci(const CmdSendHci& c) {
  auto cmd = hci::decode_command(c.bytes);
  auto events = session_.send_raw(cmd);
  for (const auto& evt : events) {
    out_ << "event " << to_hex({&evt.event_code, 1}) << ": "
         << to_hex_spaced(evt.params) << "\n";
  }
  if (events.empty()) out_ << "no response\n";
}

void Repl::do_sendlmp(const CmdSendLmp& c) {
  if (!current_handle_) {
    out_ << "error: no connection (use connect first)\n";
    return;
  }
  lmp::LmpPdu pdu{0, c.opcode, std::nullopt, c.payload};
  if (lmp::is_escape_opcode(c.opcode) && !c.payload.empty()) {
    pdu.ext_opcode = c.payload[0];
    pdu.payload.assign(c.payload.begin() + 1, c.payload.end());
  }
  auto outcome = session_.send_lmp(*current_handle_, pdu, c.fuzz);
  out_ << (outcome == sim::SendOutcome::Sent
               ? "sent\n"
               : "silently dropped (length/opcode check); monitor hooks saw "
                 "it\n");
}

void Repl::do_monitor(const CmdMonitor& c) {
  if (c.layer == CmdMonitor::Layer::Hci) {
    if (c.start) {
      if (c.file) {
        hci_file_ = std::make_unique<MonitorFile>();
        hci_file_->stream.open(*c.file, std::ios::binary);
        if (!hci_file_->stream) {
          out_ << "error: cannot open " << *c.file << "\n";
          hci_file_.reset();
          return;
        }
        auto* file = hci_file_.get();
        file->writer = std::make_unique<snoop::CaptureWriter>(
            [file](ByteView bytes) {
              file->stream.write(reinterpret_cast<const char*>(bytes.data()),
                                 static_cast<std::streamsize>(bytes.size()));
            },
            snoop::SnoopHeader::btsnoop_hci());
      } else {
        hci_inline_ = true;
      }
      if (!hci_sink_id_) {
        hci_sink_id_ =
            session_.add_hci_sink([this](const core::HciTrafficRecord& rec) {
              if (hci_file_ && hci_file_->writer) {
                hci_file_->writer->write_record(snoop::SnoopRecord::of(
                    rec.h4_bytes, static_cast<int64_t>(rec.timestamp_us)));
              }
              if (hci_inline_) {
                out_ << (rec.direction == core::HciDirection::HostToController
                             ? "[hci cmd] "
                             : "[hci evt] ")
                     << to_hex_spaced(rec.h4_bytes) << "\n";
              }
            });
      }
      out_ << "hci monitor started"
           << (c.file ? " -> " + *c.file : std::string()) << "\n";
    } else {
      if (hci_sink_id_) {
        session_.remove_hci_sink(*hci_sink_id_);
        hci_sink_id_.reset();
      }
      hci_inline_ = false;
      hci_file_.reset();
      out_ << "hci monitor stopped\n";
    }
    return;
  }

  if (c.start) {
    if (c.file) {
      lmp_file_ = std::make_unique<MonitorFile>();
      lmp_file_->stream.open(*c.file, std::ios::binary);
      if (!lmp_file_->stream) {
        out_ << "error: cannot open " << *c.file << "\n";
        lmp_file_.reset();
        return;
      }
      auto* file = lmp_file_.get();
      file->writer = std::make_unique<snoop::CaptureWriter>(
          [file](ByteView bytes) {
            file->stream.write(reinterpret_cast<const char*>(bytes.data()),
                               static_cast<std::streamsize>(bytes.size()));
          },
          snoop::SnoopHeader::rfc1761(snoop::kDatalinkLmpMonitor));
    } else {
      lmp_inline_ = true;
    }
    session_.install_lmp_monitor(
        [this](const sim::LmpMonitorRecord& rec, uint64_t ts_us) {
          if (lmp_file_ && lmp_file_->writer) {
            lmp_file_->writer->write_record(snoop::SnoopRecord::of(
                sim::encode_monitor_record(rec), static_cast<int64_t>(ts_us)));
          }
          if (lmp_inline_) {
            auto dissection = lmp::describe(lmp::decode_pdu(rec.pdu_bytes));
            out_ << (rec.direction == sim::LmpMonitorRecord::Direction::Rx
                         ? "[lmp rx] "
                         : "[lmp tx] ")
                 << dissection.text << "\n";
          }
        });
    out_ << "lmp monitor started"
         << (c.file ? " -> " + *c.file : std::string()) << "\n";
  } else {
    session_.remove_lmp_monitor();
    lmp_inline_ = false;
    lmp_file_.reset();
    out_ << "lmp monitor stopped\n";
  }
}

void Repl::do_tracepoint(const CmdTracepoint& c) {
  if (c.add) {
    session_.set_tracepoint_sink(
        [this](uint32_t address, const sim::RegisterSet& regs) {
          char buf[64];
          snprintf(buf, sizeof(buf), "[tracepoint] 0x%x hit, disarmed\n",
                   address);
          out_ << buf << core::format_register_dump(regs);
        });
    session_.add_tracepoint(c.address);
    char buf[48];
    snprintf(buf, sizeof(buf), "tracepoint armed at 0x%x\n", c.address);
    out_ << buf;
  } else {
    session_.remove_tracepoint(c.address);
    char buf[48];
    snprintf(buf, sizeof(buf), "tracepoint removed from 0x%x\n", c.address);
    out_ << buf;
  }
}

void Repl::do_scan_bpcs() {
  if (!current_handle_) {
    out_ << "error: no connection (use connect first)\n";
    return;
  }
  auto report = session_.scan_bpcs(*current_handle_);
  switch (report.verdict) {
    case core::BpcsScanReport::Verdict::Vulnerable:
      out_ << "verdict: VULNERABLE (no LMP_not_accepted for the probe)\n";
      break;
    case core::BpcsScanReport::Verdict::NotVulnerable:
      out_ << "verdict: not vulnerable (probe rejected)\n";
      break;
    case core::BpcsScanReport::Verdict::NoResponse:
      out_ << "verdict: no response\n";
      break;
  }
  if (report.has_peer_version) {
    out_ << "peer lmp version " << static_cast<int>(report.peer_version)
         << ", subversion " << report.peer_subversion << "\n";
  }
}

void Repl::do_macfilter(const CmdMacFilter& c) {
  if (c.add) {
    filter_whitelist_.push_back(*c.mac);
    session_.install_mac_filter(filter_whitelist_);
    out_ << "mac filter active, " << filter_whitelist_.size()
         << " address(es) whitelisted\n";
  } else {
    filter_whitelist_.clear();
    session_.clear_mac_filter();
    out_ << "mac filter cleared\n";
  }
}

void Repl::do_demo(const CmdDemo& c) {
  switch (c.kind) {
    case CmdDemo::Kind::Nino: {
      security::nino_override(session_);
      Bytes value = session_.read_memory(
          session_.profile().io_capability_address, 1);
      char buf[80];
      snprintf(buf, sizeof(buf),
               "io capability variable at 0x%x overridden to 0x%02x\n",
               session_.profile().io_capability_address, value[0]);
      out_ << buf;
      auto peer_caps = security::IoCapability::DisplayYesNo;
      if (world_.victim != nullptr) {
        peer_caps = static_cast<security::IoCapability>(
            world_.victim->profile().io_capability & 0x03);
      }
      bool enforce = !c.args.empty() && c.args[0] == "enforce";
      auto outcome = security::simulate_pairing(
          session_, peer_caps,
          enforce ? std::optional(security::IoCapability::DisplayYesNo)
                  : std::nullopt);
      out_ << "pairing with " << security::io_capability_name(peer_caps)
           << " peer: " << security::association_model_name(outcome.model);
      if (outcome.aborted) {
        out_ << ", aborted (peer cached different capabilities), no warning "
                "shown\n";
      } else {
        out_ << ", completed without numeric comparison\n";
      }
      break;
    }
    case CmdDemo::Kind::Ecdh: {
      int trials = 10000;
      if (!c.args.empty()) trials = std::stoi(c.args[0]);
      ecdh::ExperimentConfig config;
      config.trials = trials;
      config.seed = options_.seed;
      char buf[96];
      out_ << "invalid-curve experiment, tiny curve, " << trials
           << " trials, seed 0x" << std::hex << options_.seed << std::dec
           << "\n";
      config.victim_validates = true;
      auto validated = ecdh::invalid_curve_experiment(config);
      snprintf(buf, sizeof(buf), "  victim validates       : rate %.4f\n",
               validated.success_rate);
      out_ << buf;
      config.victim_validates = false;
      config.attacker_parity = ecdh::AttackerKeyParity::Random;
      auto random_parity = ecdh::invalid_curve_experiment(config);
      snprintf(buf, sizeof(buf), "  attacker parity random : rate %.4f\n",
               random_parity.success_rate);
      out_ << buf;
      config.attacker_parity = ecdh::AttackerKeyParity::Even;
      auto even = ecdh::invalid_curve_experiment(config);
      snprintf(buf, sizeof(buf), "  attacker key even      : rate %.4f\n",
               even.success_rate);
      out_ << buf;
      break;
    }
    case CmdDemo::Kind::Jammer: {
      if (!current_handle_ || world_.victim == nullptr) {
        out_ << "error: demo jammer needs an in-process victim connection\n";
        return;
      }
      try {
        auto outcome = security::jammer_sequence(session_, *current_handle_,
                                                 *world_.victim);
        char buf[96];
        snprintf(buf, sizeof(buf),
                 "victim: %s, afh mode %u, hopping %s, tx %d MHz\n",
                 sim::chip_mode_name(outcome.victim_mode),
                 outcome.victim_afh_mode,
                 outcome.hopping_mode == 0 ? "single-frequency" : "enabled",
                 outcome.tx_frequency_mhz);
        out_ << "jammer sequence completed\n" << buf;
      } catch (const Error& e) {
        if (e.code() == Errc::StepFailed) {
          out_ << "jammer sequence failed: " << e.what() << "\n";
        } else {
          throw;
        }
      }
      break;
    }
  }
}

void Repl::do_reset() {
  session_.reset();
  lmp_inline_ = false;
  lmp_file_.reset();
  out_ << "controller reset\n";
}

std::string Repl::read_line_interactive(std::istream&, bool& eof) {
  // Minimal raw-mode editor: printable input, backspace, arrow-up/-down
  // history recall.
  termios saved{};
  tcgetattr(STDIN_FILENO, &saved);
  termios raw = saved;
  raw.c_lflag &= ~static_cast<tcflag_t>(ICANON | ECHO);
  tcsetattr(STDIN_FILENO, TCSANOW, &raw);

  std::string line;
  size_t history_pos = history_.size();
  auto redraw = [&] {
    out_ << "\r\x1b[Kbtlab> " << line;
    out_.flush();
  };
  redraw();
  for (;;) {
    char ch;
    ssize_t n = ::read(STDIN_FILENO, &ch, 1);
    if (n <= 0 || ch == 4) {  // EOF / ctrl-d on empty line
      if (line.empty()) {
        eof = true;
        break;
      }
      continue;
    }
    if (ch == '\n' || ch == '\r') {
      out_ << "\n";
      break;
    }
    if (ch == 0x7f || ch == 8) {
      if (!line.empty()) line.pop_back();
      redraw();
      continue;
    }
    if (ch == 0x1b) {
      char seq[2] = {0, 0};
      if (::read(STDIN_FILENO, &seq[0], 1) == 1 &&
          ::read(STDIN_FILENO, &seq[1], 1) == 1 && seq[0] == '[') {
        if (seq[1] == 'A' && history_pos > 0) {
          history_pos--;
          line = history_[history_pos];
          redraw();
        } else if (seq[1] == 'B') {
          if (history_pos + 1 < history_.size()) {
            history_pos++;
            line = history_[history_pos];
          } else {
            history_pos = history_.size();
            line.clear();
          }
          redraw();
        }
      }
      continue;
    }
    if (ch >= 0x20 && ch < 0x7f) {
      line.push_back(ch);
      redraw();
    }
  }
  tcsetattr(STDIN_FILENO, TCSANOW, &saved);
  return line;
}

}  // namespace btlab::cli
