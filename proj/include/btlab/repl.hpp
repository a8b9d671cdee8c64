#pragma once

#include <fstream>
#include <iosfwd>
#include <memory>

#include "btlab/command.hpp"
#include "btlab/controller.hpp"
#include "btlab/session.hpp"
#include "btlab/snoop.hpp"

namespace btlab::cli {

struct ReplOptions {
  std::string history_path;  // empty = no history persistence
  uint64_t seed = 0x1337;
  bool interactive = false;  // line editor + prompt
  bool echo = true;          // echo commands in script mode
};

// Everything the demos need to see besides the session: the simulated
// peer under test, when one exists in this process.
struct WorldView {
  sim::Controller* victim = nullptr;
  MacAddress victim_mac;
};

class Repl {
 public:
  Repl(core::Session& session, WorldView world, std::ostream& out,
       ReplOptions options);
  ~Repl();

  // Reads one command per line until EOF. Errors are reported per command
  // and never terminate the loop; the exit code is nonzero only when the
  // transport is lost.
  int run(std::istream& in);

  void execute_line(const std::string& line);

 private:
  struct MonitorFile {
    std::ofstream stream;
    std::unique_ptr<snoop::CaptureWriter> writer;
  };

  void execute(const Command& command);
  void print_crash_if_new();

  void do_connect(const CmdConnect&);
  void do_info_connections();
  void do_readmem(const CmdReadMem&);
  void do_writemem(const CmdWriteMem&);
  void do_searchmem(const CmdSearchMem&);
  void do_launch(const CmdLaunch&);
  void do_patchrom(const CmdPatchRom&);
  void do_loadhcd(const CmdLoadHcd&);
  void do_sendhci(const CmdSendHci&);
  void do_sendlmp(const CmdSendLmp&);
  void do_monitor(const CmdMonitor&);
  void do_tracepoint(const CmdTracepoint&);
  void do_scan_bpcs();
  void do_macfilter(const CmdMacFilter&);
  void do_demo(const CmdDemo&);
  void do_reset();

  void load_history();
  void append_history(const std::string& line);
  std::string read_line_interactive(std::istream& in, bool& eof);

  core::Session& session_;
  WorldView world_;
  std::ostream& out_;
  ReplOptions options_;

  std::optional<uint16_t> current_handle_;
  bool was_crashed_ = false;
  bool transport_lost_ = false;

  bool lmp_inline_ = false;
  bool hci_inline_ = false;
  std::optional<size_t> hci_sink_id_;
  std::unique_ptr<MonitorFile> hci_file_;
  std::unique_ptr<MonitorFile> lmp_file_;
  std::vector<MacAddress> filter_whitelist_;

  std::vector<std::string> history_;
};

}  // namespace btlab::cli
