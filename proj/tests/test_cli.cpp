#include "btlab/command.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "btlab/errors.hpp"
#include "btlab/repl.hpp"
#include "btlab/session.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace btlab;
using namespace btlab::cli;

namespace {

// Every grammar production, one spelling each.
const char* kGrammarLines[] = {
    "connect de:ad:be:ef:00:00",
    "info connections",
    "readmem 0x200000 16",
    "readmem 512 16",
    "writemem 0x200100 deadbeef",
    "searchmem c0ffee",
    "searchmem ascii:patchram",
    "launch 0x227c00",
    "launch 0xffffffff",
    "patchrom 0x2000 0xdeadbeef",
    "loadhcd firmware.hcd",
    "sendhci 4dfc0500000d0020",
    "sendlmp 0x00 95",
    "sendlmp --fuzz 60 0000000000ffffffffffffffff0000",
    "sendlmp 49",
    "monitor hci start",
    "monitor lmp start --file trace.cap",
    "monitor lmp stop",
    "tp add 0x3f3f4",
    "tp remove 0x3f3f4",
    "scan bpcs",
    "macfilter add 11:22:33:44:55:66",
    "macfilter clear",
    "demo nino",
    "demo ecdh 5000",
    "demo jammer",
    "reset",
};

struct World {
  World() {
    auto victim_profile = test::bcm4339();
    victim_profile.mac_address = "de:ad:be:ef:00:00";
    attacker = std::make_unique<sim::Controller>(test::bcm4339());
    victim = std::make_unique<sim::Controller>(victim_profile);
    medium.attach(*attacker);
    medium.attach(*victim);
    session = std::make_unique<core::Session>(
        test::bcm4339(), std::make_unique<core::InProcessTransport>(*attacker));
  }
  sim::Medium medium;
  std::unique_ptr<sim::Controller> attacker;
  std::unique_ptr<sim::Controller> victim;
  std::unique_ptr<core::Session> session;
};

std::unique_ptr<Repl> make_repl(World& w, std::ostream& out) {
  ReplOptions options;
  options.interactive = false;
  options.echo = false;
  WorldView view;
  view.victim = w.victim.get();
  view.victim_mac = MacAddress::parse("de:ad:be:ef:00:00");
  return std::make_unique<Repl>(*w.session, view, out, options);
}

}  // namespace

TEST_CASE("every grammar production parses and round-trips") {
  for (const char* line : kGrammarLines) {
    CAPTURE(line);
    Command first = parse_command(line);
    std::string canonical = format_command(first);
    Command second = parse_command(canonical);
    CHECK(first == second);
    // format is a fixed point on its own output
    CHECK(format_command(second) == canonical);
  }
}

TEST_CASE("opcode arguments are decimal unless 0x-prefixed") {
  auto a = std::get<CmdSendLmp>(parse_command("sendlmp 60 00"));
  CHECK(a.opcode == 60);
  auto b = std::get<CmdSendLmp>(parse_command("sendlmp 0x60 00"));
  CHECK(b.opcode == 0x60);
  auto c = std::get<CmdSendLmp>(parse_command("sendlmp 0x00 95"));
  CHECK(c.opcode == 0);
  CHECK(c.payload == Bytes{0x95});
}

TEST_CASE("tracepoint command parses hex addresses") {
  auto cmd = std::get<CmdTracepoint>(parse_command("tp add 0x3f3f4"));
  CHECK(cmd.add);
  CHECK(cmd.address == 0x3f3f4);
}

TEST_CASE("spaced hex payloads are joined") {
  auto cmd = std::get<CmdWriteMem>(
      parse_command("writemem 0x200000 de ad be ef"));
  CHECK(cmd.data == Bytes{0xde, 0xad, 0xbe, 0xef});
}

TEST_CASE("ascii search keeps spaces after the prefix") {
  auto cmd = std::get<CmdSearchMem>(parse_command("searchmem ascii:ab cd"));
  CHECK(cmd.ascii);
  CHECK(cmd.ascii_text == "ab cd");
}

TEST_CASE("parse errors carry a column and an expected hint") {
  try {
    parse_command("readmem zz 16");
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ParseError);
    CHECK(e.offset() == 8);
    CHECK(std::string(e.what()).find("address") != std::string::npos);
  }
  try {
    parse_command("monitor lmp sideways");
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.offset() == 12);
    CHECK(std::string(e.what()).find("start") != std::string::npos);
  }
  try {
    parse_command("frobnicate");
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.offset() == 0);
  }
  CHECK_THROWS_AS(parse_command("sendlmp 128 00"), Error);
  CHECK_THROWS_AS(parse_command("connect de:ad:be"), Error);
}

TEST_CASE("readmem renders a hexdump with an address gutter") {
  World w;
  std::ostringstream out;
  auto repl = make_repl(w, out);
  repl->execute_line("readmem 0x200000 16");
  CHECK(out.str() ==
        "00200000  00 00 00 00 00 00 00 00  00 00 00 00 00 00 00 00  "
        "|................|\n");
}

TEST_CASE("a crash renders the register dump and the loop continues") {
  World w;
  std::ostringstream out;
  auto repl = make_repl(w, out);
  // Raw Read_RAM at an unmapped address: the chip crashes.
  repl->execute_line("sendhci 4dfc050000100004");
  CHECK(out.str().find("controller crashed") != std::string::npos);
  CHECK(out.str().find("pc: ") != std::string::npos);
  CHECK(out.str().find("r12:") != std::string::npos);
  CHECK(out.str().find("reset") != std::string::npos);

  // Commands against the crashed chip report, never hang.
  out.str("");
  repl->execute_line("readmem 0x200000 4");
  CHECK(out.str().find("error") != std::string::npos);

  out.str("");
  repl->execute_line("reset");
  repl->execute_line("readmem 0x200000 4");
  CHECK(out.str().find("00200000") != std::string::npos);
}

TEST_CASE("monitor inline lines dissect both directions") {
  World w;
  std::ostringstream out;
  auto repl = make_repl(w, out);
  repl->execute_line("connect de:ad:be:ef:00:00");
  repl->execute_line("monitor lmp start");
  out.str("");
  repl->execute_line("sendlmp 37 070f000961");
  std::string text = out.str();
  CHECK(text.find("[lmp tx] LMP tid=0 opcode=37 LMP_version_req") !=
        std::string::npos);
  CHECK(text.find("[lmp rx] LMP tid=0 opcode=38 LMP_version_res") !=
        std::string::npos);
  CHECK(text.find("sent") != std::string::npos);
}

TEST_CASE("unknown commands never terminate the loop") {
  World w;
  std::ostringstream out;
  auto repl = make_repl(w, out);
  std::istringstream script(
      "bogus command\ndemo ecdh notanumber\nreadmem 0x200000 4\n");
  int code = repl->run(script);
  CHECK(code == 0);
  CHECK(out.str().find("parse error") != std::string::npos);
  CHECK(out.str().find("00200000") != std::string::npos);
}

TEST_CASE("history file persists executed commands") {
  World w;
  std::string path = "/tmp/btlab_test_history";
  std::remove(path.c_str());
  {
    std::ostringstream out;
    ReplOptions options;
    options.interactive = false;
    options.echo = false;
    options.history_path = path;
    WorldView view;
    Repl repl(*w.session, view, out, options);
    repl.execute_line("readmem 0x200000 4");
    repl.execute_line("info connections");
  }
  std::ifstream in(path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == "readmem 0x200000 4");
  CHECK(lines[1] == "info connections");
  std::remove(path.c_str());
}

TEST_CASE("scripted end-to-end run against the golden transcript") {
  std::string script = test::test_data_dir() + "/cli_e2e.txt";
  std::string golden_path = test::test_data_dir() + "/cli_e2e_golden.txt";
  std::string out_path = "/tmp/btlab_cli_e2e_out.txt";
  std::string command = std::string(BTLAB_CLI_PATH) + " --script " + script +
                        " --seed 0x1337 > " + out_path + " 2>/dev/null";
  int code = std::system(command.c_str());
  CHECK(code == 0);

  std::ifstream got_file(out_path);
  std::stringstream got;
  got << got_file.rdbuf();
  std::ifstream golden_file(golden_path);
  REQUIRE(golden_file.is_open());
  std::stringstream golden;
  golden << golden_file.rdbuf();
  CHECK(got.str() == golden.str());
  std::remove(out_path.c_str());
}
