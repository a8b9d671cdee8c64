#include "btlab/hci.hpp"

#include <fstream>

#include "btlab/errors.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace btlab;
using namespace btlab::hci;

TEST_CASE("NOP command encodes to three zero bytes") {
  HciCommand nop;
  CHECK(encode_command(nop) == Bytes{0x00, 0x00, 0x00});
}

TEST_CASE("Launch_RAM apply-patches pseudo-address wire form") {
  VendorOpcodeTable table;
  HciCommand cmd = build_vendor_command(LaunchRam{kLaunchApplyPatches}, table);
  Bytes wire = encode_command(cmd);
  uint16_t v = table.launch_ram().value();
  CHECK(wire == Bytes{static_cast<uint8_t>(v & 0xff),
                      static_cast<uint8_t>(v >> 8), 0x04, 0xff, 0xff, 0xff,
                      0xff});
}

TEST_CASE("Write_RAM parameter layout is address-first little-endian") {
  VendorOpcodeTable table;
  HciCommand cmd = build_vendor_command(
      WriteRam{0x00200000, {0xde, 0xad, 0xbe, 0xef}}, table);
  CHECK(cmd.params == Bytes{0x00, 0x00, 0x20, 0x00, 0xde, 0xad, 0xbe, 0xef});
  CHECK(encode_command(cmd)[2] == 0x08);
}

TEST_CASE("Read_RAM parameter layout") {
  VendorOpcodeTable table;
  HciCommand cmd = build_vendor_command(ReadRam{0x000d0000, 32}, table);
  CHECK(cmd.params == Bytes{0x00, 0x00, 0x0d, 0x00, 0x20});
}

TEST_CASE("Download_Minidriver carries no parameters") {
  VendorOpcodeTable table;
  HciCommand cmd = build_vendor_command(DownloadMinidriver{}, table);
  CHECK(cmd.params.empty());
}

TEST_CASE("Write_RAM at a ROM address still encodes") {
  // Rejecting ROM writes is the controller's job, not the codec's.
  VendorOpcodeTable table;
  HciCommand cmd =
      build_vendor_command(WriteRam{0x00001000, {0xaa}}, table);
  CHECK(cmd.params.size() == 5);
}

TEST_CASE("Launch_RAM params are always four bytes") {
  VendorOpcodeTable table;
  test::TestRng rng(0x1a2b);
  for (int i = 0; i < 200; i++) {
    HciCommand cmd = build_vendor_command(LaunchRam{rng.u32()}, table);
    CHECK(cmd.params.size() == 4);
  }
}

TEST_CASE("oversized parameters are rejected") {
  HciCommand cmd;
  cmd.params.assign(256, 0);
  CHECK_THROWS_AS(encode_command(cmd), Error);
  try {
    encode_command(cmd);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::OversizedParams);
  }
}

TEST_CASE("decode NOP in command direction") {
  auto packet = decode_packet(Bytes{0x00, 0x00, 0x00},
                              PacketDirection::HostToController);
  auto& cmd = std::get<HciCommand>(packet);
  CHECK(cmd.opcode.value() == 0);
  CHECK(cmd.params.empty());
}

TEST_CASE("decode Command Complete in event direction") {
  auto packet = decode_packet(Bytes{0x0e, 0x04, 0x01, 0x4d, 0xfc, 0x00},
                              PacketDirection::ControllerToHost);
  auto& evt = std::get<HciEvent>(packet);
  CHECK(evt.event_code == kEventCommandComplete);
  CHECK(evt.params.size() == 4);
}

TEST_CASE("decode errors: truncation and trailing bytes") {
  CHECK_THROWS_AS(decode_command(Bytes{0x00, 0x00}), Error);
  CHECK_THROWS_AS(decode_command(Bytes{0x00, 0x00, 0x02, 0xaa}), Error);
  try {
    decode_command(Bytes{0x00, 0x00, 0x00, 0xaa});
  } catch (const Error& e) {
    CHECK(e.code() == Errc::LengthMismatch);
  }
}

TEST_CASE("command encode/decode round trip on fuzzed packets") {
  test::TestRng rng(0xc0de);
  for (int i = 0; i < 2000; i++) {
    HciCommand cmd;
    cmd.opcode = HciOpcode::from_value(static_cast<uint16_t>(rng.u32()));
    cmd.params = rng.bytes(rng.below(256));
    Bytes wire = encode_command(cmd);
    CHECK(decode_command(wire) == cmd);

    HciEvent evt;
    evt.event_code = rng.byte();
    evt.params = rng.bytes(rng.below(256));
    CHECK(decode_event(encode_event(evt)) == evt);
  }
}

TEST_CASE("vendor command parse is the inverse of build") {
  VendorOpcodeTable table;
  test::TestRng rng(0xfeed);
  for (int i = 0; i < 500; i++) {
    VendorCommandKind kind;
    switch (rng.below(4)) {
      case 0: kind = ReadRam{rng.u32(), rng.byte()}; break;
      case 1: kind = WriteRam{rng.u32(), rng.bytes(1 + rng.below(200))}; break;
      case 2: kind = LaunchRam{rng.u32()}; break;
      default: kind = DownloadMinidriver{}; break;
    }
    HciCommand cmd = build_vendor_command(kind, table);
    VendorCommandKind parsed;
    REQUIRE(parse_vendor_command(cmd, table, parsed));
    CHECK(parsed == kind);
  }
}

TEST_CASE("parse_command_complete extracts opcode, status and payload") {
  VendorOpcodeTable table;
  Bytes data(32, 0x5a);
  HciEvent evt = build_command_complete(table.read_ram(), 0x00, data);
  auto view = parse_command_complete(evt);
  CHECK(view.opcode == table.read_ram());
  CHECK(view.status == 0x00);
  CHECK(view.payload.size() == 32);
}

TEST_CASE("command complete with failure status may carry no payload") {
  HciEvent evt = build_command_complete(HciOpcode{0x3f, 0x4d}, 0x0c);
  auto view = parse_command_complete(evt);
  CHECK(view.status == 0x0c);
  CHECK(view.payload.empty());
}

TEST_CASE("parse_command_complete rejects other event codes") {
  HciEvent evt;
  evt.event_code = kEventDisconnectionComplete;
  evt.params = {0x00, 0x0b, 0x00, 0x13};
  CHECK_THROWS_AS(parse_command_complete(evt), Error);
  try {
    parse_command_complete(evt);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::WrongEventCode);
  }
}

TEST_CASE("vendor opcode table defaults can be overridden by a profile") {
  auto profile = test::bcm4339();
  CHECK(profile.vendor_opcodes.read_ram().value() == 0xfc4d);
  CHECK(profile.vendor_opcodes.write_ram().value() == 0xfc4c);
  CHECK(profile.vendor_opcodes.launch_ram().value() == 0xfc4e);
  CHECK(profile.vendor_opcodes.download_minidriver().value() == 0xfc2e);
}

TEST_CASE("golden vectors from the fixture file") {
  // name:hex lines; each decodes and re-encodes byte-exactly.
  std::ifstream f(test::test_data_dir() + "/hci_golden.txt");
  REQUIRE(f.is_open());
  std::string line;
  int checked = 0;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto colon = line.find(':');
    REQUIRE(colon != std::string::npos);
    Bytes wire = parse_hex(line.substr(colon + 1));
    HciCommand cmd = decode_command(wire);
    CHECK(encode_command(cmd) == wire);
    checked++;
  }
  CHECK(checked >= 3);
}
