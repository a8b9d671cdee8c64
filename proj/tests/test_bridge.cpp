#include "btlab/bridge.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <thread>

#include "btlab/errors.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace btlab;
using namespace btlab::core;
using namespace btlab::capture;

namespace {

struct World {
  World() : attacker(test::bcm4339()) {
    session = std::make_unique<Session>(
        test::bcm4339(), std::make_unique<InProcessTransport>(attacker));
  }
  sim::Controller attacker;
  std::unique_ptr<Session> session;
};

int connect_local(uint16_t port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(fd >= 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
  REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) ==
          0);
  return fd;
}

Bytes read_available(int fd, int ms_budget = 500) {
  Bytes out;
  auto deadline =
      std::chrono::steady_clock::now() + std::chrono::milliseconds(ms_budget);
  while (std::chrono::steady_clock::now() < deadline) {
    uint8_t buf[4096];
    ssize_t n = ::recv(fd, buf, sizeof(buf), MSG_DONTWAIT);
    if (n > 0) {
      out.insert(out.end(), buf, buf + n);
      continue;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  return out;
}

void wait_for_clients(BridgeServer& bridge, size_t n) {
  for (int spin = 0; spin < 200; spin++) {
    if (bridge.client_count() >= n) return;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  FAIL("bridge clients did not attach");
}

}  // namespace

TEST_CASE("out port streams commands and their completions as records") {
  World w;
  BridgeServer bridge(*w.session, 0, 0);
  bridge.start();
  int fd = connect_local(bridge.out_port());
  wait_for_clients(bridge, 1);

  w.session->read_memory(0x200000, 8);
  Bytes stream = read_available(fd);
  ::close(fd);
  bridge.stop();

  snoop::StreamReader reader;
  reader.feed(stream);
  REQUIRE(reader.header_ready());
  CHECK(reader.header() == snoop::SnoopHeader::btsnoop_hci());
  auto records = reader.take_records();
  REQUIRE(records.size() == 2);
  CHECK(records[0].data[0] == snoop::kH4Command);
  CHECK(records[1].data[0] == snoop::kH4Event);
  // The command is the Read_RAM we issued.
  auto cmd = hci::decode_command(
      ByteView(records[0].data.data() + 1, records[0].data.size() - 1));
  CHECK(cmd.opcode == w.session->profile().vendor_opcodes.read_ram());
}

TEST_CASE("two readers each receive the full stream") {
  World w;
  BridgeServer bridge(*w.session, 0, 0);
  bridge.start();
  int fd1 = connect_local(bridge.out_port());
  int fd2 = connect_local(bridge.out_port());
  wait_for_clients(bridge, 2);

  w.session->read_memory(0x200000, 4);
  Bytes a = read_available(fd1);
  Bytes b = read_available(fd2);
  ::close(fd1);
  ::close(fd2);
  bridge.stop();
  CHECK(a == b);
  CHECK(a.size() > 16);
}

TEST_CASE("records written to the in port are injected into the session") {
  World w;
  BridgeServer bridge(*w.session, 0, 0);
  bridge.start();
  int out_fd = connect_local(bridge.out_port());
  int in_fd = connect_local(bridge.in_port());
  wait_for_clients(bridge, 2);

  // Stream framing on the in port matches the out port: header once,
  // then records whose data is an H4-framed command.
  Bytes stream = snoop::encode_header(snoop::SnoopHeader::btsnoop_hci());
  Bytes h4;
  h4.push_back(snoop::kH4Command);
  Bytes frame = hci::encode_command(hci::build_vendor_command(
      hci::WriteRam{0x210000, {0xca, 0xfe}},
      w.session->profile().vendor_opcodes));
  h4.insert(h4.end(), frame.begin(), frame.end());
  Bytes record = snoop::encode_record(snoop::SnoopHeader::btsnoop_hci(),
                                      snoop::SnoopRecord::of(h4, 0));
  stream.insert(stream.end(), record.begin(), record.end());
  REQUIRE(::send(in_fd, stream.data(), stream.size(), 0) ==
          static_cast<ssize_t>(stream.size()));

  // The injected write lands in controller memory; its echo and the
  // command complete appear on the out stream.
  Bytes out_bytes;
  for (int spin = 0; spin < 100; spin++) {
    Bytes chunk = read_available(out_fd, 50);
    out_bytes.insert(out_bytes.end(), chunk.begin(), chunk.end());
    if (out_bytes.size() > 16 + 48) break;
  }
  CHECK(w.attacker.read_view(0x210000, 2) == Bytes{0xca, 0xfe});
  snoop::StreamReader reader;
  reader.feed(out_bytes);
  auto records = reader.take_records();
  REQUIRE(records.size() >= 2);
  CHECK(records[0].data[0] == snoop::kH4Command);
  CHECK(records[1].data[0] == snoop::kH4Event);

  ::close(out_fd);
  ::close(in_fd);
  bridge.stop();
}

TEST_CASE("bridge client transport drives a remote session") {
  World w;
  BridgeServer bridge(*w.session, 0, 0);
  bridge.start();

  Session remote(test::bcm4339(),
                 std::make_unique<BridgeClientTransport>(
                     "127.0.0.1", bridge.out_port(), bridge.in_port()));
  Bytes data = remote.read_memory(0x000000, 300);
  CHECK(data == w.attacker.read_view(0x000000, 300));
  bridge.stop();
}

TEST_CASE("binding an in-use port fails cleanly") {
  World w;
  BridgeServer first(*w.session, 0, 0);
  first.start();
  BridgeServer second(*w.session, first.out_port(), first.in_port());
  CHECK_THROWS_AS(second.start(), Error);
  first.stop();
}
