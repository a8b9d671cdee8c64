#include "btlab/hci.hpp"

#include "btlab/errors.hpp"

namespace btlab::hci {

Bytes encode_command(const HciCommand& cmd) {
  if (cmd.params.size() > 255) {
    throw Error(Errc::OversizedParams,
                "HCI command parameters exceed 255 bytes (" +
                    std::to_string(cmd.params.size()) + ")");
  }
  Bytes out;
  out.reserve(3 + cmd.params.size());
  put_u16le(out, cmd.opcode.value());
  out.push_back(static_cast<uint8_t>(cmd.params.size()));
  out.insert(out.end(), cmd.params.begin(), cmd.params.end());
  return out;
}

Bytes encode_event(const HciEvent& evt) {
  if (evt.params.size() > 255) {
    throw Error(Errc::OversizedParams,
                "HCI event parameters exceed 255 bytes");
  }
  Bytes out;
  out.reserve(2 + evt.params.size());
  out.push_back(evt.event_code);
  out.push_back(static_cast<uint8_t>(evt.params.size()));
  out.insert(out.end(), evt.params.begin(), evt.params.end());
  return out;
}

HciCommand decode_command(ByteView bytes) {
  if (bytes.size() < 3) {
    throw Error(Errc::Truncated, "HCI command shorter than its 3-byte header",
                bytes.size());
  }
  uint8_t len = bytes[2];
  if (bytes.size() < 3u + len) {
    throw Error(Errc::Truncated, "HCI command parameters cut short", 3);
  }
  if (bytes.size() != 3u + len) {
    throw Error(Errc::LengthMismatch,
                "trailing bytes after HCI command parameters", 3u + len);
  }
  HciCommand cmd;
  cmd.opcode = HciOpcode::from_value(get_u16le(bytes, 0));
  cmd.params.assign(bytes.begin() + 3, bytes.end());
  return cmd;
}

HciEvent decode_event(ByteView bytes) {
  if (bytes.size() < 2) {
    throw Error(Errc::Truncated, "HCI event shorter than its 2-byte header",
                bytes.size());
  }
  uint8_t len = bytes[1];
  if (bytes.size() < 2u + len) {
    throw Error(Errc::Truncated, "HCI event parameters cut short", 2);
  }
  if (bytes.size() != 2u + len) {
    throw Error(Errc::LengthMismatch,
                "trailing bytes after HCI event parameters", 2u + len);
  }
  HciEvent evt;
  evt.event_code = bytes[0];
  evt.params.assign(bytes.begin() + 2, bytes.end());
  return evt;
}

HciPacket decode_packet(ByteView bytes, PacketDirection direction) {
  if (direction == PacketDirection::HostToController) {
    return decode_command(bytes);
  }
  return decode_event(bytes);
}

HciCommand build_vendor_command(const VendorCommandKind& kind,
                                const VendorOpcodeTable& table) {
  HciCommand cmd;
  if (const auto* read = std::get_if<ReadRam>(&kind)) {
    cmd.opcode = table.read_ram();
    put_u32le(cmd.params, read->address);
    cmd.params.push_back(read->length);
  } else if (const auto* write = std::get_if<WriteRam>(&kind)) {
    cmd.opcode = table.write_ram();
    put_u32le(cmd.params, write->address);
    cmd.params.insert(cmd.params.end(), write->data.begin(),
                      write->data.end());
  } else if (const auto* launch = std::get_if<LaunchRam>(&kind)) {
    cmd.opcode = table.launch_ram();
    put_u32le(cmd.params, launch->address);
  } else {
    cmd.opcode = table.download_minidriver();
  }
  return cmd;
}

bool parse_vendor_command(const HciCommand& cmd, const VendorOpcodeTable& table,
                          VendorCommandKind& out) {
  if (cmd.opcode == table.read_ram()) {
    if (cmd.params.size() != 5) return false;
    out = ReadRam{get_u32le(cmd.params, 0), cmd.params[4]};
    return true;
  }
  if (cmd.opcode == table.write_ram()) {
    if (cmd.params.size() < 4) return false;
    WriteRam w;
    w.address = get_u32le(cmd.params, 0);
    w.data.assign(cmd.params.begin() + 4, cmd.params.end());
    out = std::move(w);
    return true;
  }
  if (cmd.opcode == table.launch_ram()) {
    if (cmd.params.size() != 4) return false;
    out = LaunchRam{get_u32le(cmd.params, 0)};
    return true;
  }
  if (cmd.opcode == table.download_minidriver()) {
    if (!cmd.params.empty()) return false;
    out = DownloadMinidriver{};
    return true;
  }
  return false;
}

CommandCompleteView parse_command_complete(const HciEvent& evt) {
  if (evt.event_code != kEventCommandComplete) {
    throw Error(Errc::WrongEventCode,
                "expected Command Complete (0x0e), got event 0x" +
                    to_hex({&evt.event_code, 1}));
  }
  if (evt.params.size() < 4) {
    throw Error(Errc::Truncated, "Command Complete shorter than 4 bytes",
                evt.params.size());
  }
  CommandCompleteView view;
  view.num_hci_command_packets = evt.params[0];
  view.opcode = HciOpcode::from_value(get_u16le(evt.params, 1));
  view.status = evt.params[3];
  view.payload.assign(evt.params.begin() + 4, evt.params.end());
  return view;
}

HciEvent build_command_complete(HciOpcode opcode, uint8_t status,
                                ByteView payload) {
  HciEvent evt;
  evt.event_code = kEventCommandComplete;
  evt.params.push_back(1);  // num HCI command packets
  put_u16le(evt.params, opcode.value());
  evt.params.push_back(status);
  evt.params.insert(evt.params.end(), payload.begin(), payload.end());
  return evt;
}

}  // namespace btlab::hci
