#include "btlab/command.hpp"

#include <charconv>

#include "btlab/errors.hpp"

namespace btlab::cli {

namespace {

struct Token {
  std::string text;
  size_t column = 0;
};

std::vector<Token> tokenize(const std::string& line) {
  std::vector<Token> tokens;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && isspace(static_cast<unsigned char>(line[i]))) {
      i++;
    }
    if (i >= line.size()) break;
    size_t start = i;
    while (i < line.size() && !isspace(static_cast<unsigned char>(line[i]))) {
      i++;
    }
    tokens.push_back(Token{line.substr(start, i - start), start});
  }
  return tokens;
}

[[noreturn]] void fail(size_t column, const std::string& expected) {
  throw Error(Errc::ParseError, "expected " + expected, column);
}

const Token& need(const std::vector<Token>& tokens, size_t index,
                  const std::string& expected, size_t line_end) {
  if (index >= tokens.size()) fail(line_end, expected);
  return tokens[index];
}

uint64_t parse_number(const Token& token, const std::string& what,
                      uint64_t max) {
  const std::string& s = token.text;
  uint64_t value = 0;
  std::from_chars_result r{};
  if (s.starts_with("0x") || s.starts_with("0X")) {
    r = std::from_chars(s.data() + 2, s.data() + s.size(), value, 16);
  } else {
    r = std::from_chars(s.data(), s.data() + s.size(), value, 10);
  }
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size() || value > max) {
    fail(token.column, what);
  }
  return value;
}

Bytes parse_hex_tokens(const std::vector<Token>& tokens, size_t from,
                       size_t line_end, const std::string& what,
                       bool allow_empty) {
  std::string joined;
  for (size_t i = from; i < tokens.size(); i++) joined += tokens[i].text;
  if (joined.empty()) {
    if (allow_empty) return {};
    fail(line_end, what);
  }
  try {
    return parse_hex(joined);
  } catch (const Error&) {
    fail(tokens[from].column, what);
  }
}

MacAddress parse_mac(const Token& token) {
  try {
    return MacAddress::parse(token.text);
  } catch (const Error&) {
    fail(token.column, "a MAC address like de:ad:be:ef:00:00");
  }
}

void no_more(const std::vector<Token>& tokens, size_t from) {
  if (from < tokens.size()) {
    fail(tokens[from].column, "end of command");
  }
}

}  // namespace

Command parse_command(const std::string& line) {
  auto tokens = tokenize(line);
  size_t end = line.size();
  if (tokens.empty()) fail(0, "a command");
  const std::string& verb = tokens[0].text;

  if (verb == "connect") {
    CmdConnect cmd{parse_mac(need(tokens, 1, "a MAC address", end))};
    no_more(tokens, 2);
    return cmd;
  }
  if (verb == "info") {
    const Token& what = need(tokens, 1, "'connections'", end);
    if (what.text != "connections") fail(what.column, "'connections'");
    no_more(tokens, 2);
    return CmdInfoConnections{};
  }
  if (verb == "readmem") {
    CmdReadMem cmd;
    cmd.address = static_cast<uint32_t>(parse_number(
        need(tokens, 1, "an address", end), "an address", 0xffffffffu));
    cmd.length = static_cast<uint32_t>(parse_number(
        need(tokens, 2, "a length", end), "a length", 0xffffffffu));
    no_more(tokens, 3);
    return cmd;
  }
  if (verb == "writemem") {
    CmdWriteMem cmd;
    cmd.address = static_cast<uint32_t>(parse_number(
        need(tokens, 1, "an address", end), "an address", 0xffffffffu));
    need(tokens, 2, "hex bytes", end);
    cmd.data = parse_hex_tokens(tokens, 2, end, "hex bytes", false);
    return cmd;
  }
  if (verb == "searchmem") {
    const Token& arg = need(tokens, 1, "hex bytes or ascii:<text>", end);
    CmdSearchMem cmd;
    if (arg.text.starts_with("ascii:")) {
      cmd.ascii = true;
      // Everything after the prefix, spaces included.
      cmd.ascii_text = line.substr(arg.column + 6);
      if (cmd.ascii_text.empty()) fail(arg.column, "text after ascii:");
      cmd.pattern.assign(cmd.ascii_text.begin(), cmd.ascii_text.end());
      return cmd;
    }
    cmd.pattern =
        parse_hex_tokens(tokens, 1, end, "hex bytes or ascii:<text>", false);
    return cmd;
  }
  if (verb == "launch") {
    CmdLaunch cmd{static_cast<uint32_t>(parse_number(
        need(tokens, 1, "an address", end), "an address", 0xffffffffu))};
    no_more(tokens, 2);
    return cmd;
  }
  if (verb == "patchrom") {
    CmdPatchRom cmd;
    cmd.address = static_cast<uint32_t>(parse_number(
        need(tokens, 1, "an address", end), "an address", 0xffffffffu));
    cmd.word = static_cast<uint32_t>(parse_number(
        need(tokens, 2, "a 32-bit word", end), "a 32-bit word", 0xffffffffu));
    no_more(tokens, 3);
    return cmd;
  }
  if (verb == "loadhcd") {
    CmdLoadHcd cmd{need(tokens, 1, "a file path", end).text};
    no_more(tokens, 2);
    return cmd;
  }
  if (verb == "sendhci") {
    need(tokens, 1, "hex bytes", end);
    return CmdSendHci{parse_hex_tokens(tokens, 1, end, "hex bytes", false)};
  }
  if (verb == "sendlmp") {
    CmdSendLmp cmd;
    size_t index = 1;
    if (index < tokens.size() && tokens[index].text == "--fuzz") {
      cmd.fuzz = true;
      index++;
    }
    cmd.opcode = static_cast<uint8_t>(parse_number(
        need(tokens, index, "an LMP opcode", end), "an LMP opcode (0-127)",
        127));
    cmd.payload = parse_hex_tokens(tokens, index + 1, end, "hex payload", true);
    return cmd;
  }
  if (verb == "monitor") {
    CmdMonitor cmd;
    const Token& layer = need(tokens, 1, "'hci' or 'lmp'", end);
    if (layer.text == "hci") {
      cmd.layer = CmdMonitor::Layer::Hci;
    } else if (layer.text == "lmp") {
      cmd.layer = CmdMonitor::Layer::Lmp;
    } else {
      fail(layer.column, "'hci' or 'lmp'");
    }
    const Token& action = need(tokens, 2, "'start' or 'stop'", end);
    if (action.text == "start") {
      cmd.start = true;
    } else if (action.text == "stop") {
      cmd.start = false;
    } else {
      fail(action.column, "'start' or 'stop'");
    }
    size_t index = 3;
    if (index < tokens.size() && tokens[index].text == "--file") {
      cmd.file = need(tokens, index + 1, "a file path", end).text;
      index += 2;
    }
    no_more(tokens, index);
    return cmd;
  }
  if (verb == "tp") {
    CmdTracepoint cmd;
    const Token& action = need(tokens, 1, "'add' or 'remove'", end);
    if (action.text == "add") {
      cmd.add = true;
    } else if (action.text == "remove") {
      cmd.add = false;
    } else {
      fail(action.column, "'add' or 'remove'");
    }
    cmd.address = static_cast<uint32_t>(parse_number(
        need(tokens, 2, "an address", end), "an address", 0xffffffffu));
    no_more(tokens, 3);
    return cmd;
  }
  if (verb == "scan") {
    const Token& what = need(tokens, 1, "'bpcs'", end);
    if (what.text != "bpcs") fail(what.column, "'bpcs'");
    no_more(tokens, 2);
    return CmdScanBpcs{};
  }
  if (verb == "macfilter") {
    CmdMacFilter cmd;
    const Token& action = need(tokens, 1, "'add' or 'clear'", end);
    if (action.text == "add") {
      cmd.add = true;
      cmd.mac = parse_mac(need(tokens, 2, "a MAC address", end));
      no_more(tokens, 3);
    } else if (action.text == "clear") {
      cmd.add = false;
      no_more(tokens, 2);
    } else {
      fail(action.column, "'add' or 'clear'");
    }
    return cmd;
  }
  if (verb == "demo") {
    CmdDemo cmd;
    const Token& kind = need(tokens, 1, "'nino', 'ecdh' or 'jammer'", end);
    if (kind.text == "nino") {
      cmd.kind = CmdDemo::Kind::Nino;
    } else if (kind.text == "ecdh") {
      cmd.kind = CmdDemo::Kind::Ecdh;
    } else if (kind.text == "jammer") {
      cmd.kind = CmdDemo::Kind::Jammer;
    } else {
      fail(kind.column, "'nino', 'ecdh' or 'jammer'");
    }
    for (size_t i = 2; i < tokens.size(); i++) {
      cmd.args.push_back(tokens[i].text);
    }
    return cmd;
  }
  if (verb == "reset") {
    no_more(tokens, 1);
    return CmdReset{};
  }
  fail(tokens[0].column, "a known command (connect, info, readmem, writemem, "
                         "searchmem, launch, patchrom, loadhcd, sendhci, "
                         "sendlmp, monitor, tp, scan, macfilter, demo, reset)");
}

namespace {

std::string hex_u32(uint32_t v) {
  char buf[16];
  snprintf(buf, sizeof(buf), "0x%x", v);
  return buf;
}

struct Formatter {
  std::string operator()(const CmdConnect& c) const {
    return "connect " + c.mac.to_string();
  }
  std::string operator()(const CmdInfoConnections&) const {
    return "info connections";
  }
  std::string operator()(const CmdReadMem& c) const {
    return "readmem " + hex_u32(c.address) + " " + std::to_string(c.length);
  }
  std::string operator()(const CmdWriteMem& c) const {
    return "writemem " + hex_u32(c.address) + " " + to_hex(c.data);
  }
  std::string operator()(const CmdSearchMem& c) const {
    if (c.ascii) return "searchmem ascii:" + c.ascii_text;
    return "searchmem " + to_hex(c.pattern);
  }
  std::string operator()(const CmdLaunch& c) const {
    return "launch " + hex_u32(c.address);
  }
  std::string operator()(const CmdPatchRom& c) const {
    char word[16];
    snprintf(word, sizeof(word), "0x%08x", c.word);
    return "patchrom " + hex_u32(c.address) + " " + word;
  }
  std::string operator()(const CmdLoadHcd& c) const {
    return "loadhcd " + c.path;
  }
  std::string operator()(const CmdSendHci& c) const {
    return "sendhci " + to_hex(c.bytes);
  }
  std::string operator()(const CmdSendLmp& c) const {
    std::string out = "sendlmp ";
    if (c.fuzz) out += "--fuzz ";
    out += std::to_string(c.opcode);
    if (!c.payload.empty()) out += " " + to_hex(c.payload);
    return out;
  }
  std::string operator()(const CmdMonitor& c) const {
    std::string out = "monitor ";
    out += c.layer == CmdMonitor::Layer::Hci ? "hci" : "lmp";
    out += c.start ? " start" : " stop";
    if (c.file) out += " --file " + *c.file;
    return out;
  }
  std::string operator()(const CmdTracepoint& c) const {
    return std::string("tp ") + (c.add ? "add " : "remove ") +
           hex_u32(c.address);
  }
  std::string operator()(const CmdScanBpcs&) const { return "scan bpcs"; }
  std::string operator()(const CmdMacFilter& c) const {
    if (c.add) return "macfilter add " + c.mac->to_string();
    return "macfilter clear";
  }
  std::string operator()(const CmdDemo& c) const {
    std::string out = "demo ";
    switch (c.kind) {
      case CmdDemo::Kind::Nino: out += "nino"; break;
      case CmdDemo::Kind::Ecdh: out += "ecdh"; break;
      case CmdDemo::Kind::Jammer: out += "jammer"; break;
    }
    for (const auto& arg : c.args) out += " " + arg;
    return out;
  }
  std::string operator()(const CmdReset&) const { return "reset"; }
};

}  // namespace

std::string format_command(const Command& command) {
  return std::visit(Formatter{}, command);
}

}  // namespace btlab::cli
