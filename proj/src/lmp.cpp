#include "btlab/lmp.hpp"

#include <fstream>

#include "btlab/errors.hpp"
#include "json.hpp"

namespace btlab::lmp {

Bytes encode_pdu(const LmpPdu& pdu) {
  if (pdu.opcode > 127) {
    throw Error(Errc::OpcodeOutOfRange,
                "LMP opcode " + std::to_string(pdu.opcode) +
                    " does not fit 7 bits");
  }
  Bytes out;
  out.push_back(static_cast<uint8_t>((pdu.opcode << 1) | (pdu.tid & 1)));
  if (pdu.ext_opcode) {
    out.push_back(*pdu.ext_opcode);
  }
  out.insert(out.end(), pdu.payload.begin(), pdu.payload.end());
  return out;
}

LmpPdu decode_pdu(ByteView bytes) {
  if (bytes.empty()) {
    throw Error(Errc::EmptyPdu, "empty LMP PDU");
  }
  LmpPdu pdu;
  pdu.tid = bytes[0] & 1;
  pdu.opcode = bytes[0] >> 1;
  size_t offset = 1;
  if (is_escape_opcode(pdu.opcode) && bytes.size() > 1) {
    pdu.ext_opcode = bytes[1];
    offset = 2;
  }
  pdu.payload.assign(bytes.begin() + offset, bytes.end());
  return pdu;
}

namespace {

struct CatalogRow {
  uint8_t opcode;
  const char* name;
  uint16_t expected_length;  // 0 = variable/unknown
};

// Names and lengths from the core specification's LM PDU tables; opcode 0
// is the Broadcom vendor escape this toolkit revolves around.
constexpr CatalogRow kBuiltinRows[] = {
    {0, "LMP_vendor_BPCS", 0},
    {1, "LMP_name_req", 2},
    {2, "LMP_name_res", 17},
    {3, "LMP_accepted", 2},
    {4, "LMP_not_accepted", 3},
    {5, "LMP_clkoffset_req", 1},
    {6, "LMP_clkoffset_res", 3},
    {7, "LMP_detach", 2},
    {8, "LMP_in_rand", 17},
    {9, "LMP_comb_key", 17},
    {10, "LMP_unit_key", 17},
    {11, "LMP_au_rand", 17},
    {12, "LMP_sres", 5},
    {13, "LMP_temp_rand", 17},
    {14, "LMP_temp_key", 17},
    {15, "LMP_encryption_mode_req", 2},
    {16, "LMP_encryption_key_size_req", 2},
    {17, "LMP_start_encryption_req", 17},
    {18, "LMP_stop_encryption_req", 1},
    {19, "LMP_switch_req", 5},
    {20, "LMP_hold", 7},
    {21, "LMP_hold_req", 7},
    {23, "LMP_sniff_req", 10},
    {24, "LMP_unsniff_req", 1},
    {31, "LMP_incr_power_req", 2},
    {32, "LMP_decr_power_req", 2},
    {33, "LMP_max_power", 1},
    {34, "LMP_min_power", 1},
    {35, "LMP_auto_rate", 1},
    {36, "LMP_preferred_rate", 2},
    {37, "LMP_version_req", 6},
    {38, "LMP_version_res", 6},
    {39, "LMP_features_req", 9},
    {40, "LMP_features_res", 9},
    {41, "LMP_quality_of_service", 4},
    {42, "LMP_quality_of_service_req", 4},
    {43, "LMP_SCO_link_req", 7},
    {44, "LMP_remove_SCO_link_req", 3},
    {45, "LMP_max_slot", 2},
    {46, "LMP_max_slot_req", 2},
    {47, "LMP_timing_accuracy_req", 1},
    {48, "LMP_timing_accuracy_res", 3},
    {49, "LMP_setup_complete", 1},
    {50, "LMP_use_semi_permanent_key", 1},
    {51, "LMP_host_connection_req", 1},
    {52, "LMP_slot_offset", 9},
    {53, "LMP_page_mode_req", 3},
    {54, "LMP_page_scan_mode_req", 3},
    {55, "LMP_supervision_timeout", 3},
    {56, "LMP_test_activate", 1},
    {57, "LMP_test_control", 10},
    {58, "LMP_encryption_key_size_mask_req", 1},
    {59, "LMP_encryption_key_size_mask_res", 3},
    {60, "LMP_set_AFH", 16},
    {61, "LMP_encapsulated_header", 4},
    {62, "LMP_encapsulated_payload", 17},
    {63, "LMP_Simple_Pairing_Confirm", 17},
    {64, "LMP_Simple_Pairing_Number", 17},
    {65, "LMP_DHkey_Check", 17},
    {66, "LMP_pause_encryption_aes_req", 17},
    {124, "LMP_escape_1", 0},
    {125, "LMP_escape_2", 0},
    {126, "LMP_escape_3", 0},
    {127, "LMP_escape_4", 0},
};

constexpr std::pair<uint8_t, const char*> kBuiltinBpcsSubs[] = {
    {0x00, "Features request"},
    {0x01, "Features response"},
    {0x05, "BFC accept"},
};

}  // namespace

const OpcodeCatalog& OpcodeCatalog::builtin() {
  static const OpcodeCatalog catalog = [] {
    OpcodeCatalog c;
    c.version_ = 1;
    for (const auto& row : kBuiltinRows) {
      c.opcodes_[row.opcode] =
          OpcodeInfo{row.opcode, row.name, row.expected_length};
    }
    for (const auto& [sub, name] : kBuiltinBpcsSubs) {
      c.bpcs_subs_[sub] = name;
    }
    return c;
  }();
  return catalog;
}

OpcodeCatalog OpcodeCatalog::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(Errc::ParseError, "cannot open opcode catalog: " + path);
  }
  nlohmann::json doc;
  try {
    in >> doc;
    OpcodeCatalog c;
    c.version_ = doc.at("version").get<int>();
    for (const auto& row : doc.at("opcodes")) {
      OpcodeInfo info;
      info.opcode = row.at("opcode").get<uint8_t>();
      info.name = row.at("name").get<std::string>();
      info.expected_length = row.value("length", 0);
      c.opcodes_[info.opcode] = info;
    }
    if (doc.contains("bpcs_subs")) {
      for (const auto& [key, value] : doc.at("bpcs_subs").items()) {
        c.bpcs_subs_[static_cast<uint8_t>(std::stoul(key, nullptr, 0))] =
            value.get<std::string>();
      }
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError,
                "opcode catalog " + path + ": " + e.what());
  }
}

OpcodeInfo OpcodeCatalog::lookup(uint8_t opcode) const {
  auto it = opcodes_.find(opcode);
  if (it == opcodes_.end()) {
    return OpcodeInfo{opcode, "unknown", 0};
  }
  return it->second;
}

std::string OpcodeCatalog::bpcs_sub_name(uint8_t sub) const {
  auto it = bpcs_subs_.find(sub);
  return it == bpcs_subs_.end() ? "" : it->second;
}

Dissection describe(const LmpPdu& pdu, const OpcodeCatalog& catalog) {
  Dissection d;
  d.info = catalog.lookup(pdu.opcode);
  d.wire_length = 1 + (pdu.ext_opcode ? 1 : 0) + pdu.payload.size();
  if (d.info.expected_length != 0) {
    d.length_ok = d.wire_length == d.info.expected_length;
  }
  d.oversized = d.wire_length > kMaxWellFormedPduLen;

  char head[96];
  snprintf(head, sizeof(head), "LMP tid=%u opcode=%u %s len=%zu", pdu.tid,
           pdu.opcode, d.info.name.c_str(), d.wire_length);
  d.text = head;
  if (pdu.ext_opcode) {
    char ext[24];
    snprintf(ext, sizeof(ext), " ext=0x%02x", *pdu.ext_opcode);
    d.text += ext;
  }
  if (pdu.opcode == kOpcodeVendorBpcs && !pdu.payload.empty()) {
    uint8_t sub = pdu.payload[0];
    std::string name = catalog.bpcs_sub_name(sub);
    char buf[64];
    if (!name.empty()) {
      snprintf(buf, sizeof(buf), " BPCS sub 0x%02x (%s)", sub, name.c_str());
    } else {
      snprintf(buf, sizeof(buf), " BPCS sub 0x%02x", sub);
    }
    d.text += buf;
  }
  if (d.length_ok.has_value()) {
    d.text += *d.length_ok ? " [len ok]" : " [len deviates]";
  }
  if (d.oversized) {
    d.text += " [oversized]";
  }
  if (!pdu.payload.empty()) {
    d.text += " payload=" + to_hex(pdu.payload);
  }
  return d;
}

AfhConfig parse_set_afh(ByteView payload) {
  if (payload.size() != 15) {
    throw Error(Errc::BadLength,
                "LMP_set_AFH payload is " + std::to_string(payload.size()) +
                    " bytes, expected 15");
  }
  AfhConfig config;
  config.instant = get_u32le(payload, 0);
  config.mode = payload[4];
  std::copy(payload.begin() + 5, payload.end(), config.channel_map.begin());
  return config;
}

Bytes encode_set_afh(const AfhConfig& config) {
  if (config.channel_map[9] & 0x80) {
    throw Error(Errc::BadLength, "AFH channel map padding bit 79 must be 0");
  }
  Bytes out;
  put_u32le(out, config.instant);
  out.push_back(config.mode);
  out.insert(out.end(), config.channel_map.begin(), config.channel_map.end());
  return out;
}

TestControlParams decode_test_control(ByteView payload) {
  if (payload.size() != 9) {
    throw Error(Errc::BadLength,
                "LMP_test_control payload is " +
                    std::to_string(payload.size()) + " bytes, expected 9");
  }
  std::array<uint8_t, 9> clear;
  for (size_t i = 0; i < 9; i++) {
    clear[i] = payload[i] ^ kTestControlWhitening;
  }
  TestControlParams p;
  p.scenario = clear[0];
  p.hopping_mode = clear[1];
  p.tx_freq_index = clear[2];
  p.rx_freq_index = clear[3];
  p.power_mode = clear[4];
  p.poll_period = clear[5];
  p.packet_type = clear[6];
  p.payload_length = static_cast<uint16_t>(clear[7] | (clear[8] << 8));
  return p;
}

Bytes encode_test_control(const TestControlParams& params) {
  Bytes clear = {params.scenario,
                 params.hopping_mode,
                 params.tx_freq_index,
                 params.rx_freq_index,
                 params.power_mode,
                 params.poll_period,
                 params.packet_type,
                 static_cast<uint8_t>(params.payload_length & 0xff),
                 static_cast<uint8_t>(params.payload_length >> 8)};
  for (auto& b : clear) b ^= kTestControlWhitening;
  return clear;
}

LmpPdu make_not_accepted(uint8_t tid, uint8_t rejected_opcode,
                         uint8_t reason) {
  return LmpPdu{tid, kOpcodeNotAccepted, std::nullopt,
                {rejected_opcode, reason}};
}

LmpPdu make_accepted(uint8_t tid, uint8_t accepted_opcode) {
  return LmpPdu{tid, kOpcodeAccepted, std::nullopt, {accepted_opcode}};
}

LmpPdu make_version_res(uint8_t tid, uint8_t version, uint16_t company,
                        uint16_t subversion) {
  LmpPdu pdu{tid, kOpcodeVersionRes, std::nullopt, {}};
  pdu.payload.push_back(version);
  put_u16le(pdu.payload, company);
  put_u16le(pdu.payload, subversion);
  return pdu;
}

}  // namespace btlab::lmp
