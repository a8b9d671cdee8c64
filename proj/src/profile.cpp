#include "btlab/profile.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "btlab/errors.hpp"
#include "json.hpp"

namespace btlab::sim {

namespace {

const std::pair<const char*, HandlerBehavior> kBehaviorNames[] = {
    {"benign", HandlerBehavior::Benign},
    {"respond_not_accepted", HandlerBehavior::RespondNotAccepted},
    {"respond_features", HandlerBehavior::RespondFeatures},
    {"null_crash", HandlerBehavior::NullCrash},
    {"enable_test_mode", HandlerBehavior::EnableTestMode},
    {"hci_handler_wrong_args", HandlerBehavior::HciHandlerWrongArgs},
    {"bpcs_dispatch", HandlerBehavior::BpcsDispatch},
    {"accepted_in", HandlerBehavior::AcceptedIn},
    {"not_accepted_in", HandlerBehavior::NotAcceptedIn},
    {"version_req", HandlerBehavior::VersionReq},
    {"version_res", HandlerBehavior::VersionRes},
    {"features_req", HandlerBehavior::FeaturesReq},
    {"features_res", HandlerBehavior::FeaturesRes},
    {"set_afh", HandlerBehavior::SetAfh},
    {"test_activate", HandlerBehavior::TestActivate},
    {"test_control", HandlerBehavior::TestControl},
};

uint32_t parse_u32(const nlohmann::json& value) {
  if (value.is_number_unsigned() || value.is_number_integer()) {
    return value.get<uint32_t>();
  }
  return static_cast<uint32_t>(
      std::stoul(value.get<std::string>(), nullptr, 0));
}

RegionKind kind_from_name(const std::string& name) {
  if (name == "rom") return RegionKind::Rom;
  if (name == "ram") return RegionKind::Ram;
  if (name == "io") return RegionKind::Io;
  throw Error(Errc::ParseError, "unknown region kind: " + name);
}

HandlerEntry parse_entry(const nlohmann::json& value) {
  HandlerEntry entry;
  entry.handler_ref = parse_u32(value.at("address"));
  entry.declared_len =
      static_cast<uint8_t>(value.value("declared_len", 0u));
  if (value.contains("info")) {
    auto info = value.at("info");
    for (size_t i = 0; i < 3 && i < info.size(); i++) {
      entry.info[i] = static_cast<uint8_t>(parse_u32(info[i]));
    }
  }
  entry.behavior = behavior_from_name(value.at("behavior").get<std::string>());
  return entry;
}

}  // namespace

HandlerBehavior behavior_from_name(const std::string& name) {
  for (const auto& [text, behavior] : kBehaviorNames) {
    if (name == text) return behavior;
  }
  throw Error(Errc::ParseError, "unknown handler behavior: " + name);
}

const char* behavior_name(HandlerBehavior behavior) {
  for (const auto& [text, value] : kBehaviorNames) {
    if (value == behavior) return text;
  }
  return "benign";
}

void HandlerEntry::encode_into(Bytes& out) const {
  put_u32le(out, handler_ref);
  out.push_back(declared_len);
  out.insert(out.end(), info.begin(), info.end());
}

HandlerEntry HandlerLayout::standard_entry(uint8_t opcode) const {
  auto it = standard.find(opcode);
  return it == standard.end() ? default_standard : it->second;
}

HandlerEntry HandlerLayout::bpcs_entry(uint8_t sub) const {
  auto it = bpcs.find(sub);
  return it == bpcs.end() ? overflow_default : it->second;
}

const MemoryRegion* ControllerProfile::region_at(uint32_t address) const {
  for (const auto& region : memory_regions) {
    if (region.contains(address)) return &region;
  }
  return nullptr;
}

bool ControllerProfile::range_mapped(uint32_t address, uint32_t length) const {
  if (length == 0) return region_at(address) != nullptr;
  uint32_t cursor = address;
  uint32_t remaining = length;
  while (remaining > 0) {
    const MemoryRegion* region = region_at(cursor);
    if (region == nullptr) return false;
    uint32_t in_region = std::min<uint32_t>(remaining, region->end() - cursor);
    cursor += in_region;
    remaining -= in_region;
  }
  return true;
}

ControllerProfile ControllerProfile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(Errc::ParseError, "cannot open profile: " + path);
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_json_text(buffer.str(), path);
}

ControllerProfile ControllerProfile::from_json_text(const std::string& text,
                                                    const std::string& origin) {
  try {
    nlohmann::json doc = nlohmann::json::parse(text);
    ControllerProfile p;
    p.chip_name = doc.at("chip_name").get<std::string>();
    p.lmp_version = static_cast<uint8_t>(doc.at("lmp_version").get<unsigned>());
    p.lmp_subversion =
        static_cast<uint16_t>(doc.at("lmp_subversion").get<unsigned>());
    p.company_id = static_cast<uint16_t>(doc.value("company_id", 0x000fu));
    p.patchram_slots =
        static_cast<uint16_t>(doc.at("patchram_slots").get<unsigned>());
    p.vulnerable_bpcs = doc.at("vulnerable_bpcs").get<bool>();
    p.tracepoints_supported = doc.value("tracepoints_supported", true);
    p.mac_address = doc.value("mac_address", p.mac_address);
    p.rom_seed = doc.value("rom_seed", p.chip_name);

    for (const auto& region : doc.at("memory_regions")) {
      MemoryRegion r;
      r.start = parse_u32(region.at("start"));
      r.size = parse_u32(region.at("size"));
      r.kind = kind_from_name(region.at("kind").get<std::string>());
      r.label = region.value("label", "");
      p.memory_regions.push_back(r);
    }

    p.patchram_value_table = parse_u32(doc.at("patchram_value_table"));
    p.patchram_address_table = parse_u32(doc.at("patchram_address_table"));
    p.lm_cur_cmd = parse_u32(doc.at("lm_cur_cmd"));
    p.dispatcher_address = parse_u32(doc.at("dispatcher_address"));
    p.send_path_address = parse_u32(doc.at("send_path_address"));
    p.io_capability_address = parse_u32(doc.at("io_capability_address"));
    p.io_capability =
        static_cast<uint8_t>(doc.value("io_capability", 0x01u));
    p.test_mode_config_address = parse_u32(doc.at("test_mode_config_address"));
    p.patch_staging_address = parse_u32(doc.at("patch_staging_address"));
    p.scratch_window_start = parse_u32(doc.at("scratch_window").at("start"));
    p.scratch_window_size = parse_u32(doc.at("scratch_window").at("size"));

    if (doc.contains("vendor_opcodes")) {
      const auto& v = doc.at("vendor_opcodes");
      if (v.contains("read_ram"))
        p.vendor_opcodes.read_ram_ocf =
            static_cast<uint16_t>(parse_u32(v.at("read_ram")));
      if (v.contains("write_ram"))
        p.vendor_opcodes.write_ram_ocf =
            static_cast<uint16_t>(parse_u32(v.at("write_ram")));
      if (v.contains("launch_ram"))
        p.vendor_opcodes.launch_ram_ocf =
            static_cast<uint16_t>(parse_u32(v.at("launch_ram")));
      if (v.contains("download_minidriver"))
        p.vendor_opcodes.download_minidriver_ocf =
            static_cast<uint16_t>(parse_u32(v.at("download_minidriver")));
    }

    const auto& layout = doc.at("handler_layout");
    p.handler_layout.lmp_table_base = parse_u32(layout.at("lmp_table_base"));
    p.handler_layout.bpcs_table_base = parse_u32(layout.at("bpcs_table_base"));
    p.handler_layout.default_standard =
        parse_entry(layout.at("default_standard"));
    p.handler_layout.overflow_default =
        parse_entry(layout.at("overflow_default"));
    for (const auto& [key, value] : layout.at("standard_handlers").items()) {
      p.handler_layout.standard[static_cast<uint8_t>(
          std::stoul(key, nullptr, 0))] = parse_entry(value);
    }
    for (const auto& entry : layout.at("bpcs_handlers")) {
      p.handler_layout.bpcs[static_cast<uint8_t>(
          parse_u32(entry.at("sub")))] = parse_entry(entry);
    }
    for (const auto& entry : layout.value("overflow_handlers",
                                          nlohmann::json::array())) {
      p.handler_layout.bpcs[static_cast<uint8_t>(
          parse_u32(entry.at("sub")))] = parse_entry(entry);
    }

    auto note_behavior = [&p, &origin](const HandlerEntry& entry) {
      auto [it, inserted] =
          p.behavior_map.emplace(entry.handler_ref, entry.behavior);
      if (!inserted && it->second != entry.behavior) {
        throw Error(Errc::ParseError,
                    origin + ": two behaviors share handler address");
      }
    };
    note_behavior(p.handler_layout.default_standard);
    note_behavior(p.handler_layout.overflow_default);
    for (const auto& [opcode, entry] : p.handler_layout.standard) {
      note_behavior(entry);
    }
    for (const auto& [sub, entry] : p.handler_layout.bpcs) {
      note_behavior(entry);
    }

    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, origin + ": " + e.what());
  }
}

void ControllerProfile::validate() const {
  auto sorted = memory_regions;
  std::sort(sorted.begin(), sorted.end(),
            [](const MemoryRegion& a, const MemoryRegion& b) {
              return a.start < b.start;
            });
  for (size_t i = 1; i < sorted.size(); i++) {
    if (sorted[i].start < sorted[i - 1].end()) {
      throw Error(Errc::ParseError,
                  chip_name + ": memory regions overlap at " +
                      sorted[i].label);
    }
  }
  if (!range_mapped(handler_layout.lmp_table_base, 128 * 8) ||
      !range_mapped(handler_layout.bpcs_table_base, 256 * 8)) {
    throw Error(Errc::ParseError,
                chip_name + ": handler tables fall outside mapped memory");
  }
  if (!range_mapped(lm_cur_cmd, 32) ||
      !range_mapped(scratch_window_start, scratch_window_size) ||
      !range_mapped(patch_staging_address, 0x1000) ||
      !range_mapped(io_capability_address, 1) ||
      !range_mapped(test_mode_config_address, 4)) {
    throw Error(Errc::ParseError,
                chip_name + ": work areas fall outside mapped memory");
  }
}

std::vector<Bytes> build_firmware_image(const ControllerProfile& profile) {
  std::vector<Bytes> image;
  uint64_t seed = 0xcbf29ce484222325ull;
  for (char c : profile.rom_seed) {
    seed = (seed ^ static_cast<uint8_t>(c)) * 0x100000001b3ull;
  }
  for (const auto& region : profile.memory_regions) {
    Bytes blob(region.size, 0);
    if (region.kind == RegionKind::Rom) {
      uint64_t state = seed ^ region.start;
      for (auto& b : blob) {
        // xorshift64 fill, one byte per step
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        b = static_cast<uint8_t>(state);
      }
    }
    image.push_back(std::move(blob));
  }

  auto write_bytes = [&](uint32_t address, ByteView data) {
    for (size_t i = 0; i < profile.memory_regions.size(); i++) {
      const auto& region = profile.memory_regions[i];
      if (region.contains(address) &&
          address + data.size() <= region.end()) {
        std::copy(data.begin(), data.end(),
                  image[i].begin() + (address - region.start));
        return;
      }
    }
    throw Error(Errc::OutOfMap, "handler table outside mapped memory");
  };

  // The SSP state machine reads the advertised IO capability from this
  // RAM variable.
  write_bytes(profile.io_capability_address,
              ByteView(&profile.io_capability, 1));

  const auto& layout = profile.handler_layout;
  Bytes standard_table;
  for (unsigned opcode = 0; opcode < 128; opcode++) {
    layout.standard_entry(static_cast<uint8_t>(opcode))
        .encode_into(standard_table);
  }
  write_bytes(layout.lmp_table_base, standard_table);

  Bytes bpcs_table;
  for (unsigned sub = 0; sub < 256; sub++) {
    layout.bpcs_entry(static_cast<uint8_t>(sub)).encode_into(bpcs_table);
  }
  write_bytes(layout.bpcs_table_base, bpcs_table);
  return image;
}

}  // namespace btlab::sim
