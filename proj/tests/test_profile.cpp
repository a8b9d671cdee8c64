#include "btlab/profile.hpp"

#include "btlab/errors.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace btlab;
using namespace btlab::sim;

TEST_CASE("BCM4339 memory map") {
  auto profile = test::bcm4339();
  REQUIRE(profile.memory_regions.size() == 5);

  struct Expected {
    uint32_t start;
    uint32_t size;
    RegionKind kind;
  };
  const Expected expected[5] = {
      {0x000000, 576 * 1024, RegionKind::Rom},
      {0x0d0000, 32 * 1024, RegionKind::Ram},
      {0x200000, 160 * 1024, RegionKind::Ram},
      {0x260000, 32 * 1024, RegionKind::Rom},
      {0x310000, 1 * 1024, RegionKind::Io},
  };
  for (int i = 0; i < 5; i++) {
    CHECK(profile.memory_regions[i].start == expected[i].start);
    CHECK(profile.memory_regions[i].size == expected[i].size);
    CHECK(profile.memory_regions[i].kind == expected[i].kind);
  }
  CHECK(profile.lmp_version == 7);
  CHECK(profile.lmp_subversion == 24841);
  CHECK(profile.patchram_slots == 128);
  CHECK(profile.vulnerable_bpcs);
}

TEST_CASE("shipped profile slot capacities") {
  CHECK(test::bcm4339().patchram_slots == 128);
  CHECK(test::bcm4358().patchram_slots == 192);
  CHECK_FALSE(test::bcm4339_fixed().vulnerable_bpcs);
  // The fix shipped as a subversion bump.
  CHECK(test::bcm4339_fixed().lmp_subversion ==
        test::bcm4339().lmp_subversion + 1);
}

TEST_CASE("region lookup and range mapping") {
  auto profile = test::bcm4339();
  CHECK(profile.region_at(0x000000) != nullptr);
  CHECK(profile.region_at(0x08ffff) != nullptr);
  CHECK(profile.region_at(0x090000) == nullptr);
  CHECK(profile.region_at(0x100000) == nullptr);
  CHECK(profile.range_mapped(0x200000, 0x28000));
  CHECK_FALSE(profile.range_mapped(0x227ff0, 0x20));  // runs off the end
  CHECK_FALSE(profile.range_mapped(0x08fffc, 8));     // crosses into a gap
}

TEST_CASE("handler layout entry addressing") {
  auto profile = test::bcm4339();
  const auto& layout = profile.handler_layout;
  CHECK(layout.lmp_table_base == 0x261610);
  CHECK(layout.standard_entry_address(0) == 0x261610);
  CHECK(layout.standard_entry_address(60) == 0x261610 + 60 * 8);
  // Overflow subs index contiguously off the BPCS table base.
  CHECK(layout.bpcs_entry_address(0x06) == layout.bpcs_table_base + 0x30);

  CHECK(layout.bpcs_entry(0x0a).behavior == HandlerBehavior::NullCrash);
  CHECK(layout.bpcs_entry(0x0a).handler_ref == 0);
  CHECK(layout.bpcs_entry(0x95).behavior == HandlerBehavior::EnableTestMode);
  CHECK(layout.bpcs_entry(0x95).declared_len == 219);
  CHECK(layout.bpcs_entry(0xbd).behavior ==
        HandlerBehavior::HciHandlerWrongArgs);
  CHECK(layout.bpcs_entry(0xbd).declared_len == 0x4e);
  CHECK(layout.bpcs_entry(0x42).behavior == HandlerBehavior::Benign);
}

TEST_CASE("firmware image is deterministic and carries the tables") {
  auto profile = test::bcm4339();
  auto image_a = build_firmware_image(profile);
  auto image_b = build_firmware_image(profile);
  CHECK(image_a == image_b);

  // Handler table bytes live in the ROM-data region at the table base.
  const auto& layout = profile.handler_layout;
  uint32_t offset = layout.lmp_table_base - 0x260000;
  const Bytes& rom_data = image_a[3];
  HandlerEntry version_req = layout.standard_entry(37);
  uint32_t entry_offset = offset + 37 * 8;
  CHECK(get_u32le(rom_data, entry_offset) == version_req.handler_ref);
  CHECK(rom_data[entry_offset + 4] == version_req.declared_len);

  // RAM starts zeroed except the seeded IO-capability variable.
  CHECK(image_a[1] == Bytes(32 * 1024, 0));
  Bytes expected_ram(160 * 1024, 0);
  expected_ram[profile.io_capability_address - 0x200000] =
      profile.io_capability;
  CHECK(image_a[2] == expected_ram);
}

TEST_CASE("overlapping regions are rejected") {
  auto profile = test::bcm4339();
  profile.memory_regions[1].start = 0x80000;  // overlaps the 576 kB ROM
  CHECK_THROWS_AS(profile.validate(), Error);
}

TEST_CASE("behavior names round trip") {
  for (auto behavior :
       {HandlerBehavior::Benign, HandlerBehavior::RespondNotAccepted,
        HandlerBehavior::RespondFeatures, HandlerBehavior::NullCrash,
        HandlerBehavior::EnableTestMode,
        HandlerBehavior::HciHandlerWrongArgs}) {
    CHECK(behavior_from_name(behavior_name(behavior)) == behavior);
  }
}
