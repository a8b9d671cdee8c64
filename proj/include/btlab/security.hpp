#pragma once

#include <optional>

#include "btlab/controller.hpp"
#include "btlab/session.hpp"

namespace btlab::security {

enum class IoCapability : uint8_t {
  DisplayOnly = 0x00,
  DisplayYesNo = 0x01,
  KeyboardOnly = 0x02,
  NoInputNoOutput = 0x03,
};

const char* io_capability_name(IoCapability capability);

enum class AssociationModel { NumericComparison, JustWorks, Passkey };

const char* association_model_name(AssociationModel model);

// The pairing association table: NoInputNoOutput on either side forces
// "Just Works", keyboard/display asymmetry yields passkey entry.
AssociationModel association_model(IoCapability initiator,
                                   IoCapability responder);

// Writes NoInputNoOutput into the firmware's IO-capability variable, so
// every subsequent pairing advertises no display and no keyboard.
void nino_override(core::Session& session);

IoCapability advertised_io_capability(core::Session& session);

struct PairingOutcome {
  AssociationModel model = AssociationModel::JustWorks;
  bool completed = false;
  bool aborted = false;
  bool warning_shown = false;  // stacks stay silent about downgrades
};

// Simulated pairing against a peer with the given capabilities. A peer
// that cached our capability from an earlier pairing aborts on mismatch,
// without telling the user why.
PairingOutcome simulate_pairing(
    core::Session& session, IoCapability peer_capability,
    std::optional<IoCapability> peer_cached_expectation = std::nullopt);

struct JammerOutcome {
  sim::ChipMode victim_mode = sim::ChipMode::Normal;
  uint8_t victim_afh_mode = 1;
  uint8_t hopping_mode = 1;
  int tx_frequency_mhz = -1;
};

// The four-step takeover: disable hopping via LMP_set_AFH, arm test mode
// through the BPCS overflow, LMP_test_activate, then LMP_test_control
// pinning a single transmit frequency. Steps are sent with the fuzzing
// patch enabled since several of them are out of spec for a stock sender.
// Throws Error{StepFailed} (offset = 1-based step) when a step draws an
// LMP_not_accepted instead of progressing.
JammerOutcome jammer_sequence(core::Session& session, uint16_t conn_handle,
                              const sim::Controller& victim);

}  // namespace btlab::security
