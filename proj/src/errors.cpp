#include "btlab/errors.hpp"

namespace btlab {

const char* errc_name(Errc e) {
  switch (e) {
    case Errc::OversizedParams: return "OversizedParams";
    case Errc::Truncated: return "Truncated";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::WrongEventCode: return "WrongEventCode";
    case Errc::DuplicateSlot: return "DuplicateSlot";
    case Errc::BadLength: return "BadLength";
    case Errc::UnalignedAddress: return "UnalignedAddress";
    case Errc::OpcodeOutOfRange: return "OpcodeOutOfRange";
    case Errc::EmptyPdu: return "EmptyPdu";
    case Errc::BadMagic: return "BadMagic";
    case Errc::SlotOutOfRange: return "SlotOutOfRange";
    case Errc::CommandDisallowedInMode: return "CommandDisallowedInMode";
    case Errc::ChipCrashed: return "ChipCrashed";
    case Errc::OutOfMap: return "OutOfMap";
    case Errc::NoFreeSlots: return "NoFreeSlots";
    case Errc::NotRom: return "NotRom";
    case Errc::NoSuchConnection: return "NoSuchConnection";
    case Errc::MalformedMac: return "MalformedMac";
    case Errc::AlreadyArmed: return "AlreadyArmed";
    case Errc::VerifyMismatch: return "VerifyMismatch";
    case Errc::ReentrantCall: return "ReentrantCall";
    case Errc::TransportLost: return "TransportLost";
    case Errc::SinkFailure: return "SinkFailure";
    case Errc::BindFailure: return "BindFailure";
    case Errc::RangeMismatch: return "RangeMismatch";
    case Errc::InvalidPoint: return "InvalidPoint";
    case Errc::StepFailed: return "StepFailed";
    case Errc::ParseError: return "ParseError";
  }
  return "Unknown";
}

}  // namespace btlab
