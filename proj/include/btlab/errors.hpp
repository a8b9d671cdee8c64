#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace btlab {

enum class Errc {
  // codec errors
  OversizedParams,
  Truncated,
  LengthMismatch,
  WrongEventCode,
  DuplicateSlot,
  BadLength,
  UnalignedAddress,
  OpcodeOutOfRange,
  EmptyPdu,
  BadMagic,
  // controller / session errors
  SlotOutOfRange,
  CommandDisallowedInMode,
  ChipCrashed,
  OutOfMap,
  NoFreeSlots,
  NotRom,
  NoSuchConnection,
  MalformedMac,
  AlreadyArmed,
  VerifyMismatch,
  ReentrantCall,
  TransportLost,
  // capture / bridge
  SinkFailure,
  BindFailure,
  // tracer
  RangeMismatch,
  // security
  InvalidPoint,
  StepFailed,
  // cli
  ParseError,
};

const char* errc_name(Errc e);

class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string message)
      : std::runtime_error(std::move(message)), code_(code) {}
  Error(Errc code, std::string message, size_t offset)
      : std::runtime_error(std::move(message)), code_(code), offset_(offset) {}

  Errc code() const { return code_; }
  // Byte offset for codec errors, record index for capture errors,
  // step index for StepFailed, column for ParseError.
  size_t offset() const { return offset_; }

 private:
  Errc code_;
  size_t offset_ = 0;
};

}  // namespace btlab
