#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "btlab/bytes.hpp"

namespace btlab::snoop {

// Two header dialects share the same 16-byte shape and the same 24-byte
// record header; every integer is big-endian.
enum class Dialect { Rfc1761, Btsnoop };

inline constexpr std::array<uint8_t, 8> kMagicRfc1761 = {
    {0x73, 0x6e, 0x6f, 0x6f, 0x70, 0x00, 0x00, 0x00}};  // "snoop\0\0\0"
inline constexpr std::array<uint8_t, 8> kMagicBtsnoop = {
    {0x62, 0x74, 0x73, 0x6e, 0x6f, 0x6f, 0x70, 0x00}};  // "btsnoop\0"

inline constexpr uint32_t kVersionRfc1761 = 2;
inline constexpr uint32_t kVersionBtsnoop = 1;
inline constexpr uint32_t kDatalinkBtsnoopHci = 1002;  // H4 transport
inline constexpr uint32_t kDatalinkLmpMonitor = 147;   // our LMP records

// Offset that maps sim-time microseconds onto the btsnoop dialect's
// year-zero epoch (the constant places 1970-01-01 on that axis).
inline constexpr uint64_t kBtsnoopEpochOffsetUs = 0x00dcddb30f2f8000ull;

struct SnoopHeader {
  Dialect dialect = Dialect::Btsnoop;
  uint32_t version = kVersionBtsnoop;
  uint32_t datalink = kDatalinkBtsnoopHci;

  static SnoopHeader btsnoop_hci() { return SnoopHeader{}; }
  static SnoopHeader rfc1761(uint32_t datalink) {
    return SnoopHeader{Dialect::Rfc1761, kVersionRfc1761, datalink};
  }
  bool operator==(const SnoopHeader&) const = default;
};

inline constexpr size_t kHeaderSize = 16;
inline constexpr size_t kRecordHeaderSize = 24;

// H4 packet type prefixes used in HCI record data.
inline constexpr uint8_t kH4Command = 0x01;
inline constexpr uint8_t kH4AclData = 0x02;
inline constexpr uint8_t kH4ScoData = 0x03;
inline constexpr uint8_t kH4Event = 0x04;

struct SnoopRecord {
  uint32_t original_len = 0;
  uint32_t included_len = 0;   // always len(data)
  uint32_t record_len = 0;     // >= 24 + included_len; excess is pad
  uint32_t cumulative_drops = 0;
  int64_t timestamp_us = 0;    // sim time; dialect epoch added on the wire
  Bytes data;

  static SnoopRecord of(ByteView packet, int64_t timestamp_us);
  bool operator==(const SnoopRecord&) const = default;
};

Bytes encode_header(const SnoopHeader& header);
Bytes encode_record(const SnoopHeader& header, const SnoopRecord& record);

struct CaptureFile {
  SnoopHeader header;
  std::vector<SnoopRecord> records;

  bool operator==(const CaptureFile&) const = default;
};

// Byte sink so the same framing serves files, buffers and sockets.
using Sink = std::function<void(ByteView)>;

class CaptureWriter {
 public:
  CaptureWriter(Sink sink, SnoopHeader header);
  void write_record(const SnoopRecord& record);
  size_t bytes_written() const { return bytes_written_; }
  const SnoopHeader& header() const { return header_; }

 private:
  Sink sink_;
  SnoopHeader header_;
  size_t bytes_written_ = 0;
};

// Whole-buffer helpers.
size_t write_capture(std::ostream& out, const CaptureFile& file);
Bytes write_capture_bytes(const CaptureFile& file);

// Auto-detects the dialect from the magic. Throws Error{BadMagic} or
// Error{Truncated} (offset = record index for record-level truncation).
CaptureFile read_capture_bytes(ByteView bytes);
CaptureFile read_capture(std::istream& in);
CaptureFile read_capture_file(const std::string& path);

// Incremental parser for live streams: feed bytes, take complete records.
class StreamReader {
 public:
  void feed(ByteView bytes);
  bool header_ready() const { return header_ready_; }
  const SnoopHeader& header() const { return header_; }
  std::vector<SnoopRecord> take_records();

 private:
  Bytes buffer_;
  SnoopHeader header_;
  bool header_ready_ = false;
  std::vector<SnoopRecord> records_;
};

}  // namespace btlab::snoop
