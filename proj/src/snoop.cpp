#include "btlab/snoop.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>

#include "btlab/errors.hpp"

namespace btlab::snoop {

SnoopRecord SnoopRecord::of(ByteView packet, int64_t timestamp_us) {
  SnoopRecord record;
  record.original_len = static_cast<uint32_t>(packet.size());
  record.included_len = static_cast<uint32_t>(packet.size());
  record.record_len = static_cast<uint32_t>(kRecordHeaderSize + packet.size());
  record.timestamp_us = timestamp_us;
  record.data.assign(packet.begin(), packet.end());
  return record;
}

Bytes encode_header(const SnoopHeader& header) {
  Bytes out;
  const auto& magic =
      header.dialect == Dialect::Btsnoop ? kMagicBtsnoop : kMagicRfc1761;
  out.insert(out.end(), magic.begin(), magic.end());
  put_u32be(out, header.version);
  put_u32be(out, header.datalink);
  return out;
}

Bytes encode_record(const SnoopHeader& header, const SnoopRecord& record) {
  Bytes out;
  put_u32be(out, record.original_len);
  put_u32be(out, record.included_len);
  put_u32be(out, record.record_len);
  put_u32be(out, record.cumulative_drops);
  uint64_t wire_ts = static_cast<uint64_t>(record.timestamp_us);
  if (header.dialect == Dialect::Btsnoop) {
    wire_ts += kBtsnoopEpochOffsetUs;
  }
  put_u64be(out, wire_ts);
  out.insert(out.end(), record.data.begin(), record.data.end());
  size_t pad = record.record_len - kRecordHeaderSize - record.data.size();
  out.insert(out.end(), pad, 0);
  return out;
}

CaptureWriter::CaptureWriter(Sink sink, SnoopHeader header)
    : sink_(std::move(sink)), header_(header) {
  Bytes bytes = encode_header(header_);
  sink_(bytes);
  bytes_written_ += bytes.size();
}

void CaptureWriter::write_record(const SnoopRecord& record) {
  if (record.included_len != record.data.size() ||
      record.record_len < kRecordHeaderSize + record.data.size()) {
    throw Error(Errc::SinkFailure, "inconsistent snoop record lengths");
  }
  Bytes bytes = encode_record(header_, record);
  sink_(bytes);
  bytes_written_ += bytes.size();
}

size_t write_capture(std::ostream& out, const CaptureFile& file) {
  Bytes bytes = write_capture_bytes(file);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw Error(Errc::SinkFailure, "capture sink write failed");
  }
  return bytes.size();
}

Bytes write_capture_bytes(const CaptureFile& file) {
  Bytes out = encode_header(file.header);
  for (const auto& record : file.records) {
    if (record.included_len != record.data.size() ||
        record.record_len < kRecordHeaderSize + record.data.size()) {
      throw Error(Errc::SinkFailure, "inconsistent snoop record lengths");
    }
    Bytes bytes = encode_record(file.header, record);
    out.insert(out.end(), bytes.begin(), bytes.end());
  }
  return out;
}

namespace {

SnoopHeader parse_header(ByteView bytes) {
  SnoopHeader header;
  if (std::equal(kMagicBtsnoop.begin(), kMagicBtsnoop.end(), bytes.begin())) {
    header.dialect = Dialect::Btsnoop;
  } else if (std::equal(kMagicRfc1761.begin(), kMagicRfc1761.end(),
                        bytes.begin())) {
    header.dialect = Dialect::Rfc1761;
  } else {
    throw Error(Errc::BadMagic, "not a snoop capture (bad magic)");
  }
  header.version = get_u32be(bytes, 8);
  header.datalink = get_u32be(bytes, 12);
  return header;
}

// Returns false when more bytes are needed; throws on malformed records.
bool parse_record(ByteView bytes, size_t& offset, const SnoopHeader& header,
                  size_t record_index, SnoopRecord& out) {
  if (bytes.size() - offset < kRecordHeaderSize) return false;
  SnoopRecord record;
  record.original_len = get_u32be(bytes, offset);
  record.included_len = get_u32be(bytes, offset + 4);
  record.record_len = get_u32be(bytes, offset + 8);
  record.cumulative_drops = get_u32be(bytes, offset + 12);
  if (record.record_len < kRecordHeaderSize + record.included_len) {
    throw Error(Errc::Truncated,
                "record " + std::to_string(record_index) +
                    ": record_len smaller than header + data",
                record_index);
  }
  if (bytes.size() - offset < record.record_len) return false;
  uint64_t wire_ts = get_u64be(bytes, offset + 16);
  if (header.dialect == Dialect::Btsnoop) {
    wire_ts -= kBtsnoopEpochOffsetUs;
  }
  record.timestamp_us = static_cast<int64_t>(wire_ts);
  record.data.assign(bytes.begin() + offset + kRecordHeaderSize,
                     bytes.begin() + offset + kRecordHeaderSize +
                         record.included_len);
  offset += record.record_len;
  out = std::move(record);
  return true;
}

}  // namespace

CaptureFile read_capture_bytes(ByteView bytes) {
  if (bytes.size() < kHeaderSize) {
    throw Error(Errc::Truncated, "capture shorter than its 16-byte header",
                bytes.size());
  }
  CaptureFile file;
  file.header = parse_header(bytes);
  size_t offset = kHeaderSize;
  while (offset < bytes.size()) {
    SnoopRecord record;
    if (!parse_record(bytes, offset, file.header, file.records.size(),
                      record)) {
      throw Error(Errc::Truncated,
                  "record " + std::to_string(file.records.size()) +
                      " cut short",
                  file.records.size());
    }
    file.records.push_back(std::move(record));
  }
  return file;
}

CaptureFile read_capture(std::istream& in) {
  Bytes bytes((std::istreambuf_iterator<char>(in)),
              std::istreambuf_iterator<char>());
  return read_capture_bytes(bytes);
}

CaptureFile read_capture_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(Errc::SinkFailure, "cannot open capture file: " + path);
  }
  return read_capture(in);
}

void StreamReader::feed(ByteView bytes) {
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
  if (!header_ready_) {
    if (buffer_.size() < kHeaderSize) return;
    header_ = parse_header(buffer_);
    buffer_.erase(buffer_.begin(), buffer_.begin() + kHeaderSize);
    header_ready_ = true;
  }
  size_t offset = 0;
  SnoopRecord record;
  while (parse_record(buffer_, offset, header_, records_.size(), record)) {
    records_.push_back(std::move(record));
    record = SnoopRecord{};
  }
  buffer_.erase(buffer_.begin(), buffer_.begin() + offset);
}

std::vector<SnoopRecord> StreamReader::take_records() {
  std::vector<SnoopRecord> out;
  out.swap(records_);
  return out;
}

}  // namespace btlab::snoop
