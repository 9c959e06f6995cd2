#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tlsleak {

enum class ContentType : std::uint8_t {
  kChangeCipherSpec = 20,
  kAlert = 21,
  kHandshake = 22,
  kApplicationData = 23,
  kHeartbeat = 24,
};

/// Largest legal TLSCiphertext.length (2^14 + 256).
inline constexpr std::size_t kMaxRecordLength = 16640;
inline constexpr std::size_t kRecordHeaderLength = 5;

struct TlsRecord {
  std::int64_t timestamp_us = 0;  // time of the segment completing the record
  std::uint8_t content_type = 0;
  std::uint16_t length = 0;       // declared length, header excluded

  bool is_application_data() const {
    return content_type == static_cast<std::uint8_t>(ContentType::kApplicationData);
  }
  bool operator==(const TlsRecord&) const = default;
};

/// In-order stream bytes that became available at one instant.
struct TimedChunk {
  std::int64_t timestamp_us = 0;
  std::vector<std::uint8_t> bytes;
};

/// Incremental record framer over a reassembled byte stream that starts at
/// a record boundary. Payload bytes are skipped, never stored.
class TlsRecordParser {
 public:
  /// Appends every record completed by bytes to out. Throws a kCorrupt
  /// Error on an impossible header (bad type/version, length > 16640).
  void feed(std::span<const std::uint8_t> bytes, std::int64_t timestamp_us,
            std::vector<TlsRecord>& out);

  /// True when the stream stopped inside a header or body.
  bool mid_record() const { return header_fill_ > 0 || body_remaining_ > 0; }

 private:
  std::uint8_t header_[kRecordHeaderLength] = {};
  std::size_t header_fill_ = 0;
  std::size_t body_remaining_ = 0;
  TlsRecord current_;
};

struct TlsParseResult {
  std::vector<TlsRecord> records;
  bool truncated = false;  // a trailing partial record was dropped
};

TlsParseResult parse_tls_records(std::span<const TimedChunk> stream);

}  // namespace tlsleak
