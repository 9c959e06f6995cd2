#include "tlsleak/tls.hpp"

#include <algorithm>
#include <string>

#include "tlsleak/error.hpp"

namespace tlsleak {

void TlsRecordParser::feed(std::span<const std::uint8_t> bytes,
                           std::int64_t timestamp_us,
                           std::vector<TlsRecord>& out) {
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    if (body_remaining_ == 0) {
      const std::size_t take =
          std::min(kRecordHeaderLength - header_fill_, bytes.size() - pos);
      std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), take,
                  header_ + header_fill_);
      header_fill_ += take;
      pos += take;
      if (header_fill_ < kRecordHeaderLength) break;

      const std::uint8_t type = header_[0];
      const std::size_t length = (std::size_t{header_[3]} << 8) | header_[4];
      if (type < 20 || type > 24 || header_[1] != 3) {
        throw Error(ErrorKind::kCorrupt,
                    "not a TLS record header (type " + std::to_string(type) + ")");
      }
      if (length > kMaxRecordLength) {
        throw Error(ErrorKind::kCorrupt,
                    "TLS record length " + std::to_string(length) + " exceeds 16640");
      }
      header_fill_ = 0;
      current_.content_type = type;
      current_.length = static_cast<std::uint16_t>(length);
      body_remaining_ = length;
      if (length == 0) {
        current_.timestamp_us = timestamp_us;
        out.push_back(current_);
      }
      continue;
    }
    const std::size_t take = std::min(body_remaining_, bytes.size() - pos);
    pos += take;
    body_remaining_ -= take;
    if (body_remaining_ == 0) {
      current_.timestamp_us = timestamp_us;
      out.push_back(current_);
    }
  }
}

TlsParseResult parse_tls_records(std::span<const TimedChunk> stream) {
  TlsParseResult result;
  TlsRecordParser parser;
  for (const auto& chunk : stream) {
    parser.feed(chunk.bytes, chunk.timestamp_us, result.records);
  }
  result.truncated = parser.mid_record();
  return result;
}

}  // namespace tlsleak
