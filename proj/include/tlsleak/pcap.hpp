#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tlsleak/tls.hpp"
#include "tlsleak/trace.hpp"

namespace tlsleak {

/// Classic pcap (microsecond timestamps, Ethernet link type) reader.
/// pcapng, nanosecond captures and other link types are rejected.
class PcapReader {
 public:
  struct Packet {
    std::int64_t timestamp_us = 0;
    std::span<const std::uint8_t> data;  // captured bytes, valid until next()
    std::uint32_t original_length = 0;
  };

  explicit PcapReader(const std::filesystem::path& path);

  /// False at end of file. Throws kCorrupt on a truncated record header.
  bool next(Packet& packet);

 private:
  std::uint32_t read32(const std::uint8_t* p) const;
  std::uint16_t read16(const std::uint8_t* p) const;

  std::vector<std::uint8_t> bytes_;
  std::size_t offset_ = 0;
  bool swapped_ = false;
  std::string name_;
};

/// Decoded TCP segment of an Ethernet/IPv4|IPv6 frame.
struct TcpSegment {
  std::string src_addr;
  std::string dst_addr;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint32_t seq = 0;
  std::uint8_t flags = 0;
  std::span<const std::uint8_t> payload;

  static constexpr std::uint8_t kFin = 0x01;
  static constexpr std::uint8_t kSyn = 0x02;
  static constexpr std::uint8_t kRst = 0x04;
  static constexpr std::uint8_t kAck = 0x10;
};

/// False for non-TCP, fragmented or truncated frames.
bool decode_tcp_frame(std::span<const std::uint8_t> frame, TcpSegment& out);

struct FlowKey {
  std::string client_addr;
  std::uint16_t client_port = 0;
  std::string server_addr;
  std::uint16_t server_port = 0;
  std::uint8_t protocol = 6;

  auto operator<=>(const FlowKey&) const = default;
  std::string to_string() const;
};

/// One-direction TCP reassembly into an in-order, duplicate-free stream.
class TcpReassembler {
 public:
  explicit TcpReassembler(std::size_t max_buffered = std::size_t{1} << 20)
      : max_buffered_(max_buffered) {}

  /// Anchors the stream at isn + 1 (the byte after the SYN).
  void set_syn(std::uint32_t isn);

  /// Feeds one segment; newly in-order bytes are appended to out. Returns
  /// false once out-of-order data exceeds the buffer cap.
  bool push(std::uint32_t seq, std::span<const std::uint8_t> payload,
            std::int64_t timestamp_us, std::vector<TimedChunk>& out);

  std::size_t buffered_bytes() const { return buffered_; }

 private:
  struct Pending {
    std::vector<std::uint8_t> bytes;
    std::int64_t timestamp_us = 0;
  };

  std::size_t max_buffered_;
  bool anchored_ = false;
  std::uint32_t next_seq_ = 0;
  std::uint64_t next_offset_ = 0;
  std::map<std::uint64_t, Pending> pending_;
  std::size_t buffered_ = 0;
};

enum class Direction { kServerToClient, kClientToServer };

struct IngestOptions {
  std::uint16_t server_port = 443;
  Direction direction = Direction::kServerToClient;
  std::size_t max_buffered = std::size_t{1} << 20;
};

struct IngestReport {
  std::size_t flows = 0;
  std::size_t abandoned = 0;
  std::size_t truncated_records = 0;
  std::size_t empty_flows = 0;  // flows with no application-data record
  std::vector<std::string> warnings;

  IngestReport& operator+=(const IngestReport& other);
  std::string to_json() const;
};

struct IngestResult {
  Dataset dataset;
  IngestReport report;
};

/// One noise-labeled trace per TCP connection on server_port, holding the
/// application-data records of the selected direction.
IngestResult ingest_pcap(const std::filesystem::path& path,
                         const IngestOptions& options = {});

/// A capture file, or every *.pcap file of a directory in name order.
IngestResult ingest_path(const std::filesystem::path& path,
                         const IngestOptions& options = {});

/// Events of a record list: application data only, dt from successive
/// record timestamps, first dt = 0.
std::vector<NetworkEvent> events_from_records(std::span<const TlsRecord> records);

}  // namespace tlsleak
