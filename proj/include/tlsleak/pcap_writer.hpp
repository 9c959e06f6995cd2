#pragma once

// Fixture capture writer: builds classic pcap files with Ethernet/IP/TCP
// frames carrying TLS record streams, for ingest tests and demos.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tlsleak/trace.hpp"

namespace tlsleak {

struct Endpoint {
  std::array<std::uint8_t, 16> addr = {};
  bool ipv6 = false;
  std::uint16_t port = 0;

  static Endpoint v4(std::uint8_t a, std::uint8_t b, std::uint8_t c,
                     std::uint8_t d, std::uint16_t port);
  static Endpoint v6(const std::array<std::uint8_t, 16>& addr, std::uint16_t port);
};

/// Ethernet frame carrying one TCP segment from src to dst.
std::vector<std::uint8_t> build_tcp_frame(const Endpoint& src, const Endpoint& dst,
                                          std::uint32_t seq, std::uint8_t flags,
                                          std::span<const std::uint8_t> payload);

/// A TLS record: 5-byte header followed by length filler bytes.
std::vector<std::uint8_t> tls_record_bytes(std::uint8_t content_type,
                                           std::size_t length);

struct FixtureSegment {
  std::int64_t timestamp_us = 0;
  std::uint32_t offset = 0;  // byte offset in the server->client stream
  std::vector<std::uint8_t> payload;
};

struct FixtureFlow {
  Endpoint client;
  Endpoint server;
  std::uint32_t isn = 1000;
  bool emit_syn = true;                  // SYN-ACK from the server first
  std::vector<FixtureSegment> segments;  // server->client, in wire order
};

/// Splits a byte stream starting at offset 0 into segments of at most mss
/// bytes, all stamped with timestamp_us.
std::vector<FixtureSegment> segment_stream(std::span<const std::uint8_t> stream,
                                           std::uint32_t base_offset,
                                           std::int64_t timestamp_us,
                                           std::size_t mss);

/// One flow replaying trace: every event becomes an application-data record
/// of event.size bytes at base_us + cumulative dt (rounded to microseconds).
FixtureFlow flow_from_trace(const Trace& trace, const Endpoint& client,
                            const Endpoint& server, std::int64_t base_us,
                            std::size_t mss = 1448);

/// Writes all flows, frames merged by timestamp (stable across flows).
/// Client->server ACKs are interleaved so captures look bidirectional.
void write_capture(const std::filesystem::path& path,
                   std::span<const FixtureFlow> flows, bool big_endian = false);

/// Convenience: one flow per trace, distinct client endpoints, flows
/// started 1 ms apart so their frames interleave.
void write_traces_capture(const std::filesystem::path& path,
                          std::span<const Trace> traces,
                          std::uint16_t server_port = 443);

}  // namespace tlsleak
