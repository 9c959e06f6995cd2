#include "tlsleak/pcap_writer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "tlsleak/error.hpp"
#include "tlsleak/io.hpp"

namespace tlsleak {

namespace {

void put16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  put16(out, static_cast<std::uint16_t>(v >> 16));
  put16(out, static_cast<std::uint16_t>(v));
}

void put_raw32(std::string& out, std::uint32_t v, bool big_endian) {
  for (int i = 0; i < 4; ++i) {
    const int shift = big_endian ? 24 - 8 * i : 8 * i;
    out.push_back(static_cast<char>((v >> shift) & 0xff));
  }
}

void put_raw16(std::string& out, std::uint16_t v, bool big_endian) {
  for (int i = 0; i < 2; ++i) {
    const int shift = big_endian ? 8 - 8 * i : 8 * i;
    out.push_back(static_cast<char>((v >> shift) & 0xff));
  }
}

}  // namespace

Endpoint Endpoint::v4(std::uint8_t a, std::uint8_t b, std::uint8_t c,
                      std::uint8_t d, std::uint16_t port) {
  Endpoint e;
  e.addr[0] = a;
  e.addr[1] = b;
  e.addr[2] = c;
  e.addr[3] = d;
  e.port = port;
  return e;
}

Endpoint Endpoint::v6(const std::array<std::uint8_t, 16>& addr, std::uint16_t port) {
  Endpoint e;
  e.addr = addr;
  e.ipv6 = true;
  e.port = port;
  return e;
}

std::vector<std::uint8_t> build_tcp_frame(const Endpoint& src, const Endpoint& dst,
                                          std::uint32_t seq, std::uint8_t flags,
                                          std::span<const std::uint8_t> payload) {
  if (src.ipv6 != dst.ipv6) throw invalid_argument("mixed IPv4/IPv6 endpoints");
  std::vector<std::uint8_t> f;
  f.reserve(74 + payload.size());
  for (int i = 0; i < 6; ++i) f.push_back(0x02);  // dst MAC
  for (int i = 0; i < 6; ++i) f.push_back(0x04);  // src MAC
  put16(f, src.ipv6 ? 0x86dd : 0x0800);

  const std::size_t tcp_len = 20 + payload.size();
  if (!src.ipv6) {
    put16(f, 0x4500);
    put16(f, static_cast<std::uint16_t>(20 + tcp_len));
    put16(f, 0);       // id
    put16(f, 0x4000);  // DF
    f.push_back(64);
    f.push_back(6);
    put16(f, 0);  // checksum left zero; readers do not verify it
    f.insert(f.end(), src.addr.begin(), src.addr.begin() + 4);
    f.insert(f.end(), dst.addr.begin(), dst.addr.begin() + 4);
  } else {
    put32(f, 0x60000000);
    put16(f, static_cast<std::uint16_t>(tcp_len));
    f.push_back(6);
    f.push_back(64);
    f.insert(f.end(), src.addr.begin(), src.addr.end());
    f.insert(f.end(), dst.addr.begin(), dst.addr.end());
  }
  put16(f, src.port);
  put16(f, dst.port);
  put32(f, seq);
  put32(f, 0);  // ack
  f.push_back(0x50);
  f.push_back(flags);
  put16(f, 65535);
  put16(f, 0);
  put16(f, 0);
  f.insert(f.end(), payload.begin(), payload.end());
  return f;
}

std::vector<std::uint8_t> tls_record_bytes(std::uint8_t content_type,
                                           std::size_t length) {
  if (length > 0xffff) throw invalid_argument("record length exceeds 16 bits");
  std::vector<std::uint8_t> r;
  r.reserve(5 + length);
  r.push_back(content_type);
  r.push_back(0x03);
  r.push_back(0x03);
  r.push_back(static_cast<std::uint8_t>(length >> 8));
  r.push_back(static_cast<std::uint8_t>(length));
  for (std::size_t i = 0; i < length; ++i) r.push_back(static_cast<std::uint8_t>(i * 31 + 7));
  return r;
}

std::vector<FixtureSegment> segment_stream(std::span<const std::uint8_t> stream,
                                           std::uint32_t base_offset,
                                           std::int64_t timestamp_us,
                                           std::size_t mss) {
  if (mss == 0) throw invalid_argument("mss must be positive");
  std::vector<FixtureSegment> out;
  for (std::size_t pos = 0; pos < stream.size(); pos += mss) {
    const std::size_t n = std::min(mss, stream.size() - pos);
    FixtureSegment s;
    s.timestamp_us = timestamp_us;
    s.offset = base_offset + static_cast<std::uint32_t>(pos);
    s.payload.assign(stream.begin() + static_cast<std::ptrdiff_t>(pos),
                     stream.begin() + static_cast<std::ptrdiff_t>(pos + n));
    out.push_back(std::move(s));
  }
  return out;
}

FixtureFlow flow_from_trace(const Trace& trace, const Endpoint& client,
                            const Endpoint& server, std::int64_t base_us,
                            std::size_t mss) {
  FixtureFlow flow;
  flow.client = client;
  flow.server = server;
  std::uint32_t offset = 0;
  double elapsed = 0.0;
  for (std::size_t i = 0; i < trace.events.size(); ++i) {
    const auto& e = trace.events[i];
    if (i > 0) elapsed += e.dt;
    const std::int64_t ts = base_us + std::llround(elapsed * 1e6);
    const auto record = tls_record_bytes(23, static_cast<std::size_t>(e.size));
    auto segs = segment_stream(record, offset, ts, mss);
    flow.segments.insert(flow.segments.end(), segs.begin(), segs.end());
    offset += static_cast<std::uint32_t>(record.size());
  }
  return flow;
}

void write_capture(const std::filesystem::path& path,
                   std::span<const FixtureFlow> flows, bool big_endian) {
  struct Frame {
    std::int64_t ts;
    std::size_t flow;
    std::size_t seq;
    std::vector<std::uint8_t> bytes;
  };
  std::vector<Frame> frames;
  for (std::size_t f = 0; f < flows.size(); ++f) {
    const auto& flow = flows[f];
    std::size_t n = 0;
    if (flow.emit_syn) {
      const std::int64_t ts =
          flow.segments.empty() ? 0 : flow.segments.front().timestamp_us;
      frames.push_back({ts, f, n++,
                        build_tcp_frame(flow.server, flow.client, flow.isn, 0x12, {})});
    }
    for (const auto& s : flow.segments) {
      frames.push_back({s.timestamp_us, f, n++,
                        build_tcp_frame(flow.server, flow.client,
                                        flow.isn + 1 + s.offset, 0x18, s.payload)});
      frames.push_back({s.timestamp_us, f, n++,
                        build_tcp_frame(flow.client, flow.server, 1, 0x10, {})});
    }
  }
  std::stable_sort(frames.begin(), frames.end(),
                   [](const Frame& a, const Frame& b) { return a.ts < b.ts; });

  std::string out;
  put_raw32(out, 0xa1b2c3d4, big_endian);
  put_raw16(out, 2, big_endian);
  put_raw16(out, 4, big_endian);
  put_raw32(out, 0, big_endian);
  put_raw32(out, 0, big_endian);
  put_raw32(out, 65535, big_endian);
  put_raw32(out, 1, big_endian);
  for (const auto& fr : frames) {
    if (fr.ts < 0) throw invalid_argument("negative capture timestamp");
    put_raw32(out, static_cast<std::uint32_t>(fr.ts / 1000000), big_endian);
    put_raw32(out, static_cast<std::uint32_t>(fr.ts % 1000000), big_endian);
    put_raw32(out, static_cast<std::uint32_t>(fr.bytes.size()), big_endian);
    put_raw32(out, static_cast<std::uint32_t>(fr.bytes.size()), big_endian);
    out.append(reinterpret_cast<const char*>(fr.bytes.data()), fr.bytes.size());
  }
  write_file_atomic(path, out);
}

void write_traces_capture(const std::filesystem::path& path,
                          std::span<const Trace> traces,
                          std::uint16_t server_port) {
  const Endpoint server = Endpoint::v4(192, 0, 2, 1, server_port);
  std::vector<FixtureFlow> flows;
  flows.reserve(traces.size());
  const std::int64_t base = std::int64_t{1700000000} * 1000000;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const Endpoint client = Endpoint::v4(10, 0, static_cast<std::uint8_t>(i >> 8),
                                         static_cast<std::uint8_t>(i & 0xff),
                                         static_cast<std::uint16_t>(40000 + i % 20000));
    flows.push_back(flow_from_trace(traces[i], client, server,
                                    base + static_cast<std::int64_t>(i) * 1000));
  }
  write_capture(path, flows);
}

}  // namespace tlsleak
