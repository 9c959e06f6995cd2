#include "tlsleak/pcap.hpp"

#include <arpa/inet.h>

#include <algorithm>
#include <cstring>
#include <optional>

#include <json.hpp>

#include "tlsleak/error.hpp"
#include "tlsleak/io.hpp"

namespace tlsleak {

namespace {

constexpr std::uint32_t kMagicMicros = 0xa1b2c3d4;
constexpr std::uint32_t kMagicMicrosSwapped = 0xd4c3b2a1;
constexpr std::uint32_t kMagicNanos = 0xa1b23c4d;
constexpr std::uint32_t kMagicNanosSwapped = 0x4d3cb2a1;
constexpr std::uint32_t kMagicPcapng = 0x0a0d0d0a;
constexpr std::uint32_t kLinkEthernet = 1;
constexpr std::size_t kGlobalHeader = 24;
constexpr std::size_t kRecordHeader = 16;

std::uint16_t be16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

std::uint32_t be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
         (std::uint32_t{p[2]} << 8) | p[3];
}

std::string format_addr(const std::uint8_t* p, bool ipv6) {
  char buf[INET6_ADDRSTRLEN] = {};
  inet_ntop(ipv6 ? AF_INET6 : AF_INET, p, buf, sizeof buf);
  return buf;
}

}  // namespace

PcapReader::PcapReader(const std::filesystem::path& path)
    : bytes_([&] {
        const std::string raw = read_file(path);
        return std::vector<std::uint8_t>(raw.begin(), raw.end());
      }()),
      name_(path.string()) {
  if (bytes_.size() < kGlobalHeader) {
    throw Error(ErrorKind::kUnsupported, name_ + ": too short for a pcap header");
  }
  std::uint32_t magic;
  std::memcpy(&magic, bytes_.data(), 4);
  if (magic == kMagicMicros) {
    swapped_ = false;
  } else if (magic == kMagicMicrosSwapped) {
    swapped_ = true;
  } else if (magic == kMagicNanos || magic == kMagicNanosSwapped) {
    throw Error(ErrorKind::kUnsupported, name_ + ": nanosecond pcap is not supported");
  } else if (magic == kMagicPcapng) {
    throw Error(ErrorKind::kUnsupported, name_ + ": pcapng is not supported");
  } else {
    throw Error(ErrorKind::kUnsupported, name_ + ": unknown capture magic");
  }
  const std::uint32_t link = read32(bytes_.data() + 20);
  if (link != kLinkEthernet) {
    throw Error(ErrorKind::kUnsupported,
                name_ + ": link type " + std::to_string(link) + " is not Ethernet");
  }
  offset_ = kGlobalHeader;
}

std::uint32_t PcapReader::read32(const std::uint8_t* p) const {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return swapped_ ? __builtin_bswap32(v) : v;
}

std::uint16_t PcapReader::read16(const std::uint8_t* p) const {
  std::uint16_t v;
  std::memcpy(&v, p, 2);
  return swapped_ ? __builtin_bswap16(v) : v;
}

bool PcapReader::next(Packet& packet) {
  if (offset_ == bytes_.size()) return false;
  if (bytes_.size() - offset_ < kRecordHeader) {
    throw Error(ErrorKind::kCorrupt, name_ + ": truncated packet header");
  }
  const std::uint8_t* h = bytes_.data() + offset_;
  const std::uint32_t sec = read32(h);
  const std::uint32_t usec = read32(h + 4);
  const std::uint32_t caplen = read32(h + 8);
  const std::uint32_t origlen = read32(h + 12);
  if (usec >= 1000000) {
    throw Error(ErrorKind::kCorrupt, name_ + ": microsecond field out of range");
  }
  if (bytes_.size() - offset_ - kRecordHeader < caplen) {
    throw Error(ErrorKind::kCorrupt, name_ + ": truncated packet data");
  }
  packet.timestamp_us = std::int64_t{sec} * 1000000 + usec;
  packet.data = std::span<const std::uint8_t>(h + kRecordHeader, caplen);
  packet.original_length = origlen;
  offset_ += kRecordHeader + caplen;
  return true;
}

bool decode_tcp_frame(std::span<const std::uint8_t> frame, TcpSegment& out) {
  std::size_t pos = 12;
  if (frame.size() < 14) return false;
  std::uint16_t ether_type = be16(frame.data() + pos);
  pos += 2;
  while (ether_type == 0x8100 || ether_type == 0x88a8) {
    if (frame.size() < pos + 4) return false;
    ether_type = be16(frame.data() + pos + 2);
    pos += 4;
  }

  std::size_t l4 = 0;
  std::size_t l4_end = 0;
  if (ether_type == 0x0800) {
    if (frame.size() < pos + 20) return false;
    const std::uint8_t* ip = frame.data() + pos;
    if ((ip[0] >> 4) != 4) return false;
    const std::size_t ihl = std::size_t{ip[0] & 0x0fu} * 4;
    const std::size_t total = be16(ip + 2);
    const std::uint16_t frag = be16(ip + 6);
    if (ihl < 20 || ip[9] != 6) return false;
    if ((frag & 0x1fff) != 0 || (frag & 0x2000) != 0) return false;
    if (total < ihl || frame.size() < pos + total) return false;
    out.src_addr = format_addr(ip + 12, false);
    out.dst_addr = format_addr(ip + 16, false);
    l4 = pos + ihl;
    l4_end = pos + total;
  } else if (ether_type == 0x86dd) {
    if (frame.size() < pos + 40) return false;
    const std::uint8_t* ip = frame.data() + pos;
    if ((ip[0] >> 4) != 6) return false;
    const std::size_t payload_len = be16(ip + 4);
    std::uint8_t next = ip[6];
    out.src_addr = format_addr(ip + 8, true);
    out.dst_addr = format_addr(ip + 24, true);
    l4 = pos + 40;
    l4_end = l4 + payload_len;
    if (frame.size() < l4_end) return false;
    // Hop-by-hop, routing and destination options; fragments are skipped.
    while (next == 0 || next == 43 || next == 60) {
      if (l4_end < l4 + 8) return false;
      next = frame[l4];
      l4 += (std::size_t{frame[l4 + 1]} + 1) * 8;
    }
    if (next != 6) return false;
  } else {
    return false;
  }

  if (l4_end < l4 + 20) return false;
  const std::uint8_t* tcp = frame.data() + l4;
  const std::size_t data_offset = std::size_t{static_cast<std::uint8_t>(tcp[12] >> 4)} * 4;
  if (data_offset < 20 || l4_end < l4 + data_offset) return false;
  out.src_port = be16(tcp);
  out.dst_port = be16(tcp + 2);
  out.seq = be32(tcp + 4);
  out.flags = tcp[13];
  out.payload = frame.subspan(l4 + data_offset, l4_end - l4 - data_offset);
  return true;
}

std::string FlowKey::to_string() const {
  auto fmt = [](const std::string& addr, std::uint16_t port) {
    return (addr.find(':') != std::string::npos ? "[" + addr + "]" : addr) +
           ":" + std::to_string(port);
  };
  return fmt(client_addr, client_port) + "<->" + fmt(server_addr, server_port) +
         "/tcp";
}

void TcpReassembler::set_syn(std::uint32_t isn) {
  if (anchored_) return;
  anchored_ = true;
  next_seq_ = isn + 1;
  next_offset_ = 0;
}

bool TcpReassembler::push(std::uint32_t seq, std::span<const std::uint8_t> payload,
                          std::int64_t timestamp_us, std::vector<TimedChunk>& out) {
  if (payload.empty()) return true;
  if (!anchored_) {
    anchored_ = true;
    next_seq_ = seq;
    next_offset_ = 0;
  }
  // Signed distance handles sequence wrap-around.
  const auto delta = static_cast<std::int32_t>(seq - next_seq_);
  const std::int64_t start = static_cast<std::int64_t>(next_offset_) + delta;
  const std::int64_t end = start + static_cast<std::int64_t>(payload.size());
  if (end <= static_cast<std::int64_t>(next_offset_)) return true;  // duplicate

  auto emit = [&](std::span<const std::uint8_t> bytes, std::int64_t ts) {
    out.push_back(TimedChunk{ts, std::vector<std::uint8_t>(bytes.begin(), bytes.end())});
    next_offset_ += bytes.size();
    next_seq_ += static_cast<std::uint32_t>(bytes.size());
  };

  if (start > static_cast<std::int64_t>(next_offset_)) {
    const auto key = static_cast<std::uint64_t>(start);
    auto [it, inserted] = pending_.try_emplace(key);
    if (inserted || it->second.bytes.size() < payload.size()) {
      buffered_ += payload.size() - it->second.bytes.size();
      it->second.bytes.assign(payload.begin(), payload.end());
      it->second.timestamp_us = timestamp_us;
    }
    return buffered_ <= max_buffered_;
  }

  const auto skip = static_cast<std::size_t>(static_cast<std::int64_t>(next_offset_) - start);
  emit(payload.subspan(skip), timestamp_us);

  // Drain buffered segments that are now contiguous. Their bytes only become
  // visible once the gap fills, so they carry the later timestamp.
  while (!pending_.empty() && pending_.begin()->first <= next_offset_) {
    auto node = pending_.extract(pending_.begin());
    buffered_ -= node.mapped().bytes.size();
    const std::uint64_t seg_end = node.key() + node.mapped().bytes.size();
    if (seg_end > next_offset_) {
      const std::span<const std::uint8_t> bytes(node.mapped().bytes);
      emit(bytes.subspan(static_cast<std::size_t>(next_offset_ - node.key())),
           std::max(timestamp_us, node.mapped().timestamp_us));
    }
  }
  return true;
}

IngestReport& IngestReport::operator+=(const IngestReport& other) {
  flows += other.flows;
  abandoned += other.abandoned;
  truncated_records += other.truncated_records;
  empty_flows += other.empty_flows;
  warnings.insert(warnings.end(), other.warnings.begin(), other.warnings.end());
  return *this;
}

std::string IngestReport::to_json() const {
  nlohmann::ordered_json j;
  j["flows"] = flows;
  j["abandoned"] = abandoned;
  j["truncated_records"] = truncated_records;
  j["empty_flows"] = empty_flows;
  j["warnings"] = warnings;
  return j.dump(2);
}

std::vector<NetworkEvent> events_from_records(std::span<const TlsRecord> records) {
  std::vector<NetworkEvent> events;
  std::optional<std::int64_t> last;
  for (const auto& r : records) {
    if (!r.is_application_data()) continue;
    // Zero-length records carry no payload and cannot form a valid event.
    if (r.length == 0) continue;
    const double dt = last ? static_cast<double>(r.timestamp_us - *last) / 1e6 : 0.0;
    events.push_back(NetworkEvent{dt, r.length});
    last = r.timestamp_us;
  }
  return events;
}

namespace {

struct FlowState {
  std::size_t order = 0;
  TcpReassembler reassembler;
  TlsRecordParser parser;
  std::vector<TlsRecord> records;
  bool abandoned = false;
};

}  // namespace

IngestResult ingest_pcap(const std::filesystem::path& path,
                         const IngestOptions& options) {
  PcapReader reader(path);
  std::map<FlowKey, FlowState> flows;
  IngestResult result;
  auto& report = result.report;
  const std::string capture = path.filename().string();

  PcapReader::Packet packet;
  TcpSegment seg;
  std::vector<TimedChunk> chunks;
  while (reader.next(packet)) {
    if (!decode_tcp_frame(packet.data, seg)) continue;
    const bool from_server = seg.src_port == options.server_port;
    const bool to_server = seg.dst_port == options.server_port;
    if (!from_server && !to_server) continue;

    FlowKey key;
    key.server_port = options.server_port;
    if (from_server) {
      key.server_addr = seg.src_addr;
      key.client_addr = seg.dst_addr;
      key.client_port = seg.dst_port;
    } else {
      key.server_addr = seg.dst_addr;
      key.client_addr = seg.src_addr;
      key.client_port = seg.src_port;
    }
    auto [it, inserted] = flows.try_emplace(key);
    FlowState& flow = it->second;
    if (inserted) {
      flow.order = flows.size() - 1;
      flow.reassembler = TcpReassembler(options.max_buffered);
    }
    if (flow.abandoned) continue;

    const bool wanted = options.direction == Direction::kServerToClient
                            ? from_server
                            : (to_server && !from_server);
    if (!wanted) continue;
    if (seg.flags & TcpSegment::kSyn) flow.reassembler.set_syn(seg.seq);

    chunks.clear();
    if (!flow.reassembler.push(seg.seq, seg.payload, packet.timestamp_us, chunks)) {
      flow.abandoned = true;
      report.warnings.push_back(key.to_string() +
                                ": out-of-order data exceeded reassembly buffer");
      continue;
    }
    try {
      for (const auto& c : chunks) flow.parser.feed(c.bytes, c.timestamp_us, flow.records);
    } catch (const Error& e) {
      flow.abandoned = true;
      report.warnings.push_back(key.to_string() + ": " + e.what());
    }
  }

  std::vector<std::pair<std::size_t, const std::pair<const FlowKey, FlowState>*>> ordered;
  for (const auto& entry : flows) ordered.emplace_back(entry.second.order, &entry);
  std::sort(ordered.begin(), ordered.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  report.flows = flows.size();
  result.dataset.provenance.source = Source::kPcap;
  result.dataset.provenance.config_digest = digest(read_file(path));
  for (const auto& [order, entry] : ordered) {
    const FlowKey& key = entry->first;
    const FlowState& flow = entry->second;
    if (flow.abandoned) {
      ++report.abandoned;
      continue;
    }
    if (flow.parser.mid_record()) {
      ++report.truncated_records;
      report.warnings.push_back(key.to_string() + ": capture ends mid-record");
    }
    Trace trace;
    trace.events = events_from_records(flow.records);
    if (trace.events.empty()) {
      ++report.empty_flows;
      continue;
    }
    trace.id = capture + "#" + std::to_string(order);
    trace.prompt_id = trace.id;
    trace.label = Label::kNoise;
    trace.meta["capture"] = capture;
    trace.meta["flow"] = key.to_string();
    trace.meta["source"] = "pcap";
    result.dataset.traces.push_back(std::move(trace));
  }
  return result;
}

}  // namespace tlsleak

namespace tlsleak {

IngestResult ingest_path(const std::filesystem::path& path, const IngestOptions& options) {
  std::error_code ec;
  if (!std::filesystem::is_directory(path, ec)) return ingest_pcap(path, options);
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(path)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pcap") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorKind::kNotFound, path.string() + ": no .pcap files");
  IngestResult all;
  std::string digests;
  for (const auto& f : files) {
    IngestResult one = ingest_pcap(f, options);
    all.report += one.report;
    digests += one.dataset.provenance.config_digest;
    for (auto& t : one.dataset.traces) all.dataset.traces.push_back(std::move(t));
  }
  all.dataset.provenance.source = Source::kPcap;
  all.dataset.provenance.config_digest = digest(digests);
  return all;
}

}  // namespace tlsleak
