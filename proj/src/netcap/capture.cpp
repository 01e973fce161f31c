#include "honeytrace/netcap/capture.hpp"

#include <algorithm>

namespace honeytrace::netcap {

namespace fs = std::filesystem;

json CaptureSummary::to_json() const {
    return json{{"path", path.string()},
                {"packet_count", packet_count},
                {"byte_count", byte_count},
                {"degraded", degraded}};
}

CaptureHandle::CaptureHandle(std::string session_id, CaptureFilter filter, const fs::path& path, EventSink* events,
                             std::uint32_t snaplen)
    : session_id_(std::move(session_id)), filter_(filter), path_(path), events_(events), writer_(path, snaplen) {}

void CaptureHandle::append(const PacketRecord& record) {
    std::lock_guard lock(mu_);
    if (summary_) throw Error("append to finalized capture " + session_id_);
    if (degraded_) return;
    // Records arrive from concurrent relay directions; the file must stay monotone.
    const Timestamp ts = std::max(record.timestamp, last_ts_);
    try {
        const auto captured = writer_.write(static_cast<std::uint32_t>(ts.seconds()),
                                            static_cast<std::uint32_t>(ts.subsec_micros()), record.payload,
                                            std::max(record.original_len, record.captured_len()));
        ++packets_;
        bytes_ += captured;
        last_ts_ = ts;
    } catch (const Error& e) {
        degraded_ = true;
        if (events_)
            events_->emit({EventKind::degradation, session_id_,
                           json{{"module", "netcap"}, {"detail", e.what()}, {"path", path_.string()}},
                           std::nullopt});
    }
}

CaptureSummary CaptureHandle::finalize() {
    std::lock_guard lock(mu_);
    if (summary_) return *summary_;
    writer_.close();
    summary_ = CaptureSummary{path_, packets_, bytes_, degraded_};
    return *summary_;
}

std::uint64_t CaptureHandle::packet_count() const {
    std::lock_guard lock(mu_);
    return packets_;
}

std::uint64_t CaptureHandle::byte_count() const {
    std::lock_guard lock(mu_);
    return bytes_;
}

bool CaptureHandle::degraded() const {
    std::lock_guard lock(mu_);
    return degraded_;
}

CaptureHub::CaptureHub(fs::path artifact_dir, EventSink* events) : dir_(std::move(artifact_dir)), events_(events) {
    fs::create_directories(dir_);
}

fs::path CaptureHub::path_for(const std::string& session_id) const { return dir_ / (session_id + ".pcap"); }

std::shared_ptr<CaptureHandle> CaptureHub::open_capture(const std::string& session_id, Ipv4 net_identity) {
    auto handle = std::make_shared<CaptureHandle>(session_id, CaptureFilter{net_identity}, path_for(session_id), events_);
    std::lock_guard lock(mu_);
    open_.push_back(handle);
    return handle;
}

std::size_t CaptureHub::publish(const PacketRecord& record) {
    std::vector<std::shared_ptr<CaptureHandle>> targets;
    {
        std::lock_guard lock(mu_);
        for (const auto& h : open_)
            if (h->filter().accepts(record)) targets.push_back(h);
    }
    for (const auto& h : targets) h->append(record);
    return targets.size();
}

CaptureSummary CaptureHub::close_capture(const std::shared_ptr<CaptureHandle>& handle) {
    {
        std::lock_guard lock(mu_);
        std::erase(open_, handle);
    }
    return handle->finalize();
}

namespace {

void put_be16(std::uint8_t* p, std::uint16_t v) {
    p[0] = static_cast<std::uint8_t>(v >> 8);
    p[1] = static_cast<std::uint8_t>(v);
}

void put_be32(std::uint8_t* p, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(v >> (24 - 8 * i));
}

std::uint32_t sum16(const std::uint8_t* p, std::size_t n, std::uint32_t acc = 0) {
    for (std::size_t i = 0; i + 1 < n; i += 2) acc += std::uint32_t(p[i]) << 8 | p[i + 1];
    if (n & 1) acc += std::uint32_t(p[n - 1]) << 8;
    return acc;
}

std::uint16_t fold(std::uint32_t acc) {
    while (acc >> 16) acc = (acc & 0xffff) + (acc >> 16);
    return static_cast<std::uint16_t>(~acc);
}

std::uint32_t initial_seq(const Endpoint& a, const Endpoint& b) {
    // Deterministic per endpoint pair, so replays produce identical captures.
    std::uint32_t h = 2166136261u;
    for (std::uint32_t v : {a.addr.value, std::uint32_t(a.port), b.addr.value, std::uint32_t(b.port)}) {
        h ^= v;
        h *= 16777619u;
    }
    return h;
}

}  // namespace

Bytes build_ipv4_tcp(const Endpoint& src, const Endpoint& dst, std::uint32_t seq, std::uint32_t ack,
                     std::uint8_t flags, std::uint16_t ip_id, std::span<const std::uint8_t> payload) {
    constexpr std::size_t ip_len = 20, tcp_len = 20;
    Bytes f(ip_len + tcp_len + payload.size());
    auto* ip = f.data();
    ip[0] = 0x45;
    put_be16(ip + 2, static_cast<std::uint16_t>(f.size()));
    put_be16(ip + 4, ip_id);
    put_be16(ip + 6, 0x4000);  // DF
    ip[8] = 64;
    ip[9] = 6;
    put_be32(ip + 12, src.addr.value);
    put_be32(ip + 16, dst.addr.value);
    put_be16(ip + 10, fold(sum16(ip, ip_len)));

    auto* tcp = ip + ip_len;
    put_be16(tcp, src.port);
    put_be16(tcp + 2, dst.port);
    put_be32(tcp + 4, seq);
    put_be32(tcp + 8, ack);
    tcp[12] = 5 << 4;
    tcp[13] = flags;
    put_be16(tcp + 14, 65535);
    std::copy(payload.begin(), payload.end(), tcp + tcp_len);

    std::uint8_t pseudo[12];
    put_be32(pseudo, src.addr.value);
    put_be32(pseudo + 4, dst.addr.value);
    pseudo[8] = 0;
    pseudo[9] = 6;
    put_be16(pseudo + 10, static_cast<std::uint16_t>(tcp_len + payload.size()));
    put_be16(tcp + 16, fold(sum16(tcp, tcp_len + payload.size(), sum16(pseudo, sizeof pseudo))));
    return f;
}

TcpFlowSynth::TcpFlowSynth(Endpoint client, Endpoint server, Ipv4 env_identity)
    : client_(client),
      server_(server),
      env_(env_identity),
      client_seq_(initial_seq(client, server)),
      server_seq_(initial_seq(server, client)) {}

PacketRecord TcpFlowSynth::frame(bool from_client, std::uint8_t flags, std::span<const std::uint8_t> payload,
                                 Timestamp ts) {
    PacketRecord r;
    r.timestamp = ts;
    r.src = from_client ? client_ : server_;
    r.dst = from_client ? server_ : client_;
    const std::uint32_t seq = from_client ? client_seq_ : server_seq_;
    const std::uint32_t ack = (flags & tcp_flags::ack) ? (from_client ? server_seq_ : client_seq_) : 0;
    r.payload = build_ipv4_tcp(r.src, r.dst, seq, ack, flags, ip_id_++, payload);
    r.original_len = r.captured_len();
    r.direction = r.dst.addr == env_ ? Direction::inbound : Direction::outbound;
    std::uint32_t advance = static_cast<std::uint32_t>(payload.size());
    if (flags & (tcp_flags::syn | tcp_flags::fin)) ++advance;
    (from_client ? client_seq_ : server_seq_) += advance;
    return r;
}

std::vector<PacketRecord> TcpFlowSynth::open(Timestamp ts) {
    std::vector<PacketRecord> out;
    out.push_back(frame(true, tcp_flags::syn, {}, ts));
    out.push_back(frame(false, tcp_flags::syn | tcp_flags::ack, {}, ts));
    out.push_back(frame(true, tcp_flags::ack, {}, ts));
    return out;
}

std::vector<PacketRecord> TcpFlowSynth::data(bool from_client, std::span<const std::uint8_t> bytes, Timestamp ts) {
    std::vector<PacketRecord> out;
    for (std::size_t off = 0; off < bytes.size(); off += kMss) {
        const auto n = std::min(kMss, bytes.size() - off);
        out.push_back(frame(from_client, tcp_flags::psh | tcp_flags::ack, bytes.subspan(off, n), ts));
    }
    return out;
}

std::vector<PacketRecord> TcpFlowSynth::close(bool from_client, Timestamp ts) {
    std::vector<PacketRecord> out;
    if (closed_) return out;
    closed_ = true;
    out.push_back(frame(from_client, tcp_flags::fin | tcp_flags::ack, {}, ts));
    out.push_back(frame(!from_client, tcp_flags::fin | tcp_flags::ack, {}, ts));
    out.push_back(frame(from_client, tcp_flags::ack, {}, ts));
    return out;
}

}  // namespace honeytrace::netcap
