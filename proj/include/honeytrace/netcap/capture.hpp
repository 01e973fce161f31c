#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "honeytrace/common/event.hpp"
#include "honeytrace/common/net.hpp"
#include "honeytrace/netcap/pcap.hpp"

namespace honeytrace::netcap {

enum class Direction { inbound, outbound };

struct PacketRecord {
    Timestamp timestamp;
    std::uint32_t original_len = 0;
    Bytes payload;
    Direction direction = Direction::inbound;
    Endpoint src;
    Endpoint dst;

    std::uint32_t captured_len() const { return static_cast<std::uint32_t>(payload.size()); }
};

struct CaptureFilter {
    Ipv4 net_identity;

    bool accepts(const PacketRecord& record) const {
        return record.src.addr == net_identity || record.dst.addr == net_identity;
    }
};

struct CaptureSummary {
    std::filesystem::path path;
    std::uint64_t packet_count = 0;
    std::uint64_t byte_count = 0;
    bool degraded = false;

    json to_json() const;
};

/// One session's capture. Appends are serialized per handle.
class CaptureHandle {
public:
    CaptureHandle(std::string session_id, CaptureFilter filter, const std::filesystem::path& path,
                  EventSink* events = nullptr, std::uint32_t snaplen = kDefaultSnaplen);

    /// The caller has already applied the filter. Write failures mark the capture degraded,
    /// emit one degradation event, and drop the record.
    void append(const PacketRecord& record);
    /// Idempotent.
    CaptureSummary finalize();

    const std::string& session_id() const { return session_id_; }
    const CaptureFilter& filter() const { return filter_; }
    std::uint64_t packet_count() const;
    std::uint64_t byte_count() const;
    bool degraded() const;
    /// Underlying descriptor; exposed for fault injection in tests.
    int sink_fd() const { return writer_.fd(); }

private:
    std::string session_id_;
    CaptureFilter filter_;
    std::filesystem::path path_;
    EventSink* events_;
    mutable std::mutex mu_;
    PcapWriter writer_;
    std::uint64_t packets_ = 0;
    std::uint64_t bytes_ = 0;
    Timestamp last_ts_;
    bool degraded_ = false;
    std::optional<CaptureSummary> summary_;
};

/// Stands in for the shared capture interface: every generated packet is offered to every
/// open capture, and each keeps what its filter accepts.
class CaptureHub {
public:
    explicit CaptureHub(std::filesystem::path artifact_dir, EventSink* events = nullptr);

    /// Opens `<artifact_dir>/<session_id>.pcap`. Throws if the sink is unwritable.
    std::shared_ptr<CaptureHandle> open_capture(const std::string& session_id, Ipv4 net_identity);
    /// Returns the number of captures that accepted the record.
    std::size_t publish(const PacketRecord& record);
    /// Finalizes and detaches.
    CaptureSummary close_capture(const std::shared_ptr<CaptureHandle>& handle);

    std::filesystem::path path_for(const std::string& session_id) const;
    const std::filesystem::path& artifact_dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    EventSink* events_;
    std::mutex mu_;
    std::vector<std::shared_ptr<CaptureHandle>> open_;
};

/// Synthesizes raw IPv4/TCP frames for one connection, tracking sequence numbers, so captured
/// flows decode cleanly in standard tools.
class TcpFlowSynth {
public:
    static constexpr std::size_t kMss = 1460;

    /// `client` opens the connection to `server`; `env` decides direction labels.
    TcpFlowSynth(Endpoint client, Endpoint server, Ipv4 env_identity);

    std::vector<PacketRecord> open(Timestamp ts);
    std::vector<PacketRecord> data(bool from_client, std::span<const std::uint8_t> bytes, Timestamp ts);
    std::vector<PacketRecord> close(bool from_client, Timestamp ts);

    const Endpoint& client() const { return client_; }
    const Endpoint& server() const { return server_; }

private:
    PacketRecord frame(bool from_client, std::uint8_t flags, std::span<const std::uint8_t> payload, Timestamp ts);

    Endpoint client_;
    Endpoint server_;
    Ipv4 env_;
    std::uint32_t client_seq_;
    std::uint32_t server_seq_;
    std::uint16_t ip_id_ = 1;
    bool closed_ = false;
};

/// Builds one IPv4+TCP frame with valid checksums.
Bytes build_ipv4_tcp(const Endpoint& src, const Endpoint& dst, std::uint32_t seq, std::uint32_t ack,
                     std::uint8_t flags, std::uint16_t ip_id, std::span<const std::uint8_t> payload);

namespace tcp_flags {
inline constexpr std::uint8_t fin = 0x01;
inline constexpr std::uint8_t syn = 0x02;
inline constexpr std::uint8_t psh = 0x08;
inline constexpr std::uint8_t ack = 0x10;
}  // namespace tcp_flags

}  // namespace honeytrace::netcap
