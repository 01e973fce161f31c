#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "honeytrace/checkpointd/client.hpp"
#include "honeytrace/checkpointd/daemon.hpp"
#include "honeytrace/common/types.hpp"

namespace honeytrace::testing {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

fs::path source_dir();
fs::path template_dir();    // templates/linux-basic
fs::path scenario(const std::string& name);

Bytes slurp(const fs::path& path);

/// SHA-512 computed by OpenSSL.
std::vector<std::uint8_t> reference_sha512(const std::vector<std::uint8_t>& data);
std::string hex(const std::vector<std::uint8_t>& bytes);

/// Every regular file under `dir`, keyed "/relative/path".
std::map<std::string, std::vector<std::uint8_t>> read_tree(const fs::path& dir);
/// Tree digest computed with OpenSSL: leading 32 bytes of SHA-512 over sorted
/// "<hex of leading 32 bytes of SHA-512(content)> <path>\n" lines.
std::string reference_tree_digest(const std::map<std::string, std::vector<std::uint8_t>>& tree);

/// Standalone pcap reader, written against the published libpcap file layout.
struct RefPcapRecord {
    std::uint32_t ts_sec = 0;
    std::uint32_t ts_usec = 0;
    std::uint32_t incl_len = 0;
    std::uint32_t orig_len = 0;
    std::vector<std::uint8_t> data;
};
struct RefPcap {
    std::uint32_t magic = 0;
    std::uint16_t version_major = 0;
    std::uint16_t version_minor = 0;
    std::int32_t thiszone = 0;
    std::uint32_t sigfigs = 0;
    std::uint32_t snaplen = 0;
    std::uint32_t network = 0;
    std::vector<RefPcapRecord> records;
};
/// Throws std::runtime_error on anything malformed.
RefPcap reference_parse_pcap(const std::vector<std::uint8_t>& file);

/// IPv4/TCP fields of a raw frame, decoded by hand.
struct RefTcp {
    std::string src;  // a.b.c.d
    std::string dst;
    std::uint16_t sport = 0;
    std::uint16_t dport = 0;
    std::uint8_t flags = 0;
    std::vector<std::uint8_t> payload;
    bool ip_checksum_ok = false;
    bool tcp_checksum_ok = false;
};
std::optional<RefTcp> reference_decode_tcp(const std::vector<std::uint8_t>& frame);

/// Blocking WebSocket client with a background reader; messages queue until taken.
class FeedClient {
public:
    /// `delay` is slept after every received message (an artificially slow consumer);
    /// `stall` is slept once, after the first message.
    FeedClient(std::uint16_t port, const std::string& target,
               std::chrono::microseconds delay = std::chrono::microseconds(0),
               std::chrono::milliseconds stall = std::chrono::milliseconds(0));
    ~FeedClient();
    FeedClient(const FeedClient&) = delete;
    FeedClient& operator=(const FeedClient&) = delete;

    std::optional<std::string> next(std::chrono::milliseconds timeout);
    /// True once the server closed the stream and every message was taken.
    bool finished() const;
    std::size_t received() const;
    void close();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// In-process channel that hands requests straight to Daemon::handle_dump.
/// Faults can be scripted per request: the send throws, the notice is dropped, or a stray
/// notice with an unknown id arrives first.
class LoopbackChannel : public checkpointd::CheckpointChannel {
public:
    enum class Fault { none, unreachable, drop, stray_first };
    using Plan = std::function<Fault(std::uint64_t request_index)>;

    explicit LoopbackChannel(checkpointd::Daemon& daemon, Plan plan = {}) : daemon_(daemon), plan_(std::move(plan)) {}

    void send(const checkpointd::DumpRequest& request) override;
    std::optional<checkpointd::CompletionNotice> receive(std::chrono::milliseconds timeout) override;

    /// protocol_tick() observed while each dump ran, in request order.
    std::vector<std::uint64_t> dump_ticks;
    std::uint64_t sent = 0;

private:
    checkpointd::Daemon& daemon_;
    Plan plan_;
    std::deque<checkpointd::CompletionNotice> inbox_;
};

/// Plain HTTP GET against 127.0.0.1.
struct HttpReply {
    int status = 0;
    std::string body;
    std::string content_type;
    std::string allow_origin;
};
HttpReply http_get(std::uint16_t port, const std::string& target);

}  // namespace honeytrace::testing
