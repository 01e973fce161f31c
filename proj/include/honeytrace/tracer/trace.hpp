#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "honeytrace/common/digest.hpp"
#include "honeytrace/common/event.hpp"
#include "honeytrace/common/net.hpp"

namespace honeytrace::tracer {

enum class Verdict { trusted, alien };
std::string_view to_string(Verdict v);

Digest512 hash_image(std::span<const std::uint8_t> image);

struct WhitelistSet {
    std::string template_id;
    std::set<Digest512> digests;

    bool contains(const Digest512& d) const { return digests.contains(d); }
};

WhitelistSet build_whitelist(const std::string& template_id, const std::vector<Bytes>& images);

struct ExecEvent {
    std::string session_id;
    std::string command_line;
    Digest512 image_digest;
    Verdict verdict = Verdict::trusted;
    Timestamp timestamp;
    std::optional<std::string> failure;   // exec that did not start
    std::optional<std::string> trace_id;  // set when a trace was opened

    json to_json() const;
    static ExecEvent from_json(const json& doc);
};

enum class TraceKind : std::uint8_t { instruction = 0, mem_read = 1, mem_write = 2 };
std::string_view to_string(TraceKind k);

struct TraceEvent {
    std::uint64_t seq = 0;
    TraceKind kind = TraceKind::instruction;
    std::uint64_t address = 0;
    std::string detail;   // instruction text
    std::uint32_t size = 0;  // access width for memory events
    Bytes data;           // bytes written, for mem_write

    friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

enum class SnapshotStatus : std::uint8_t { ok = 0, failed = 1, timeout = 2, unreachable = 3 };
std::string_view to_string(SnapshotStatus s);

/// Outcome of one alternation handshake. A missing snapshot_id is a gap.
struct SnapshotRef {
    std::uint64_t trigger_seq = 0;
    std::uint64_t request_id = 0;
    SnapshotStatus status = SnapshotStatus::ok;
    std::optional<std::string> snapshot_id;
    std::uint64_t requested_tick = 0;
    std::uint64_t resolved_tick = 0;  // notice received, or gave up

    friend bool operator==(const SnapshotRef&, const SnapshotRef&) = default;
};

/// Everything recorded for one traced process.
struct TraceLog {
    std::string trace_id;
    std::string session_id;
    std::string target;
    ExecEvent exec;
    std::vector<TraceEvent> events;
    std::vector<std::uint64_t> append_ticks;  // parallel to events
    std::vector<SnapshotRef> snapshot_refs;
    bool sealed = false;

    std::size_t mem_write_count() const;
};

/// Trace log file.
///
///   header: "HTTRACE\0" | u16 version (=1) | u32 n | n bytes of JSON
///           {trace_id, session_id, target, exec}
///   record: u32 length | u8 type | body            (all integers little-endian)
///     type 1 event:    u64 seq | u8 kind | u64 address | u32 size | u64 tick
///                      | u32 n | detail | u32 m | data
///     type 2 snapshot: u64 trigger_seq | u64 request_id | u8 status | u64 requested_tick
///                      | u64 resolved_tick | u16 n | snapshot_id
///     type 3 seal:     u64 event_count
///
/// The sidecar `<trace_id>.idx` holds one (u64 seq, u64 offset) pair per event record.
class TraceFileWriter {
public:
    TraceFileWriter(const std::filesystem::path& dir, const TraceLog& header);

    void write_event(const TraceEvent& ev, std::uint64_t tick);
    void write_snapshot(const SnapshotRef& ref);
    void write_seal(std::uint64_t event_count);
    const std::filesystem::path& path() const { return path_; }

private:
    void write_record(std::uint8_t type, const Bytes& body, std::optional<std::uint64_t> index_seq);

    std::filesystem::path path_;
    Fd fd_;
    Fd index_fd_;
    std::uint64_t offset_ = 0;
};

TraceLog read_trace_file(const std::filesystem::path& path);

/// Process-wide strictly increasing counter used to order protocol steps.
std::uint64_t protocol_tick();

}  // namespace honeytrace::tracer
