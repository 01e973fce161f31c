#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "honeytrace/checkpointd/client.hpp"
#include "honeytrace/tracer/trace.hpp"

namespace honeytrace::tracer {

/// Per-template whitelists. A set is immutable once added.
class WhitelistRegistry {
public:
    void add(WhitelistSet set);
    const WhitelistSet& get(const std::string& template_id) const;
    bool contains(const std::string& template_id) const;

private:
    mutable std::shared_mutex mu_;
    std::map<std::string, std::unique_ptr<const WhitelistSet>> sets_;
};

struct TracerOptions {
    std::filesystem::path trace_dir;
    std::chrono::milliseconds daemon_timeout{5000};
    /// 0: every mem_write triggers a snapshot. N > 0: a mem_write triggers one only if at least
    /// N events were appended since the previous snapshot.
    std::size_t coalesce_window = 0;
    /// Extra snapshots on a timer, checked as events arrive. Off by default.
    std::optional<std::chrono::milliseconds> periodic_interval;
};

using ChannelFactory = std::function<std::unique_ptr<checkpointd::CheckpointChannel>()>;

/// Classifies executions against the whitelist and runs the trace/dump alternation for alien
/// processes. Each trace has its own daemon channel; a trace that is waiting for a dump
/// consumes nothing, while other traces proceed.
class Tracer {
public:
    Tracer(WhitelistRegistry& whitelists, ChannelFactory channels, TracerOptions options);
    ~Tracer();

    /// Logs the execution. For an alien image, opens a TraceLog bound to `target` and sets
    /// ExecEvent::trace_id. `failure` marks an exec that did not start; it is logged but never traced.
    ExecEvent on_exec(const std::string& session_id, const std::string& template_id, const std::string& command_line,
                      std::span<const std::uint8_t> image, const std::string& target, EventSink& sink,
                      std::optional<std::string> failure = std::nullopt);

    /// Appends one event; for a mem_write, blocks until the dump completes or times out.
    /// An event with seq 0 is numbered automatically.
    void consume(const std::string& trace_id, TraceEvent event);
    void trace(const std::string& trace_id, std::span<const TraceEvent> stream);

    /// Applies a completion notice to the trace's pending request. A notice that matches no
    /// pending or abandoned request emits a protocol-error event and returns false.
    bool resume_after_checkpoint(const std::string& trace_id, const checkpointd::CompletionNotice& notice);

    TraceLog seal(const std::string& trace_id);
    void seal_session(const std::string& session_id);

    TraceLog log(const std::string& trace_id) const;
    std::vector<std::string> traces_for(const std::string& session_id) const;
    std::filesystem::path trace_path(const std::string& trace_id) const;
    const TracerOptions& options() const { return options_; }

private:
    struct TraceSession;
    std::shared_ptr<TraceSession> find(const std::string& trace_id) const;
    void handshake(TraceSession& ts, std::uint64_t trigger_seq);
    bool resume_locked(TraceSession& ts, const checkpointd::CompletionNotice& notice);
    void finish_ref(TraceSession& ts, SnapshotRef ref);

    WhitelistRegistry& whitelists_;
    ChannelFactory channels_;
    TracerOptions options_;
    IdGenerator ids_{"trace"};

    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<TraceSession>> traces_;
};

}  // namespace honeytrace::tracer
