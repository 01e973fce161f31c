#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>

#include "honeytrace/checkpointd/protocol.hpp"
#include "honeytrace/checkpointd/snapshot.hpp"
#include "honeytrace/common/event.hpp"

namespace honeytrace::checkpointd {

class AlreadyBound : public Error {
public:
    using Error::Error;
};

/// Dump daemon: accepts framed DumpRequests on a socket, snapshots the target through a
/// ProcessStateProvider, persists it, and answers with exactly one CompletionNotice.
/// Requests on one connection are served in order; connections are served concurrently.
class Daemon {
public:
    struct Outcome {
        CompletionNotice notice;
        std::optional<Snapshot> snapshot;
    };

    Daemon(SnapshotStore& store, ProcessStateProvider& provider, EventSink* log = nullptr);
    ~Daemon();
    Daemon(const Daemon&) = delete;
    Daemon& operator=(const Daemon&) = delete;

    /// Binds and starts the accept loop in the background. A stale unix socket file (nobody
    /// listening) is replaced; a live one raises AlreadyBound.
    void serve(const SocketAddress& address);
    void stop();
    /// Effective address; for tcp port 0 this carries the chosen port.
    SocketAddress bound_address() const { return bound_; }

    Outcome handle_dump(const DumpRequest& request);
    Snapshot fetch_snapshot(const std::string& snapshot_id) const { return store_.fetch(snapshot_id); }

    /// Artificial latency before each dump; used to exercise requester timeouts.
    void set_dump_delay(std::chrono::milliseconds delay) { delay_ms_ = delay.count(); }

    std::uint64_t requests_received() const { return requests_; }
    std::uint64_t notices_sent() const { return notices_; }
    std::uint64_t malformed_frames() const { return malformed_; }

private:
    void accept_loop();
    void serve_connection(std::shared_ptr<SocketStream> conn);
    void log(std::string_view what, json detail);

    SnapshotStore& store_;
    ProcessStateProvider& provider_;
    EventSink* log_;
    IdGenerator ids_{"snap"};

    Fd listener_;
    SocketAddress bound_;
    std::atomic<bool> stopping_{false};
    std::thread acceptor_;
    std::mutex conns_mu_;
    std::list<std::pair<std::shared_ptr<SocketStream>, std::thread>> conns_;

    std::atomic<std::int64_t> delay_ms_{0};
    std::atomic<std::uint64_t> requests_{0};
    std::atomic<std::uint64_t> notices_{0};
    std::atomic<std::uint64_t> malformed_{0};
};

/// Reads live processes through /proc for targets of the form `pid:<n>`: writable or anonymous
/// mappings (each capped at 16 MiB), open descriptors, and the stack/program counters that
/// /proc/<n>/syscall exposes for a blocked task. Needs ptrace-level access to the target.
class ProcfsStateProvider : public ProcessStateProvider {
public:
    std::optional<ProcessState> read_process(const std::string& target) override;
};

}  // namespace honeytrace::checkpointd
