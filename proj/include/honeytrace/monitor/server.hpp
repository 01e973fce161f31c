#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "honeytrace/monitor/read_api.hpp"

namespace honeytrace::monitor {

struct FeedFilter {
    std::optional<std::string> session;
    std::set<EventKind> kinds;  // empty: every kind

    bool matches(const Event& ev) const {
        return (!session || ev.session_id == session) && (kinds.empty() || kinds.contains(ev.kind));
    }
};

struct MonitorOptions {
    /// Events buffered per feed client before it is cut off with a gap notice.
    std::size_t client_queue = 4096;
    std::string cors_origin = "*";
};

/// HTTP read API and WebSocket live feed.
///
///   GET /feed                      WebSocket upgrade. Query: cursor=<event id> replays
///                                  everything after it first (default: live only),
///                                  session=<id>, kind=<k>[,<k>...]
///   GET /sessions[?from=&to=]      ISO-8601 bounds on start time
///   GET /sessions/{id}
///   GET /sessions/{id}/history
///   GET /sessions/{id}/events
///   GET /commits/{id or prefix}
///   GET /blobs/{digest}            raw bytes
///   GET /traces/{id}
///   GET /snapshots/{id}
///   GET /snapshots/{id}/regions/{n}  raw bytes
///   GET /events?kind=&session=&from=&to=&limit=&order=asc|desc
///   GET /stats?day=YYYY-MM-DD
///
/// Feed frames are text, one event document each (the stored schema). A client that falls
/// behind by more than the queue bound receives {"v":1,"type":"gap","last_event_id":N} and is
/// disconnected; it may reconnect with cursor=N.
class Monitor {
public:
    Monitor(Sources sources, MonitorOptions options = {});
    ~Monitor();
    Monitor(const Monitor&) = delete;
    Monitor& operator=(const Monitor&) = delete;

    /// Binds (port 0 picks one), subscribes to the store, and serves in the background.
    void start(const std::string& address, std::uint16_t port);
    void stop();
    std::uint16_t port() const { return port_; }

    /// Offers a stored event to every live subscription; returns how many queued it.
    /// Never blocks on clients.
    std::size_t broadcast(const Event& ev);
    std::size_t subscriber_count() const;

    const ReadApi& api() const { return api_; }

private:
    struct Subscriber;
    struct Impl;

    ReadApi api_;
    MonitorOptions options_;
    std::unique_ptr<Impl> impl_;
    std::uint16_t port_ = 0;
    std::atomic<bool> stopping_{false};
    std::optional<std::size_t> listener_;

    mutable std::mutex subs_mu_;
    std::vector<std::shared_ptr<Subscriber>> subs_;
    std::uint64_t next_sub_ = 1;
};

}  // namespace honeytrace::monitor
