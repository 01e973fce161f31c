#pragma once

#include <chrono>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "honeytrace/fsvault/vault.hpp"

namespace honeytrace::fsvault {

/// One raw filesystem notification, as delivered by an environment.
struct RawChange {
    ChangeKind kind = ChangeKind::create;
    std::string path;
    Bytes content;  // empty for remove
    Timestamp timestamp;
};

/// Turns raw notifications into FsEvents and commits.
///
/// Debouncing holds at most one pending change. A create/modify followed by a modify of the
/// same path within the window collapses into one event carrying the final content. Anything
/// else (another path, a delete, a late write) flushes the pending change first, so emitted
/// events stay in mutation order.
class Watcher {
public:
    using CommitCallback = std::function<void(const FsEvent&, const std::optional<Commit>&)>;

    Watcher(std::string session_id, Vault& vault, std::chrono::microseconds debounce = std::chrono::milliseconds(50),
            CommitCallback on_commit = {});

    void notify(RawChange change);
    /// Emits the pending change if its window has elapsed at `now`.
    void poll(Timestamp now);
    void flush();
    /// Flushes and disarms; later notifications throw.
    void close();

    std::vector<FsEvent> emitted() const;
    const std::string& session_id() const { return session_id_; }

private:
    void emit_locked();

    std::string session_id_;
    Vault& vault_;
    std::chrono::microseconds debounce_;
    CommitCallback on_commit_;

    mutable std::mutex mu_;
    std::optional<RawChange> pending_;
    Timestamp pending_first_;
    std::vector<FsEvent> emitted_;
    bool closed_ = false;
};

}  // namespace honeytrace::fsvault
