#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "honeytrace/checkpointd/snapshot.hpp"
#include "honeytrace/eventstore/event_store.hpp"
#include "honeytrace/fsvault/vault.hpp"

namespace honeytrace::monitor {

struct Sources {
    eventstore::EventStore& events;
    fsvault::Vault* vault = nullptr;
    checkpointd::SnapshotStore* snapshots = nullptr;
    std::filesystem::path trace_dir;
    std::filesystem::path sessions_dir;
};

/// Read-only views over the stores, as served by the HTTP endpoints. Lookups of unknown
/// ids throw NotFound.
class ReadApi {
public:
    explicit ReadApi(Sources sources) : src_(std::move(sources)) {}

    /// Sessions that started in [from, to), oldest first, derived from session_created and
    /// session_archived events.
    json list_sessions(std::optional<Timestamp> from = std::nullopt, std::optional<Timestamp> to = std::nullopt) const;
    json get_session(const std::string& session_id) const;
    /// Linear commit chain with the change set of each commit against its parent.
    json get_history(const std::string& session_id) const;
    json get_commit(std::string_view id_or_prefix) const;
    Bytes get_blob(const std::string& digest_hex) const;
    json get_trace(const std::string& trace_id) const;
    /// Manifest plus printable strings of every region.
    json get_snapshot(const std::string& snapshot_id) const;
    Bytes get_snapshot_region(const std::string& snapshot_id, std::size_t index) const;
    json query_events(const eventstore::Query& q) const;
    json stats(std::string_view day) const;

    const Sources& sources() const { return src_; }

private:
    Sources src_;
};

}  // namespace honeytrace::monitor
