#pragma once

#include <cstdint>
#include <filesystem>
#include <array>
#include <functional>
#include <set>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "honeytrace/common/event.hpp"
#include "honeytrace/common/net.hpp"

namespace honeytrace::eventstore {

enum class SortOrder { ascending, descending };

struct Query {
    std::optional<Timestamp> from;  // inclusive
    std::optional<Timestamp> to;    // exclusive
    std::optional<std::string> session;
    std::vector<EventKind> kinds;  // empty matches every kind
    std::optional<std::size_t> limit;
    SortOrder order = SortOrder::ascending;

    bool matches(const Event& ev) const;
};

struct AttackStats {
    std::string day;
    std::map<std::string, std::uint64_t> counts;  // every kind present, zero if absent
    std::uint64_t distinct_sources = 0;
    std::map<std::string, std::uint64_t> per_service;

    json to_json() const;
    friend bool operator==(const AttackStats&, const AttackStats&) = default;
};

struct StoreOptions {
    std::size_t segment_max_bytes = 64u << 20;
    /// fdatasync after every append. Off: records reach the OS before append returns,
    /// which survives a process restart but not a power loss.
    bool sync_each_append = false;
};

/// Append-only segmented event log with an in-memory index rebuilt on open.
///
/// Segment files are named `segment-<first event id, 20 digits>.log`. Each starts with the
/// header line `HTEVLOG 1` followed by one compact JSON event document per line.
/// A torn final line (no trailing newline) is discarded on open.
class EventStore : public EventSink {
public:
    using Listener = std::function<void(const Event&)>;

    explicit EventStore(std::filesystem::path dir, StoreOptions options = {});
    ~EventStore() override;
    EventStore(const EventStore&) = delete;
    EventStore& operator=(const EventStore&) = delete;

    std::uint64_t append(EventDraft draft);
    std::uint64_t emit(EventDraft draft) override { return append(std::move(draft)); }

    std::vector<Event> query(const Query& q) const;
    std::vector<Event> scan() const;
    std::optional<Event> get(std::uint64_t event_id) const;
    /// Events with id > cursor, ascending, at most max.
    std::vector<Event> since(std::uint64_t cursor, std::size_t max = SIZE_MAX) const;
    std::uint64_t head() const;
    std::size_t size() const;
    AttackStats stats(std::string_view day) const;

    /// Exact bytes of the stored record, read back from disk.
    std::string raw_record(std::uint64_t event_id) const;

    /// Listeners run after the record is durable, in append order, on the appending thread.
    /// They must not block and must not append.
    std::size_t add_listener(Listener listener);
    void remove_listener(std::size_t handle);

    const std::filesystem::path& dir() const { return dir_; }

private:
    struct Location {
        std::size_t segment;
        std::uint64_t offset;
        std::uint32_t length;
    };

    void load();
    void open_segment(std::uint64_t first_id);

    std::filesystem::path dir_;
    StoreOptions options_;

    mutable std::mutex append_mu_;
    Fd segment_fd_;
    std::uint64_t segment_bytes_ = 0;

    mutable std::shared_mutex data_mu_;
    std::vector<Event> events_;
    std::vector<Location> locations_;
    std::vector<std::filesystem::path> segments_;
    std::unordered_map<std::string, std::vector<std::size_t>> by_session_;

    struct DayAggregate {
        std::array<std::uint64_t, kEventKindCount> counts{};
        std::set<std::string> sources;
        std::map<std::string, std::uint64_t> per_service;
    };
    void index(const Event& ev);
    std::map<std::string, DayAggregate> days_;

    std::mutex listeners_mu_;
    std::map<std::size_t, Listener> listeners_;
    std::size_t next_listener_ = 1;
};

}  // namespace honeytrace::eventstore
