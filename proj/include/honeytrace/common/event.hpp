#pragma once

#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "honeytrace/common/types.hpp"

namespace honeytrace {

using json = nlohmann::json;

enum class EventKind {
    connection,
    session_created,
    session_archived,
    fs_commit,
    exec,
    trace_opened,
    snapshot,
    capture,
    degradation,
    system,
};

inline constexpr std::size_t kEventKindCount = 10;

std::string_view to_string(EventKind kind);
std::optional<EventKind> parse_event_kind(std::string_view name);

/// An event before the store assigns it an id.
struct EventDraft {
    EventKind kind = EventKind::system;
    std::optional<std::string> session_id;
    json body = json::object();
    std::optional<Timestamp> timestamp;
};

/// Uniform envelope for everything the system records.
struct Event {
    std::uint64_t event_id = 0;
    Timestamp timestamp;
    std::optional<std::string> session_id;
    EventKind kind = EventKind::system;
    json body = json::object();

    /// Serialized document; also the live-feed message schema.
    json to_json() const;
    static Event from_json(const json& doc);

    friend bool operator==(const Event&, const Event&) = default;
};

inline constexpr int kEventSchemaVersion = 1;

/// Anything that accepts events. The event store is the production sink.
class EventSink {
public:
    virtual ~EventSink() = default;
    virtual std::uint64_t emit(EventDraft draft) = 0;
};

/// Collects events in memory; assigns ids itself. Used by standalone runs and tests.
class MemorySink : public EventSink {
public:
    std::uint64_t emit(EventDraft draft) override;
    std::vector<Event> events() const;

private:
    mutable std::mutex mu_;
    std::vector<Event> events_;
};

/// Forwards to another sink and also remembers what it forwarded.
class TeeSink : public EventSink {
public:
    explicit TeeSink(EventSink& downstream) : downstream_(downstream) {}
    std::uint64_t emit(EventDraft draft) override;
    std::vector<Event> events() const;

private:
    EventSink& downstream_;
    mutable std::mutex mu_;
    std::vector<Event> events_;
};

}  // namespace honeytrace
