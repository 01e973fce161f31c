#include "honeytrace/common/event.hpp"

#include <array>

namespace honeytrace {

namespace {

constexpr std::array<std::string_view, kEventKindCount> kKindNames = {
    "connection", "session_created", "session_archived", "fs_commit", "exec",
    "trace_opened", "snapshot", "capture", "degradation", "system",
};

}  // namespace

std::string_view to_string(EventKind kind) { return kKindNames.at(static_cast<std::size_t>(kind)); }

std::optional<EventKind> parse_event_kind(std::string_view name) {
    for (std::size_t i = 0; i < kKindNames.size(); ++i)
        if (kKindNames[i] == name) return static_cast<EventKind>(i);
    return std::nullopt;
}

json Event::to_json() const {
    json doc;
    doc["v"] = kEventSchemaVersion;
    doc["id"] = event_id;
    doc["ts"] = timestamp.iso8601();
    doc["ts_us"] = timestamp.micros;
    doc["session"] = session_id ? json(*session_id) : json(nullptr);
    doc["kind"] = std::string(to_string(kind));
    doc["body"] = body;
    return doc;
}

Event Event::from_json(const json& doc) {
    if (!doc.is_object() || doc.value("v", 0) != kEventSchemaVersion)
        throw Error("unsupported event document version");
    Event ev;
    ev.event_id = doc.at("id").get<std::uint64_t>();
    ev.timestamp = Timestamp{doc.at("ts_us").get<std::int64_t>()};
    if (const auto& s = doc.at("session"); !s.is_null()) ev.session_id = s.get<std::string>();
    const auto kind = parse_event_kind(doc.at("kind").get<std::string>());
    if (!kind) throw Error("unknown event kind: " + doc.at("kind").get<std::string>());
    ev.kind = *kind;
    ev.body = doc.at("body");
    return ev;
}

std::uint64_t MemorySink::emit(EventDraft draft) {
    std::lock_guard lock(mu_);
    Event ev;
    ev.event_id = events_.size() + 1;
    ev.timestamp = draft.timestamp.value_or(Clock::process().now());
    ev.session_id = std::move(draft.session_id);
    ev.kind = draft.kind;
    ev.body = std::move(draft.body);
    events_.push_back(std::move(ev));
    return events_.back().event_id;
}

std::vector<Event> MemorySink::events() const {
    std::lock_guard lock(mu_);
    return events_;
}

std::uint64_t TeeSink::emit(EventDraft draft) {
    if (!draft.timestamp) draft.timestamp = Clock::process().now();
    Event ev;
    ev.timestamp = *draft.timestamp;
    ev.session_id = draft.session_id;
    ev.kind = draft.kind;
    ev.body = draft.body;
    // Hold the lock across the downstream call so the local copy keeps downstream order.
    std::lock_guard lock(mu_);
    ev.event_id = downstream_.emit(std::move(draft));
    events_.push_back(std::move(ev));
    return events_.back().event_id;
}

std::vector<Event> TeeSink::events() const {
    std::lock_guard lock(mu_);
    return events_;
}

}  // namespace honeytrace
