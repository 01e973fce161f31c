#include "honeytrace/monitor/read_api.hpp"

#include <cstdio>
#include <map>

#include "honeytrace/common/fileio.hpp"
#include "honeytrace/tracer/trace.hpp"

namespace honeytrace::monitor {

namespace {

bool safe_id(std::string_view id) {
    if (id.empty() || id.size() > 200 || id.front() == '.') return false;
    for (const char c : id)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') return false;
    return true;
}

std::string hex_addr(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string hex_bytes(std::span<const std::uint8_t> b) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(b.size() * 2);
    for (const auto x : b) {
        out.push_back(digits[x >> 4]);
        out.push_back(digits[x & 15]);
    }
    return out;
}

}  // namespace

json ReadApi::list_sessions(std::optional<Timestamp> from, std::optional<Timestamp> to) const {
    eventstore::Query q;
    q.kinds = {EventKind::session_created, EventKind::session_archived};
    std::map<std::string, json> by_id;
    std::vector<std::string> order;
    for (const auto& ev : src_.events.query(q)) {
        if (!ev.session_id) continue;
        if (ev.kind == EventKind::session_created) {
            if (by_id.emplace(*ev.session_id, ev.body).second) order.push_back(*ev.session_id);
        } else if (ev.body.contains("session")) {
            by_id[*ev.session_id] = ev.body.at("session");
        }
    }
    json out = json::array();
    for (const auto& id : order) {
        const auto& s = by_id[id];
        const auto started = Timestamp::parse_iso8601(s.at("started_at").get<std::string>());
        if ((from && started < *from) || (to && !(started < *to))) continue;
        out.push_back(s);
    }
    return out;
}

json ReadApi::get_session(const std::string& session_id) const {
    if (!safe_id(session_id)) throw NotFound("no session " + session_id);
    eventstore::Query q;
    q.session = session_id;
    const auto events = src_.events.query(q);

    json counts = json::object();
    json session = nullptr;
    for (const auto& ev : events) {
        counts[std::string(to_string(ev.kind))] = counts.value(std::string(to_string(ev.kind)), 0) + 1;
        if (ev.kind == EventKind::session_created && session.is_null()) session = ev.body;
    }
    json record = nullptr;
    const auto path = src_.sessions_dir / (session_id + ".json");
    if (!src_.sessions_dir.empty() && std::filesystem::exists(path)) {
        record = json::parse(read_text(path));
        session = record.at("session");
    }
    if (session.is_null()) throw NotFound("no session " + session_id);
    return json{{"session", session}, {"record", record}, {"event_counts", counts}};
}

json ReadApi::get_history(const std::string& session_id) const {
    if (!src_.vault) throw NotFound("filesystem history unavailable");
    const auto history = src_.vault->history(session_id);
    if (history.empty()) throw NotFound("no history for session " + session_id);
    json out = json::array();
    for (std::size_t i = 0; i < history.size(); ++i) {
        const auto& c = history[i];
        json entry{{"commit_id", c.commit_id.hex()},
                   {"parent_id", c.parent_id ? json(c.parent_id->hex()) : json(nullptr)},
                   {"seq", c.seq},
                   {"message", c.message},
                   {"timestamp", c.timestamp.iso8601()},
                   {"files", c.tree.size()},
                   {"tree_digest", fsvault::tree_digest(c.tree).hex()}};
        entry["changes"] = i == 0 ? json(nullptr) : src_.vault->diff(history[i - 1].commit_id, c.commit_id).to_json();
        out.push_back(std::move(entry));
    }
    return json{{"session_id", session_id}, {"commits", out}};
}

json ReadApi::get_commit(std::string_view id_or_prefix) const {
    if (!src_.vault) throw NotFound("filesystem history unavailable");
    const auto c = src_.vault->find_commit(id_or_prefix);
    if (!c) throw NotFound("no commit " + std::string(id_or_prefix));
    return c->to_json();
}

Bytes ReadApi::get_blob(const std::string& digest_hex) const {
    if (!src_.vault || !is_hex_digest(digest_hex, 32)) throw NotFound("no blob " + digest_hex);
    const auto id = ObjectId::from_hex(digest_hex);
    if (!src_.vault->has_blob(id)) throw NotFound("no blob " + digest_hex);
    return src_.vault->get_blob(id);
}

json ReadApi::get_trace(const std::string& trace_id) const {
    const auto path = src_.trace_dir / (trace_id + ".trace");
    if (!safe_id(trace_id) || !std::filesystem::exists(path)) throw NotFound("no trace " + trace_id);
    const auto log = tracer::read_trace_file(path);
    json events = json::array();
    for (std::size_t i = 0; i < log.events.size(); ++i) {
        const auto& e = log.events[i];
        json doc{{"seq", e.seq},
                 {"kind", std::string(tracer::to_string(e.kind))},
                 {"address", hex_addr(e.address)},
                 {"detail", e.detail},
                 {"size", e.size},
                 {"tick", log.append_ticks[i]}};
        if (!e.data.empty()) doc["data_hex"] = hex_bytes(e.data);
        events.push_back(std::move(doc));
    }
    json snaps = json::array();
    for (const auto& r : log.snapshot_refs)
        snaps.push_back({{"trigger_seq", r.trigger_seq},
                         {"request_id", r.request_id},
                         {"status", std::string(tracer::to_string(r.status))},
                         {"snapshot_id", r.snapshot_id ? json(*r.snapshot_id) : json(nullptr)},
                         {"requested_tick", r.requested_tick},
                         {"resolved_tick", r.resolved_tick}});
    return json{{"trace_id", log.trace_id},
                {"session_id", log.session_id},
                {"target", log.target},
                {"exec", log.exec.to_json()},
                {"sealed", log.sealed},
                {"events", events},
                {"snapshots", snaps}};
}

json ReadApi::get_snapshot(const std::string& snapshot_id) const {
    if (!src_.snapshots) throw NotFound("snapshots unavailable");
    const auto snap = src_.snapshots->fetch(snapshot_id);
    auto doc = snap.manifest();
    for (std::size_t i = 0; i < snap.state.regions.size(); ++i)
        doc["regions"][i]["strings"] = checkpointd::printable_strings(snap.state.regions[i].content);
    return doc;
}

Bytes ReadApi::get_snapshot_region(const std::string& snapshot_id, std::size_t index) const {
    if (!src_.snapshots) throw NotFound("snapshots unavailable");
    const auto snap = src_.snapshots->fetch(snapshot_id);
    if (index >= snap.state.regions.size()) throw NotFound("no region " + std::to_string(index));
    return snap.state.regions[index].content;
}

json ReadApi::query_events(const eventstore::Query& q) const {
    json out = json::array();
    for (const auto& ev : src_.events.query(q)) out.push_back(ev.to_json());
    return out;
}

json ReadApi::stats(std::string_view day) const { return src_.events.stats(day).to_json(); }

}  // namespace honeytrace::monitor
