#include "honeytrace/eventstore/event_store.hpp"

#include <algorithm>
#include <cerrno>
#include <cinttypes>
#include <cstring>
#include <fstream>

#include <fcntl.h>
#include <unistd.h>

namespace honeytrace::eventstore {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kSegmentHeader = "HTEVLOG 1\n";

std::string segment_name(std::uint64_t first_id) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "segment-%020" PRIu64 ".log", first_id);
    return buf;
}

std::string source_host(const json& body) {
    const auto source = body.value("source", std::string{});
    const auto colon = source.rfind(':');
    return colon == std::string::npos ? source : source.substr(0, colon);
}

}  // namespace

bool Query::matches(const Event& ev) const {
    if (from && ev.timestamp < *from) return false;
    if (to && !(ev.timestamp < *to)) return false;
    if (session && ev.session_id != *session) return false;
    if (!kinds.empty() && std::find(kinds.begin(), kinds.end(), ev.kind) == kinds.end()) return false;
    return true;
}

json AttackStats::to_json() const {
    return json{{"day", day}, {"counts", counts}, {"distinct_sources", distinct_sources},
                {"per_service", per_service}};
}

EventStore::EventStore(fs::path dir, StoreOptions options) : dir_(std::move(dir)), options_(options) {
    fs::create_directories(dir_);
    load();
}

EventStore::~EventStore() = default;

void EventStore::load() {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir_)) {
        const auto name = entry.path().filename().string();
        if (name.starts_with("segment-") && name.ends_with(".log")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    for (std::size_t si = 0; si < files.size(); ++si) {
        const auto& path = files[si];
        std::ifstream in(path, std::ios::binary);
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        if (!content.starts_with(kSegmentHeader)) {
            // An empty file is a segment whose header write was torn.
            if (content.empty() && si + 1 == files.size()) {
                fs::remove(path);
                continue;
            }
            throw Error("bad segment header in " + path.string());
        }
        segments_.push_back(path);
        std::size_t pos = kSegmentHeader.size();
        while (pos < content.size()) {
            const auto nl = content.find('\n', pos);
            const bool last_segment = si + 1 == files.size();
            if (nl == std::string::npos) {
                if (!last_segment) throw Error("torn record inside sealed segment " + path.string());
                fs::resize_file(path, pos);
                break;
            }
            Event ev;
            try {
                ev = Event::from_json(json::parse(content.substr(pos, nl - pos)));
            } catch (const std::exception& e) {
                throw Error("corrupt record in " + path.string() + " at offset " + std::to_string(pos) + ": " +
                            e.what());
            }
            if (ev.event_id != events_.size() + 1)
                throw Error("non-contiguous event id " + std::to_string(ev.event_id) + " in " + path.string());
            locations_.push_back({segments_.size() - 1, pos, static_cast<std::uint32_t>(nl - pos)});
            index(ev);
            events_.push_back(std::move(ev));
            pos = nl + 1;
        }
    }

    if (segments_.empty()) {
        open_segment(1);
    } else {
        segment_fd_.reset(::open(segments_.back().c_str(), O_WRONLY | O_APPEND | O_CLOEXEC));
        if (!segment_fd_) throw Error("cannot open segment " + segments_.back().string());
        segment_bytes_ = fs::file_size(segments_.back());
    }
}

void EventStore::open_segment(std::uint64_t first_id) {
    const auto path = dir_ / segment_name(first_id);
    Fd fd(::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644));
    if (!fd) throw Error("cannot create segment " + path.string() + ": " + std::strerror(errno));
    if (::write(fd.get(), kSegmentHeader.data(), kSegmentHeader.size()) != static_cast<ssize_t>(kSegmentHeader.size()))
        throw Error("cannot write segment header " + path.string());
    segment_fd_ = std::move(fd);
    segment_bytes_ = kSegmentHeader.size();
    std::unique_lock lock(data_mu_);
    segments_.push_back(path);
}

void EventStore::index(const Event& ev) {
    const std::size_t pos = events_.size();
    if (ev.session_id) by_session_[*ev.session_id].push_back(pos);
    auto& day = days_[utc_day(ev.timestamp)];
    ++day.counts[static_cast<std::size_t>(ev.kind)];
    if (ev.kind == EventKind::connection) {
        if (auto host = source_host(ev.body); !host.empty()) day.sources.insert(std::move(host));
        if (auto svc = ev.body.value("service", std::string{}); !svc.empty()) ++day.per_service[svc];
    }
}

std::uint64_t EventStore::append(EventDraft draft) {
    std::lock_guard append_lock(append_mu_);

    Event ev;
    ev.event_id = events_.size() + 1;  // events_ only grows under append_mu_
    ev.timestamp = draft.timestamp.value_or(Clock::process().now());
    ev.session_id = std::move(draft.session_id);
    ev.kind = draft.kind;
    ev.body = std::move(draft.body);

    std::string line = ev.to_json().dump(-1, ' ', false, json::error_handler_t::replace);
    line.push_back('\n');

    if (segment_bytes_ + line.size() > options_.segment_max_bytes && segment_bytes_ > kSegmentHeader.size())
        open_segment(ev.event_id);

    const std::uint64_t offset = segment_bytes_;
    std::size_t written = 0;
    while (written < line.size()) {
        const ssize_t n = ::write(segment_fd_.get(), line.data() + written, line.size() - written);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw Error(std::string("event store write failed: ") + std::strerror(errno));
        }
        written += static_cast<std::size_t>(n);
    }
    if (options_.sync_each_append && ::fdatasync(segment_fd_.get()) != 0)
        throw Error(std::string("event store sync failed: ") + std::strerror(errno));
    segment_bytes_ += line.size();

    {
        std::unique_lock lock(data_mu_);
        locations_.push_back({segments_.size() - 1, offset, static_cast<std::uint32_t>(line.size() - 1)});
        index(ev);
        events_.push_back(ev);
    }

    std::lock_guard lock(listeners_mu_);
    for (auto& [_, listener] : listeners_) listener(ev);
    return ev.event_id;
}

std::vector<Event> EventStore::query(const Query& q) const {
    std::vector<Event> out;
    if (q.limit && *q.limit == 0) return out;
    const std::size_t cap = q.limit.value_or(SIZE_MAX);

    std::shared_lock lock(data_mu_);
    auto take = [&](std::size_t pos) {
        const auto& ev = events_[pos];
        if (!q.matches(ev)) return true;
        out.push_back(ev);
        return out.size() < cap;
    };

    if (q.session) {
        const auto it = by_session_.find(*q.session);
        if (it == by_session_.end()) return out;
        const auto& positions = it->second;
        if (q.order == SortOrder::ascending) {
            for (auto pos : positions)
                if (!take(pos)) break;
        } else {
            for (auto p = positions.rbegin(); p != positions.rend(); ++p)
                if (!take(*p)) break;
        }
        return out;
    }

    if (q.order == SortOrder::ascending) {
        for (std::size_t pos = 0; pos < events_.size(); ++pos)
            if (!take(pos)) break;
    } else {
        for (std::size_t pos = events_.size(); pos-- > 0;)
            if (!take(pos)) break;
    }
    return out;
}

std::vector<Event> EventStore::scan() const {
    std::shared_lock lock(data_mu_);
    return events_;
}

std::optional<Event> EventStore::get(std::uint64_t event_id) const {
    std::shared_lock lock(data_mu_);
    if (event_id == 0 || event_id > events_.size()) return std::nullopt;
    return events_[event_id - 1];
}

std::vector<Event> EventStore::since(std::uint64_t cursor, std::size_t max) const {
    std::shared_lock lock(data_mu_);
    std::vector<Event> out;
    for (std::size_t pos = cursor; pos < events_.size() && out.size() < max; ++pos) out.push_back(events_[pos]);
    return out;
}

std::uint64_t EventStore::head() const {
    std::shared_lock lock(data_mu_);
    return events_.size();
}

std::size_t EventStore::size() const { return head(); }

AttackStats EventStore::stats(std::string_view day) const {
    utc_day_bounds(day);  // validates the format
    AttackStats out;
    out.day = std::string(day);
    for (std::size_t k = 0; k < kEventKindCount; ++k) out.counts[std::string(to_string(static_cast<EventKind>(k)))] = 0;

    std::shared_lock lock(data_mu_);
    const auto it = days_.find(out.day);
    if (it == days_.end()) return out;
    for (std::size_t k = 0; k < kEventKindCount; ++k)
        out.counts[std::string(to_string(static_cast<EventKind>(k)))] = it->second.counts[k];
    out.distinct_sources = it->second.sources.size();
    out.per_service = it->second.per_service;
    return out;
}

std::string EventStore::raw_record(std::uint64_t event_id) const {
    Location loc;
    fs::path path;
    {
        std::shared_lock lock(data_mu_);
        if (event_id == 0 || event_id > locations_.size()) throw NotFound("no event " + std::to_string(event_id));
        loc = locations_[event_id - 1];
        path = segments_[loc.segment];
    }
    std::ifstream in(path, std::ios::binary);
    in.seekg(static_cast<std::streamoff>(loc.offset));
    std::string out(loc.length, '\0');
    in.read(out.data(), loc.length);
    if (!in) throw Error("short read from " + path.string());
    return out;
}

std::size_t EventStore::add_listener(Listener listener) {
    std::lock_guard lock(listeners_mu_);
    const auto handle = next_listener_++;
    listeners_.emplace(handle, std::move(listener));
    return handle;
}

void EventStore::remove_listener(std::size_t handle) {
    std::lock_guard lock(listeners_mu_);
    listeners_.erase(handle);
}

}  // namespace honeytrace::eventstore
