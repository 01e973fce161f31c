#include "honeytrace/tracer/tracer.hpp"

#include <atomic>

namespace honeytrace::tracer {

namespace {

std::atomic<std::uint64_t> g_request_ids{0};

}  // namespace

void WhitelistRegistry::add(WhitelistSet set) {
    std::unique_lock lock(mu_);
    if (sets_.contains(set.template_id)) throw Error("whitelist already registered for " + set.template_id);
    auto id = set.template_id;
    sets_.emplace(std::move(id), std::make_unique<const WhitelistSet>(std::move(set)));
}

const WhitelistSet& WhitelistRegistry::get(const std::string& template_id) const {
    std::shared_lock lock(mu_);
    const auto it = sets_.find(template_id);
    if (it == sets_.end()) throw NotFound("no whitelist for template " + template_id);
    return *it->second;
}

bool WhitelistRegistry::contains(const std::string& template_id) const {
    std::shared_lock lock(mu_);
    return sets_.contains(template_id);
}

struct Tracer::TraceSession {
    std::mutex mu;
    TraceLog log;
    std::unique_ptr<TraceFileWriter> writer;
    std::unique_ptr<checkpointd::CheckpointChannel> channel;
    EventSink* sink = nullptr;
    std::optional<SnapshotRef> pending;
    std::set<std::uint64_t> abandoned;
    std::size_t events_since_snapshot = 0;
    bool any_snapshot = false;
    std::chrono::steady_clock::time_point last_snapshot = std::chrono::steady_clock::now();
};

Tracer::Tracer(WhitelistRegistry& whitelists, ChannelFactory channels, TracerOptions options)
    : whitelists_(whitelists), channels_(std::move(channels)), options_(std::move(options)) {}

Tracer::~Tracer() = default;

ExecEvent Tracer::on_exec(const std::string& session_id, const std::string& template_id,
                          const std::string& command_line, std::span<const std::uint8_t> image,
                          const std::string& target, EventSink& sink, std::optional<std::string> failure) {
    const auto& whitelist = whitelists_.get(template_id);
    ExecEvent ev;
    ev.session_id = session_id;
    ev.command_line = command_line;
    ev.image_digest = hash_image(image);
    ev.verdict = whitelist.contains(ev.image_digest) ? Verdict::trusted : Verdict::alien;
    ev.timestamp = Clock::process().now();
    ev.failure = std::move(failure);

    std::shared_ptr<TraceSession> ts;
    if (ev.verdict == Verdict::alien && !ev.failure) {
        ts = std::make_shared<TraceSession>();
        ts->log.trace_id = ids_.next();
        ts->log.session_id = session_id;
        ts->log.target = target;
        ev.trace_id = ts->log.trace_id;
        ts->log.exec = ev;
        ts->writer = std::make_unique<TraceFileWriter>(options_.trace_dir, ts->log);
        ts->channel = channels_ ? channels_() : nullptr;
        ts->sink = &sink;
    }

    sink.emit({EventKind::exec, session_id, ev.to_json(), ev.timestamp});
    if (ts) {
        sink.emit({EventKind::trace_opened, session_id,
                   json{{"trace_id", ts->log.trace_id},
                        {"command_line", command_line},
                        {"image_digest", ev.image_digest.hex()},
                        {"target", target}},
                   std::nullopt});
        std::lock_guard lock(mu_);
        traces_.emplace(ts->log.trace_id, ts);
    }
    return ev;
}

std::shared_ptr<Tracer::TraceSession> Tracer::find(const std::string& trace_id) const {
    std::lock_guard lock(mu_);
    const auto it = traces_.find(trace_id);
    if (it == traces_.end()) throw NotFound("unknown trace " + trace_id);
    return it->second;
}

void Tracer::consume(const std::string& trace_id, TraceEvent event) {
    auto ts_ptr = find(trace_id);
    auto& ts = *ts_ptr;
    std::lock_guard lock(ts.mu);
    if (ts.log.sealed) throw Error("trace " + trace_id + " is sealed");
    if (ts.pending) throw Error("trace " + trace_id + " is paused for a dump");

    const std::uint64_t last_seq = ts.log.events.empty() ? 0 : ts.log.events.back().seq;
    if (event.seq == 0) event.seq = last_seq + 1;
    if (event.seq <= last_seq) throw Error("trace seq must increase: got " + std::to_string(event.seq));

    if (options_.periodic_interval && !ts.log.events.empty() &&
        std::chrono::steady_clock::now() - ts.last_snapshot >= *options_.periodic_interval)
        handshake(ts, last_seq);

    const auto tick = protocol_tick();
    ts.writer->write_event(event, tick);
    ts.log.events.push_back(event);
    ts.log.append_ticks.push_back(tick);
    ++ts.events_since_snapshot;

    if (event.kind != TraceKind::mem_write) return;
    const bool due = options_.coalesce_window == 0 || !ts.any_snapshot ||
                     ts.events_since_snapshot >= options_.coalesce_window;
    if (due) handshake(ts, event.seq);
}

void Tracer::trace(const std::string& trace_id, std::span<const TraceEvent> stream) {
    for (const auto& ev : stream) consume(trace_id, ev);
}

void Tracer::handshake(TraceSession& ts, std::uint64_t trigger_seq) {
    SnapshotRef ref;
    ref.trigger_seq = trigger_seq;
    ref.request_id = ++g_request_ids;
    ref.requested_tick = protocol_tick();
    ts.pending = ref;
    ts.events_since_snapshot = 0;
    ts.any_snapshot = true;
    ts.last_snapshot = std::chrono::steady_clock::now();

    auto give_up = [&](SnapshotStatus status) {
        SnapshotRef gap = *ts.pending;
        gap.status = status;
        gap.resolved_tick = protocol_tick();
        ts.abandoned.insert(gap.request_id);
        ts.pending.reset();
        finish_ref(ts, std::move(gap));
    };

    if (!ts.channel) return give_up(SnapshotStatus::unreachable);
    try {
        ts.channel->send({ref.request_id, ts.log.session_id, ts.log.trace_id, ts.log.target, trigger_seq});
    } catch (const Error&) {
        return give_up(SnapshotStatus::unreachable);
    }

    const auto deadline = std::chrono::steady_clock::now() + options_.daemon_timeout;
    while (ts.pending) {
        const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - std::chrono::steady_clock::now());
        if (remaining.count() <= 0) return give_up(SnapshotStatus::timeout);
        std::optional<checkpointd::CompletionNotice> notice;
        try {
            notice = ts.channel->receive(remaining);
        } catch (const checkpointd::ProtocolError&) {
            continue;
        } catch (const Error&) {
            return give_up(SnapshotStatus::unreachable);
        }
        if (!notice) return give_up(SnapshotStatus::timeout);
        resume_locked(ts, *notice);
    }
}

bool Tracer::resume_locked(TraceSession& ts, const checkpointd::CompletionNotice& notice) {
    if (!ts.pending || ts.pending->request_id != notice.request_id) {
        if (ts.abandoned.erase(notice.request_id) > 0) return false;  // late answer to a gap
        if (ts.sink)
            ts.sink->emit({EventKind::degradation, ts.log.session_id,
                           json{{"module", "tracer"},
                                {"what", "protocol_error"},
                                {"trace_id", ts.log.trace_id},
                                {"detail", "completion notice for unknown request"},
                                {"request_id", notice.request_id}},
                           std::nullopt});
        return false;
    }
    SnapshotRef ref = *ts.pending;
    ts.pending.reset();
    ref.resolved_tick = protocol_tick();
    if (notice.status == checkpointd::NoticeStatus::ok) {
        ref.status = SnapshotStatus::ok;
        ref.snapshot_id = notice.snapshot_id;
    } else {
        ref.status = SnapshotStatus::failed;
    }
    finish_ref(ts, std::move(ref));
    return true;
}

void Tracer::finish_ref(TraceSession& ts, SnapshotRef ref) {
    ts.writer->write_snapshot(ref);
    if (ts.sink) {
        if (ref.snapshot_id) {
            ts.sink->emit({EventKind::snapshot, ts.log.session_id,
                           json{{"trace_id", ts.log.trace_id},
                                {"snapshot_id", *ref.snapshot_id},
                                {"trigger_seq", ref.trigger_seq},
                                {"request_id", ref.request_id}},
                           std::nullopt});
        } else {
            ts.sink->emit({EventKind::degradation, ts.log.session_id,
                           json{{"module", "tracer"},
                                {"what", "snapshot_gap"},
                                {"trace_id", ts.log.trace_id},
                                {"trigger_seq", ref.trigger_seq},
                                {"request_id", ref.request_id},
                                {"status", std::string(to_string(ref.status))}},
                           std::nullopt});
        }
    }
    ts.log.snapshot_refs.push_back(std::move(ref));
}

bool Tracer::resume_after_checkpoint(const std::string& trace_id, const checkpointd::CompletionNotice& notice) {
    auto ts = find(trace_id);
    std::lock_guard lock(ts->mu);
    return resume_locked(*ts, notice);
}

TraceLog Tracer::seal(const std::string& trace_id) {
    auto ts = find(trace_id);
    std::lock_guard lock(ts->mu);
    if (!ts->log.sealed) {
        ts->writer->write_seal(ts->log.events.size());
        ts->log.sealed = true;
    }
    return ts->log;
}

void Tracer::seal_session(const std::string& session_id) {
    for (const auto& id : traces_for(session_id)) seal(id);
}

TraceLog Tracer::log(const std::string& trace_id) const {
    auto ts = find(trace_id);
    std::lock_guard lock(ts->mu);
    return ts->log;
}

std::vector<std::string> Tracer::traces_for(const std::string& session_id) const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& [id, ts] : traces_)
        if (ts->log.session_id == session_id) out.push_back(id);
    return out;
}

std::filesystem::path Tracer::trace_path(const std::string& trace_id) const {
    return options_.trace_dir / (trace_id + ".trace");
}

}  // namespace honeytrace::tracer
