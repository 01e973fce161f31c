#include "honeytrace/gateway/gateway.hpp"

#include <future>

#include <poll.h>
#include <sys/socket.h>

#include "honeytrace/common/fileio.hpp"

namespace honeytrace::gateway {

namespace fs = std::filesystem;

std::string_view to_string(SessionState s) {
    switch (s) {
        case SessionState::active: return "active";
        case SessionState::closing: return "closing";
        case SessionState::archived: return "archived";
    }
    return "?";
}

json Session::to_json() const {
    return json{{"session_id", session_id},
                {"source", source.str()},
                {"service", service},
                {"template_id", template_id},
                {"env_id", env_id},
                {"env_identity", env_identity.str()},
                {"state", std::string(to_string(state))},
                {"started_at", started_at.iso8601()},
                {"ended_at", ended_at ? json(ended_at->iso8601()) : json(nullptr)}};
}

Session Session::from_json(const json& doc) {
    Session s;
    s.session_id = doc.at("session_id").get<std::string>();
    s.source = Endpoint::parse(doc.at("source").get<std::string>()).value_or(Endpoint{});
    s.service = doc.at("service").get<std::string>();
    s.template_id = doc.at("template_id").get<std::string>();
    s.env_id = doc.at("env_id").get<std::string>();
    s.env_identity = Ipv4::parse(doc.at("env_identity").get<std::string>()).value_or(Ipv4{});
    const auto state = doc.at("state").get<std::string>();
    s.state = state == "archived" ? SessionState::archived
              : state == "closing" ? SessionState::closing
                                   : SessionState::active;
    s.started_at = Timestamp::parse_iso8601(doc.at("started_at").get<std::string>());
    if (!doc.at("ended_at").is_null()) s.ended_at = Timestamp::parse_iso8601(doc.at("ended_at").get<std::string>());
    return s;
}

json SessionRecord::to_json() const {
    return json{{"session", session.to_json()},
                {"pcap", pcap.string()},
                {"capture", capture.to_json()},
                {"baseline_commit", baseline_commit},
                {"head_commit", head_commit},
                {"commits", commits},
                {"traces", traces},
                {"snapshots", snapshots},
                {"bytes_from_attacker", bytes_from_attacker},
                {"bytes_to_attacker", bytes_to_attacker}};
}

SessionRecord SessionRecord::from_json(const json& doc) {
    SessionRecord r;
    r.session = Session::from_json(doc.at("session"));
    r.pcap = doc.at("pcap").get<std::string>();
    const auto& cap = doc.at("capture");
    r.capture.path = cap.at("path").get<std::string>();
    r.capture.packet_count = cap.at("packet_count").get<std::uint64_t>();
    r.capture.byte_count = cap.at("byte_count").get<std::uint64_t>();
    r.capture.degraded = cap.at("degraded").get<bool>();
    r.baseline_commit = doc.at("baseline_commit").get<std::string>();
    r.head_commit = doc.at("head_commit").get<std::string>();
    r.commits = doc.at("commits").get<std::vector<std::string>>();
    r.traces = doc.at("traces").get<std::vector<std::string>>();
    r.snapshots = doc.at("snapshots").get<std::vector<std::string>>();
    r.bytes_from_attacker = doc.at("bytes_from_attacker").get<std::uint64_t>();
    r.bytes_to_attacker = doc.at("bytes_to_attacker").get<std::uint64_t>();
    return r;
}

struct Gateway::Live {
    mutable std::mutex mu;
    std::condition_variable cv;
    Session session;
    std::optional<SessionRecord> record;

    std::shared_ptr<sandbox::Environment> env;
    std::unique_ptr<TeeSink> sink;
    std::unique_ptr<fsvault::Watcher> watcher;
    std::shared_ptr<netcap::CaptureHandle> capture;
    std::unique_ptr<sandbox::SessionContext> ctx;

    std::mutex flow_mu;
    std::unique_ptr<netcap::TcpFlowSynth> flow;
    bool flow_opened = false;  // handshake is synthesized with the first payload

    SocketStream attacker;
    SocketStream gw_env;
    SocketStream env_side;
    EnvHandler handler;
    std::thread supervisor;

    std::mutex finalize_mu;
    std::atomic<std::int64_t> last_activity_ms{0};
    std::atomic<bool> close_requested{false};
    std::atomic<bool> first_byte_seen{false};
    std::atomic<std::uint64_t> from_attacker{0};
    std::atomic<std::uint64_t> to_attacker{0};

    const std::string& id() const { return session.session_id; }
};

namespace {

std::int64_t steady_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

}  // namespace

Gateway::Gateway(Runtime& runtime, GatewayOptions options) : rt_(runtime), options_(options) {}

Gateway::~Gateway() { stop(); }

void Gateway::emit_system(Live& live, std::string_view what, json body) {
    body["what"] = std::string(what);
    live.sink->emit({EventKind::system, live.id(), std::move(body), std::nullopt});
}

Session Gateway::accept_connection(SocketStream attacker, Endpoint source, const ServiceConfig& service,
                                   EnvHandler handler) {
    auto& store = rt_.events();
    auto refuse = [&](const std::string& reason) -> SessionRefused {
        store.append({EventKind::connection, std::nullopt,
                      json{{"phase", "refused"}, {"source", source.str()}, {"service", service.name}, {"reason", reason}},
                      std::nullopt});
        attacker.close();
        return SessionRefused("connection from " + source.str() + " refused: " + reason);
    };

    std::shared_ptr<sandbox::Environment> env;
    try {
        env = rt_.sandbox().acquire(service.template_id);
    } catch (const Error& e) {
        throw refuse(e.what());
    }

    auto live = std::make_shared<Live>();
    auto& s = live->session;
    s.session_id = ids_.next();
    s.source = source;
    s.service = service.name;
    s.template_id = service.template_id;
    s.env_id = env->env_id();
    s.env_identity = env->net_identity();
    s.started_at = Clock::process().now();
    live->env = env;
    live->sink = std::make_unique<TeeSink>(store);
    live->sink->emit({EventKind::session_created, s.session_id, s.to_json(), std::nullopt});

    try {
        live->capture = rt_.hub().open_capture(s.session_id, env->net_identity());
    } catch (const Error& e) {
        rt_.sandbox().destroy(env);
        throw refuse(std::string("capture unavailable: ") + e.what());
    }
    emit_system(*live, "capture_armed", {{"pcap", rt_.hub().path_for(s.session_id).string()},
                                         {"net_identity", env->net_identity().str()}});

    const auto baseline = rt_.vault().record_baseline(s.session_id, env->root());
    live->sink->emit({EventKind::fs_commit, s.session_id, baseline.event_body(), std::nullopt});
    auto* sink = live->sink.get();
    live->watcher = std::make_unique<fsvault::Watcher>(
        s.session_id, rt_.vault(), rt_.options().fs_debounce,
        [sink, sid = s.session_id](const fsvault::FsEvent& ev, const std::optional<fsvault::Commit>& commit) {
            if (commit) {
                sink->emit({EventKind::fs_commit, sid, commit->event_body(), std::nullopt});
            } else {
                sink->emit({EventKind::system, sid,
                            json{{"what", "warning"},
                                 {"detail", "filesystem change left the tree unchanged"},
                                 {"change", std::string(fsvault::to_string(ev.kind))},
                                 {"path", ev.path}},
                            std::nullopt});
            }
        });
    auto* watcher = live->watcher.get();
    env->set_fs_listener([watcher](const fsvault::RawChange& c) { watcher->notify(c); });
    emit_system(*live, "watch_armed", {{"baseline_commit", baseline.commit_id.hex()}, {"files", baseline.tree.size()}});

    emit_system(*live, "tracer_armed", {{"template_id", s.template_id},
                                        {"whitelist", rt_.whitelists().get(s.template_id).digests.size()}});

    live->ctx = std::make_unique<sandbox::SessionContext>(
        sandbox::SessionContext{s.session_id, env, *live->sink, rt_.tracer(), watcher, &rt_.hub()});
    live->flow = std::make_unique<netcap::TcpFlowSynth>(source, Endpoint{env->net_identity(), service.listen_port},
                                                        env->net_identity());

    live->sink->emit({EventKind::connection, s.session_id,
                      json{{"phase", "accepted"}, {"source", source.str()}, {"service", service.name},
                           {"env_id", s.env_id}},
                      std::nullopt});

    auto [gw_env, env_side] = make_stream_pair();
    live->attacker = std::move(attacker);
    live->gw_env = std::move(gw_env);
    live->env_side = std::move(env_side);
    live->handler = handler ? std::move(handler) : EnvHandler([banner = service.banner](auto& ctx, auto& stream) {
        sandbox::run_sim_shell(ctx, stream, banner);
    });
    live->last_activity_ms = steady_ms();

    Session snapshot = s;
    {
        std::lock_guard lock(mu_);
        for (auto& [id, other] : sessions_) {
            bool archived = false;
            {
                std::lock_guard olock(other->mu);
                archived = other->record.has_value();
            }
            if (archived && other->supervisor.joinable()) other->supervisor.join();
        }
        sessions_.emplace(s.session_id, live);
    }
    live->supervisor = std::thread([this, live] { relay(live); });
    return snapshot;
}

void Gateway::relay(const std::shared_ptr<Live>& live) {
    std::thread env_thread([this, live] {
        try {
            live->handler(*live->ctx, live->env_side);
        } catch (const std::exception& e) {
            live->sink->emit({EventKind::degradation, live->id(),
                              json{{"module", "sandbox"}, {"what", "environment_failure"}, {"detail", e.what()}},
                              std::nullopt});
        }
        ::shutdown(live->env_side.fd(), SHUT_RDWR);
    });
    std::thread inbound([this, live] { pump(*live, true); });
    pump(*live, false);
    inbound.join();
    // Wake a handler still blocked on the environment socket.
    ::shutdown(live->env_side.fd(), SHUT_RDWR);
    env_thread.join();
    live->env_side.close();
    finalize(*live);
}

void Gateway::pump(Live& live, bool from_attacker) {
    auto& from = from_attacker ? live.attacker : live.gw_env;
    auto& to = from_attacker ? live.gw_env : live.attacker;
    std::uint8_t buf[16 * 1024];
    for (;;) {
        if (live.close_requested || stopping_) break;
        bool readable = false;
        try {
            readable = from.wait_readable(std::chrono::milliseconds(100));
        } catch (const Error&) {
            break;
        }
        if (!readable) {
            if (steady_ms() - live.last_activity_ms > options_.idle_timeout.count()) {
                if (!live.close_requested.exchange(true))
                    emit_system(live, "idle_timeout", {{"idle_ms", options_.idle_timeout.count()}});
                break;
            }
            continue;
        }
        std::size_t n = 0;
        try {
            n = from.read_some(buf);
        } catch (const Error&) {
            break;
        }
        if (n == 0) break;
        live.last_activity_ms = steady_ms();
        const std::span<const std::uint8_t> chunk(buf, n);
        if (from_attacker && !live.first_byte_seen.exchange(true))
            emit_system(live, "first_attacker_byte", {{"bytes", n}});
        {
            std::lock_guard lock(live.flow_mu);
            const auto now = Clock::process().now();
            if (!live.flow_opened) {
                for (const auto& p : live.flow->open(now)) rt_.hub().publish(p);
                live.flow_opened = true;
            }
            for (const auto& p : live.flow->data(from_attacker, chunk, now)) rt_.hub().publish(p);
        }
        try {
            to.write_all(chunk);
        } catch (const Error&) {
            break;
        }
        (from_attacker ? live.from_attacker : live.to_attacker) += n;
    }
    ::shutdown(to.fd(), SHUT_WR);
    // The environment side ending (or any forced close) ends the session; an attacker
    // half-close lets the environment finish its reply.
    if (!from_attacker) live.close_requested = true;
}

void Gateway::finalize(Live& live) {
    std::lock_guard fin(live.finalize_mu);
    if (live.record) return;
    const auto& sid = live.id();
    {
        std::lock_guard lock(live.mu);
        live.session.state = SessionState::closing;
    }

    live.watcher->close();
    live.env->set_fs_listener(nullptr);
    rt_.tracer().seal_session(sid);
    {
        std::lock_guard lock(live.flow_mu);
        if (live.flow_opened)
            for (const auto& p : live.flow->close(true, Clock::process().now())) rt_.hub().publish(p);
    }
    live.attacker.close();
    live.gw_env.close();

    SessionRecord rec;
    rec.capture = rt_.hub().close_capture(live.capture);
    rec.pcap = rec.capture.path;
    auto cap_body = rec.capture.to_json();
    live.sink->emit({EventKind::capture, sid, cap_body, std::nullopt});

    const auto history = rt_.vault().history(sid);
    if (!history.empty()) {
        rec.baseline_commit = history.front().commit_id.hex();
        rec.head_commit = history.back().commit_id.hex();
        for (std::size_t i = 1; i < history.size(); ++i) rec.commits.push_back(history[i].commit_id.hex());
    }
    for (const auto& trace_id : rt_.tracer().traces_for(sid)) {
        rec.traces.push_back(trace_id);
        for (const auto& ref : rt_.tracer().log(trace_id).snapshot_refs)
            if (ref.snapshot_id) rec.snapshots.push_back(*ref.snapshot_id);
    }
    rec.bytes_from_attacker = live.from_attacker;
    rec.bytes_to_attacker = live.to_attacker;

    rt_.sandbox().destroy(live.env);

    {
        std::lock_guard lock(live.mu);
        live.session.state = SessionState::archived;
        live.session.ended_at = Clock::process().now();
        rec.session = live.session;
    }
    write_file_atomic(rt_.sessions_dir() / (sid + ".json"), rec.to_json().dump(2));
    live.sink->emit({EventKind::session_archived, sid, rec.to_json(), std::nullopt});
    {
        std::lock_guard lock(live.mu);
        live.record = rec;
    }
    live.cv.notify_all();
}

std::shared_ptr<Gateway::Live> Gateway::find(const std::string& session_id) const {
    std::lock_guard lock(mu_);
    const auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw NotFound("unknown session " + session_id);
    return it->second;
}

SessionRecord Gateway::teardown_session(const std::string& session_id) {
    auto live = find(session_id);
    live->close_requested = true;
    std::unique_lock lock(live->mu);
    live->cv.wait(lock, [&] { return live->record.has_value(); });
    return *live->record;
}

std::optional<SessionRecord> Gateway::wait_archived(const std::string& session_id, std::chrono::milliseconds timeout) {
    auto live = find(session_id);
    std::unique_lock lock(live->mu);
    if (!live->cv.wait_for(lock, timeout, [&] { return live->record.has_value(); })) return std::nullopt;
    return *live->record;
}

std::optional<Session> Gateway::get_session(const std::string& session_id) const {
    std::shared_ptr<Live> live;
    {
        std::lock_guard lock(mu_);
        const auto it = sessions_.find(session_id);
        if (it == sessions_.end()) return std::nullopt;
        live = it->second;
    }
    std::lock_guard lock(live->mu);
    return live->session;
}

std::vector<Session> Gateway::sessions() const {
    std::vector<std::shared_ptr<Live>> all;
    {
        std::lock_guard lock(mu_);
        for (const auto& [id, live] : sessions_) all.push_back(live);
    }
    std::vector<Session> out;
    for (const auto& live : all) {
        std::lock_guard lock(live->mu);
        out.push_back(live->session);
    }
    return out;
}

Gateway::ScriptedResult Gateway::run_scripted_session(const ServiceConfig& service, const sandbox::AttackScript& script,
                                                      std::optional<Endpoint> source) {
    if (!source) {
        const auto n = synthetic_sources_++;
        source = Endpoint{Ipv4{0xc6336400u + 1 + n % 254}, static_cast<std::uint16_t>(40000 + n % 20000)};  // 198.51.100.0/24
    }
    auto [client, server] = make_stream_pair();
    std::promise<std::pair<sandbox::SessionContext*, SocketStream*>> ready;
    std::promise<void> done;
    std::shared_future<void> done_f = done.get_future().share();
    auto ready_f = ready.get_future();

    const auto session = accept_connection(std::move(server), *source, service,
                                           [&ready, done_f](sandbox::SessionContext& ctx, SocketStream& env_side) {
                                               ready.set_value({&ctx, &env_side});
                                               done_f.wait();
                                           });
    const auto [ctx, env_side] = ready_f.get();

    ScriptedResult result;
    try {
        sandbox::StreamPairChannel channel(client, *env_side);
        result.run = sandbox::run_attacker_script(*ctx, script, &channel);
    } catch (...) {
        done.set_value();
        client.close();
        teardown_session(session.session_id);
        throw;
    }
    done.set_value();
    client.close();
    result.record = teardown_session(session.session_id);
    return result;
}

void Gateway::serve(const std::vector<ServiceConfig>& services, const std::string& listen_address) {
    for (const auto& svc : services) {
        auto l = std::make_unique<Listener>();
        l->service = svc;
        l->fd = listen_tcp(listen_address, svc.listen_port);
        l->port = local_port(l->fd);
        auto* raw = l.get();
        l->thread = std::thread([this, raw] {
            while (!stopping_) {
                pollfd pfd{raw->fd.get(), POLLIN, 0};
                if (::poll(&pfd, 1, 100) <= 0) continue;
                try {
                    auto [stream, peer] = accept_tcp(raw->fd);
                    accept_connection(std::move(stream), peer, raw->service);
                } catch (const std::exception&) {
                    // refusals are logged by accept_connection; keep listening
                }
            }
        });
        listeners_.push_back(std::move(l));
    }
}

std::optional<std::uint16_t> Gateway::bound_port(const std::string& service) const {
    for (const auto& l : listeners_)
        if (l->service.name == service) return l->port;
    return std::nullopt;
}

void Gateway::stop() {
    stopping_ = true;
    for (auto& l : listeners_)
        if (l->thread.joinable()) l->thread.join();
    listeners_.clear();
    std::vector<std::shared_ptr<Live>> all;
    {
        std::lock_guard lock(mu_);
        for (const auto& [id, live] : sessions_) all.push_back(live);
    }
    for (const auto& live : all) {
        live->close_requested = true;
        if (live->supervisor.joinable()) live->supervisor.join();
    }
}

}  // namespace honeytrace::gateway
