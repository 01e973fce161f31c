// honeytrace command line: runs the honeypot and inspects its data directory.

#include <csignal>
#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "honeytrace/checkpointd/daemon.hpp"
#include "honeytrace/common/fileio.hpp"
#include "honeytrace/gateway/gateway.hpp"
#include "honeytrace/monitor/server.hpp"
#include "honeytrace/netcap/pcap.hpp"
#include "honeytrace/tracer/trace.hpp"

namespace fs = std::filesystem;
using namespace honeytrace;

namespace {

void print_json(const json& doc) { std::cout << doc.dump(2) << '\n'; }

/// Blocks SIGINT/SIGTERM in every thread started afterwards; wait_for_signal() collects them.
sigset_t block_signals() {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    return set;
}

int wait_for_signal(const sigset_t& set) {
    int sig = 0;
    sigwait(&set, &sig);
    return sig;
}

std::string hex_addr(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(v));
    return buf;
}

int cmd_serve(const fs::path& config_path, const std::string& listen, const std::string& data_override) {
    gateway::GatewayConfig config;
    try {
        config = gateway::load_config(config_path);
    } catch (const Error& e) {
        std::cerr << "configuration rejected: " << e.what() << '\n';
        return 2;
    }
    gateway::apply_environment_overrides(config);
    if (!listen.empty()) config.listen_address = listen;
    if (!data_override.empty()) config.data_dir = data_override;

    const auto signals = block_signals();

    gateway::RuntimeOptions ro;
    ro.data_dir = config.data_dir;
    ro.pool.warm_target = config.pool;
    ro.pool.max_live = config.max_live;
    if (config.checkpoint) ro.external_daemon = checkpointd::SocketAddress::parse(*config.checkpoint);
    gateway::Runtime runtime(ro);
    for (const auto& t : config.templates) runtime.register_template_dir(t.dir, t.template_id);

    gateway::GatewayOptions go;
    go.idle_timeout = config.idle_timeout;
    gateway::Gateway gw(runtime, go);
    gw.serve(config.services, config.listen_address);
    for (const auto& svc : config.services)
        std::cout << "service " << svc.name << " listening on " << config.listen_address << ':'
                  << gw.bound_port(svc.name).value_or(0) << " (template " << svc.template_id << ")\n";

    std::unique_ptr<monitor::Monitor> mon;
    if (config.monitor_port) {
        mon = std::make_unique<monitor::Monitor>(monitor::Sources{runtime.events(), &runtime.vault(), &runtime.snapshots(),
                                                                  runtime.trace_dir(), runtime.sessions_dir()});
        mon->start(config.monitor_address, *config.monitor_port);
        std::cout << "monitor on " << config.monitor_address << ':' << mon->port() << '\n';
    }
    std::cout << "data directory " << fs::absolute(config.data_dir).string() << std::endl;

    const int sig = wait_for_signal(signals);
    std::cout << "signal " << sig << ", shutting down" << std::endl;
    if (mon) mon->stop();
    gw.stop();
    runtime.shutdown();
    return 0;
}

int cmd_replay(const fs::path& data, const fs::path& template_dir, const fs::path& script_path,
               const std::string& service_name, std::uint16_t port, bool full) {
    gateway::RuntimeOptions ro;
    ro.data_dir = data;
    gateway::Runtime runtime(ro);
    const auto template_id = runtime.register_template_dir(template_dir);
    const auto script = sandbox::AttackScript::load(script_path);

    gateway::Gateway gw(runtime);
    const gateway::ServiceConfig svc{service_name, port, template_id, {}};
    const auto result = gw.run_scripted_session(svc, script);
    gw.stop();
    runtime.shutdown();

    json out{{"record", result.record.to_json()},
             {"failed_steps", result.run.failed_steps},
             {"bytes_to_env", result.run.bytes_to_env},
             {"bytes_to_attacker", result.run.bytes_to_attacker},
             {"event_count", result.run.events.size()}};
    if (full) {
        json events = json::array();
        for (const auto& ev : result.run.events) events.push_back(ev.to_json());
        out["events"] = events;
    }
    print_json(out);
    return result.run.failed_steps == 0 ? 0 : 1;
}

int cmd_sessions(const fs::path& data) {
    eventstore::EventStore store(data / "events");
    const monitor::ReadApi api({store, nullptr, nullptr, data / "traces", data / "sessions"});
    for (const auto& s : api.list_sessions())
        std::cout << s.value("session_id", "") << "  " << s.value("started_at", "") << "  "
                  << s.value("service", "") << "  " << s.value("source", "") << "  " << s.value("state", "") << '\n';
    return 0;
}

int cmd_fslog(const fs::path& data, const std::string& session) {
    fsvault::Vault vault(data / "vault");
    const auto history = vault.history(session);
    if (history.empty()) {
        std::cerr << "no history for session " << session << '\n';
        return 1;
    }
    for (std::size_t i = 0; i < history.size(); ++i) {
        const auto& c = history[i];
        std::cout << c.commit_id.hex().substr(0, 16) << "  #" << c.seq << "  " << c.timestamp.iso8601() << "  "
                  << c.message << "  (" << c.tree.size() << " files)\n";
        if (i > 0) {
            const auto d = vault.diff(history[i - 1].commit_id, c.commit_id);
            for (const auto& p : d.added) std::cout << "    A " << p << '\n';
            for (const auto& p : d.modified) std::cout << "    M " << p << '\n';
            for (const auto& p : d.deleted) std::cout << "    D " << p << '\n';
        }
    }
    return 0;
}

fsvault::Commit resolve_commit(const fsvault::Vault& vault, const std::string& ref) {
    const auto c = vault.find_commit(ref);
    if (!c) throw NotFound("no commit matching '" + ref + "'");
    return *c;
}

int cmd_fsdiff(const fs::path& data, const std::string& a, const std::string& b) {
    fsvault::Vault vault(data / "vault");
    const auto d = vault.diff(resolve_commit(vault, a).commit_id, resolve_commit(vault, b).commit_id);
    for (const auto& p : d.added) std::cout << "A " << p << '\n';
    for (const auto& p : d.modified) std::cout << "M " << p << '\n';
    for (const auto& p : d.deleted) std::cout << "D " << p << '\n';
    return 0;
}

int cmd_fscheckout(const fs::path& data, const std::string& ref, const fs::path& dest) {
    fsvault::Vault vault(data / "vault");
    const auto tree = vault.checkout(resolve_commit(vault, ref).commit_id, dest);
    std::cout << "wrote " << tree.size() << " files to " << dest.string() << '\n';
    return 0;
}

int cmd_pcapinfo(const fs::path& file) {
    const auto pcap = netcap::read_pcap(file);
    std::cout << "snaplen " << pcap.snaplen << ", linktype " << pcap.linktype << ", " << pcap.records.size()
              << " records\n";
    std::uint64_t total = 0;
    for (std::size_t i = 0; i < pcap.records.size(); ++i) {
        const auto& r = pcap.records[i];
        total += r.data.size();
        std::string flow;
        if (r.data.size() >= 20 && (r.data[0] >> 4) == 4) {
            const auto ihl = static_cast<std::size_t>(r.data[0] & 15) * 4;
            const auto ip = [&](std::size_t off) {
                return std::to_string(r.data[off]) + "." + std::to_string(r.data[off + 1]) + "." +
                       std::to_string(r.data[off + 2]) + "." + std::to_string(r.data[off + 3]);
            };
            flow = ip(12) + " > " + ip(16);
            if (r.data[9] == 6 && r.data.size() >= ihl + 4) {
                const auto sport = (r.data[ihl] << 8) | r.data[ihl + 1];
                const auto dport = (r.data[ihl + 2] << 8) | r.data[ihl + 3];
                flow = ip(12) + ":" + std::to_string(sport) + " > " + ip(16) + ":" + std::to_string(dport);
            }
        }
        std::printf("%6zu  %u.%06u  len %u/%u  %s\n", i, r.ts_sec, r.ts_usec, static_cast<unsigned>(r.data.size()),
                    r.original_len, flow.c_str());
    }
    std::cout << total << " captured bytes\n";
    return 0;
}

int cmd_tracedump(const fs::path& data, const std::string& ref) {
    fs::path path = ref;
    if (!fs::exists(path)) path = data / "traces" / (ref + ".trace");
    const auto log = tracer::read_trace_file(path);
    std::cout << "trace " << log.trace_id << "  session " << log.session_id << "  target " << log.target
              << (log.sealed ? "  sealed" : "  open") << '\n';
    std::cout << "exec " << log.exec.to_json().dump() << '\n';
    std::size_t snap = 0;
    for (std::size_t i = 0; i < log.events.size(); ++i) {
        const auto& e = log.events[i];
        std::cout << "  " << e.seq << "  " << tracer::to_string(e.kind) << "  " << hex_addr(e.address);
        if (e.size) std::cout << "  size " << e.size;
        if (!e.detail.empty()) std::cout << "  " << e.detail;
        std::cout << '\n';
        while (snap < log.snapshot_refs.size() && log.snapshot_refs[snap].trigger_seq == e.seq) {
            const auto& r = log.snapshot_refs[snap++];
            std::cout << "    snapshot " << (r.snapshot_id ? *r.snapshot_id : std::string("(gap)")) << "  "
                      << tracer::to_string(r.status) << '\n';
        }
    }
    for (; snap < log.snapshot_refs.size(); ++snap) {
        const auto& r = log.snapshot_refs[snap];
        std::cout << "    snapshot after seq " << r.trigger_seq << ": "
                  << (r.snapshot_id ? *r.snapshot_id : std::string("(gap)")) << '\n';
    }
    return 0;
}

int cmd_snapshot_show(const fs::path& data, const std::string& id, std::optional<std::size_t> region,
                      const fs::path& out) {
    checkpointd::SnapshotStore store(data / "snapshots");
    const auto snap = store.fetch(id);
    if (region) {
        if (*region >= snap.state.regions.size()) throw NotFound("no region " + std::to_string(*region));
        const auto& bytes = snap.state.regions[*region].content;
        if (out.empty()) {
            std::cout.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        } else {
            write_file_atomic(out, bytes);
        }
        return 0;
    }
    auto doc = snap.manifest();
    for (std::size_t i = 0; i < snap.state.regions.size(); ++i)
        doc["regions"][i]["strings"] = checkpointd::printable_strings(snap.state.regions[i].content);
    print_json(doc);
    return 0;
}

int cmd_events_query(const fs::path& data, const std::vector<std::string>& kinds, const std::string& session,
                     const std::string& from, const std::string& to, std::size_t limit, bool desc) {
    eventstore::EventStore store(data / "events");
    eventstore::Query q;
    for (const auto& k : kinds) {
        const auto kind = parse_event_kind(k);
        if (!kind) throw Error("unknown event kind '" + k + "'");
        q.kinds.push_back(*kind);
    }
    if (!session.empty()) q.session = session;
    if (!from.empty()) q.from = Timestamp::parse_iso8601(from);
    if (!to.empty()) q.to = Timestamp::parse_iso8601(to);
    if (limit) q.limit = limit;
    if (desc) q.order = eventstore::SortOrder::descending;
    for (const auto& ev : store.query(q)) std::cout << ev.to_json().dump() << '\n';
    return 0;
}

int cmd_events_stats(const fs::path& data, std::string day) {
    eventstore::EventStore store(data / "events");
    if (day.empty()) day = utc_day(Clock::process().now());
    print_json(store.stats(day).to_json());
    return 0;
}

int cmd_checkpointd(const fs::path& data, const std::string& listen) {
    const auto signals = block_signals();
    checkpointd::SnapshotStore store(data / "snapshots");
    checkpointd::ProcfsStateProvider provider;
    checkpointd::Daemon daemon(store, provider);
    daemon.serve(checkpointd::SocketAddress::parse(listen));
    std::cout << "checkpointd listening on " << daemon.bound_address().str() << ", snapshots in "
              << store.root().string() << std::endl;
    wait_for_signal(signals);
    daemon.stop();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"honeytrace: high-interaction honeypot with filesystem history, capture and tracing"};
    app.require_subcommand(1);
    std::string data = "honeytrace-data";
    app.add_option("--data", data, "Data directory")->capture_default_str();

    auto* serve = app.add_subcommand("serve", "Run the gateway from a configuration file");
    std::string config, listen;
    serve->add_option("--config", config, "Configuration file")->required();
    serve->add_option("--listen", listen, "Listen address (overrides the file and HONEYTRACE_LISTEN)");

    auto* replay = app.add_subcommand("replay", "Run an attack script against a template as one session");
    std::string template_dir, script, service = "replay";
    bool full = false;
    std::uint16_t replay_port = 22;
    replay->add_option("--template", template_dir, "Template directory")->required()->check(CLI::ExistingDirectory);
    replay->add_option("--script", script, "Attack script")->required()->check(CLI::ExistingFile);
    replay->add_option("--service", service, "Service name recorded for the session")->capture_default_str();
    replay->add_option("--port", replay_port, "Service port recorded in the capture")->capture_default_str();
    replay->add_flag("--events", full, "Include the session's events in the output");

    auto* sessions = app.add_subcommand("sessions", "List sessions");

    auto* fslog = app.add_subcommand("fslog", "Filesystem history of a session");
    std::string session_id;
    fslog->add_option("session", session_id)->required();

    auto* fsdiff = app.add_subcommand("fsdiff", "Paths changed between two commits");
    std::string commit_a, commit_b;
    fsdiff->add_option("a", commit_a, "Commit id or unique prefix")->required();
    fsdiff->add_option("b", commit_b, "Commit id or unique prefix")->required();

    auto* fscheckout = app.add_subcommand("fscheckout", "Write a commit's tree to a directory");
    std::string commit_ref, dest;
    fscheckout->add_option("commit", commit_ref)->required();
    fscheckout->add_option("dest", dest, "Absent or empty directory")->required();

    auto* pcapinfo = app.add_subcommand("pcapinfo", "Summarize a capture file");
    std::string pcap_file;
    pcapinfo->add_option("file", pcap_file)->required()->check(CLI::ExistingFile);

    auto* tracedump = app.add_subcommand("tracedump", "Print a trace log");
    std::string trace_ref;
    tracedump->add_option("trace", trace_ref, "Trace id or .trace file")->required();

    auto* snapshot = app.add_subcommand("snapshot", "Inspect memory snapshots");
    snapshot->require_subcommand(1);
    auto* snap_show = snapshot->add_subcommand("show", "Manifest and strings, or raw region bytes");
    std::string snapshot_id, region_out;
    std::optional<std::size_t> region;
    snap_show->add_option("id", snapshot_id)->required();
    snap_show->add_option("--region", region, "Dump this region's raw bytes");
    snap_show->add_option("-o,--output", region_out, "Write region bytes here instead of stdout");

    auto* events = app.add_subcommand("events", "Query the event log");
    events->require_subcommand(1);
    auto* ev_query = events->add_subcommand("query", "Matching events as JSON lines");
    std::vector<std::string> kinds;
    std::string ev_session, from, to;
    std::size_t limit = 0;
    bool desc = false;
    ev_query->add_option("--kind", kinds, "Event kind (repeatable)")->delimiter(',');
    ev_query->add_option("--session", ev_session);
    ev_query->add_option("--from", from, "ISO-8601, inclusive");
    ev_query->add_option("--to", to, "ISO-8601, exclusive");
    ev_query->add_option("--limit", limit);
    ev_query->add_flag("--desc", desc, "Newest first");
    auto* ev_stats = events->add_subcommand("stats", "Per-day attack statistics");
    std::string day;
    ev_stats->add_option("--day", day, "YYYY-MM-DD (default today, UTC)");

    auto* ckpt = app.add_subcommand("checkpointd", "Run the dump daemon against live processes (pid:<n>)");
    std::string ckpt_listen;
    ckpt->add_option("--listen", ckpt_listen, "unix:<path> or tcp:<host>:<port>")->required();

    CLI11_PARSE(app, argc, argv);

    const bool data_given = app.get_option("--data")->count() > 0;
    try {
        if (*serve) return cmd_serve(config, listen, data_given ? data : std::string());
        if (*replay) return cmd_replay(data, template_dir, script, service, replay_port, full);
        if (*sessions) return cmd_sessions(data);
        if (*fslog) return cmd_fslog(data, session_id);
        if (*fsdiff) return cmd_fsdiff(data, commit_a, commit_b);
        if (*fscheckout) return cmd_fscheckout(data, commit_ref, dest);
        if (*pcapinfo) return cmd_pcapinfo(pcap_file);
        if (*tracedump) return cmd_tracedump(data, trace_ref);
        if (*snap_show) return cmd_snapshot_show(data, snapshot_id, region, region_out);
        if (*ev_query) return cmd_events_query(data, kinds, ev_session, from, to, limit, desc);
        if (*ev_stats) return cmd_events_stats(data, day);
        if (*ckpt) return cmd_checkpointd(data, ckpt_listen);
    } catch (const std::exception& e) {
        std::cerr << "honeytrace: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
