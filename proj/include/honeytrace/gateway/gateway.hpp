#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "honeytrace/gateway/config.hpp"
#include "honeytrace/gateway/runtime.hpp"
#include "honeytrace/sandbox/runner.hpp"

namespace honeytrace::gateway {

enum class SessionState { active, closing, archived };
std::string_view to_string(SessionState s);

struct Session {
    std::string session_id;
    Endpoint source;
    std::string service;
    std::string template_id;
    std::string env_id;
    Ipv4 env_identity;
    SessionState state = SessionState::active;
    Timestamp started_at;
    std::optional<Timestamp> ended_at;

    json to_json() const;
    static Session from_json(const json& doc);
};

/// Produced once per session at teardown. Commit ids after the baseline form the commit range.
struct SessionRecord {
    Session session;
    std::filesystem::path pcap;
    netcap::CaptureSummary capture;
    std::string baseline_commit;
    std::string head_commit;
    std::vector<std::string> commits;  // after the baseline, oldest first
    std::vector<std::string> traces;
    std::vector<std::string> snapshots;
    std::uint64_t bytes_from_attacker = 0;
    std::uint64_t bytes_to_attacker = 0;

    json to_json() const;
    static SessionRecord from_json(const json& doc);
};

/// Pool exhaustion or acquisition failure; the connection was closed and logged.
class SessionRefused : public Error {
public:
    using Error::Error;
};

struct GatewayOptions {
    std::chrono::milliseconds idle_timeout{300'000};
};

/// Plays the environment's side of the relayed connection. Runs on its own thread; returning
/// closes the environment end.
using EnvHandler = std::function<void(sandbox::SessionContext& ctx, SocketStream& env_side)>;

class Gateway {
public:
    Gateway(Runtime& runtime, GatewayOptions options = {});
    ~Gateway();
    Gateway(const Gateway&) = delete;
    Gateway& operator=(const Gateway&) = delete;

    /// Acquires an environment, arms capture, filesystem watch and tracer, then starts relaying
    /// `attacker` to the environment. Without a handler the environment runs the simulated shell.
    Session accept_connection(SocketStream attacker, Endpoint source, const ServiceConfig& service,
                              EnvHandler handler = {});

    /// Closes the session if still open and returns its record once archived. Idempotent.
    SessionRecord teardown_session(const std::string& session_id);
    /// Waits for the session to end on its own.
    std::optional<SessionRecord> wait_archived(const std::string& session_id, std::chrono::milliseconds timeout);

    std::optional<Session> get_session(const std::string& session_id) const;
    std::vector<Session> sessions() const;

    struct ScriptedResult {
        SessionRecord record;
        sandbox::ScriptRun run;
    };
    /// Runs a scenario over a real relayed connection: the script plays the attacker and the
    /// environment service; the attacker disconnects at the end.
    ScriptedResult run_scripted_session(const ServiceConfig& service, const sandbox::AttackScript& script,
                                        std::optional<Endpoint> source = std::nullopt);

    /// Starts a listener per service.
    void serve(const std::vector<ServiceConfig>& services, const std::string& listen_address);
    std::optional<std::uint16_t> bound_port(const std::string& service) const;
    /// Stops listeners and tears down every open session.
    void stop();

private:
    struct Live;

    void relay(const std::shared_ptr<Live>& live);
    void pump(Live& live, bool from_attacker);
    void finalize(Live& live);
    std::shared_ptr<Live> find(const std::string& session_id) const;
    void emit_system(Live& live, std::string_view what, json body);

    Runtime& rt_;
    GatewayOptions options_;
    IdGenerator ids_{"sess"};
    std::atomic<std::uint32_t> synthetic_sources_{0};

    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<Live>> sessions_;

    struct Listener {
        ServiceConfig service;
        Fd fd;
        std::uint16_t port = 0;
        std::thread thread;
    };
    std::vector<std::unique_ptr<Listener>> listeners_;
    std::atomic<bool> stopping_{false};
};

}  // namespace honeytrace::gateway
