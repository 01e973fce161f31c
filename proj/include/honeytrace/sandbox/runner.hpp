#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "honeytrace/fsvault/watcher.hpp"
#include "honeytrace/netcap/capture.hpp"
#include "honeytrace/sandbox/environment.hpp"
#include "honeytrace/sandbox/script.hpp"
#include "honeytrace/tracer/tracer.hpp"

namespace honeytrace::sandbox {

/// Everything a session's driver touches.
struct SessionContext {
    std::string session_id;
    std::shared_ptr<Environment> env;
    TeeSink& sink;
    tracer::Tracer& tracer;
    fsvault::Watcher* watcher = nullptr;
    netcap::CaptureHub* hub = nullptr;
};

/// The attacker's connection as seen by a driver that plays both ends.
class SessionChannel {
public:
    virtual ~SessionChannel() = default;
    /// Attacker sends; returns what the environment received.
    virtual Bytes to_env(std::span<const std::uint8_t> bytes) = 0;
    /// Environment sends; returns what the attacker received.
    virtual Bytes to_attacker(std::span<const std::uint8_t> bytes) = 0;
};

/// Drives the attacker socket and the environment socket of a relayed session.
class StreamPairChannel : public SessionChannel {
public:
    StreamPairChannel(SocketStream& attacker, SocketStream& env,
                      std::chrono::milliseconds timeout = std::chrono::milliseconds(5000))
        : attacker_(attacker), env_(env), timeout_(timeout) {}

    Bytes to_env(std::span<const std::uint8_t> bytes) override { return pass(attacker_, env_, bytes); }
    Bytes to_attacker(std::span<const std::uint8_t> bytes) override { return pass(env_, attacker_, bytes); }

private:
    Bytes pass(SocketStream& from, SocketStream& to, std::span<const std::uint8_t> bytes);

    SocketStream& attacker_;
    SocketStream& env_;
    std::chrono::milliseconds timeout_;
};

/// No relay: the conversation is synthesized straight into the capture hub.
class DirectChannel : public SessionChannel {
public:
    DirectChannel(netcap::CaptureHub* hub, Endpoint attacker, Endpoint service, Ipv4 env_identity);
    ~DirectChannel() override;

    Bytes to_env(std::span<const std::uint8_t> bytes) override;
    Bytes to_attacker(std::span<const std::uint8_t> bytes) override;
    void close();

private:
    void publish(const std::vector<netcap::PacketRecord>& packets);

    netcap::CaptureHub* hub_;
    netcap::TcpFlowSynth flow_;
    bool opened_ = false;
    bool closed_ = false;
};

struct ScriptRun {
    std::vector<Event> events;  // emitted while the script ran, in order
    std::size_t failed_steps = 0;
    std::uint64_t bytes_to_env = 0;
    std::uint64_t bytes_to_attacker = 0;
    /// Trace events the driver produced, per trace.
    std::map<std::string, std::size_t> trace_events;
};

/// Executes the steps in order. Failing steps are recorded as events and skipped.
/// `channel` may be null, in which case send/expect steps fail.
ScriptRun run_attacker_script(SessionContext& ctx, const AttackScript& script, SessionChannel* channel);

/// Minimal interactive shell for live connections: banner, prompt, and a handful of commands
/// (ls, cat, echo [> file], rm, exit). Anything that resolves to a file in the environment is
/// executed through the tracer. Returns when the peer closes or exits.
void run_sim_shell(SessionContext& ctx, SocketStream& stream, const Bytes& banner);

}  // namespace honeytrace::sandbox
