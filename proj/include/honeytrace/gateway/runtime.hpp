#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>

#include "honeytrace/checkpointd/daemon.hpp"
#include "honeytrace/eventstore/event_store.hpp"
#include "honeytrace/fsvault/vault.hpp"
#include "honeytrace/netcap/capture.hpp"
#include "honeytrace/sandbox/pool.hpp"
#include "honeytrace/tracer/tracer.hpp"

namespace honeytrace::gateway {

struct RuntimeOptions {
    std::filesystem::path data_dir;
    sandbox::PoolOptions pool;
    std::chrono::milliseconds daemon_timeout{5000};
    std::size_t coalesce_window = 0;
    std::optional<std::chrono::milliseconds> periodic_snapshots;
    std::chrono::microseconds fs_debounce = std::chrono::milliseconds(50);
    /// Use this daemon instead of starting one in-process.
    std::optional<checkpointd::SocketAddress> external_daemon;
    eventstore::StoreOptions store;
};

/// All stores and services of one honeypot instance, rooted at one data directory:
///
///   events/      event log segments
///   vault/       filesystem history
///   captures/    <session>.pcap
///   traces/      <trace>.trace + .idx
///   snapshots/   <snapshot>/manifest.json + region files
///   sessions/    <session>.json session records
class Runtime {
public:
    explicit Runtime(RuntimeOptions options);
    ~Runtime();
    Runtime(const Runtime&) = delete;
    Runtime& operator=(const Runtime&) = delete;

    eventstore::EventStore& events() { return *events_; }
    fsvault::Vault& vault() { return *vault_; }
    netcap::CaptureHub& hub() { return *hub_; }
    checkpointd::SnapshotStore& snapshots() { return *snapshots_; }
    tracer::WhitelistRegistry& whitelists() { return whitelists_; }
    sandbox::SandboxManager& sandbox() { return *sandbox_; }
    tracer::Tracer& tracer() { return *tracer_; }
    /// Null when an external daemon is used.
    checkpointd::Daemon* daemon() { return daemon_.get(); }
    const checkpointd::SocketAddress& daemon_address() const { return daemon_address_; }

    const RuntimeOptions& options() const { return options_; }
    std::filesystem::path sessions_dir() const { return options_.data_dir / "sessions"; }
    std::filesystem::path trace_dir() const { return options_.data_dir / "traces"; }

    /// Loads a template directory and registers it, optionally under another id.
    std::string register_template_dir(const std::filesystem::path& dir, const std::string& template_id = {});

    /// Stops the daemon and destroys pooled environments. Idempotent.
    void shutdown();

private:
    RuntimeOptions options_;
    std::unique_ptr<eventstore::EventStore> events_;
    std::unique_ptr<fsvault::Vault> vault_;
    std::unique_ptr<netcap::CaptureHub> hub_;
    std::unique_ptr<checkpointd::SnapshotStore> snapshots_;
    sandbox::ScriptedDriver driver_;
    tracer::WhitelistRegistry whitelists_;
    std::unique_ptr<sandbox::SandboxManager> sandbox_;
    std::unique_ptr<checkpointd::Daemon> daemon_;
    checkpointd::SocketAddress daemon_address_;
    std::unique_ptr<tracer::Tracer> tracer_;
};

}  // namespace honeytrace::gateway
