#include "honeytrace/gateway/runtime.hpp"

#include "honeytrace/checkpointd/client.hpp"

namespace honeytrace::gateway {

namespace fs = std::filesystem;

Runtime::Runtime(RuntimeOptions options) : options_(std::move(options)) {
    const auto& root = options_.data_dir;
    fs::create_directories(root);
    fs::create_directories(sessions_dir());
    events_ = std::make_unique<eventstore::EventStore>(root / "events", options_.store);
    vault_ = std::make_unique<fsvault::Vault>(root / "vault");
    hub_ = std::make_unique<netcap::CaptureHub>(root / "captures", events_.get());
    snapshots_ = std::make_unique<checkpointd::SnapshotStore>(root / "snapshots");
    sandbox_ = std::make_unique<sandbox::SandboxManager>(driver_, whitelists_, options_.pool);

    if (options_.external_daemon) {
        daemon_address_ = *options_.external_daemon;
    } else {
        daemon_ = std::make_unique<checkpointd::Daemon>(*snapshots_, *sandbox_, events_.get());
        const auto sock = fs::absolute(root / "checkpointd.sock").string();
        // sun_path holds 108 bytes; fall back to loopback TCP for deep data directories.
        daemon_address_ = checkpointd::SocketAddress::parse(sock.size() < 100 ? "unix:" + sock : "tcp:127.0.0.1:0");
        daemon_->serve(daemon_address_);
        daemon_address_ = daemon_->bound_address();
    }

    tracer::TracerOptions topts;
    topts.trace_dir = trace_dir();
    topts.daemon_timeout = options_.daemon_timeout;
    topts.coalesce_window = options_.coalesce_window;
    topts.periodic_interval = options_.periodic_snapshots;
    tracer_ = std::make_unique<tracer::Tracer>(
        whitelists_,
        [addr = daemon_address_] { return std::make_unique<checkpointd::SocketChannel>(addr); },
        std::move(topts));
}

Runtime::~Runtime() { shutdown(); }

std::string Runtime::register_template_dir(const fs::path& dir, const std::string& template_id) {
    auto tmpl = sandbox::EnvironmentTemplate::load(dir);
    if (!template_id.empty()) tmpl.template_id = template_id;
    return sandbox_->register_template(std::move(tmpl));
}

void Runtime::shutdown() {
    if (daemon_) daemon_->stop();
    if (sandbox_) sandbox_->shutdown();
}

}  // namespace honeytrace::gateway
