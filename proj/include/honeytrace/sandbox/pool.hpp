#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>

#include "honeytrace/checkpointd/snapshot.hpp"
#include "honeytrace/sandbox/environment.hpp"
#include "honeytrace/tracer/tracer.hpp"

namespace honeytrace::sandbox {

struct PoolOptions {
    std::size_t warm_target = 1;  // per template
    std::size_t max_live = 64;    // warm + assigned, all templates
    /// How long acquire waits for the replenisher when the pool is empty.
    std::chrono::milliseconds acquire_wait{2000};
};

class PoolExhausted : public Error {
public:
    using Error::Error;
};

/// Templates, warm pool, and environment lifecycle. A background thread keeps every template's
/// pool at its target. Also resolves "sim:<env_id>:<pid>" process references for the dump daemon.
class SandboxManager : public checkpointd::ProcessStateProvider {
public:
    SandboxManager(EnvironmentDriver& driver, tracer::WhitelistRegistry& whitelists, PoolOptions options = {});
    ~SandboxManager() override;
    SandboxManager(const SandboxManager&) = delete;
    SandboxManager& operator=(const SandboxManager&) = delete;

    /// Registers the template and its whitelist. The pool fills in the background.
    std::string register_template(EnvironmentTemplate tmpl);
    const EnvironmentTemplate& get_template(const std::string& template_id) const;
    bool has_template(const std::string& template_id) const;
    std::vector<std::string> template_ids() const;

    /// Creates a warm environment and adds it to the pool.
    std::shared_ptr<Environment> provision(const std::string& template_id);
    /// Takes a warm environment, waiting in arrival order up to acquire_wait. Throws PoolExhausted.
    std::shared_ptr<Environment> acquire(const std::string& template_id);
    /// Idempotent.
    void destroy(const std::shared_ptr<Environment>& env);

    std::size_t warm_count(const std::string& template_id) const;
    std::size_t live_count() const;
    bool wait_for_warm(const std::string& template_id, std::size_t count, std::chrono::milliseconds timeout) const;
    std::shared_ptr<Environment> find_environment(const std::string& env_id) const;

    /// Stops replenishing and destroys every live environment.
    void shutdown();

    std::optional<checkpointd::ProcessState> read_process(const std::string& target) override;

private:
    struct TemplateSlot {
        std::unique_ptr<const EnvironmentTemplate> tmpl;
        std::deque<std::shared_ptr<Environment>> warm;
        std::deque<std::uint64_t> waiters;
        std::uint32_t next_host = 1;
    };

    std::shared_ptr<Environment> create_locked(TemplateSlot& slot, std::unique_lock<std::mutex>& lock);
    Ipv4 allocate_identity_locked(TemplateSlot& slot);
    void replenish_loop();

    EnvironmentDriver& driver_;
    tracer::WhitelistRegistry& whitelists_;
    PoolOptions options_;
    IdGenerator env_ids_{"env"};

    mutable std::mutex mu_;
    mutable std::condition_variable cv_;
    std::map<std::string, TemplateSlot> templates_;
    std::map<std::string, std::shared_ptr<Environment>> live_;
    std::set<Ipv4> identities_;
    std::size_t creating_ = 0;
    std::uint64_t next_waiter_ = 0;
    bool stopping_ = false;
    std::thread replenisher_;
};

}  // namespace honeytrace::sandbox
