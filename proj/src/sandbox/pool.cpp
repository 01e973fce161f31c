#include "honeytrace/sandbox/pool.hpp"

#include <algorithm>

namespace honeytrace::sandbox {

SandboxManager::SandboxManager(EnvironmentDriver& driver, tracer::WhitelistRegistry& whitelists, PoolOptions options)
    : driver_(driver), whitelists_(whitelists), options_(options) {
    replenisher_ = std::thread([this] { replenish_loop(); });
}

SandboxManager::~SandboxManager() { shutdown(); }

std::string SandboxManager::register_template(EnvironmentTemplate tmpl) {
    tmpl.validate();
    const auto id = tmpl.template_id;
    {
        std::lock_guard lock(mu_);
        if (templates_.contains(id)) throw Error("template already registered: " + id);
        whitelists_.add(tracer::build_whitelist(id, tmpl.image_bytes()));
        templates_[id].tmpl = std::make_unique<const EnvironmentTemplate>(std::move(tmpl));
    }
    cv_.notify_all();
    return id;
}

const EnvironmentTemplate& SandboxManager::get_template(const std::string& template_id) const {
    std::lock_guard lock(mu_);
    const auto it = templates_.find(template_id);
    if (it == templates_.end()) throw NotFound("unknown template " + template_id);
    return *it->second.tmpl;
}

bool SandboxManager::has_template(const std::string& template_id) const {
    std::lock_guard lock(mu_);
    return templates_.contains(template_id);
}

std::vector<std::string> SandboxManager::template_ids() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& [id, slot] : templates_) out.push_back(id);
    return out;
}

Ipv4 SandboxManager::allocate_identity_locked(TemplateSlot& slot) {
    const auto& scheme = slot.tmpl->identity;
    const auto hosts = scheme.host_count();
    for (std::uint32_t tries = 0; tries < hosts; ++tries) {
        const std::uint32_t host = slot.next_host;
        slot.next_host = slot.next_host % hosts + 1;
        const Ipv4 candidate{scheme.network.value + host};
        if (identities_.insert(candidate).second) return candidate;
    }
    throw PoolExhausted("no free network identity in " + scheme.str());
}

std::shared_ptr<Environment> SandboxManager::create_locked(TemplateSlot& slot, std::unique_lock<std::mutex>& lock) {
    if (live_.size() + creating_ >= options_.max_live) throw PoolExhausted("live environment limit reached");
    const Ipv4 identity = allocate_identity_locked(slot);
    const auto env_id = env_ids_.next();
    const auto* tmpl = slot.tmpl.get();
    ++creating_;
    lock.unlock();
    std::shared_ptr<Environment> env;
    try {
        env = driver_.create(*tmpl, env_id, identity);
    } catch (...) {
        lock.lock();
        --creating_;
        identities_.erase(identity);
        throw;
    }
    lock.lock();
    --creating_;
    live_.emplace(env_id, env);
    return env;
}

std::shared_ptr<Environment> SandboxManager::provision(const std::string& template_id) {
    std::unique_lock lock(mu_);
    const auto it = templates_.find(template_id);
    if (it == templates_.end()) throw NotFound("unknown template " + template_id);
    auto env = create_locked(it->second, lock);
    it->second.warm.push_back(env);
    cv_.notify_all();
    return env;
}

std::shared_ptr<Environment> SandboxManager::acquire(const std::string& template_id) {
    std::unique_lock lock(mu_);
    const auto it = templates_.find(template_id);
    if (it == templates_.end()) throw NotFound("unknown template " + template_id);
    auto& slot = it->second;
    const auto ticket = next_waiter_++;
    slot.waiters.push_back(ticket);
    cv_.notify_all();
    const bool ready = cv_.wait_for(lock, options_.acquire_wait, [&] {
        return stopping_ || (slot.waiters.front() == ticket && !slot.warm.empty());
    });
    slot.waiters.erase(std::find(slot.waiters.begin(), slot.waiters.end(), ticket));
    if (!ready || stopping_) {
        cv_.notify_all();
        throw PoolExhausted("no warm environment for " + template_id);
    }
    auto env = std::move(slot.warm.front());
    slot.warm.pop_front();
    env->set_state(EnvState::assigned);
    cv_.notify_all();
    return env;
}

void SandboxManager::destroy(const std::shared_ptr<Environment>& env) {
    if (!env) return;
    {
        std::lock_guard lock(mu_);
        if (live_.erase(env->env_id()) == 0) return;
        identities_.erase(env->net_identity());
        if (const auto it = templates_.find(env->template_id()); it != templates_.end()) {
            auto& warm = it->second.warm;
            warm.erase(std::remove(warm.begin(), warm.end(), env), warm.end());
        }
    }
    driver_.dispose(*env);
    cv_.notify_all();
}

std::size_t SandboxManager::warm_count(const std::string& template_id) const {
    std::lock_guard lock(mu_);
    const auto it = templates_.find(template_id);
    return it == templates_.end() ? 0 : it->second.warm.size();
}

std::size_t SandboxManager::live_count() const {
    std::lock_guard lock(mu_);
    return live_.size();
}

bool SandboxManager::wait_for_warm(const std::string& template_id, std::size_t count,
                                   std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mu_);
    return cv_.wait_for(lock, timeout, [&] {
        const auto it = templates_.find(template_id);
        return it != templates_.end() && it->second.warm.size() >= count;
    });
}

std::shared_ptr<Environment> SandboxManager::find_environment(const std::string& env_id) const {
    std::lock_guard lock(mu_);
    const auto it = live_.find(env_id);
    return it == live_.end() ? nullptr : it->second;
}

void SandboxManager::replenish_loop() {
    std::unique_lock lock(mu_);
    while (!stopping_) {
        TemplateSlot* needy = nullptr;
        if (live_.size() + creating_ < options_.max_live) {
            for (auto& [id, slot] : templates_) {
                if (slot.warm.size() < std::max(options_.warm_target, slot.waiters.size())) {
                    needy = &slot;
                    break;
                }
            }
        }
        if (!needy) {
            cv_.wait(lock);
            continue;
        }
        try {
            auto env = create_locked(*needy, lock);
            if (stopping_) {
                live_.erase(env->env_id());
                identities_.erase(env->net_identity());
                lock.unlock();
                driver_.dispose(*env);
                return;
            }
            needy->warm.push_back(std::move(env));
            cv_.notify_all();
        } catch (const std::exception&) {
            // Creation failed; retry when something changes.
            cv_.wait_for(lock, std::chrono::milliseconds(200));
        }
    }
}

void SandboxManager::shutdown() {
    {
        std::lock_guard lock(mu_);
        if (stopping_ && !replenisher_.joinable()) return;
        stopping_ = true;
    }
    cv_.notify_all();
    if (replenisher_.joinable()) replenisher_.join();
    std::vector<std::shared_ptr<Environment>> all;
    {
        std::lock_guard lock(mu_);
        for (const auto& [id, env] : live_) all.push_back(env);
    }
    for (const auto& env : all) destroy(env);
}

std::optional<checkpointd::ProcessState> SandboxManager::read_process(const std::string& target) {
    if (!target.starts_with("sim:")) throw Error("sandbox resolves sim:<env>:<pid> targets, got " + target);
    const auto colon = target.rfind(':');
    const auto env_id = target.substr(4, colon - 4);
    int pid = 0;
    try {
        pid = std::stoi(target.substr(colon + 1));
    } catch (const std::exception&) {
        throw Error("bad process reference " + target);
    }
    const auto env = find_environment(env_id);
    if (!env) return std::nullopt;
    return env->process_state(pid);
}

}  // namespace honeytrace::sandbox
