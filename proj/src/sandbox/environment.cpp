#include "honeytrace/sandbox/environment.hpp"

#include <fstream>

#include "honeytrace/common/fileio.hpp"
#include "honeytrace/common/lexer.hpp"

namespace honeytrace::sandbox {

namespace fs = std::filesystem;

IdentityScheme IdentityScheme::parse(std::string_view cidr) {
    const auto slash = cidr.find('/');
    if (slash == std::string_view::npos) throw Error("network must be <ipv4>/<prefix>: " + std::string(cidr));
    const auto net = Ipv4::parse(cidr.substr(0, slash));
    int prefix = -1;
    try {
        prefix = std::stoi(std::string(cidr.substr(slash + 1)));
    } catch (const std::exception&) {
    }
    if (!net || prefix < 8 || prefix > 30) throw Error("bad network " + std::string(cidr) + " (prefix 8..30)");
    const std::uint32_t mask = prefix == 0 ? 0 : ~std::uint32_t{0} << (32 - prefix);
    return {Ipv4{net->value & mask}, prefix};
}

std::uint32_t IdentityScheme::host_count() const { return (std::uint32_t{1} << (32 - prefix)) - 2; }

void EnvironmentTemplate::validate() const {
    if (template_id.empty()) throw Error("template id is empty");
    for (const auto& img : baseline_images)
        if (!baseline_tree.contains(img)) throw Error("template " + template_id + ": image " + img + " not in tree");
}

std::vector<Bytes> EnvironmentTemplate::image_bytes() const {
    std::vector<Bytes> out;
    for (const auto& img : baseline_images) out.push_back(baseline_tree.at(img));
    return out;
}

EnvironmentTemplate EnvironmentTemplate::load(const fs::path& dir) {
    EnvironmentTemplate t;
    const auto conf = dir / "template.conf";
    std::ifstream in(conf);
    if (!in) throw Error("cannot open " + conf.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto toks = tokenize_line(line);
        if (toks.empty()) continue;
        const auto& key = toks[0].text;
        if (toks.size() != 2) throw ParseError(conf.string(), lineno, "expected '<key> <value>'");
        if (key == "id") {
            t.template_id = toks[1].text;
        } else if (key == "network") {
            try {
                t.identity = IdentityScheme::parse(toks[1].text);
            } catch (const Error& e) {
                throw ParseError(conf.string(), lineno, e.what());
            }
        } else if (key == "image") {
            t.baseline_images.insert(fsvault::normalize_path(toks[1].text));
        } else {
            throw ParseError(conf.string(), lineno, "unknown key '" + key + "'");
        }
    }
    if (t.template_id.empty()) t.template_id = dir.filename().string();

    const auto rootfs = dir / "rootfs";
    if (fs::exists(rootfs)) {
        for (const auto& entry : fs::recursive_directory_iterator(rootfs)) {
            if (!entry.is_regular_file()) continue;
            const auto rel = fs::relative(entry.path(), rootfs).generic_string();
            t.baseline_tree.emplace(fsvault::normalize_path("/" + rel), read_file(entry.path()));
        }
    }
    t.validate();
    return t;
}

std::string_view to_string(EnvState s) {
    switch (s) {
        case EnvState::warm: return "warm";
        case EnvState::assigned: return "assigned";
        case EnvState::destroyed: return "destroyed";
    }
    return "?";
}

Environment::Environment(std::string env_id, const EnvironmentTemplate& tmpl, Ipv4 identity)
    : env_id_(std::move(env_id)), template_id_(tmpl.template_id), identity_(identity), root_(tmpl.baseline_tree) {}

EnvState Environment::state() const {
    std::lock_guard lock(mu_);
    return state_;
}

void Environment::set_state(EnvState s) {
    std::lock_guard lock(mu_);
    state_ = s;
}

void Environment::set_fs_listener(FsListener listener) {
    std::lock_guard lock(mu_);
    listener_ = std::move(listener);
}

fsvault::FileTree Environment::root() const {
    std::lock_guard lock(mu_);
    return root_;
}

std::optional<Bytes> Environment::read_file(const std::string& path) const {
    const auto p = fsvault::normalize_path(path);
    std::lock_guard lock(mu_);
    const auto it = root_.find(p);
    if (it == root_.end()) return std::nullopt;
    return it->second;
}

void Environment::write_file(const std::string& path, Bytes content) {
    const auto p = fsvault::normalize_path(path);
    FsListener listener;
    fsvault::RawChange change;
    {
        std::lock_guard lock(mu_);
        if (state_ == EnvState::destroyed) throw Error("environment " + env_id_ + " is destroyed");
        const auto it = root_.find(p);
        change.kind = it == root_.end() ? fsvault::ChangeKind::create : fsvault::ChangeKind::modify;
        change.path = p;
        change.content = content;
        change.timestamp = Clock::process().now();
        root_[p] = std::move(content);
        listener = listener_;
    }
    if (listener) listener(change);
}

bool Environment::delete_file(const std::string& path) {
    const auto p = fsvault::normalize_path(path);
    FsListener listener;
    fsvault::RawChange change;
    {
        std::lock_guard lock(mu_);
        if (state_ == EnvState::destroyed) throw Error("environment " + env_id_ + " is destroyed");
        if (root_.erase(p) == 0) return false;
        change.kind = fsvault::ChangeKind::remove;
        change.path = p;
        change.timestamp = Clock::process().now();
        listener = listener_;
    }
    if (listener) listener(change);
    return true;
}

std::optional<std::string> Environment::resolve_command(const std::string& name) const {
    if (name.empty()) return std::nullopt;
    std::lock_guard lock(mu_);
    if (name.find('/') != std::string::npos) {
        std::string p;
        try {
            p = fsvault::normalize_path(name.front() == '/' ? name : "/" + name);
        } catch (const Error&) {
            return std::nullopt;
        }
        return root_.contains(p) ? std::optional(p) : std::nullopt;
    }
    for (const char* dir : {"/bin/", "/usr/bin/"}) {
        const auto p = dir + name;
        if (root_.contains(p)) return p;
    }
    return std::nullopt;
}

int Environment::spawn(const std::string& command_line, const std::string& image_path, const Bytes& image) {
    std::lock_guard lock(mu_);
    if (state_ == EnvState::destroyed) throw Error("environment " + env_id_ + " is destroyed");
    SimProcess p;
    p.pid = next_pid_++;
    p.command_line = command_line;
    p.image_path = image_path;
    auto& st = p.state;
    st.registers = {{"pc", kTextBase}, {"sp", kStackBase + kStackSize - 16}, {"rax", 0}, {"rdi", 0}, {"rsi", 0}};
    st.regions.push_back({kTextBase, "r-x", image});
    st.regions.push_back({kDataBase, "rw-", Bytes(kDataSize, 0)});
    st.regions.push_back({kStackBase, "rw-", Bytes(kStackSize, 0)});
    st.descriptors = {{0, "tty", "/dev/pts/0"}, {1, "tty", "/dev/pts/0"}, {2, "tty", "/dev/pts/0"}};
    const int pid = p.pid;
    processes_.emplace(pid, std::move(p));
    return pid;
}

void Environment::write_memory(int pid, std::uint64_t address, std::span<const std::uint8_t> bytes) {
    std::lock_guard lock(mu_);
    const auto it = processes_.find(pid);
    if (it == processes_.end()) throw NotFound("no process " + std::to_string(pid) + " in " + env_id_);
    auto& st = it->second.state;
    st.registers["pc"] += 4;
    for (auto& r : st.regions) {
        if (address < r.base || address + bytes.size() > r.base + r.size()) continue;
        if (r.permissions.size() < 2 || r.permissions[1] != 'w')
            throw Error("write to read-only region at 0x" + std::to_string(address));
        std::copy(bytes.begin(), bytes.end(), r.content.begin() + static_cast<std::ptrdiff_t>(address - r.base));
        return;
    }
    throw Error("write outside mapped regions");
}

std::optional<checkpointd::ProcessState> Environment::process_state(int pid) const {
    std::lock_guard lock(mu_);
    const auto it = processes_.find(pid);
    if (it == processes_.end()) return std::nullopt;
    return it->second.state;
}

std::string Environment::process_ref(int pid) const { return "sim:" + env_id_ + ":" + std::to_string(pid); }

std::size_t Environment::process_count() const {
    std::lock_guard lock(mu_);
    return processes_.size();
}

void Environment::discard() {
    std::lock_guard lock(mu_);
    state_ = EnvState::destroyed;
    root_.clear();
    processes_.clear();
    listener_ = nullptr;
}

std::shared_ptr<Environment> ScriptedDriver::create(const EnvironmentTemplate& tmpl, std::string env_id, Ipv4 identity) {
    return std::make_shared<Environment>(std::move(env_id), tmpl, identity);
}

void ScriptedDriver::dispose(Environment& env) { env.discard(); }

std::shared_ptr<Environment> ExternalRuntimeDriver::create(const EnvironmentTemplate&, std::string, Ipv4) {
    throw Error("environment driver '" + name() + "' is not available in this build");
}

void ExternalRuntimeDriver::dispose(Environment&) {
    throw Error("environment driver '" + name() + "' is not available in this build");
}

}  // namespace honeytrace::sandbox
