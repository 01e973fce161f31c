#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "honeytrace/checkpointd/snapshot.hpp"
#include "honeytrace/common/net.hpp"
#include "honeytrace/fsvault/watcher.hpp"

namespace honeytrace::sandbox {

/// Private IPv4 block from which environments draw their network identities.
struct IdentityScheme {
    Ipv4 network;
    int prefix = 16;

    std::string str() const { return network.str() + "/" + std::to_string(prefix); }
    static IdentityScheme parse(std::string_view cidr);
    std::uint32_t host_count() const;
};

struct EnvironmentTemplate {
    std::string template_id;
    fsvault::FileTree baseline_tree;
    std::set<std::string> baseline_images;  // paths into baseline_tree
    IdentityScheme identity{Ipv4{0x0a4d0000}, 16};  // 10.77.0.0/16

    /// Throws if an image path is missing from the tree.
    void validate() const;
    std::vector<Bytes> image_bytes() const;

    /// Directory convention:
    ///   <dir>/template.conf   "id <name>", "network <cidr>", one "image <path>" per executable
    ///   <dir>/rootfs/...      copied verbatim as the baseline tree
    static EnvironmentTemplate load(const std::filesystem::path& dir);
};

enum class EnvState { warm, assigned, destroyed };
std::string_view to_string(EnvState s);

/// Layout of a simulated process.
inline constexpr std::uint64_t kTextBase = 0x400000;
inline constexpr std::uint64_t kDataBase = 0x600000;
inline constexpr std::uint64_t kDataSize = 4096;
inline constexpr std::uint64_t kStackBase = 0x7ffff000;
inline constexpr std::uint64_t kStackSize = 4096;

struct SimProcess {
    int pid = 0;
    std::string command_line;
    std::string image_path;
    checkpointd::ProcessState state;
};

/// A simulated isolated environment: live file tree plus process table. Filesystem mutations
/// are reported to the listener as raw change notifications.
class Environment {
public:
    using FsListener = std::function<void(const fsvault::RawChange&)>;

    Environment(std::string env_id, const EnvironmentTemplate& tmpl, Ipv4 identity);

    const std::string& env_id() const { return env_id_; }
    const std::string& template_id() const { return template_id_; }
    Ipv4 net_identity() const { return identity_; }
    EnvState state() const;
    void set_state(EnvState s);

    void set_fs_listener(FsListener listener);
    fsvault::FileTree root() const;
    std::optional<Bytes> read_file(const std::string& path) const;
    void write_file(const std::string& path, Bytes content);
    /// False when the path does not exist.
    bool delete_file(const std::string& path);
    /// Resolves a command name against /bin and /usr/bin unless it is a path.
    std::optional<std::string> resolve_command(const std::string& name) const;

    int spawn(const std::string& command_line, const std::string& image_path, const Bytes& image);
    /// Throws if the range is outside the process's writable regions.
    void write_memory(int pid, std::uint64_t address, std::span<const std::uint8_t> bytes);
    std::optional<checkpointd::ProcessState> process_state(int pid) const;
    std::string process_ref(int pid) const;
    std::size_t process_count() const;

    /// Drops the live tree and processes.
    void discard();

private:
    std::string env_id_;
    std::string template_id_;
    Ipv4 identity_;
    mutable std::mutex mu_;
    EnvState state_ = EnvState::warm;
    fsvault::FileTree root_;
    std::map<int, SimProcess> processes_;
    int next_pid_ = 100;
    FsListener listener_;
};

/// Backend that creates and disposes of environments.
class EnvironmentDriver {
public:
    virtual ~EnvironmentDriver() = default;
    virtual std::shared_ptr<Environment> create(const EnvironmentTemplate& tmpl, std::string env_id, Ipv4 identity) = 0;
    virtual void dispose(Environment& env) = 0;
    virtual std::string name() const = 0;
};

/// In-process simulated environments.
class ScriptedDriver : public EnvironmentDriver {
public:
    std::shared_ptr<Environment> create(const EnvironmentTemplate& tmpl, std::string env_id, Ipv4 identity) override;
    void dispose(Environment& env) override;
    std::string name() const override { return "scripted"; }
};

/// Placeholder for a container-runtime backend. Every call fails.
class ExternalRuntimeDriver : public EnvironmentDriver {
public:
    explicit ExternalRuntimeDriver(std::string runtime) : runtime_(std::move(runtime)) {}
    std::shared_ptr<Environment> create(const EnvironmentTemplate& tmpl, std::string env_id, Ipv4 identity) override;
    void dispose(Environment& env) override;
    std::string name() const override { return "external:" + runtime_; }

private:
    std::string runtime_;
};

}  // namespace honeytrace::sandbox
