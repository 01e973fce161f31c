#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "honeytrace/common/event.hpp"
#include "honeytrace/common/types.hpp"

namespace honeytrace::checkpointd {

struct MemoryRegion {
    std::uint64_t base = 0;
    std::string permissions;  // e.g. "r-x", "rw-"
    Bytes content;

    std::uint64_t size() const { return content.size(); }
    friend bool operator==(const MemoryRegion&, const MemoryRegion&) = default;
};

struct Descriptor {
    int number = 0;
    std::string kind;    // file, socket, pipe, tty
    std::string target;  // path or endpoint description

    friend bool operator==(const Descriptor&, const Descriptor&) = default;
};

/// Resource state of one process at a quiescent point.
struct ProcessState {
    std::map<std::string, std::uint64_t> registers;
    std::vector<MemoryRegion> regions;
    std::vector<Descriptor> descriptors;

    friend bool operator==(const ProcessState&, const ProcessState&) = default;
};

struct Snapshot {
    std::string snapshot_id;
    std::uint64_t request_id = 0;
    std::string session_id;
    std::string trace_id;
    std::string target;
    std::uint64_t trigger_seq = 0;
    Timestamp taken_at;
    ProcessState state;

    /// Manifest document; region bytes are stored beside it.
    json manifest() const;
};

/// Resolves a process reference to its current state; nullopt when the process is gone.
class ProcessStateProvider {
public:
    virtual ~ProcessStateProvider() = default;
    virtual std::optional<ProcessState> read_process(const std::string& target) = 0;
};

/// Persists snapshots as `<root>/<snapshot_id>/manifest.json` plus `region-NNN.bin` files.
/// Directories are staged under a temporary name and renamed into place, so a visible
/// snapshot is always complete and never rewritten.
class SnapshotStore {
public:
    explicit SnapshotStore(std::filesystem::path root);

    void persist(const Snapshot& snapshot);
    Snapshot fetch(const std::string& snapshot_id) const;
    bool contains(const std::string& snapshot_id) const;
    std::vector<std::string> list() const;
    const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path root_;
    mutable std::mutex mu_;
};

/// Printable ASCII runs of at least `min_len` characters, as the `strings` tool reports them.
std::vector<std::string> printable_strings(std::span<const std::uint8_t> bytes, std::size_t min_len = 4);

}  // namespace honeytrace::checkpointd
