#include "honeytrace/checkpointd/snapshot.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>

#include "honeytrace/common/digest.hpp"
#include "honeytrace/common/fileio.hpp"

namespace honeytrace::checkpointd {

namespace fs = std::filesystem;

namespace {

std::string region_file(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "region-%03zu.bin", index);
    return buf;
}

std::string hex64(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "0x%016" PRIx64, v);
    return buf;
}

std::uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

bool safe_id(std::string_view id) {
    return !id.empty() && id.find('/') == std::string_view::npos && id != "." && id != ".." && !id.starts_with(".");
}

}  // namespace

json Snapshot::manifest() const {
    json regs = json::object();
    for (const auto& [name, value] : state.registers) regs[name] = hex64(value);
    json regions = json::array();
    for (std::size_t i = 0; i < state.regions.size(); ++i) {
        const auto& r = state.regions[i];
        regions.push_back({{"base", hex64(r.base)},
                           {"size", r.size()},
                           {"permissions", r.permissions},
                           {"file", region_file(i)},
                           {"sha512", sha512(r.content).hex()}});
    }
    json fds = json::array();
    for (const auto& d : state.descriptors) fds.push_back({{"fd", d.number}, {"kind", d.kind}, {"target", d.target}});
    return json{{"v", 1},
                {"snapshot_id", snapshot_id},
                {"request_id", request_id},
                {"session_id", session_id},
                {"trace_id", trace_id},
                {"target", target},
                {"trigger_seq", trigger_seq},
                {"taken_at", taken_at.iso8601()},
                {"taken_at_us", taken_at.micros},
                {"registers", regs},
                {"regions", regions},
                {"descriptors", fds}};
}

SnapshotStore::SnapshotStore(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

void SnapshotStore::persist(const Snapshot& snapshot) {
    if (!safe_id(snapshot.snapshot_id)) throw Error("unsafe snapshot id: " + snapshot.snapshot_id);
    std::lock_guard lock(mu_);
    const auto final_dir = root_ / snapshot.snapshot_id;
    if (fs::exists(final_dir)) throw Error("snapshot already exists: " + snapshot.snapshot_id);
    const auto staging = root_ / ("." + snapshot.snapshot_id + ".staging");
    fs::remove_all(staging);
    fs::create_directories(staging);
    for (std::size_t i = 0; i < snapshot.state.regions.size(); ++i)
        write_file_atomic(staging / region_file(i), snapshot.state.regions[i].content);
    write_file_atomic(staging / "manifest.json", snapshot.manifest().dump(2));
    fs::rename(staging, final_dir);
}

Snapshot SnapshotStore::fetch(const std::string& snapshot_id) const {
    if (!safe_id(snapshot_id)) throw NotFound("no snapshot " + snapshot_id);
    const auto dir = root_ / snapshot_id;
    if (!fs::exists(dir / "manifest.json")) throw NotFound("no snapshot " + snapshot_id);
    const auto m = json::parse(read_text(dir / "manifest.json"));
    Snapshot s;
    s.snapshot_id = m.at("snapshot_id").get<std::string>();
    s.request_id = m.at("request_id").get<std::uint64_t>();
    s.session_id = m.at("session_id").get<std::string>();
    s.trace_id = m.at("trace_id").get<std::string>();
    s.target = m.at("target").get<std::string>();
    s.trigger_seq = m.at("trigger_seq").get<std::uint64_t>();
    s.taken_at = Timestamp{m.at("taken_at_us").get<std::int64_t>()};
    for (const auto& [name, value] : m.at("registers").items()) s.state.registers[name] = parse_hex64(value);
    for (const auto& r : m.at("regions")) {
        MemoryRegion region;
        region.base = parse_hex64(r.at("base").get<std::string>());
        region.permissions = r.at("permissions").get<std::string>();
        region.content = read_file(dir / r.at("file").get<std::string>());
        if (region.content.size() != r.at("size").get<std::uint64_t>())
            throw Error("region size mismatch in snapshot " + snapshot_id);
        s.state.regions.push_back(std::move(region));
    }
    for (const auto& d : m.at("descriptors"))
        s.state.descriptors.push_back({d.at("fd").get<int>(), d.at("kind").get<std::string>(),
                                       d.at("target").get<std::string>()});
    return s;
}

bool SnapshotStore::contains(const std::string& snapshot_id) const {
    return safe_id(snapshot_id) && fs::exists(root_ / snapshot_id / "manifest.json");
}

std::vector<std::string> SnapshotStore::list() const {
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(root_)) {
        const auto name = e.path().filename().string();
        if (e.is_directory() && !name.starts_with(".")) out.push_back(name);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::string> printable_strings(std::span<const std::uint8_t> bytes, std::size_t min_len) {
    std::vector<std::string> out;
    std::string cur;
    for (const auto b : bytes) {
        if (b >= 0x20 && b < 0x7f) {
            cur.push_back(static_cast<char>(b));
            continue;
        }
        if (cur.size() >= min_len) out.push_back(cur);
        cur.clear();
    }
    if (cur.size() >= min_len) out.push_back(cur);
    return out;
}

}  // namespace honeytrace::checkpointd
