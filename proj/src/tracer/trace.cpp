#include "honeytrace/tracer/trace.hpp"

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cstring>

#include <fcntl.h>
#include <unistd.h>

#include "honeytrace/common/fileio.hpp"

namespace honeytrace::tracer {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'H', 'T', 'T', 'R', 'A', 'C', 'E', '\0'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kRecEvent = 1, kRecSnapshot = 2, kRecSeal = 3;

class LeWriter {
public:
    void u8(std::uint8_t v) { out.push_back(v); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void bytes(std::span<const std::uint8_t> b) { out.insert(out.end(), b.begin(), b.end()); }
    void bytes(std::string_view s) { out.insert(out.end(), s.begin(), s.end()); }
    Bytes out;

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
};

class LeReader {
public:
    LeReader(std::span<const std::uint8_t> in) : in_(in) {}
    std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    std::span<const std::uint8_t> take(std::size_t n) {
        if (in_.size() - pos_ < n) throw Error("truncated trace record");
        auto s = in_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == in_.size(); }

private:
    std::uint64_t get(int n) {
        auto s = take(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = n - 1; i >= 0; --i) v = v << 8 | s[static_cast<std::size_t>(i)];
        return v;
    }
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

void write_fd(const Fd& fd, std::span<const std::uint8_t> data) {
    std::size_t done = 0;
    while (done < data.size()) {
        const ssize_t n = ::write(fd.get(), data.data() + done, data.size() - done);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw Error(std::string("trace write failed: ") + std::strerror(errno));
        }
        done += static_cast<std::size_t>(n);
    }
}

}  // namespace

std::string_view to_string(Verdict v) { return v == Verdict::trusted ? "trusted" : "alien"; }

std::string_view to_string(TraceKind k) {
    switch (k) {
        case TraceKind::instruction: return "instruction";
        case TraceKind::mem_read: return "mem_read";
        case TraceKind::mem_write: return "mem_write";
    }
    return "?";
}

std::string_view to_string(SnapshotStatus s) {
    switch (s) {
        case SnapshotStatus::ok: return "ok";
        case SnapshotStatus::failed: return "failed";
        case SnapshotStatus::timeout: return "timeout";
        case SnapshotStatus::unreachable: return "unreachable";
    }
    return "?";
}

Digest512 hash_image(std::span<const std::uint8_t> image) { return sha512(image); }

WhitelistSet build_whitelist(const std::string& template_id, const std::vector<Bytes>& images) {
    WhitelistSet w;
    w.template_id = template_id;
    for (const auto& img : images) w.digests.insert(hash_image(img));
    return w;
}

json ExecEvent::to_json() const {
    json doc{{"session_id", session_id},
             {"command_line", command_line},
             {"image_digest", image_digest.hex()},
             {"verdict", std::string(to_string(verdict))},
             {"timestamp", timestamp.iso8601()},
             {"timestamp_us", timestamp.micros}};
    doc["failure"] = failure ? json(*failure) : json(nullptr);
    doc["trace_id"] = trace_id ? json(*trace_id) : json(nullptr);
    return doc;
}

ExecEvent ExecEvent::from_json(const json& doc) {
    ExecEvent e;
    e.session_id = doc.at("session_id").get<std::string>();
    e.command_line = doc.at("command_line").get<std::string>();
    e.image_digest = Digest512::from_hex(doc.at("image_digest").get<std::string>());
    e.verdict = doc.at("verdict").get<std::string>() == "alien" ? Verdict::alien : Verdict::trusted;
    e.timestamp = Timestamp{doc.at("timestamp_us").get<std::int64_t>()};
    if (!doc.at("failure").is_null()) e.failure = doc.at("failure").get<std::string>();
    if (!doc.at("trace_id").is_null()) e.trace_id = doc.at("trace_id").get<std::string>();
    return e;
}

std::size_t TraceLog::mem_write_count() const {
    return static_cast<std::size_t>(
        std::count_if(events.begin(), events.end(), [](const TraceEvent& e) { return e.kind == TraceKind::mem_write; }));
}

TraceFileWriter::TraceFileWriter(const fs::path& dir, const TraceLog& header) {
    fs::create_directories(dir);
    path_ = dir / (header.trace_id + ".trace");
    fd_.reset(::open(path_.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0644));
    if (!fd_) throw Error("cannot create trace log " + path_.string() + ": " + std::strerror(errno));
    auto idx = dir / (header.trace_id + ".idx");
    index_fd_.reset(::open(idx.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644));
    if (!index_fd_) throw Error("cannot create trace index " + idx.string());

    const auto meta = json{{"trace_id", header.trace_id},
                           {"session_id", header.session_id},
                           {"target", header.target},
                           {"exec", header.exec.to_json()}}
                          .dump();
    LeWriter w;
    w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), sizeof kMagic));
    w.u16(kVersion);
    w.u32(static_cast<std::uint32_t>(meta.size()));
    w.bytes(meta);
    write_fd(fd_, w.out);
    offset_ = w.out.size();
}

void TraceFileWriter::write_record(std::uint8_t type, const Bytes& body, std::optional<std::uint64_t> index_seq) {
    LeWriter w;
    w.u32(static_cast<std::uint32_t>(body.size() + 1));
    w.u8(type);
    w.bytes(body);
    if (index_seq) {
        LeWriter ix;
        ix.u64(*index_seq);
        ix.u64(offset_);
        write_fd(index_fd_, ix.out);
    }
    write_fd(fd_, w.out);
    offset_ += w.out.size();
}

void TraceFileWriter::write_event(const TraceEvent& ev, std::uint64_t tick) {
    LeWriter w;
    w.u64(ev.seq);
    w.u8(static_cast<std::uint8_t>(ev.kind));
    w.u64(ev.address);
    w.u32(ev.size);
    w.u64(tick);
    w.u32(static_cast<std::uint32_t>(ev.detail.size()));
    w.bytes(ev.detail);
    w.u32(static_cast<std::uint32_t>(ev.data.size()));
    w.bytes(ev.data);
    write_record(kRecEvent, w.out, ev.seq);
}

void TraceFileWriter::write_snapshot(const SnapshotRef& ref) {
    LeWriter w;
    w.u64(ref.trigger_seq);
    w.u64(ref.request_id);
    w.u8(static_cast<std::uint8_t>(ref.status));
    w.u64(ref.requested_tick);
    w.u64(ref.resolved_tick);
    const auto id = ref.snapshot_id.value_or("");
    w.u16(static_cast<std::uint16_t>(id.size()));
    w.bytes(id);
    write_record(kRecSnapshot, w.out, std::nullopt);
}

void TraceFileWriter::write_seal(std::uint64_t event_count) {
    LeWriter w;
    w.u64(event_count);
    write_record(kRecSeal, w.out, std::nullopt);
    fd_.reset();
    index_fd_.reset();
}

TraceLog read_trace_file(const fs::path& path) {
    const auto bytes = read_file(path);
    LeReader r(bytes);
    const auto magic = r.take(sizeof kMagic);
    if (!std::equal(magic.begin(), magic.end(), reinterpret_cast<const std::uint8_t*>(kMagic)))
        throw Error("not a trace log: " + path.string());
    if (const auto v = r.u16(); v != kVersion) throw Error("unsupported trace log version " + std::to_string(v));
    const auto meta_len = r.u32();
    const auto meta_bytes = r.take(meta_len);
    const auto meta = json::parse(meta_bytes.begin(), meta_bytes.end());

    TraceLog log;
    log.trace_id = meta.at("trace_id").get<std::string>();
    log.session_id = meta.at("session_id").get<std::string>();
    log.target = meta.at("target").get<std::string>();
    log.exec = ExecEvent::from_json(meta.at("exec"));

    while (!r.done()) {
        const auto len = r.u32();
        if (len == 0) throw Error("empty trace record");
        LeReader rec(r.take(len));
        const auto type = rec.u8();
        if (type == kRecEvent) {
            TraceEvent ev;
            ev.seq = rec.u64();
            ev.kind = static_cast<TraceKind>(rec.u8());
            ev.address = rec.u64();
            ev.size = rec.u32();
            const auto tick = rec.u64();
            const auto d = rec.take(rec.u32());
            ev.detail.assign(d.begin(), d.end());
            const auto data = rec.take(rec.u32());
            ev.data.assign(data.begin(), data.end());
            log.events.push_back(std::move(ev));
            log.append_ticks.push_back(tick);
        } else if (type == kRecSnapshot) {
            SnapshotRef ref;
            ref.trigger_seq = rec.u64();
            ref.request_id = rec.u64();
            ref.status = static_cast<SnapshotStatus>(rec.u8());
            ref.requested_tick = rec.u64();
            ref.resolved_tick = rec.u64();
            const auto id = rec.take(rec.u16());
            if (!id.empty()) ref.snapshot_id = std::string(id.begin(), id.end());
            log.snapshot_refs.push_back(std::move(ref));
        } else if (type == kRecSeal) {
            if (rec.u64() != log.events.size()) throw Error("trace seal count mismatch in " + path.string());
            log.sealed = true;
        } else {
            throw Error("unknown trace record type " + std::to_string(type));
        }
    }
    return log;
}

std::uint64_t protocol_tick() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
}

}  // namespace honeytrace::tracer
