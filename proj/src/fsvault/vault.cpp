#include "honeytrace/fsvault/vault.hpp"

#include <algorithm>
#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <sstream>

#include "honeytrace/common/fileio.hpp"
#include "honeytrace/common/lexer.hpp"

namespace honeytrace::fsvault {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kCommitMagic = "HTCOMMIT 1";

bool safe_session_id(std::string_view id) {
    return !id.empty() && id != "." && id != ".." && std::all_of(id.begin(), id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    });
}

std::uint64_t parse_u64(std::string_view text) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || p != text.data() + text.size()) throw Error("bad integer: " + std::string(text));
    return v;
}

std::string record_name(const Commit& c) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%08" PRIu64 "-", c.seq);
    return buf + c.commit_id.hex();
}

}  // namespace

std::string_view to_string(ChangeKind kind) {
    switch (kind) {
        case ChangeKind::create: return "create";
        case ChangeKind::modify: return "modify";
        case ChangeKind::remove: return "delete";
    }
    return "?";
}

std::string normalize_path(std::string_view path) {
    if (path.find('\0') != std::string_view::npos || path.find('\n') != std::string_view::npos)
        throw Error("path contains NUL or newline");
    std::vector<std::string_view> parts;
    std::size_t i = 0;
    while (i <= path.size()) {
        const auto slash = path.find('/', i);
        const auto end = slash == std::string_view::npos ? path.size() : slash;
        const auto part = path.substr(i, end - i);
        if (part.empty() || part == ".") {
            // skip
        } else if (part == "..") {
            if (parts.empty()) throw Error("path escapes root: " + std::string(path));
            parts.pop_back();
        } else {
            parts.push_back(part);
        }
        if (slash == std::string_view::npos) break;
        i = slash + 1;
    }
    if (parts.empty()) throw Error("path names the root: " + std::string(path));
    std::string out;
    for (auto p : parts) {
        out.push_back('/');
        out.append(p);
    }
    return out;
}

ObjectId tree_digest(const Tree& tree) {
    Sha512 h;
    for (const auto& [path, digest] : tree) {
        h.update(digest.hex());
        h.update(" ");
        h.update(path);
        h.update("\n");
    }
    const auto full = h.finalize();
    ObjectId id;
    std::copy_n(full.begin(), id.bytes.size(), id.bytes.begin());
    return id;
}

ObjectId tree_digest(const FileTree& tree) {
    Tree t;
    for (const auto& [path, bytes] : tree) t.emplace(path, object_id(bytes));
    return tree_digest(t);
}

std::string Commit::encode() const {
    std::ostringstream out;
    out << kCommitMagic << '\n';
    out << "parent " << (parent_id ? parent_id->hex() : "-") << '\n';
    out << "session " << session_id << '\n';
    out << "seq " << seq << '\n';
    out << "timestamp " << timestamp.micros << '\n';
    out << "message " << quote(message) << '\n';
    out << "tree " << tree.size() << '\n';
    for (const auto& [path, digest] : tree) out << digest.hex() << ' ' << quote(path) << '\n';
    return out.str();
}

Commit Commit::decode(std::string_view record) {
    Commit c;
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    while (pos < record.size()) {
        const auto nl = record.find('\n', pos);
        if (nl == std::string_view::npos) throw Error("commit record lacks trailing newline");
        lines.push_back(record.substr(pos, nl - pos));
        pos = nl + 1;
    }
    if (lines.size() < 7 || lines[0] != kCommitMagic) throw Error("not a commit record");
    auto field = [&](std::size_t idx, std::string_view key) {
        auto toks = tokenize_line(lines[idx]);
        if (toks.size() != 2 || toks[0].text != key) throw Error("commit record: expected " + std::string(key));
        return toks[1].text;
    };
    const auto parent = field(1, "parent");
    if (parent != "-") c.parent_id = ObjectId::from_hex(parent);
    c.session_id = field(2, "session");
    c.seq = parse_u64(field(3, "seq"));
    const auto ts = field(4, "timestamp");
    c.timestamp = Timestamp{std::stoll(ts)};
    c.message = field(5, "message");
    const auto count = parse_u64(field(6, "tree"));
    if (lines.size() != 7 + count) throw Error("commit record: tree size mismatch");
    for (std::size_t i = 0; i < count; ++i) {
        auto toks = tokenize_line(lines[7 + i]);
        if (toks.size() != 2 || !toks[1].quoted) throw Error("commit record: bad tree entry");
        c.tree.emplace(toks[1].text, ObjectId::from_hex(toks[0].text));
    }
    c.commit_id = object_id(record);
    return c;
}

json Commit::to_json() const {
    json files = json::object();
    for (const auto& [path, digest] : tree) files[path] = digest.hex();
    return json{{"commit_id", commit_id.hex()},
                {"parent_id", parent_id ? json(parent_id->hex()) : json(nullptr)},
                {"session_id", session_id},
                {"seq", seq},
                {"message", message},
                {"timestamp", timestamp.iso8601()},
                {"tree_digest", tree_digest(tree).hex()},
                {"tree", files}};
}

json Commit::event_body() const {
    return json{{"commit_id", commit_id.hex()},
                {"parent_id", parent_id ? json(parent_id->hex()) : json(nullptr)},
                {"seq", seq},
                {"baseline", !parent_id},
                {"message", message},
                {"files", tree.size()},
                {"tree_digest", tree_digest(tree).hex()}};
}

json ChangeSet::to_json() const {
    return json{{"added", added}, {"modified", modified}, {"deleted", deleted}};
}

Tree apply_changes(const Tree& base, const ChangeSet& changes, const Tree& target) {
    Tree out = base;
    for (const auto& p : changes.deleted) out.erase(p);
    for (const auto* set : {&changes.added, &changes.modified})
        for (const auto& p : *set) {
            const auto it = target.find(p);
            if (it == target.end()) throw Error("change set names a path missing from the target: " + p);
            out[p] = it->second;
        }
    return out;
}

Vault::Vault(fs::path root) : root_(std::move(root)) {
    fs::create_directories(root_ / "objects");
    fs::create_directories(root_ / "commits");
    load();
}

void Vault::load() {
    for (const auto& dir : fs::directory_iterator(root_ / "commits")) {
        if (!dir.is_directory()) continue;
        std::vector<fs::path> files;
        for (const auto& f : fs::directory_iterator(dir.path()))
            if (f.is_regular_file() && f.path().filename().string().find(".tmp.") == std::string::npos)
                files.push_back(f.path());
        std::sort(files.begin(), files.end());
        auto& chain = chains_[dir.path().filename().string()];
        for (const auto& f : files) {
            auto c = Commit::decode(read_text(f));
            if (c.seq != chain.size() || f.filename().string() != record_name(c))
                throw Error("commit chain out of order at " + f.string());
            if (!chain.empty() && c.parent_id != chain.back().commit_id)
                throw Error("broken parent link at " + f.string());
            by_id_[c.commit_id] = {c.session_id, chain.size()};
            chain.push_back(std::move(c));
        }
    }
}

fs::path Vault::blob_path(const ObjectId& id) const {
    const auto hex = id.hex();
    return root_ / "objects" / hex.substr(0, 2) / hex;
}

ObjectId Vault::put_blob(std::span<const std::uint8_t> bytes) {
    const auto id = object_id(bytes);
    const auto path = blob_path(id);
    std::lock_guard lock(blob_mu_);
    if (fs::exists(path)) {
        const auto existing = read_file(path);
        if (!std::equal(existing.begin(), existing.end(), bytes.begin(), bytes.end()))
            throw DigestCollision("object id collision on " + id.hex());
        return id;
    }
    write_file_atomic(path, bytes);
    return id;
}

ObjectId Vault::put_blob(std::string_view bytes) {
    return put_blob(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

Bytes Vault::get_blob(const ObjectId& id) const {
    const auto path = blob_path(id);
    if (!fs::exists(path)) throw NotFound("no blob " + id.hex());
    return read_file(path);
}

bool Vault::has_blob(const ObjectId& id) const { return fs::exists(blob_path(id)); }

Commit Vault::append_commit(Commit commit) {
    const auto record = commit.encode();
    commit.commit_id = object_id(record);
    const auto path = root_ / "commits" / commit.session_id / record_name(commit);
    {
        std::unique_lock lock(mu_);
        if (const auto it = by_id_.find(commit.commit_id); it != by_id_.end())
            throw DigestCollision("commit id collision on " + commit.commit_id.hex());
        auto& chain = chains_[commit.session_id];
        const auto expected_parent = chain.empty() ? std::nullopt : std::optional(chain.back().commit_id);
        if (commit.parent_id != expected_parent) throw Error("concurrent append to session " + commit.session_id);
        write_file_atomic(path, record);
        by_id_[commit.commit_id] = {commit.session_id, chain.size()};
        chain.push_back(commit);
    }
    return commit;
}

Commit Vault::record_baseline(const std::string& session_id, const FileTree& baseline) {
    if (!safe_session_id(session_id)) throw Error("unsafe session id: " + session_id);
    {
        std::shared_lock lock(mu_);
        if (const auto it = chains_.find(session_id); it != chains_.end() && !it->second.empty())
            throw Error("session already has a baseline: " + session_id);
    }
    Commit c;
    c.session_id = session_id;
    c.seq = 0;
    c.timestamp = Clock::process().now();
    c.message = "baseline";
    for (const auto& [path, bytes] : baseline) c.tree.emplace(normalize_path(path), put_blob(bytes));
    return append_commit(std::move(c));
}

std::optional<Commit> Vault::record_event(const FsEvent& event) {
    const auto path = normalize_path(event.path);
    if (path != event.path) throw Error("event path is not normalized: " + event.path);
    if (event.kind == ChangeKind::remove && event.content_digest) throw Error("delete event carries a digest");
    if (event.kind != ChangeKind::remove) {
        if (!event.content_digest) throw Error("create/modify event lacks a digest");
        if (!has_blob(*event.content_digest)) throw Error("event references unknown blob");
    }

    Commit parent;
    {
        std::shared_lock lock(mu_);
        const auto it = chains_.find(event.session_id);
        if (it == chains_.end() || it->second.empty()) throw Error("no baseline for session " + event.session_id);
        parent = it->second.back();
    }

    Commit child;
    child.session_id = event.session_id;
    child.parent_id = parent.commit_id;
    child.seq = parent.seq + 1;
    child.timestamp = event.timestamp;
    child.tree = parent.tree;
    child.message = std::string(to_string(event.kind)) + " " + path;

    if (event.kind == ChangeKind::remove) {
        if (child.tree.erase(path) == 0) return std::nullopt;
    } else {
        const auto it = child.tree.find(path);
        if (it != child.tree.end() && it->second == *event.content_digest) return std::nullopt;
        child.tree[path] = *event.content_digest;
    }
    return append_commit(std::move(child));
}

std::vector<Commit> Vault::history(const std::string& session_id) const {
    std::shared_lock lock(mu_);
    const auto it = chains_.find(session_id);
    return it == chains_.end() ? std::vector<Commit>{} : it->second;
}

std::optional<Commit> Vault::head(const std::string& session_id) const {
    std::shared_lock lock(mu_);
    const auto it = chains_.find(session_id);
    if (it == chains_.end() || it->second.empty()) return std::nullopt;
    return it->second.back();
}

Commit Vault::get_commit(const ObjectId& commit_id) const {
    std::shared_lock lock(mu_);
    const auto it = by_id_.find(commit_id);
    if (it == by_id_.end()) throw NotFound("unknown commit " + commit_id.hex());
    return chains_.at(it->second.first).at(it->second.second);
}

std::optional<Commit> Vault::find_commit(std::string_view id_or_prefix) const {
    std::shared_lock lock(mu_);
    std::optional<Commit> found;
    for (const auto& [id, loc] : by_id_) {
        if (!id.hex().starts_with(id_or_prefix)) continue;
        if (found) throw Error("ambiguous commit prefix: " + std::string(id_or_prefix));
        found = chains_.at(loc.first).at(loc.second);
    }
    return found;
}

std::vector<std::string> Vault::sessions() const {
    std::shared_lock lock(mu_);
    std::vector<std::string> out;
    for (const auto& [sid, chain] : chains_)
        if (!chain.empty()) out.push_back(sid);
    std::sort(out.begin(), out.end());
    return out;
}

FileTree Vault::materialize(const ObjectId& commit_id) const {
    const auto c = get_commit(commit_id);
    FileTree out;
    for (const auto& [path, digest] : c.tree) out.emplace(path, get_blob(digest));
    return out;
}

FileTree Vault::checkout(const ObjectId& commit_id, const fs::path& destination) const {
    auto files = materialize(commit_id);
    if (fs::exists(destination) && !fs::is_empty(destination))
        throw Error("checkout destination is not empty: " + destination.string());
    fs::create_directories(destination);
    for (const auto& [path, bytes] : files) write_file_atomic(destination / path.substr(1), bytes);
    return files;
}

ChangeSet Vault::diff(const ObjectId& a, const ObjectId& b) const {
    const auto ta = get_commit(a).tree;
    const auto tb = get_commit(b).tree;
    ChangeSet out;
    for (const auto& [path, digest] : tb) {
        const auto it = ta.find(path);
        if (it == ta.end())
            out.added.insert(path);
        else if (it->second != digest)
            out.modified.insert(path);
    }
    for (const auto& [path, _] : ta)
        if (!tb.contains(path)) out.deleted.insert(path);
    return out;
}

}  // namespace honeytrace::fsvault
