#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "honeytrace/common/digest.hpp"
#include "honeytrace/common/event.hpp"
#include "honeytrace/common/types.hpp"

namespace honeytrace::fsvault {

enum class ChangeKind { create, modify, remove };

std::string_view to_string(ChangeKind kind);

/// Lexically normalizes an environment path: absolute, no `.`/`..` components, no duplicate or
/// trailing separators. Throws Error for paths that escape the root or contain NUL/newline.
std::string normalize_path(std::string_view path);

/// path -> content digest
using Tree = std::map<std::string, ObjectId>;
/// path -> content bytes
using FileTree = std::map<std::string, Bytes>;

/// Digest over the sorted "<hex digest> <path>\n" lines of a tree.
ObjectId tree_digest(const Tree& tree);
ObjectId tree_digest(const FileTree& tree);

struct FsEvent {
    std::string session_id;
    ChangeKind kind = ChangeKind::create;
    std::string path;
    std::optional<ObjectId> content_digest;  // absent for remove
    Timestamp timestamp;
};

struct Commit {
    ObjectId commit_id;
    std::optional<ObjectId> parent_id;
    Tree tree;
    std::string session_id;
    std::uint64_t seq = 0;  // 0 for the baseline
    std::string message;
    Timestamp timestamp;

    /// The canonical record; commit_id is the object id of these bytes.
    std::string encode() const;
    static Commit decode(std::string_view record);
    json to_json() const;
    /// Body of the fs_commit event announcing this commit.
    json event_body() const;
};

struct ChangeSet {
    std::set<std::string> added;
    std::set<std::string> modified;
    std::set<std::string> deleted;

    bool empty() const { return added.empty() && modified.empty() && deleted.empty(); }
    json to_json() const;
    friend bool operator==(const ChangeSet&, const ChangeSet&) = default;
};

/// Applies a path-level change set to `base`, taking content digests for added/modified paths
/// from `target`.
Tree apply_changes(const Tree& base, const ChangeSet& changes, const Tree& target);

class DigestCollision : public Error {
public:
    using Error::Error;
};

/// Content-addressed, append-only version store.
///
/// On-disk layout under the vault root:
///   objects/<first 2 hex>/<64 hex>           raw blob bytes; name = SHA-512/256 of the bytes
///   commits/<session_id>/<seq:08>-<commit id> canonical commit record (see Commit::encode);
///                                            commit id = SHA-512/256 of the file bytes
class Vault {
public:
    explicit Vault(std::filesystem::path root);

    ObjectId put_blob(std::span<const std::uint8_t> bytes);
    ObjectId put_blob(std::string_view bytes);
    Bytes get_blob(const ObjectId& id) const;
    bool has_blob(const ObjectId& id) const;

    Commit record_baseline(const std::string& session_id, const FileTree& baseline);
    /// Returns nullopt when the event changes nothing (identical content, delete of absent path).
    std::optional<Commit> record_event(const FsEvent& event);

    std::vector<Commit> history(const std::string& session_id) const;
    std::optional<Commit> head(const std::string& session_id) const;
    Commit get_commit(const ObjectId& commit_id) const;
    std::optional<Commit> find_commit(std::string_view id_or_prefix) const;
    std::vector<std::string> sessions() const;

    FileTree materialize(const ObjectId& commit_id) const;
    /// Writes the commit's tree under `destination`, which must be absent or empty.
    FileTree checkout(const ObjectId& commit_id, const std::filesystem::path& destination) const;
    ChangeSet diff(const ObjectId& a, const ObjectId& b) const;

    const std::filesystem::path& root() const { return root_; }

private:
    void load();
    Commit append_commit(Commit commit);
    std::filesystem::path blob_path(const ObjectId& id) const;

    std::filesystem::path root_;
    mutable std::shared_mutex mu_;
    std::unordered_map<std::string, std::vector<Commit>> chains_;
    std::map<ObjectId, std::pair<std::string, std::size_t>> by_id_;  // -> (session, index)
    std::mutex blob_mu_;
};

}  // namespace honeytrace::fsvault
