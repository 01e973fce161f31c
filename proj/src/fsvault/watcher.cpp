#include "honeytrace/fsvault/watcher.hpp"

namespace honeytrace::fsvault {

Watcher::Watcher(std::string session_id, Vault& vault, std::chrono::microseconds debounce, CommitCallback on_commit)
    : session_id_(std::move(session_id)), vault_(vault), debounce_(debounce), on_commit_(std::move(on_commit)) {}

void Watcher::notify(RawChange change) {
    change.path = normalize_path(change.path);
    std::lock_guard lock(mu_);
    if (closed_) throw Error("watcher for session " + session_id_ + " is closed");

    if (pending_ && pending_->path == change.path && pending_->kind != ChangeKind::remove &&
        change.kind == ChangeKind::modify && change.timestamp.micros - pending_first_.micros <= debounce_.count()) {
        pending_->content = std::move(change.content);
        pending_->timestamp = change.timestamp;
        return;
    }
    emit_locked();
    pending_first_ = change.timestamp;
    pending_ = std::move(change);
}

void Watcher::poll(Timestamp now) {
    std::lock_guard lock(mu_);
    if (pending_ && now.micros - pending_first_.micros > debounce_.count()) emit_locked();
}

void Watcher::flush() {
    std::lock_guard lock(mu_);
    emit_locked();
}

void Watcher::close() {
    std::lock_guard lock(mu_);
    emit_locked();
    closed_ = true;
}

void Watcher::emit_locked() {
    if (!pending_) return;
    RawChange change = std::move(*pending_);
    pending_.reset();

    FsEvent ev;
    ev.session_id = session_id_;
    ev.kind = change.kind;
    ev.path = change.path;
    ev.timestamp = change.timestamp;
    if (change.kind != ChangeKind::remove) ev.content_digest = vault_.put_blob(change.content);
    auto commit = vault_.record_event(ev);
    emitted_.push_back(ev);
    if (on_commit_) on_commit_(ev, commit);
}

std::vector<FsEvent> Watcher::emitted() const {
    std::lock_guard lock(mu_);
    return emitted_;
}

}  // namespace honeytrace::fsvault
