#include "honeytrace/checkpointd/daemon.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

namespace honeytrace::checkpointd {

namespace fs = std::filesystem;

Daemon::Daemon(SnapshotStore& store, ProcessStateProvider& provider, EventSink* log)
    : store_(store), provider_(provider), log_(log) {}

Daemon::~Daemon() { stop(); }

void Daemon::log(std::string_view what, json detail) {
    if (!log_) return;
    detail["module"] = "checkpointd";
    detail["what"] = std::string(what);
    log_->emit({EventKind::system, std::nullopt, std::move(detail), std::nullopt});
}

void Daemon::serve(const SocketAddress& address) {
    if (listener_) throw Error("daemon already serving on " + bound_.str());
    bound_ = address;
    if (address.family == SocketAddress::Family::tcp) {
        try {
            listener_ = listen_tcp(address.host, address.port);
        } catch (const Error& e) {
            if (std::string(e.what()).find("Address already in use") != std::string::npos)
                throw AlreadyBound("endpoint already bound: " + address.str());
            throw;
        }
        bound_.port = local_port(listener_);
    } else {
        if (fs::exists(address.path)) {
            try {
                connect_to(address);
                throw AlreadyBound("endpoint already bound: " + address.str());
            } catch (const AlreadyBound&) {
                throw;
            } catch (const Error&) {
                fs::remove(address.path);  // stale socket file
            }
        }
        Fd fd(::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0));
        if (!fd) throw Error(std::string("socket: ") + std::strerror(errno));
        sockaddr_un sa{};
        sa.sun_family = AF_UNIX;
        std::strncpy(sa.sun_path, address.path.c_str(), sizeof sa.sun_path - 1);
        if (::bind(fd.get(), reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) {
            if (errno == EADDRINUSE) throw AlreadyBound("endpoint already bound: " + address.str());
            throw Error("bind " + address.str() + ": " + std::strerror(errno));
        }
        if (::listen(fd.get(), 64) != 0) throw Error(std::string("listen: ") + std::strerror(errno));
        listener_ = std::move(fd);
    }
    stopping_ = false;
    acceptor_ = std::thread([this] { accept_loop(); });
}

void Daemon::stop() {
    if (!listener_) return;
    stopping_ = true;
    if (acceptor_.joinable()) acceptor_.join();
    std::list<std::pair<std::shared_ptr<SocketStream>, std::thread>> conns;
    {
        std::lock_guard lock(conns_mu_);
        conns.swap(conns_);
    }
    for (auto& [conn, thread] : conns) {
        ::shutdown(conn->fd(), SHUT_RDWR);
        if (thread.joinable()) thread.join();
    }
    listener_.reset();
    if (bound_.family == SocketAddress::Family::unix_path) fs::remove(bound_.path);
}

void Daemon::accept_loop() {
    while (!stopping_) {
        pollfd pfd{listener_.get(), POLLIN, 0};
        const int rc = ::poll(&pfd, 1, 100);
        if (rc <= 0) continue;
        const int fd = ::accept4(listener_.get(), nullptr, nullptr, SOCK_CLOEXEC);
        if (fd < 0) continue;
        auto conn = std::make_shared<SocketStream>(Fd(fd));
        std::lock_guard lock(conns_mu_);
        conns_.emplace_back(conn, std::thread([this, conn] { serve_connection(conn); }));
    }
}

void Daemon::serve_connection(std::shared_ptr<SocketStream> conn) {
    Bytes body;
    while (!stopping_) {
        FrameResult r;
        try {
            r = read_frame(*conn, body, std::chrono::milliseconds(200));
        } catch (const Error&) {
            return;
        }
        if (r == FrameResult::timeout) continue;
        if (r == FrameResult::closed) return;
        if (r == FrameResult::oversized) {
            ++malformed_;
            log("malformed_frame", {{"detail", "oversized frame; closing connection"}});
            return;
        }
        Message msg;
        try {
            msg = decode_body(body);
        } catch (const ProtocolError& e) {
            ++malformed_;
            log("malformed_frame", {{"detail", e.what()}});
            continue;
        }
        const auto* req = std::get_if<DumpRequest>(&msg);
        if (!req) {
            ++malformed_;
            log("malformed_frame", {{"detail", "unexpected message type"}});
            continue;
        }
        ++requests_;
        const auto outcome = handle_dump(*req);
        try {
            conn->write_all(encode_frame(outcome.notice));
            ++notices_;
        } catch (const Error&) {
            return;
        }
    }
}

Daemon::Outcome Daemon::handle_dump(const DumpRequest& request) {
    const auto started = std::chrono::steady_clock::now();
    if (const auto d = delay_ms_.load(); d > 0) std::this_thread::sleep_for(std::chrono::milliseconds(d));

    Outcome out;
    out.notice.request_id = request.request_id;
    auto elapsed = [&] {
        return static_cast<std::uint64_t>(
            std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - started).count());
    };

    std::optional<ProcessState> state;
    try {
        state = provider_.read_process(request.target);
    } catch (const std::exception& e) {
        out.notice.status = NoticeStatus::failed;
        out.notice.detail = e.what();
        out.notice.duration_us = elapsed();
        return out;
    }
    if (!state) {
        out.notice.status = NoticeStatus::failed;
        out.notice.detail = "target vanished: " + request.target;
        out.notice.duration_us = elapsed();
        return out;
    }

    Snapshot snap;
    snap.snapshot_id = ids_.next();
    snap.request_id = request.request_id;
    snap.session_id = request.session_id;
    snap.trace_id = request.trace_id;
    snap.target = request.target;
    snap.trigger_seq = request.trigger_seq;
    snap.taken_at = Clock::process().now();
    snap.state = std::move(*state);
    try {
        store_.persist(snap);
    } catch (const std::exception& e) {
        out.notice.status = NoticeStatus::failed;
        out.notice.detail = std::string("persist failed: ") + e.what();
        out.notice.duration_us = elapsed();
        return out;
    }
    out.notice.status = NoticeStatus::ok;
    out.notice.snapshot_id = snap.snapshot_id;
    out.notice.duration_us = elapsed();
    out.snapshot = std::move(snap);
    return out;
}

std::optional<ProcessState> ProcfsStateProvider::read_process(const std::string& target) {
    if (!target.starts_with("pid:")) throw Error("procfs provider handles pid:<n> targets, got " + target);
    const int pid = std::stoi(target.substr(4));
    const fs::path proc = fs::path("/proc") / std::to_string(pid);
    std::ifstream maps(proc / "maps");
    if (!maps) return std::nullopt;

    ProcessState state;
    Fd mem(::open((proc / "mem").c_str(), O_RDONLY | O_CLOEXEC));
    std::string line;
    constexpr std::uint64_t kRegionCap = 16u << 20;
    while (std::getline(maps, line)) {
        std::istringstream in(line);
        std::string range, perms, offset, dev, inode, path;
        in >> range >> perms >> offset >> dev >> inode;
        std::getline(in >> std::ws, path);
        const auto dash = range.find('-');
        const std::uint64_t lo = std::stoull(range.substr(0, dash), nullptr, 16);
        const std::uint64_t hi = std::stoull(range.substr(dash + 1), nullptr, 16);
        const bool anonymous = path.empty() || path.starts_with("[heap") || path.starts_with("[stack");
        if (perms.size() < 3 || perms[0] != 'r' || (perms[1] != 'w' && !anonymous)) continue;
        if (path.starts_with("[v") || hi - lo > kRegionCap || !mem) continue;
        MemoryRegion region;
        region.base = lo;
        region.permissions = perms.substr(0, 3);
        region.content.resize(hi - lo);
        const ssize_t n = ::pread(mem.get(), region.content.data(), region.content.size(), static_cast<off_t>(lo));
        if (n != static_cast<ssize_t>(region.content.size())) continue;
        state.regions.push_back(std::move(region));
    }

    std::error_code ec;
    for (const auto& e : fs::directory_iterator(proc / "fd", ec)) {
        Descriptor d;
        d.number = std::stoi(e.path().filename().string());
        d.target = fs::read_symlink(e.path(), ec).string();
        d.kind = d.target.starts_with("socket:") ? "socket"
                 : d.target.starts_with("pipe:") ? "pipe"
                 : d.target.starts_with("/dev/pts") ? "tty"
                                                    : "file";
        state.descriptors.push_back(std::move(d));
    }
    std::sort(state.descriptors.begin(), state.descriptors.end(),
              [](const Descriptor& a, const Descriptor& b) { return a.number < b.number; });

    std::ifstream sc(proc / "syscall");
    std::vector<std::string> fields;
    for (std::string f; sc >> f;) fields.push_back(f);
    if (fields.size() == 9) {
        state.registers["sp"] = std::stoull(fields[7], nullptr, 16);
        state.registers["pc"] = std::stoull(fields[8], nullptr, 16);
    }
    return state;
}

}  // namespace honeytrace::checkpointd
