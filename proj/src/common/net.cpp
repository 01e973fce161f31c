#include "honeytrace/common/net.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <cstring>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <charconv>

namespace honeytrace {

namespace {

[[noreturn]] void throw_errno(const std::string& what) {
    throw Error(what + ": " + std::strerror(errno));
}

}  // namespace

std::string Ipv4::str() const {
    return std::to_string(value >> 24) + "." + std::to_string((value >> 16) & 0xff) + "." +
           std::to_string((value >> 8) & 0xff) + "." + std::to_string(value & 0xff);
}

std::optional<Ipv4> Ipv4::parse(std::string_view text) {
    std::uint32_t out = 0;
    const char* p = text.data();
    const char* end = text.data() + text.size();
    for (int i = 0; i < 4; ++i) {
        unsigned octet = 0;
        auto [next, ec] = std::from_chars(p, end, octet);
        if (ec != std::errc{} || next == p || octet > 255 || next - p > 3) return std::nullopt;
        out = (out << 8) | octet;
        p = next;
        if (i < 3) {
            if (p == end || *p != '.') return std::nullopt;
            ++p;
        }
    }
    if (p != end) return std::nullopt;
    return Ipv4{out};
}

std::optional<Endpoint> Endpoint::parse(std::string_view text) {
    const auto colon = text.rfind(':');
    if (colon == std::string_view::npos) return std::nullopt;
    auto addr = Ipv4::parse(text.substr(0, colon));
    unsigned port = 0;
    const auto port_text = text.substr(colon + 1);
    auto [next, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
    if (!addr || ec != std::errc{} || next != port_text.data() + port_text.size() || port > 65535)
        return std::nullopt;
    return Endpoint{*addr, static_cast<std::uint16_t>(port)};
}

Fd& Fd::operator=(Fd&& other) noexcept {
    if (this != &other) reset(other.release());
    return *this;
}

void Fd::reset(int fd) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = fd;
}

std::size_t SocketStream::read_some(std::span<std::uint8_t> buf) {
    for (;;) {
        const ssize_t n = ::recv(fd_.get(), buf.data(), buf.size(), 0);
        if (n >= 0) return static_cast<std::size_t>(n);
        if (errno == EINTR) continue;
        if (errno == ECONNRESET) return 0;
        throw_errno("recv");
    }
}

bool SocketStream::read_exact(std::span<std::uint8_t> buf) {
    std::size_t got = 0;
    while (got < buf.size()) {
        const auto n = read_some(buf.subspan(got));
        if (n == 0) return false;
        got += n;
    }
    return true;
}

void SocketStream::write_all(std::span<const std::uint8_t> data) {
    std::size_t sent = 0;
    while (sent < data.size()) {
        const ssize_t n = ::send(fd_.get(), data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw_errno("send");
        }
        sent += static_cast<std::size_t>(n);
    }
}

void SocketStream::write_all(std::string_view data) {
    write_all(std::span(reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
}

bool SocketStream::wait_readable(std::chrono::milliseconds timeout) const {
    pollfd pfd{fd_.get(), POLLIN, 0};
    for (;;) {
        const int rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
        if (rc < 0 && errno == EINTR) continue;
        if (rc < 0) throw_errno("poll");
        return rc > 0;
    }
}

void SocketStream::shutdown_write() {
    if (fd_) ::shutdown(fd_.get(), SHUT_WR);
}

std::pair<SocketStream, SocketStream> make_stream_pair() {
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0) throw_errno("socketpair");
    return {SocketStream(Fd(fds[0])), SocketStream(Fd(fds[1]))};
}

Fd listen_tcp(const std::string& addr, std::uint16_t port, int backlog) {
    Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!fd) throw_errno("socket");
    int one = 1;
    ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port);
    if (::inet_pton(AF_INET, addr.c_str(), &sa.sin_addr) != 1) throw Error("invalid listen address: " + addr);
    if (::bind(fd.get(), reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0)
        throw_errno("bind " + addr + ":" + std::to_string(port));
    if (::listen(fd.get(), backlog) != 0) throw_errno("listen");
    return fd;
}

std::uint16_t local_port(const Fd& listener) {
    sockaddr_in sa{};
    socklen_t len = sizeof sa;
    if (::getsockname(listener.get(), reinterpret_cast<sockaddr*>(&sa), &len) != 0) throw_errno("getsockname");
    return ntohs(sa.sin_port);
}

std::pair<SocketStream, Endpoint> accept_tcp(const Fd& listener) {
    sockaddr_storage ss{};
    socklen_t len = sizeof ss;
    int fd;
    do {
        fd = ::accept4(listener.get(), reinterpret_cast<sockaddr*>(&ss), &len, SOCK_CLOEXEC);
    } while (fd < 0 && errno == EINTR);
    if (fd < 0) throw_errno("accept");
    Endpoint peer;
    if (ss.ss_family == AF_INET) {
        const auto* sa = reinterpret_cast<const sockaddr_in*>(&ss);
        peer.addr.value = ntohl(sa->sin_addr.s_addr);
        peer.port = ntohs(sa->sin_port);
    }
    return {SocketStream(Fd(fd)), peer};
}

SocketStream connect_tcp(const std::string& addr, std::uint16_t port) {
    Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!fd) throw_errno("socket");
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port);
    if (::inet_pton(AF_INET, addr.c_str(), &sa.sin_addr) != 1) throw Error("invalid address: " + addr);
    if (::connect(fd.get(), reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0)
        throw_errno("connect " + addr + ":" + std::to_string(port));
    return SocketStream(std::move(fd));
}

}  // namespace honeytrace
