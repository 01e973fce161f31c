#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>

#include "honeytrace/common/types.hpp"

namespace honeytrace {

struct Ipv4 {
    std::uint32_t value = 0;  // host byte order

    std::string str() const;
    static std::optional<Ipv4> parse(std::string_view text);

    friend auto operator<=>(const Ipv4&, const Ipv4&) = default;
};

struct Endpoint {
    Ipv4 addr;
    std::uint16_t port = 0;

    std::string str() const { return addr.str() + ":" + std::to_string(port); }
    static std::optional<Endpoint> parse(std::string_view text);

    friend auto operator<=>(const Endpoint&, const Endpoint&) = default;
};

/// Owning file descriptor.
class Fd {
public:
    Fd() = default;
    explicit Fd(int fd) : fd_(fd) {}
    Fd(Fd&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
    Fd& operator=(Fd&& other) noexcept;
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    ~Fd() { reset(); }

    int get() const { return fd_; }
    explicit operator bool() const { return fd_ >= 0; }
    void reset(int fd = -1);
    int release() { return std::exchange(fd_, -1); }

private:
    int fd_ = -1;
};

/// Blocking bidirectional byte stream over a connected socket.
class SocketStream {
public:
    SocketStream() = default;
    explicit SocketStream(Fd fd) : fd_(std::move(fd)) {}

    /// Returns 0 on orderly close. Throws on error.
    std::size_t read_some(std::span<std::uint8_t> buf);
    /// Reads exactly buf.size() bytes; returns false if the peer closed first.
    bool read_exact(std::span<std::uint8_t> buf);
    void write_all(std::span<const std::uint8_t> data);
    void write_all(std::string_view data);
    /// Waits until readable; false on timeout.
    bool wait_readable(std::chrono::milliseconds timeout) const;
    void shutdown_write();
    void close() { fd_.reset(); }

    int fd() const { return fd_.get(); }
    bool is_open() const { return static_cast<bool>(fd_); }

private:
    Fd fd_;
};

/// Connected AF_UNIX stream pair.
std::pair<SocketStream, SocketStream> make_stream_pair();

/// Listening TCP socket on addr:port (port 0 picks an ephemeral port).
Fd listen_tcp(const std::string& addr, std::uint16_t port, int backlog = 64);
std::uint16_t local_port(const Fd& listener);
/// Accepts one connection; returns the peer endpoint (0.0.0.0:0 for non-IPv4 peers).
std::pair<SocketStream, Endpoint> accept_tcp(const Fd& listener);
SocketStream connect_tcp(const std::string& addr, std::uint16_t port);

}  // namespace honeytrace
