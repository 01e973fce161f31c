#include "honeytrace/checkpointd/protocol.hpp"

#include <cerrno>
#include <charconv>
#include <cstring>

#include <sys/socket.h>
#include <sys/un.h>

namespace honeytrace::checkpointd {

namespace {

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) {
        out_.push_back(static_cast<std::uint8_t>(v >> 8));
        out_.push_back(static_cast<std::uint8_t>(v));
    }
    void u32(std::uint32_t v) {
        for (int i = 3; i >= 0; --i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 7; i >= 0; --i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void str(std::string_view s) {
        if (s.size() > 0xffff) throw ProtocolError("string field too long");
        u16(static_cast<std::uint16_t>(s.size()));
        out_.insert(out_.end(), s.begin(), s.end());
    }
    Bytes take() { return std::move(out_); }

private:
    Bytes out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
    std::uint8_t u8() { return need(1)[0]; }
    std::uint16_t u16() {
        auto p = need(2);
        return static_cast<std::uint16_t>(p[0] << 8 | p[1]);
    }
    std::uint64_t u64() {
        auto p = need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v = v << 8 | p[i];
        return v;
    }
    std::string str() {
        const auto n = u16();
        auto p = need(n);
        return std::string(p.begin(), p.end());
    }
    bool done() const { return pos_ == in_.size(); }

private:
    std::span<const std::uint8_t> need(std::size_t n) {
        if (in_.size() - pos_ < n) throw ProtocolError("truncated message");
        auto s = in_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

}  // namespace

Bytes encode_frame(const Message& message) {
    Writer body;
    body.u8(kProtocolVersion);
    if (const auto* req = std::get_if<DumpRequest>(&message)) {
        body.u8(kTypeRequest);
        body.u64(req->request_id);
        body.str(req->session_id);
        body.str(req->trace_id);
        body.str(req->target);
        body.u64(req->trigger_seq);
    } else {
        const auto& n = std::get<CompletionNotice>(message);
        body.u8(kTypeNotice);
        body.u64(n.request_id);
        body.u8(static_cast<std::uint8_t>(n.status));
        body.str(n.snapshot_id);
        body.u64(n.duration_us);
        body.str(n.detail);
    }
    const Bytes payload = body.take();
    Writer frame;
    frame.u32(static_cast<std::uint32_t>(payload.size()));
    Bytes out = frame.take();
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

Message decode_body(std::span<const std::uint8_t> body) {
    Reader r(body);
    const auto version = r.u8();
    if (version != kProtocolVersion) throw ProtocolError("unsupported protocol version " + std::to_string(version));
    const auto type = r.u8();
    Message out;
    if (type == kTypeRequest) {
        DumpRequest req;
        req.request_id = r.u64();
        req.session_id = r.str();
        req.trace_id = r.str();
        req.target = r.str();
        req.trigger_seq = r.u64();
        out = std::move(req);
    } else if (type == kTypeNotice) {
        CompletionNotice n;
        n.request_id = r.u64();
        const auto status = r.u8();
        if (status > 1) throw ProtocolError("bad notice status");
        n.status = static_cast<NoticeStatus>(status);
        n.snapshot_id = r.str();
        n.duration_us = r.u64();
        n.detail = r.str();
        out = std::move(n);
    } else {
        throw ProtocolError("unknown message type " + std::to_string(type));
    }
    if (!r.done()) throw ProtocolError("trailing bytes in message");
    return out;
}

FrameResult read_frame(SocketStream& stream, Bytes& body, std::optional<std::chrono::milliseconds> timeout) {
    if (timeout && !stream.wait_readable(*timeout)) return FrameResult::timeout;
    std::uint8_t len_buf[4];
    if (!stream.read_exact(len_buf)) return FrameResult::closed;
    const std::uint32_t len = std::uint32_t(len_buf[0]) << 24 | std::uint32_t(len_buf[1]) << 16 |
                              std::uint32_t(len_buf[2]) << 8 | len_buf[3];
    if (len > kMaxFrameBody) return FrameResult::oversized;
    body.resize(len);
    if (!stream.read_exact(body)) return FrameResult::closed;
    return FrameResult::ok;
}

SocketAddress SocketAddress::parse(std::string_view text) {
    SocketAddress a;
    if (text.starts_with("tcp:")) {
        const auto rest = text.substr(4);
        const auto colon = rest.rfind(':');
        if (colon == std::string_view::npos) throw Error("tcp endpoint needs host:port: " + std::string(text));
        a.family = Family::tcp;
        a.host = std::string(rest.substr(0, colon));
        unsigned port = 0;
        const auto p = rest.substr(colon + 1);
        auto [end, ec] = std::from_chars(p.data(), p.data() + p.size(), port);
        if (ec != std::errc{} || end != p.data() + p.size() || port > 65535)
            throw Error("bad port in endpoint: " + std::string(text));
        a.port = static_cast<std::uint16_t>(port);
        return a;
    }
    a.path = std::string(text.starts_with("unix:") ? text.substr(5) : text);
    if (a.path.empty()) throw Error("empty socket path");
    if (a.path.size() >= sizeof(sockaddr_un::sun_path)) throw Error("socket path too long: " + a.path);
    return a;
}

std::string SocketAddress::str() const {
    return family == Family::tcp ? "tcp:" + host + ":" + std::to_string(port) : "unix:" + path;
}

SocketStream connect_to(const SocketAddress& address) {
    if (address.family == SocketAddress::Family::tcp) return connect_tcp(address.host, address.port);
    Fd fd(::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!fd) throw Error(std::string("socket: ") + std::strerror(errno));
    sockaddr_un sa{};
    sa.sun_family = AF_UNIX;
    std::strncpy(sa.sun_path, address.path.c_str(), sizeof sa.sun_path - 1);
    if (::connect(fd.get(), reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0)
        throw Error("connect " + address.str() + ": " + std::strerror(errno));
    return SocketStream(std::move(fd));
}

}  // namespace honeytrace::checkpointd
