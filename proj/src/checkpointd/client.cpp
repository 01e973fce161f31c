#include "honeytrace/checkpointd/client.hpp"

namespace honeytrace::checkpointd {

void SocketChannel::send(const DumpRequest& request) {
    try {
        if (!stream_) stream_ = connect_to(address_);
        stream_->write_all(encode_frame(request));
    } catch (const Error&) {
        stream_.reset();
        throw;
    }
}

std::optional<CompletionNotice> SocketChannel::receive(std::chrono::milliseconds timeout) {
    if (!stream_) throw Error("checkpoint channel not connected");
    Bytes body;
    FrameResult r;
    try {
        r = read_frame(*stream_, body, timeout);
    } catch (const Error&) {
        stream_.reset();
        throw;
    }
    if (r == FrameResult::timeout) return std::nullopt;
    if (r != FrameResult::ok) {
        stream_.reset();
        throw Error("checkpoint daemon closed the connection");
    }
    auto msg = decode_body(body);
    if (auto* notice = std::get_if<CompletionNotice>(&msg)) return std::move(*notice);
    throw ProtocolError("daemon sent a non-notice message");
}

}  // namespace honeytrace::checkpointd
