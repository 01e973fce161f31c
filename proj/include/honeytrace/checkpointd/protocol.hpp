#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>

#include "honeytrace/common/net.hpp"
#include "honeytrace/common/types.hpp"

namespace honeytrace::checkpointd {

// Wire format. All integers big-endian.
//
//   frame   := u32 body_length | body
//   body    := u8 version (=1) | u8 type | payload
//   string  := u16 length | bytes
//   type 0x01 DumpRequest:      u64 request_id | string session_id | string trace_id
//                               | string target | u64 trigger_seq
//   type 0x02 CompletionNotice: u64 request_id | u8 status (0 ok, 1 failed) | string snapshot_id
//                               | u64 duration_us | string detail
inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::uint8_t kTypeRequest = 0x01;
inline constexpr std::uint8_t kTypeNotice = 0x02;
inline constexpr std::uint32_t kMaxFrameBody = 1u << 20;

struct DumpRequest {
    std::uint64_t request_id = 0;
    std::string session_id;
    std::string trace_id;
    std::string target;  // process reference understood by the state provider
    std::uint64_t trigger_seq = 0;

    friend bool operator==(const DumpRequest&, const DumpRequest&) = default;
};

enum class NoticeStatus : std::uint8_t { ok = 0, failed = 1 };

struct CompletionNotice {
    std::uint64_t request_id = 0;
    NoticeStatus status = NoticeStatus::ok;
    std::string snapshot_id;  // empty when failed
    std::uint64_t duration_us = 0;
    std::string detail;

    friend bool operator==(const CompletionNotice&, const CompletionNotice&) = default;
};

using Message = std::variant<DumpRequest, CompletionNotice>;

class ProtocolError : public Error {
public:
    using Error::Error;
};

Bytes encode_frame(const Message& message);
/// Decodes a frame body (without the length prefix).
Message decode_body(std::span<const std::uint8_t> body);

enum class FrameResult { ok, closed, timeout, oversized };

/// Reads one length-prefixed frame body from a stream.
FrameResult read_frame(SocketStream& stream, Bytes& body, std::optional<std::chrono::milliseconds> timeout = {});

/// `unix:/path`, `tcp:host:port`, or a bare filesystem path (unix).
struct SocketAddress {
    enum class Family { unix_path, tcp } family = Family::unix_path;
    std::string path;
    std::string host;
    std::uint16_t port = 0;

    static SocketAddress parse(std::string_view text);
    std::string str() const;
};

SocketStream connect_to(const SocketAddress& address);

}  // namespace honeytrace::checkpointd
