#pragma once

#include <chrono>
#include <optional>

#include "honeytrace/checkpointd/protocol.hpp"

namespace honeytrace::checkpointd {

/// Requester side of the dump protocol.
class CheckpointChannel {
public:
    virtual ~CheckpointChannel() = default;
    /// Throws Error when the daemon is unreachable.
    virtual void send(const DumpRequest& request) = 0;
    /// Next notice, or nullopt on timeout. Throws Error if the connection drops.
    virtual std::optional<CompletionNotice> receive(std::chrono::milliseconds timeout) = 0;
};

/// One connection to a daemon, opened on first use and reopened after a failure.
class SocketChannel : public CheckpointChannel {
public:
    explicit SocketChannel(SocketAddress address) : address_(std::move(address)) {}

    void send(const DumpRequest& request) override;
    std::optional<CompletionNotice> receive(std::chrono::milliseconds timeout) override;

private:
    SocketAddress address_;
    std::optional<SocketStream> stream_;
};

}  // namespace honeytrace::checkpointd
