#pragma once

#include "sdqn/bytes.hpp"

#include <chrono>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <utility>

namespace sdqn::channel {

/// Reliable, ordered byte channel between two session endpoints.
class Transport {
public:
    virtual ~Transport() = default;

    virtual void send(ByteView bytes) = 0;
    /// Next chunk of bytes, or nullopt if nothing arrives within `timeout`.
    virtual std::optional<Bytes> receive(std::chrono::milliseconds timeout) = 0;
};

/// In-process endpoint. Delivery is synchronous: send() appends to the peer's
/// inbox and runs the peer's on_data hook, so a responder can answer before
/// send() returns. That keeps scenario runs single-threaded and reproducible.
class MemoryEndpoint final : public Transport {
public:
    using Tamper = std::function<void(Bytes&)>;

    static std::pair<std::unique_ptr<MemoryEndpoint>, std::unique_ptr<MemoryEndpoint>> make_pair();

    void send(ByteView bytes) override;
    std::optional<Bytes> receive(std::chrono::milliseconds timeout) override;

    void set_on_data(std::function<void()> hook) { on_data_ = std::move(hook); }
    /// Outbound faults: drop everything sent from this endpoint, or rewrite it.
    void set_drop(bool drop) noexcept { drop_ = drop; }
    void set_tamper(Tamper tamper) { tamper_ = std::move(tamper); }
    /// Queues bytes as if the peer had sent them, without running hooks.
    void inject(Bytes bytes) { inbox_.push_back(std::move(bytes)); }

private:
    MemoryEndpoint* peer_ = nullptr;
    std::deque<Bytes> inbox_;
    std::function<void()> on_data_;
    bool drop_ = false;
    Tamper tamper_;
};

/// Stream socket endpoint (e.g. one half of a local socketpair). Owns the fd.
class SocketTransport final : public Transport {
public:
    explicit SocketTransport(int fd) noexcept : fd_(fd) {}
    ~SocketTransport() override;
    SocketTransport(const SocketTransport&) = delete;
    SocketTransport& operator=(const SocketTransport&) = delete;

    static std::pair<std::unique_ptr<SocketTransport>, std::unique_ptr<SocketTransport>> make_local_pair();

    void send(ByteView bytes) override;
    std::optional<Bytes> receive(std::chrono::milliseconds timeout) override;

private:
    int fd_;
};

} // namespace sdqn::channel
