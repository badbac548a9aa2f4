#include "sdqn/transport.hpp"

#include "sdqn/error.hpp"

#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace sdqn::channel {

std::pair<std::unique_ptr<MemoryEndpoint>, std::unique_ptr<MemoryEndpoint>> MemoryEndpoint::make_pair() {
    auto a = std::make_unique<MemoryEndpoint>();
    auto b = std::make_unique<MemoryEndpoint>();
    a->peer_ = b.get();
    b->peer_ = a.get();
    return {std::move(a), std::move(b)};
}

void MemoryEndpoint::send(ByteView bytes) {
    if (drop_ || peer_ == nullptr) return;
    Bytes copy(bytes.begin(), bytes.end());
    if (tamper_) tamper_(copy);
    peer_->inbox_.push_back(std::move(copy));
    if (peer_->on_data_) peer_->on_data_();
}

std::optional<Bytes> MemoryEndpoint::receive(std::chrono::milliseconds) {
    if (inbox_.empty()) return std::nullopt;
    auto out = std::move(inbox_.front());
    inbox_.pop_front();
    return out;
}

SocketTransport::~SocketTransport() {
    if (fd_ >= 0) ::close(fd_);
}

std::pair<std::unique_ptr<SocketTransport>, std::unique_ptr<SocketTransport>> SocketTransport::make_local_pair() {
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) {
        throw Error(Errc::session_closed, std::string("socketpair: ") + std::strerror(errno));
    }
    return {std::make_unique<SocketTransport>(fds[0]), std::make_unique<SocketTransport>(fds[1])};
}

void SocketTransport::send(ByteView bytes) {
    std::size_t sent = 0;
    while (sent < bytes.size()) {
        const auto n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw Error(Errc::session_closed, std::string("send: ") + std::strerror(errno));
        }
        sent += static_cast<std::size_t>(n);
    }
}

std::optional<Bytes> SocketTransport::receive(std::chrono::milliseconds timeout) {
    pollfd pfd{fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    if (ready == 0) return std::nullopt;
    if (ready < 0) throw Error(Errc::session_closed, std::string("poll: ") + std::strerror(errno));
    Bytes buf(64 * 1024);
    const auto n = ::recv(fd_, buf.data(), buf.size(), 0);
    if (n == 0) throw Error(Errc::session_closed, "peer closed the connection");
    if (n < 0) throw Error(Errc::session_closed, std::string("recv: ") + std::strerror(errno));
    buf.resize(static_cast<std::size_t>(n));
    return buf;
}

} // namespace sdqn::channel
