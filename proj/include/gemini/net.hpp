/// Minimal loopback TCP helpers (POSIX sockets) for line-oriented streams.
#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "gemini/error.hpp"

namespace gemini::net {

/// Owning file descriptor.
class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
    Socket& operator=(Socket&& o) noexcept {
        if (this != &o) {
            reset();
            fd_ = std::exchange(o.fd_, -1);
        }
        return *this;
    }
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
    ~Socket() { reset(); }

    int fd() const noexcept { return fd_; }
    bool valid() const noexcept { return fd_ >= 0; }
    void reset() noexcept {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }
    /// Wakes any thread blocked on this socket without closing the fd.
    void shutdown() noexcept {
        if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
    }

private:
    int fd_ = -1;
};

/// Binds a listening socket on 127.0.0.1. Port 0 picks an ephemeral port.
inline Socket listen_loopback(std::uint16_t port, int backlog = 8) {
    Socket s(::socket(AF_INET, SOCK_STREAM, 0));
    if (!s.valid()) throw Error(Errc::BindFailure, std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
        throw Error(Errc::BindFailure, "cannot bind 127.0.0.1:" + std::to_string(port) + ": " + std::strerror(errno));
    if (::listen(s.fd(), backlog) != 0) throw Error(Errc::BindFailure, std::string("listen: ") + std::strerror(errno));
    return s;
}

inline std::uint16_t local_port(const Socket& s) {
    sockaddr_in addr{};
    socklen_t len = sizeof addr;
    ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    return ntohs(addr.sin_port);
}

/// Waits up to `timeout` for a connection; returns an invalid socket on timeout.
inline Socket accept_for(const Socket& listener, std::chrono::milliseconds timeout) {
    pollfd p{listener.fd(), POLLIN, 0};
    if (::poll(&p, 1, static_cast<int>(timeout.count())) <= 0 || !(p.revents & POLLIN)) return Socket{};
    return Socket(::accept(listener.fd(), nullptr, nullptr));
}

inline Socket connect_loopback(std::uint16_t port) {
    Socket s(::socket(AF_INET, SOCK_STREAM, 0));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (!s.valid() || ::connect(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
        throw Error(Errc::IoError, "cannot connect to 127.0.0.1:" + std::to_string(port));
    int one = 1;
    ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return s;
}

inline bool send_all(const Socket& s, std::string_view data) {
    while (!data.empty()) {
        ssize_t n = ::send(s.fd(), data.data(), data.size(), MSG_NOSIGNAL);
        if (n <= 0) return false;
        data.remove_prefix(static_cast<std::size_t>(n));
    }
    return true;
}

/// Buffered newline reader with a poll timeout per read.
class LineReader {
public:
    explicit LineReader(const Socket& s) : fd_(s.fd()) {}

    enum class Status { Line, Timeout, Closed };

    Status next(std::string& line, std::chrono::milliseconds timeout) {
        for (;;) {
            if (auto pos = buffer_.find('\n'); pos != std::string::npos) {
                line.assign(buffer_, 0, pos);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                buffer_.erase(0, pos + 1);
                return Status::Line;
            }
            pollfd p{fd_, POLLIN, 0};
            int r = ::poll(&p, 1, static_cast<int>(timeout.count()));
            if (r == 0) return Status::Timeout;
            if (r < 0) return errno == EINTR ? Status::Timeout : Status::Closed;
            char chunk[4096];
            ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
            if (n <= 0) {
                if (!buffer_.empty()) {  // unterminated final line
                    line = std::move(buffer_);
                    buffer_.clear();
                    return Status::Line;
                }
                return Status::Closed;
            }
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

private:
    int fd_;
    std::string buffer_;
};

}  // namespace gemini::net
