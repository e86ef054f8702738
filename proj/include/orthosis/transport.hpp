#pragma once

// Newline-delimited JSON over TCP for SessionEngine (POSIX sockets).
//
// Each connection has a reader thread that forwards complete lines to the
// engine and a writer thread that drains a bounded outbound queue. The
// control loop only ever appends to those queues, so a stalled or vanished
// client cannot hold it up; a client that falls too far behind is dropped.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "orthosis/service.hpp"

namespace orthosis::service {

class TcpServer {
public:
    static constexpr std::size_t kMaxPending = 50000;

    TcpServer(SessionEngine& engine, std::string host, std::uint16_t port) : engine_(engine) {
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd_ < 0) throw Error(ErrorCode::Io, "socket() failed");
        int one = 1;
        ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port);
        if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
            ::close(fd_);
            throw Error(ErrorCode::InvalidArgument, "bad bind address '" + host + "'");
        }
        if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 8) != 0) {
            ::close(fd_);
            throw Error(ErrorCode::Io, "cannot listen on " + host + ":" + std::to_string(port) + ": " +
                                           std::strerror(errno));
        }
        socklen_t len = sizeof addr;
        ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
        accept_thread_ = std::thread([this] { accept_loop(); });
    }

    TcpServer(const TcpServer&) = delete;
    TcpServer& operator=(const TcpServer&) = delete;

    ~TcpServer() { stop(); }

    std::uint16_t port() const { return port_; }

    /// Engine sink: routes a message to one connection or all of them.
    void deliver(const Outbound& out) {
        const std::string line = encode(out.msg) + "\n";
        std::lock_guard lock(mu_);
        for (auto& [id, conn] : conns_) {
            if (out.to && *out.to != id) continue;
            std::lock_guard cl(conn->mu);
            if (conn->pending.size() >= kMaxPending) {
                conn->closing = true;
            } else {
                conn->pending.push_back(line);
            }
            conn->cv.notify_one();
        }
    }

    void stop() {
        if (stopped_.exchange(true)) return;
        ::shutdown(fd_, SHUT_RDWR);
        ::close(fd_);
        if (accept_thread_.joinable()) accept_thread_.join();
        std::map<ConnId, std::shared_ptr<Conn>> conns;
        {
            std::lock_guard lock(mu_);
            conns.swap(conns_);
        }
        for (auto& [id, conn] : conns) close_conn(*conn);
    }

private:
    struct Conn {
        int fd = -1;
        std::mutex mu;
        std::condition_variable cv;
        std::deque<std::string> pending;
        bool closing = false;
        std::thread reader;
        std::thread writer;
    };

    void accept_loop() {
        while (!stopped_) {
            const int cfd = ::accept(fd_, nullptr, nullptr);
            if (cfd < 0) {
                if (stopped_) return;
                continue;
            }
            auto conn = std::make_shared<Conn>();
            conn->fd = cfd;
            const ConnId id = ++next_id_;
            {
                std::lock_guard lock(mu_);
                conns_[id] = conn;
            }
            engine_.connect(id);
            // Hold the lock until both handles are stored; the reader takes
            // it before doing anything.
            std::lock_guard cl(conn->mu);
            conn->reader = std::thread([this, id, conn] { read_loop(id, conn); });
            conn->writer = std::thread([conn] { write_loop(conn); });
        }
    }

    void read_loop(ConnId id, std::shared_ptr<Conn> conn) {
        { std::lock_guard cl(conn->mu); }
        std::string buf;
        char chunk[4096];
        for (;;) {
            const ssize_t n = ::recv(conn->fd, chunk, sizeof chunk, 0);
            if (n <= 0) break;
            buf.append(chunk, static_cast<std::size_t>(n));
            std::size_t nl;
            while ((nl = buf.find('\n')) != std::string::npos) {
                std::string line = buf.substr(0, nl);
                buf.erase(0, nl + 1);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                if (!line.empty()) engine_.submit_line(id, std::move(line));
            }
        }
        engine_.disconnect(id);
        std::shared_ptr<Conn> owned;
        {
            std::lock_guard lock(mu_);
            if (auto it = conns_.find(id); it != conns_.end()) {
                owned = it->second;
                conns_.erase(it);
            }
        }
        // Whoever removes the connection from the map cleans it up; stop()
        // does so for connections still open at shutdown.
        if (owned) {
            signal_close(*conn);
            conn->writer.join();
            ::close(conn->fd);
            conn->reader.detach();
        }
    }

    static void write_loop(std::shared_ptr<Conn> conn) {
        for (;;) {
            std::string line;
            {
                std::unique_lock cl(conn->mu);
                conn->cv.wait(cl, [&] { return conn->closing || !conn->pending.empty(); });
                if (conn->pending.empty()) break;
                line = std::move(conn->pending.front());
                conn->pending.pop_front();
            }
            std::size_t off = 0;
            while (off < line.size()) {
                const ssize_t n = ::send(conn->fd, line.data() + off, line.size() - off, MSG_NOSIGNAL);
                if (n <= 0) {
                    ::shutdown(conn->fd, SHUT_RDWR);
                    return;
                }
                off += static_cast<std::size_t>(n);
            }
        }
        ::shutdown(conn->fd, SHUT_RDWR);
    }

    static void signal_close(Conn& conn) {
        {
            std::lock_guard cl(conn.mu);
            conn.closing = true;
        }
        conn.cv.notify_one();
        ::shutdown(conn.fd, SHUT_RDWR);
    }

    static void close_conn(Conn& conn) {
        signal_close(conn);
        if (conn.writer.joinable()) conn.writer.join();
        if (conn.reader.joinable()) conn.reader.join();
        ::close(conn.fd);
    }

    SessionEngine& engine_;
    int fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> stopped_{false};
    std::atomic<ConnId> next_id_{0};
    std::mutex mu_;
    std::map<ConnId, std::shared_ptr<Conn>> conns_;
    std::thread accept_thread_;
};

}  // namespace orthosis::service
