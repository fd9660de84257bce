#include "quicscout/runner.hpp"

#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <stdexcept>
#include <thread>

namespace quicscout::probe {

RateLimiter::RateLimiter(int max_per_window, std::chrono::milliseconds window)
    : max_(max_per_window), window_(window) {
    if (max_ < 1) throw std::invalid_argument("rate limit must be at least 1");
}

void RateLimiter::acquire() {
    for (;;) {
        std::chrono::steady_clock::time_point wait_until;
        {
            std::lock_guard<std::mutex> lock(mu_);
            auto now = std::chrono::steady_clock::now();
            while (!stamps_.empty() && now - stamps_.front() >= window_) stamps_.pop_front();
            if (static_cast<int>(stamps_.size()) < max_) {
                stamps_.push_back(now);
                return;
            }
            wait_until = stamps_.front() + window_;
        }
        std::this_thread::sleep_until(wait_until);
    }
}

namespace {

class Socket {
public:
    explicit Socket(int fd) : fd_(fd) {}
    ~Socket() {
        if (fd_ >= 0) ::close(fd_);
    }
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
    int get() const { return fd_; }

private:
    int fd_;
};

int connect_udp(const Target& target) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_DGRAM;
    hints.ai_protocol = IPPROTO_UDP;
    addrinfo* res = nullptr;
    std::string port = std::to_string(target.port);
    int rc = ::getaddrinfo(target.host.c_str(), port.c_str(), &hints, &res);
    if (rc != 0) {
        throw std::runtime_error("cannot resolve " + target.host + ": " + gai_strerror(rc));
    }
    int fd = -1;
    int last_errno = 0;
    for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_NONBLOCK, ai->ai_protocol);
        if (fd < 0) {
            last_errno = errno;
            continue;
        }
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
        last_errno = errno;
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) {
        throw std::runtime_error("cannot connect UDP socket to " + target.host + ": " +
                                 std::strerror(last_errno));
    }
    return fd;
}

uint64_t micros_since(std::chrono::steady_clock::time_point start) {
    return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::microseconds>(
                                     std::chrono::steady_clock::now() - start)
                                     .count());
}

}  // namespace

ProbeResult run_probe(const Target& target, const ProbeConfig& cfg, const ClientIdentity& id,
                      const LiveOptions& opts) {
    Socket sock(connect_udp(target));
    ProbeSession session(cfg, id);
    auto start = std::chrono::steady_clock::now();

    if (opts.capture != nullptr) {
        Capture& cap = *opts.capture;
        cap.kind = cfg.kind;
        cap.version = cfg.kind == ProbeKind::version_negotiation ? cfg.reserved_version
                                                                 : wire::kQuicV1;
        cap.alpn = cfg.alpn;
        cap.sni = cfg.sni.value_or("");
        cap.dcid = id.dcid;
        cap.scid = id.scid;
        cap.x25519_private = id.x25519_private;
        cap.client_random = id.client_random;
        cap.records.clear();
    }

    auto flush_outgoing = [&]() {
        for (Bytes& datagram : session.take_outgoing()) {
            if (opts.limiter != nullptr) opts.limiter->acquire();
            if (opts.capture != nullptr) {
                opts.capture->records.push_back(
                    CaptureRecord{kDirSent, micros_since(start), datagram});
            }
            // A failed send is indistinguishable from loss on the wire; the
            // session's retry/timeout logic covers it either way.
            (void)::send(sock.get(), datagram.data(), datagram.size(), 0);
        }
    };

    flush_outgoing();
    std::vector<uint8_t> buf(65536);
    while (!session.done()) {
        pollfd pfd{};
        pfd.fd = sock.get();
        pfd.events = POLLIN;
        int rc = ::poll(&pfd, 1, cfg.timeout_ms);
        if (rc < 0) {
            if (errno == EINTR) continue;
            throw std::runtime_error(std::string("poll failed: ") + std::strerror(errno));
        }
        if (rc == 0) {
            session.on_timeout();
            flush_outgoing();
            continue;
        }
        bool got_data = false;
        for (;;) {
            ssize_t n = ::recv(sock.get(), buf.data(), buf.size(), MSG_DONTWAIT);
            if (n < 0) {
                // ECONNREFUSED surfaces when the peer sent ICMP port-unreachable;
                // treat it like silence and let the timeout path decide.
                break;
            }
            if (n == 0) continue;
            got_data = true;
            Bytes datagram(buf.begin(), buf.begin() + n);
            if (opts.capture != nullptr) {
                opts.capture->records.push_back(
                    CaptureRecord{kDirReceived, micros_since(start), datagram});
            }
            session.on_datagram(datagram);
            flush_outgoing();
            if (session.done()) break;
        }
        if (!got_data) {
            session.on_timeout();
            flush_outgoing();
        }
    }
    return session.result();
}

}  // namespace quicscout::probe
