#pragma once

// Live transport for probe sessions: resolves a target, moves datagrams over a
// connected UDP socket, enforces the shared send budget, and optionally records
// the whole exchange as a capture.

#include <chrono>
#include <deque>
#include <mutex>
#include <string>

#include "quicscout/session.hpp"

namespace quicscout::probe {

struct Target {
    std::string host;  // numeric address or resolvable name
    uint16_t port = 443;
};

// Sliding-window budget shared by all probe workers: at most `max_per_window`
// datagrams leave within any window.  The window is slightly longer than a
// second so that a configured per-second cap holds under scheduling jitter.
class RateLimiter {
public:
    explicit RateLimiter(int max_per_window,
                         std::chrono::milliseconds window = std::chrono::milliseconds(1050));
    void acquire();  // blocks until a slot is free
    int max_per_window() const { return max_; }

private:
    int max_;
    std::chrono::milliseconds window_;
    std::mutex mu_;
    std::deque<std::chrono::steady_clock::time_point> stamps_;
};

struct LiveOptions {
    RateLimiter* limiter = nullptr;  // optional shared send budget
    Capture* capture = nullptr;      // optional: receives the recorded exchange
};

// Drives one probe against a live endpoint until the session finishes.  Throws
// std::runtime_error when the target cannot be resolved or a socket fails.
ProbeResult run_probe(const Target& target, const ProbeConfig& cfg, const ClientIdentity& id,
                      const LiveOptions& opts = {});

}  // namespace quicscout::probe
