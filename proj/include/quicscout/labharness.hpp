#pragma once

// Scripted QUIC server endpoints for exercising the prober end to end.  Each
// script reproduces one library's observable first-flight behaviour: extension
// ordering in the ServerHello, transport-parameter ordering (fixed or shuffled
// per connection), and the reaction to an unacceptable ALPN offer or a missing
// SNI.  A Farm binds one loopback UDP socket per script and answers probes on a
// thread per listener.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "quicscout/bytes.hpp"
#include "quicscout/fingerprint.hpp"
#include "quicscout/tlsmini.hpp"

namespace quicscout::lab {

// One CONNECTION_CLOSE frame a script sends when it rejects the handshake.
struct Close {
    uint64_t code = 0;
    uint64_t trigger_frame_type = 0;  // transport-level closes carry this on the wire
    std::string reason;               // "{alpn}" expands to the client's first offer
    bool application = false;         // true -> application-level close (0x1d)
};

enum class SniPolicy : uint8_t {
    ignore,         // SNI optional
    require_close,  // no SNI -> send `sni_close`
    require_silent  // no SNI -> say nothing
};

struct Script {
    std::string library;
    std::vector<tlsmini::ExtOrderSignature> signatures;  // >1 -> per-connection pick
    fingerprint::TpOrderKind tp_kind = fingerprint::TpOrderKind::fixed;
    std::vector<uint64_t> tp_ids;  // emission order (fixed) or id pool (randomized)

    // Reaction when no offered ALPN matches `supported_alpn`.
    std::vector<Close> alpn_closes;      // one packet carrying these frames
    bool continue_without_alpn = false;  // finish the handshake, omit ALPN from the reply
    bool silent_drop_on_alpn = false;    // drop the connection without a word

    std::string supported_alpn = "h3";
    SniPolicy sni_policy = SniPolicy::ignore;
    std::optional<Close> sni_close;  // used with SniPolicy::require_close

    std::map<uint64_t, Bytes> tp_value_overrides;  // raw value bytes per id
    bool send_retry_first = false;
    bool send_hello_retry_request_first = false;
    uint16_t cipher_suite = tlsmini::kTlsAes128GcmSha256;
};

// The script for one of the built-in libraries; throws std::out_of_range for an
// unknown name.
Script script_for(const std::string& library);
// Names of all built-in scripts, sorted.
std::vector<std::string> farm_libraries();
// lsquic built with strict SNI checking: closes 0x150 ("TLS alert 80") when the
// ClientHello carries no server name.
Script lsquic_strict_sni_script();

// A single scripted endpoint: feed it client datagrams, collect its replies.
// Deterministic given (script, seed, client connection ids).  Not thread-safe;
// each Farm listener owns one.
class ScriptEndpoint {
public:
    ScriptEndpoint(Script script, uint64_t seed);
    ~ScriptEndpoint();
    ScriptEndpoint(ScriptEndpoint&&) noexcept;
    ScriptEndpoint& operator=(ScriptEndpoint&&) noexcept;

    std::vector<Bytes> handle_datagram(ByteView datagram);
    const Script& script() const { return script_; }

private:
    struct Conn;
    Conn& conn_for(const Bytes& client_scid);
    std::vector<Bytes> respond(Conn& c, const tlsmini::ClientHelloSummary& ch);
    Bytes close_packet(Conn& c, const std::vector<Close>& closes, const std::string& offered_alpn);
    Bytes initial_packet(Conn& c, const Bytes& frames, size_t pad_datagram_to, size_t tail_len);

    Script script_;
    uint64_t seed_;
    std::map<std::string, std::unique_ptr<Conn>> conns_;  // keyed by client scid hex
};

// One UDP listener per script, all on 127.0.0.1 with kernel-assigned ports.
class Farm {
public:
    Farm(std::vector<Script> scripts, uint64_t seed);
    // All built-in library scripts.
    static Farm standard(uint64_t seed);
    ~Farm();
    Farm(const Farm&) = delete;
    Farm& operator=(const Farm&) = delete;

    void start();
    void stop();

    struct Entry {
        std::string library;
        uint16_t port = 0;
    };
    std::vector<Entry> entries() const;
    uint16_t port_for(const std::string& library) const;
    std::string manifest_json() const;

    // Arrival times (seconds since start()) of every datagram any listener
    // received; lets tests audit the prober's send rate.
    std::vector<double> arrival_seconds() const;

private:
    struct Listener;
    void serve(Listener& l);

    std::vector<std::unique_ptr<Listener>> listeners_;
    uint64_t seed_;
    std::atomic<bool> running_{false};
    std::chrono::steady_clock::time_point start_time_;
    mutable std::mutex arrivals_mu_;
    std::vector<double> arrivals_;
};

}  // namespace quicscout::lab
