#pragma once

// Socket-free probe state machine.  The caller moves datagrams between the
// session and a transport (live UDP or a capture being replayed); given the same
// identity, configuration, and incoming datagrams, the session's behavior and
// final result are bit-for-bit reproducible.

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "quicscout/capture.hpp"
#include "quicscout/fingerprint.hpp"
#include "quicscout/pktcrypto.hpp"
#include "quicscout/rng.hpp"
#include "quicscout/tlsmini.hpp"
#include "quicscout/wire.hpp"

namespace quicscout::probe {

enum class Outcome : uint8_t {
    timeout,              // nothing, or an incomplete flight, within the window
    version_negotiation,  // server answered with a version list
    closed,               // server sent CONNECTION_CLOSE
    handshake_progressed, // first flight parsed through EncryptedExtensions
    unparseable,          // response violated the wire format or the crypto failed
};
const char* outcome_name(Outcome o);

struct ProbeConfig {
    ProbeKind kind = ProbeKind::handshake;
    std::string alpn = "h3";
    std::optional<std::string> sni;
    uint32_t reserved_version = wire::kDefaultReservedVersion;  // version-negotiation probes
    int timeout_ms = 3000;        // receive window per wait (used by the runner)
    int retries = 1;              // first-flight resends when nothing arrives
    int max_ack_round_trips = 2;  // ack datagrams sent before giving up on progress
};

struct ClientIdentity {
    wire::ConnectionId dcid;  // also the key for the server's initial secrets
    wire::ConnectionId scid;
    Bytes x25519_private;  // 32 bytes
    Bytes client_random;   // 32 bytes
};
ClientIdentity make_identity(DetRng& rng);

struct ProbeResult {
    Outcome outcome = Outcome::timeout;
    fingerprint::FlightObservation observation;
    std::vector<uint32_t> offered_versions;  // version-negotiation answers
    std::vector<tlsmini::TransportParam> raw_transport_params;  // EE values as sent
    std::optional<std::string> alpn_selected;
    std::optional<uint16_t> cipher_suite;
    std::string failure_detail;  // set for unparseable outcomes
    bool saw_retry = false;
    bool saw_hello_retry_request = false;
    int datagrams_sent = 0;
    int datagrams_received = 0;
};

class ProbeSession {
public:
    ProbeSession(ProbeConfig cfg, ClientIdentity id);

    // Datagrams the caller must transmit now (empties the queue).
    std::vector<Bytes> take_outgoing();
    // Feed one server datagram.  No-op once done.
    void on_datagram(ByteView datagram);
    // The receive window expired with nothing new; may queue a resend.
    void on_timeout();

    bool done() const { return done_; }
    const ProbeResult& result() const { return result_; }
    const ProbeConfig& config() const { return cfg_; }
    const ClientIdentity& identity() const { return id_; }

private:
    void queue(Bytes datagram);
    void start();
    Bytes build_client_hello_bytes() const;
    Bytes protected_initial(const Bytes& frames, size_t pad_datagram_to, size_t tail_len);
    Bytes protected_handshake(const Bytes& frames);
    void handle_version_negotiation(ByteView packet);
    void handle_retry(const wire::LongHeader& h, ByteView packet);
    void handle_initial(const wire::LongHeader& h, ByteView packet);
    void handle_handshake_packet(ByteView packet, size_t pn_offset);
    void drain_initial_messages();
    void drain_handshake_messages();
    void derive_handshake_keys(const tlsmini::ServerHelloSummary& sh);
    void record_close(const wire::ConnectionCloseFrame& f);
    void send_acks(bool include_close);
    void finish(Outcome o);
    void fail(std::string detail);

    ProbeConfig cfg_;
    ClientIdentity id_;
    ProbeResult result_;
    bool done_ = false;
    std::vector<Bytes> outgoing_;
    Bytes first_datagram_;  // kept for silence resends
    int resends_left_ = 0;

    // QUIC/TLS state (handshake probes)
    wire::ConnectionId remote_cid_;  // dcid for outgoing packets
    bool remote_cid_known_ = false;
    Bytes token_;  // retry token to echo
    pktcrypto::InitialKeys initial_keys_;
    uint64_t next_initial_pn_ = 0;
    uint64_t next_handshake_pn_ = 0;
    std::optional<uint64_t> largest_initial_received_;
    std::optional<uint64_t> largest_handshake_received_;
    std::set<uint64_t> initial_pns_received_;
    std::set<uint64_t> handshake_pns_received_;
    Bytes client_hello_;  // latest ClientHello message (transcript tail on resend)
    Bytes cookie_;        // echoed after a HelloRetryRequest
    Bytes transcript_;    // handshake messages so far
    uint64_t client_crypto_offset_ = 0;
    tlsmini::CryptoStream crypto_initial_;
    tlsmini::CryptoStream crypto_handshake_;
    bool server_hello_seen_ = false;
    bool encrypted_extensions_seen_ = false;
    bool hrr_seen_ = false;
    bool retry_seen_ = false;
    bool handshake_keys_ready_ = false;
    pktcrypto::DirectionalKeys client_handshake_keys_;
    pktcrypto::DirectionalKeys server_handshake_keys_;
    struct PendingPacket {
        Bytes packet;
        size_t pn_offset;
    };
    std::vector<PendingPacket> pending_handshake_;  // arrived before the keys
    int ack_datagrams_sent_ = 0;
};

// Re-run a recorded probe offline and reproduce its result.
ProbeResult replay_capture(const Capture& c);

// The client transport parameters every handshake probe offers.
std::vector<tlsmini::TransportParam> client_transport_params(const wire::ConnectionId& scid);

}  // namespace quicscout::probe
