#pragma once

// On-disk record of one probe exchange.  A capture carries the client identity
// (connection ids, key-exchange private key, hello random) and every datagram
// in both directions, which is enough to re-run the probe logic offline and
// reproduce the exact observation the live run made.

#include <cstdint>
#include <string>
#include <vector>

#include "quicscout/bytes.hpp"
#include "quicscout/wire.hpp"

namespace quicscout::probe {

enum class ProbeKind : uint8_t {
    version_negotiation = 0,  // reserved-version packet expecting a version list
    handshake = 1,            // full first flight carrying a ClientHello
};
const char* probe_kind_name(ProbeKind k);

inline constexpr uint8_t kDirSent = 0;      // client -> server
inline constexpr uint8_t kDirReceived = 1;  // server -> client

struct CaptureRecord {
    uint8_t dir = kDirSent;
    uint64_t t_micros = 0;  // relative to the first send
    Bytes data;
    bool operator==(const CaptureRecord&) const = default;
};

struct Capture {
    ProbeKind kind = ProbeKind::handshake;
    uint32_t version = wire::kQuicV1;  // wire version of the first flight
    std::string alpn;                  // empty for version-negotiation probes
    std::string sni;                   // empty = no server_name sent
    wire::ConnectionId dcid;
    wire::ConnectionId scid;
    Bytes x25519_private;  // 32 bytes for handshake probes, empty otherwise
    Bytes client_random;   // 32 bytes for handshake probes, empty otherwise
    std::vector<CaptureRecord> records;
    bool operator==(const Capture&) const = default;
};

Bytes serialize_capture(const Capture& c);
Capture parse_capture(ByteView data);  // throws ParseError on malformed input

void write_capture_file(const std::string& path, const Capture& c);
Capture read_capture_file(const std::string& path);

}  // namespace quicscout::probe
