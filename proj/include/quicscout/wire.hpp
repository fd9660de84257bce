#pragma once

// QUIC v1 wire formats: variable-length integers, long packet headers, coalesced
// datagram splitting, version negotiation, and the frame subset a first-flight
// observer needs (RFC 9000 §16-§19).  Everything here is plaintext structure;
// packet protection lives in pktcrypto.

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "quicscout/bytes.hpp"

namespace quicscout::wire {

// ---------------------------------------------------------------- varints ----

inline constexpr uint64_t kVarintMax = (uint64_t{1} << 62) - 1;

// Smallest encoding: 1/2/4/8 bytes for values below 2^6/2^14/2^30/2^62.
size_t varint_size(uint64_t v);
void write_varint(ByteWriter& w, uint64_t v);
Bytes encode_varint(uint64_t v);
uint64_t read_varint(ByteReader& r);
// Convenience wrapper: returns {value, bytes consumed}.
std::pair<uint64_t, size_t> decode_varint(ByteView in);

// ---------------------------------------------------------------- versions ----

inline constexpr uint32_t kQuicV1 = 0x00000001;
// Default version for the negotiation-forcing probe; any pattern-reserved value works.
inline constexpr uint32_t kDefaultReservedVersion = 0x1a2a3a4a;

// RFC 9000 §15: versions matching 0x?a?a?a?a are reserved to exercise negotiation.
inline constexpr bool is_reserved_version(uint32_t v) {
    return (v & 0x0f0f0f0f) == 0x0a0a0a0a;
}

// ------------------------------------------------------------ connection id ----

inline constexpr size_t kMaxCidLen = 20;

struct ConnectionId {
    Bytes id;

    ConnectionId() = default;
    explicit ConnectionId(Bytes b) : id(std::move(b)) {
        if (id.size() > kMaxCidLen) throw std::invalid_argument("connection id longer than 20 bytes");
    }
    static ConnectionId from_hex(std::string_view h) { return ConnectionId(quicscout::from_hex(h)); }

    size_t size() const { return id.size(); }
    bool empty() const { return id.empty(); }
    std::string hex() const { return to_hex(id); }
    bool operator==(const ConnectionId&) const = default;
    bool operator<(const ConnectionId& o) const { return id < o.id; }
};

// -------------------------------------------------------------- long header ----

enum class PacketType : uint8_t { initial, zero_rtt, handshake, retry, version_negotiation };

const char* packet_type_name(PacketType t);

struct LongHeader {
    PacketType type = PacketType::initial;
    uint32_t version = 0;
    ConnectionId dcid;
    ConnectionId scid;
    Bytes token;          // Initial: token field; Retry: retry token (integrity tag excluded)
    Bytes retry_tag;      // Retry only: trailing 16-byte integrity tag
    uint64_t length = 0;  // packet number + protected payload length (absent for Retry/VN)
    uint8_t first_byte = 0;
    size_t header_start = 0;  // offsets below are relative to the buffer given to the parser
    size_t pn_offset = 0;     // first byte of the (protected) packet number field
    size_t packet_end = 0;    // one past the last byte belonging to this packet
};

// Parses one long header starting at `offset`.  For Initial/0-RTT/Handshake the
// packet extends to pn_offset + length; for Retry and Version Negotiation it
// consumes the rest of the datagram.  Throws ParseError on truncation, a clear
// fixed bit (except VN), or oversized connection ids.
LongHeader parse_long_header(ByteView datagram, size_t offset = 0);

struct RawPacket {
    LongHeader header;
    ByteView packet;  // the packet's full byte span inside the datagram
};

// Splits a datagram into its coalesced long-header packets.  Iteration stops at
// the first byte without the long-header form bit; that remainder (a short-header
// packet or padding) is returned as `trailer`.  The spans partition the datagram.
struct SplitResult {
    std::vector<RawPacket> packets;
    ByteView trailer;
};
SplitResult split_coalesced(ByteView datagram);

// Builds the plaintext header of an Initial/Handshake/0-RTT packet, ending with
// the pn_len-byte truncated packet number.  The length field is set to
// pn_len + payload_len + aead_overhead.
struct LongHeaderSpec {
    PacketType type = PacketType::initial;
    uint32_t version = kQuicV1;
    ConnectionId dcid;
    ConnectionId scid;
    Bytes token;  // Initial only
};
Bytes build_packet_header(const LongHeaderSpec& spec, uint64_t packet_number, size_t pn_len,
                          size_t payload_len, size_t aead_overhead = 16);

// ------------------------------------------------------ version negotiation ----

struct VersionNegotiation {
    ConnectionId dcid;
    ConnectionId scid;
    std::vector<uint32_t> versions;
};

// Strict parse: version field must be zero, the list must be non-empty and a
// multiple of four bytes.  Throws ParseError otherwise.
VersionNegotiation parse_version_negotiation(ByteView datagram);
Bytes build_version_negotiation(const ConnectionId& dcid, const ConnectionId& scid,
                                const std::vector<uint32_t>& versions);

// -------------------------------------------------------------------- frames ----

namespace frame_type {
inline constexpr uint64_t padding = 0x00;
inline constexpr uint64_t ping = 0x01;
inline constexpr uint64_t ack = 0x02;
inline constexpr uint64_t ack_ecn = 0x03;
inline constexpr uint64_t crypto = 0x06;
inline constexpr uint64_t connection_close = 0x1c;      // transport-level
inline constexpr uint64_t connection_close_app = 0x1d;  // application-level
}  // namespace frame_type

namespace transport_error {
inline constexpr uint64_t no_error = 0x00;
inline constexpr uint64_t protocol_violation = 0x0a;
inline constexpr uint64_t crypto_base = 0x100;  // 0x100 + TLS alert code
inline constexpr uint64_t crypto_handshake_failure = 0x128;  // alert 40
inline constexpr uint64_t crypto_internal_error = 0x150;     // alert 80
inline constexpr uint64_t crypto_no_application_protocol = 0x178;  // alert 120
}  // namespace transport_error

struct PaddingFrame {
    uint64_t count = 0;  // contiguous zero bytes, run-length coalesced
};
struct PingFrame {};
struct AckRange {
    uint64_t smallest = 0;
    uint64_t largest = 0;
};
struct AckFrame {
    uint64_t largest_acked = 0;
    uint64_t ack_delay = 0;  // raw varint, exponent not applied
    std::vector<AckRange> ranges;
    bool ecn = false;  // ECN counts parsed and discarded
};
struct CryptoFrame {
    uint64_t offset = 0;
    Bytes data;
};
struct ConnectionCloseFrame {
    uint64_t error_code = 0;
    std::optional<uint64_t> trigger_frame_type;  // transport-level closes only
    Bytes reason_raw;                            // exact wire bytes
    std::string reason;                          // UTF-8; invalid sequences replaced with U+FFFD
    bool reason_valid_utf8 = true;
    bool application = false;  // true for 0x1d
};
// Any parseable frame outside the subset above; body spans its wire content.
struct OpaqueFrame {
    uint64_t type = 0;
    Bytes body;
};

struct Frame {
    std::variant<PaddingFrame, PingFrame, AckFrame, CryptoFrame, ConnectionCloseFrame, OpaqueFrame> v;
    size_t wire_offset = 0;  // where in the payload this frame started
    size_t wire_size = 0;    // bytes consumed, including the type
};

// Walks a decrypted packet payload.  Frames come back in wire order and their
// consumed spans exactly partition the input; a malformed frame raises a
// positioned ParseError rather than silently dropping bytes.  Frame types with a
// known RFC 9000 grammar but outside the subset are skipped into OpaqueFrame.
std::vector<Frame> parse_frames(ByteView payload);

void write_padding(ByteWriter& w, size_t n);
void write_ping(ByteWriter& w);
// Single-range ACK: acknowledges [largest - first_range, largest].
void write_ack(ByteWriter& w, uint64_t largest, uint64_t ack_delay, uint64_t first_range = 0);
void write_crypto(ByteWriter& w, uint64_t offset, ByteView data);
void write_connection_close(ByteWriter& w, uint64_t error_code, uint64_t trigger_frame_type,
                            std::string_view reason, bool application = false);

// Returns true iff `s` is well-formed UTF-8 (used for close reason phrases).
bool is_valid_utf8(ByteView s);
// Lossy decode: invalid sequences become U+FFFD.
std::string utf8_lossy(ByteView s);

}  // namespace quicscout::wire
