#pragma once

// Minimal TLS 1.3 handshake codec for QUIC first flights: build a deterministic
// ClientHello, parse ServerHello / EncryptedExtensions into ordering-aware
// summaries, reassemble CRYPTO streams, and (for the lab endpoints) build the
// server-side messages.  No certificate processing: identification needs only
// the first flight up to EncryptedExtensions.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "quicscout/bytes.hpp"

namespace quicscout::tlsmini {

// --------------------------------------------------------------- constants ----

namespace ext {
inline constexpr uint16_t server_name = 0;
inline constexpr uint16_t supported_groups = 10;
inline constexpr uint16_t signature_algorithms = 13;
inline constexpr uint16_t alpn = 16;
inline constexpr uint16_t supported_versions = 43;
inline constexpr uint16_t cookie = 44;
inline constexpr uint16_t key_share = 51;
inline constexpr uint16_t quic_transport_parameters = 0x39;
}  // namespace ext

namespace msg {
inline constexpr uint8_t client_hello = 1;
inline constexpr uint8_t server_hello = 2;
inline constexpr uint8_t encrypted_extensions = 8;
}  // namespace msg

inline constexpr uint16_t kTlsAes128GcmSha256 = 0x1301;
inline constexpr uint16_t kTlsChacha20Poly1305Sha256 = 0x1303;
inline constexpr uint16_t kGroupX25519 = 0x001d;

// The fixed ServerHello.random value that marks a HelloRetryRequest (RFC 8446 §4.1.3).
extern const uint8_t kHelloRetryRequestRandom[32];

// ------------------------------------------------------ transport parameters ----

struct TransportParam {
    uint64_t id = 0;
    Bytes value;
    bool operator==(const TransportParam&) const = default;
};

// RFC 9000 §18.1: ids of the form 31*N+27 are reserved greasing values.
inline constexpr bool is_grease_tp_id(uint64_t id) {
    return id % 31 == 27;
}

Bytes encode_transport_params(const std::vector<TransportParam>& params);
std::vector<TransportParam> parse_transport_params(ByteView body);

// ---------------------------------------------------- extension order signal ----

// Relative order of supported_versions (43) and key_share (51) in the
// ServerHello extension block.
enum class ExtOrderSignature : uint8_t {
    supported_versions_first,  // "43-51"
    key_share_first,           // "51-43"
};

const char* to_string(ExtOrderSignature s);
std::optional<ExtOrderSignature> ext_signature_from_string(std::string_view s);
// Both codepoints must be present; otherwise nullopt (recorded as an anomaly upstream).
std::optional<ExtOrderSignature> ext_signature_of(const std::vector<uint16_t>& ext_order);

// ------------------------------------------------------------- client hello ----

struct ClientHelloConfig {
    std::optional<std::string> sni;
    std::vector<std::string> alpn;  // at least one entry
    std::vector<TransportParam> transport_params;
    Bytes key_share_public;  // x25519, 32 bytes
    Bytes random;            // 32 bytes
    Bytes session_id;        // legacy field, empty by default
    std::vector<uint16_t> cipher_suites{kTlsAes128GcmSha256, kTlsChacha20Poly1305Sha256};
    Bytes cookie;  // echoed after a HelloRetryRequest carrying one
};

// Returns the full handshake message (4-byte header included).  The output is a
// pure function of the config: no randomness, no GREASE, fixed extension order
// [sni?, alpn, supported_groups, signature_algorithms, supported_versions,
// key_share, quic_transport_parameters] with an optional cookie echo before alpn.
Bytes build_client_hello(const ClientHelloConfig& cfg);

// Parsed view used by the lab endpoints.
struct ClientHelloSummary {
    Bytes random;
    Bytes session_id;
    std::vector<uint16_t> cipher_suites;
    std::optional<std::string> sni;
    std::vector<std::string> alpn;
    Bytes key_share_x25519;  // empty when the client offered no x25519 share
    Bytes cookie;            // echoed after a HelloRetryRequest
    std::vector<TransportParam> transport_params;
    std::vector<uint16_t> ext_order;
};
ClientHelloSummary parse_client_hello(ByteView message);

// ------------------------------------------------------------- server hello ----

struct ServerHelloSummary {
    Bytes random;
    Bytes session_id_echo;
    uint16_t cipher_suite = 0;
    std::vector<uint16_t> ext_order;
    Bytes key_share_x25519;  // 32 bytes unless HRR
    bool is_hello_retry_request = false;
    std::optional<uint16_t> hrr_selected_group;
    Bytes hrr_cookie;
};
ServerHelloSummary parse_server_hello(ByteView message);

struct ServerHelloConfig {
    Bytes random;  // 32 bytes
    Bytes session_id_echo;
    uint16_t cipher_suite = kTlsAes128GcmSha256;
    ExtOrderSignature signature = ExtOrderSignature::supported_versions_first;
    Bytes key_share_public;  // x25519, 32 bytes
};
Bytes build_server_hello(const ServerHelloConfig& cfg);

// ----------------------------------------------------- encrypted extensions ----

struct EncryptedExtensionsSummary {
    std::vector<uint16_t> ext_order;
    std::vector<TransportParam> transport_params;  // wire order, values retained
    bool alpn_present = false;
    std::optional<std::string> alpn_selected;
    bool duplicate_tp_ids = false;  // anomaly, non-fatal
};
// Throws ParseError when the transport-parameters extension is missing: a QUIC
// server that omits it is broken enough to be recorded as unparseable.
EncryptedExtensionsSummary parse_encrypted_extensions(ByteView message);

struct EncryptedExtensionsConfig {
    std::optional<std::string> alpn;  // nullopt -> no alpn extension at all
    std::vector<TransportParam> transport_params;
};
Bytes build_encrypted_extensions(const EncryptedExtensionsConfig& cfg);

// ------------------------------------------------------------ crypto stream ----

// Reassembles one encryption level's CRYPTO stream.  Out-of-order and
// overlapping segments are accepted; overlapping bytes must agree with what was
// already buffered (a mismatch raises ParseError, it would mean the peer sent
// two different streams).  next_message() hands out complete handshake messages
// from the contiguous prefix, header included.
class CryptoStream {
public:
    void insert(uint64_t offset, ByteView data);
    std::optional<Bytes> next_message();
    size_t contiguous_length() const;
    uint64_t bytes_buffered() const;

private:
    std::map<uint64_t, Bytes> segments_;  // merged, non-overlapping, keyed by offset
    size_t read_pos_ = 0;
};

}  // namespace quicscout::tlsmini
