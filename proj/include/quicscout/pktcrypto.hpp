#pragma once

// QUIC packet protection and the slice of the TLS 1.3 key schedule the probe
// needs (RFC 9001, RFC 8446 §7.1, RFC 7748).  AEAD, hashing, HMAC, AES-ECB and
// X25519 are backed by OpenSSL's EVP layer; the QUIC-specific derivations
// (HKDF-Expand-Label, initial secrets, header protection, packet numbers) are
// implemented here and pinned by RFC test vectors in the test suite.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string_view>

#include "quicscout/bytes.hpp"
#include "quicscout/wire.hpp"

namespace quicscout::pktcrypto {

class CryptoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// AEAD tag mismatch or header protection applied with the wrong keys.
class AuthenticationError : public CryptoError {
public:
    using CryptoError::CryptoError;
};

enum class Aead : uint8_t { aes128_gcm, aes256_gcm, chacha20_poly1305 };

inline constexpr size_t kAeadTagLen = 16;
inline constexpr size_t kAeadNonceLen = 12;
inline constexpr size_t kSampleLen = 16;

size_t aead_key_len(Aead a);
const char* aead_name(Aead a);

// The probe offers TLS_AES_128_GCM_SHA256 and TLS_CHACHA20_POLY1305_SHA256 only,
// so every derivation below runs over SHA-256.
Bytes sha256(ByteView data);
Bytes hmac_sha256(ByteView key, ByteView data);
Bytes hkdf_extract(ByteView salt, ByteView ikm);
Bytes hkdf_expand(ByteView prk, ByteView info, size_t out_len);
// HkdfLabel framing per RFC 8446 §7.1; the "tls13 " prefix is applied here.
Bytes hkdf_expand_label(ByteView secret, std::string_view label, ByteView context, size_t out_len);

struct DirectionalKeys {
    Aead aead = Aead::aes128_gcm;
    Bytes key;
    Bytes iv;  // 12 bytes
    Bytes hp;  // header protection key
};

// Packet protection keys from a traffic secret: labels "quic key" / "quic iv" /
// "quic hp" (RFC 9001 §5.1).
DirectionalKeys derive_packet_keys(ByteView secret, Aead aead);

struct InitialKeys {
    Bytes client_secret;
    Bytes server_secret;
    DirectionalKeys client;
    DirectionalKeys server;
};

// RFC 9001 §5.2: HKDF-Extract(v1 salt, dcid) then per-direction "client in" /
// "server in".  Only version 1 has a defined salt; anything else throws.
InitialKeys derive_initial_keys(const wire::ConnectionId& dcid, uint32_t version);

// ---------------------------------------------------------------- AEAD core ----

// Nonce is iv XOR left-padded packet number.  `header` is the AAD (the full
// plaintext packet header, packet number included).
Bytes aead_seal(const DirectionalKeys& k, uint64_t packet_number, ByteView header, ByteView plaintext);
// Throws AuthenticationError when the tag does not verify.
Bytes aead_open(const DirectionalKeys& k, uint64_t packet_number, ByteView header, ByteView ciphertext);

// 5-byte header protection mask from a 16-byte ciphertext sample (RFC 9001 §5.4):
// AES-ECB of the sample for AES suites, ChaCha20 keystream for ChaCha.
Bytes hp_mask(const DirectionalKeys& k, ByteView sample);

// ------------------------------------------------------------ packet numbers ----

// Truncated encoding: low pn_len bytes, big endian.
Bytes encode_packet_number(uint64_t packet_number, size_t pn_len);
// Recovers a full packet number from its truncation (RFC 9000 appendix A.3),
// centered on largest_received + 1 (or 0 when nothing was received yet).
uint64_t decode_packet_number(std::optional<uint64_t> largest_received, uint64_t truncated,
                              size_t pn_len);

// ------------------------------------------------------- whole-packet protect ----

// `plain_header` must end with the pn_len-byte packet number at pn_offset (as
// produced by wire::build_packet_header).  Returns header || ciphertext with
// header protection applied.
Bytes protect_packet(const DirectionalKeys& k, ByteView plain_header, size_t pn_offset,
                     size_t pn_len, uint64_t packet_number, ByteView payload);

struct UnprotectedPacket {
    Bytes plaintext;
    uint64_t packet_number = 0;
    size_t pn_len = 0;
};

// Removes header protection and decrypts.  `packet` is the full packet span
// (header at offset 0); pn_offset as reported by wire::parse_long_header but
// rebased to the packet start.  Throws CryptoError / AuthenticationError.
UnprotectedPacket unprotect_packet(const DirectionalKeys& k, ByteView packet, size_t pn_offset,
                                   std::optional<uint64_t> largest_received);

// -------------------------------------------------------------------- X25519 ----

struct KeyExchange {
    Bytes private_key;  // 32 bytes
    Bytes public_key;   // 32 bytes
};

KeyExchange x25519_generate();
KeyExchange x25519_from_private(ByteView private_key);
// Throws CryptoError on malformed input or an all-zero (degenerate) result.
Bytes x25519_shared(ByteView private_key, ByteView peer_public);

// -------------------------------------------------------- TLS 1.3 key schedule ----

struct HandshakeSecrets {
    Bytes client;  // client_handshake_traffic_secret
    Bytes server;
};

// Early secret (no PSK) -> derived -> handshake secret from the ECDHE shared
// secret, then the two handshake traffic secrets over the CH..SH transcript hash.
HandshakeSecrets tls13_handshake_secrets(ByteView ecdhe_shared, ByteView transcript_hash);

// Maps a negotiated cipher suite to its AEAD; throws CryptoError for suites the
// probe never offers (anything outside 0x1301 / 0x1303).
Aead aead_for_cipher_suite(uint16_t suite);

// ------------------------------------------------------------ retry integrity ----

// RFC 9001 §5.8: tag over odcid-prefixed pseudo-packet with the fixed v1 key/nonce.
Bytes retry_integrity_tag(const wire::ConnectionId& original_dcid, ByteView retry_without_tag);
bool verify_retry_integrity(const wire::ConnectionId& original_dcid, ByteView retry_packet);

}  // namespace quicscout::pktcrypto
