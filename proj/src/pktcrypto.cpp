#include "quicscout/pktcrypto.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/rand.h>

#include <memory>

#include "quicscout/rng.hpp"

namespace quicscout {

Bytes secure_random(size_t n) {
    Bytes out(n);
    if (n > 0 && RAND_bytes(out.data(), static_cast<int>(n)) != 1)
        throw pktcrypto::CryptoError("RAND_bytes failed");
    return out;
}

}  // namespace quicscout

namespace quicscout::pktcrypto {

namespace {

struct CipherCtxDeleter {
    void operator()(EVP_CIPHER_CTX* p) const { EVP_CIPHER_CTX_free(p); }
};
struct PkeyDeleter {
    void operator()(EVP_PKEY* p) const { EVP_PKEY_free(p); }
};
struct PkeyCtxDeleter {
    void operator()(EVP_PKEY_CTX* p) const { EVP_PKEY_CTX_free(p); }
};
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter>;
using Pkey = std::unique_ptr<EVP_PKEY, PkeyDeleter>;
using PkeyCtx = std::unique_ptr<EVP_PKEY_CTX, PkeyCtxDeleter>;

CipherCtx new_cipher_ctx() {
    CipherCtx ctx(EVP_CIPHER_CTX_new());
    if (!ctx) throw CryptoError("EVP_CIPHER_CTX_new failed");
    return ctx;
}

const EVP_CIPHER* aead_cipher(Aead a) {
    switch (a) {
        case Aead::aes128_gcm: return EVP_aes_128_gcm();
        case Aead::aes256_gcm: return EVP_aes_256_gcm();
        case Aead::chacha20_poly1305: return EVP_chacha20_poly1305();
    }
    throw CryptoError("unknown AEAD");
}

// RFC 9001 §5.2.
const uint8_t kInitialSaltV1[20] = {0x38, 0x76, 0x2c, 0xf7, 0xf5, 0x59, 0x34, 0xb3, 0x4d, 0x17,
                                    0x9a, 0xe6, 0xa4, 0xc8, 0x0c, 0xad, 0xcc, 0xbb, 0x7f, 0x0a};

// RFC 9001 §5.8.
const uint8_t kRetryKeyV1[16] = {0xbe, 0x0c, 0x69, 0x0b, 0x9f, 0x66, 0x57, 0x5a,
                                 0x1d, 0x76, 0x6b, 0x54, 0xe3, 0x68, 0xc8, 0x4e};
const uint8_t kRetryNonceV1[12] = {0x46, 0x15, 0x99, 0xd3, 0x5d, 0x63, 0x2b, 0xf2,
                                   0x23, 0x98, 0x25, 0xbb};

Bytes make_nonce(const Bytes& iv, uint64_t packet_number) {
    if (iv.size() != kAeadNonceLen) throw CryptoError("iv must be 12 bytes");
    Bytes nonce = iv;
    for (size_t i = 0; i < 8; i++)
        nonce[kAeadNonceLen - 1 - i] ^= static_cast<uint8_t>(packet_number >> (8 * i));
    return nonce;
}

}  // namespace

size_t aead_key_len(Aead a) {
    return a == Aead::aes128_gcm ? 16 : 32;
}

const char* aead_name(Aead a) {
    switch (a) {
        case Aead::aes128_gcm: return "aes-128-gcm";
        case Aead::aes256_gcm: return "aes-256-gcm";
        case Aead::chacha20_poly1305: return "chacha20-poly1305";
    }
    return "?";
}

Bytes sha256(ByteView data) {
    Bytes out(32);
    unsigned int n = 0;
    if (EVP_Digest(data.data(), data.size(), out.data(), &n, EVP_sha256(), nullptr) != 1 || n != 32)
        throw CryptoError("SHA-256 failed");
    return out;
}

Bytes hmac_sha256(ByteView key, ByteView data) {
    Bytes out(32);
    unsigned int n = 0;
    if (!HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), data.data(), data.size(),
              out.data(), &n) ||
        n != 32)
        throw CryptoError("HMAC-SHA256 failed");
    return out;
}

Bytes hkdf_extract(ByteView salt, ByteView ikm) {
    // RFC 5869: an absent salt is a string of HashLen zeros; HMAC zero-pads the
    // key anyway, so passing the salt as given is equivalent.
    return hmac_sha256(salt, ikm);
}

Bytes hkdf_expand(ByteView prk, ByteView info, size_t out_len) {
    if (out_len > 255 * 32) throw CryptoError("HKDF output too long");
    Bytes out;
    out.reserve(out_len);
    Bytes block;
    uint8_t counter = 1;
    while (out.size() < out_len) {
        Bytes input = block;
        input.insert(input.end(), info.begin(), info.end());
        input.push_back(counter++);
        block = hmac_sha256(prk, input);
        size_t take = std::min(block.size(), out_len - out.size());
        out.insert(out.end(), block.begin(), block.begin() + take);
    }
    return out;
}

Bytes hkdf_expand_label(ByteView secret, std::string_view label, ByteView context, size_t out_len) {
    // struct HkdfLabel { uint16 length; opaque label<7..255>; opaque context<0..255>; }
    // with "tls13 " prepended to the label (RFC 8446 §7.1).
    std::string full_label = "tls13 ";
    full_label += label;
    if (full_label.size() > 255 || context.size() > 255)
        throw CryptoError("hkdf label/context too long");
    ByteWriter info;
    info.u16(static_cast<uint16_t>(out_len));
    info.u8(static_cast<uint8_t>(full_label.size()));
    info.bytes(ByteView(reinterpret_cast<const uint8_t*>(full_label.data()), full_label.size()));
    info.u8(static_cast<uint8_t>(context.size()));
    info.bytes(context);
    return hkdf_expand(secret, info.view(), out_len);
}

DirectionalKeys derive_packet_keys(ByteView secret, Aead aead) {
    DirectionalKeys k;
    k.aead = aead;
    k.key = hkdf_expand_label(secret, "quic key", {}, aead_key_len(aead));
    k.iv = hkdf_expand_label(secret, "quic iv", {}, kAeadNonceLen);
    k.hp = hkdf_expand_label(secret, "quic hp", {}, aead_key_len(aead));
    return k;
}

InitialKeys derive_initial_keys(const wire::ConnectionId& dcid, uint32_t version) {
    if (version != wire::kQuicV1)
        throw CryptoError("no initial salt defined for version " + std::to_string(version));
    Bytes initial_secret = hkdf_extract(ByteView(kInitialSaltV1, sizeof kInitialSaltV1), dcid.id);
    InitialKeys out;
    out.client_secret = hkdf_expand_label(initial_secret, "client in", {}, 32);
    out.server_secret = hkdf_expand_label(initial_secret, "server in", {}, 32);
    out.client = derive_packet_keys(out.client_secret, Aead::aes128_gcm);
    out.server = derive_packet_keys(out.server_secret, Aead::aes128_gcm);
    return out;
}

// ---------------------------------------------------------------- AEAD core ----

Bytes aead_seal(const DirectionalKeys& k, uint64_t packet_number, ByteView header, ByteView plaintext) {
    Bytes nonce = make_nonce(k.iv, packet_number);
    CipherCtx ctx = new_cipher_ctx();
    if (EVP_EncryptInit_ex(ctx.get(), aead_cipher(k.aead), nullptr, nullptr, nullptr) != 1 ||
        EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_AEAD_SET_IVLEN, kAeadNonceLen, nullptr) != 1 ||
        EVP_EncryptInit_ex(ctx.get(), nullptr, nullptr, k.key.data(), nonce.data()) != 1)
        throw CryptoError("AEAD init failed");

    int n = 0;
    if (!header.empty() &&
        EVP_EncryptUpdate(ctx.get(), nullptr, &n, header.data(), static_cast<int>(header.size())) != 1)
        throw CryptoError("AEAD aad failed");

    Bytes out(plaintext.size() + kAeadTagLen);
    int written = 0;
    if (!plaintext.empty()) {
        if (EVP_EncryptUpdate(ctx.get(), out.data(), &n, plaintext.data(),
                              static_cast<int>(plaintext.size())) != 1)
            throw CryptoError("AEAD encrypt failed");
        written = n;
    }
    if (EVP_EncryptFinal_ex(ctx.get(), out.data() + written, &n) != 1)
        throw CryptoError("AEAD final failed");
    written += n;
    if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_AEAD_GET_TAG, kAeadTagLen, out.data() + written) != 1)
        throw CryptoError("AEAD tag failed");
    out.resize(written + kAeadTagLen);
    return out;
}

Bytes aead_open(const DirectionalKeys& k, uint64_t packet_number, ByteView header, ByteView ciphertext) {
    if (ciphertext.size() < kAeadTagLen) throw CryptoError("ciphertext shorter than AEAD tag");
    Bytes nonce = make_nonce(k.iv, packet_number);
    CipherCtx ctx = new_cipher_ctx();
    if (EVP_DecryptInit_ex(ctx.get(), aead_cipher(k.aead), nullptr, nullptr, nullptr) != 1 ||
        EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_AEAD_SET_IVLEN, kAeadNonceLen, nullptr) != 1 ||
        EVP_DecryptInit_ex(ctx.get(), nullptr, nullptr, k.key.data(), nonce.data()) != 1)
        throw CryptoError("AEAD init failed");

    int n = 0;
    if (!header.empty() &&
        EVP_DecryptUpdate(ctx.get(), nullptr, &n, header.data(), static_cast<int>(header.size())) != 1)
        throw CryptoError("AEAD aad failed");

    size_t body_len = ciphertext.size() - kAeadTagLen;
    Bytes out(body_len);
    int written = 0;
    if (body_len > 0) {
        if (EVP_DecryptUpdate(ctx.get(), out.data(), &n, ciphertext.data(),
                              static_cast<int>(body_len)) != 1)
            throw CryptoError("AEAD decrypt failed");
        written = n;
    }
    Bytes tag(ciphertext.end() - kAeadTagLen, ciphertext.end());
    if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_AEAD_SET_TAG, kAeadTagLen, tag.data()) != 1)
        throw CryptoError("AEAD tag set failed");
    if (EVP_DecryptFinal_ex(ctx.get(), out.data() + written, &n) != 1)
        throw AuthenticationError("AEAD authentication failed");
    out.resize(written + n);
    return out;
}

Bytes hp_mask(const DirectionalKeys& k, ByteView sample) {
    if (sample.size() != kSampleLen) throw CryptoError("header protection sample must be 16 bytes");
    CipherCtx ctx = new_cipher_ctx();
    Bytes mask(5);
    int n = 0;
    if (k.aead == Aead::chacha20_poly1305) {
        // Counter = sample[0..3] (little endian), nonce = sample[4..15]; OpenSSL's
        // ChaCha20 IV is exactly counter||nonce in that byte order.
        static const uint8_t zeros[5] = {0, 0, 0, 0, 0};
        if (EVP_EncryptInit_ex(ctx.get(), EVP_chacha20(), nullptr, k.hp.data(), sample.data()) != 1 ||
            EVP_EncryptUpdate(ctx.get(), mask.data(), &n, zeros, 5) != 1 || n != 5)
            throw CryptoError("chacha header protection failed");
        return mask;
    }
    const EVP_CIPHER* ecb = k.aead == Aead::aes128_gcm ? EVP_aes_128_ecb() : EVP_aes_256_ecb();
    Bytes block(kSampleLen + 16);  // room for a padding block EVP might emit
    if (EVP_EncryptInit_ex(ctx.get(), ecb, nullptr, k.hp.data(), nullptr) != 1 ||
        EVP_EncryptUpdate(ctx.get(), block.data(), &n, sample.data(), kSampleLen) != 1 ||
        n < 5)
        throw CryptoError("aes-ecb header protection failed");
    mask.assign(block.begin(), block.begin() + 5);
    return mask;
}

// ------------------------------------------------------------ packet numbers ----

Bytes encode_packet_number(uint64_t packet_number, size_t pn_len) {
    if (pn_len < 1 || pn_len > 4) throw std::invalid_argument("packet number length must be 1..4");
    Bytes out(pn_len);
    for (size_t i = 0; i < pn_len; i++)
        out[pn_len - 1 - i] = static_cast<uint8_t>(packet_number >> (8 * i));
    return out;
}

uint64_t decode_packet_number(std::optional<uint64_t> largest_received, uint64_t truncated,
                              size_t pn_len) {
    if (pn_len < 1 || pn_len > 4) throw std::invalid_argument("packet number length must be 1..4");
    uint64_t expected = largest_received ? *largest_received + 1 : 0;
    uint64_t win = uint64_t{1} << (pn_len * 8);
    uint64_t hwin = win / 2;
    uint64_t mask = win - 1;
    uint64_t candidate = (expected & ~mask) | truncated;
    if (candidate + hwin <= expected && candidate + win < (uint64_t{1} << 62)) return candidate + win;
    if (candidate > expected + hwin && candidate >= win) return candidate - win;
    return candidate;
}

// ------------------------------------------------------- whole-packet protect ----

Bytes protect_packet(const DirectionalKeys& k, ByteView plain_header, size_t pn_offset,
                     size_t pn_len, uint64_t packet_number, ByteView payload) {
    if (pn_offset + pn_len != plain_header.size())
        throw std::invalid_argument("plain_header must end with the packet number field");

    Bytes ciphertext = aead_seal(k, packet_number, plain_header, payload);
    Bytes full(plain_header.begin(), plain_header.end());
    full.insert(full.end(), ciphertext.begin(), ciphertext.end());

    if (full.size() < pn_offset + 4 + kSampleLen)
        throw CryptoError("packet too short to take a header protection sample");
    Bytes mask = hp_mask(k, ByteView(full).subspan(pn_offset + 4, kSampleLen));
    full[0] ^= mask[0] & ((full[0] & 0x80) ? 0x0f : 0x1f);
    for (size_t i = 0; i < pn_len; i++) full[pn_offset + i] ^= mask[1 + i];
    return full;
}

UnprotectedPacket unprotect_packet(const DirectionalKeys& k, ByteView packet, size_t pn_offset,
                                   std::optional<uint64_t> largest_received) {
    if (packet.size() < pn_offset + 4 + kSampleLen)
        throw CryptoError("packet too short to take a header protection sample");
    Bytes mask = hp_mask(k, packet.subspan(pn_offset + 4, kSampleLen));

    uint8_t first = packet[0] ^ (mask[0] & ((packet[0] & 0x80) ? 0x0f : 0x1f));
    size_t pn_len = (first & 0x03) + 1;
    if (packet.size() < pn_offset + pn_len + kAeadTagLen)
        throw CryptoError("packet too short for packet number and AEAD tag");

    uint64_t truncated = 0;
    Bytes aad(packet.begin(), packet.begin() + pn_offset + pn_len);
    aad[0] = first;
    for (size_t i = 0; i < pn_len; i++) {
        aad[pn_offset + i] = packet[pn_offset + i] ^ mask[1 + i];
        truncated = (truncated << 8) | aad[pn_offset + i];
    }

    UnprotectedPacket out;
    out.pn_len = pn_len;
    out.packet_number = decode_packet_number(largest_received, truncated, pn_len);
    out.plaintext = aead_open(k, out.packet_number, aad, packet.subspan(pn_offset + pn_len));
    return out;
}

// -------------------------------------------------------------------- X25519 ----

namespace {

KeyExchange keypair_from_pkey(EVP_PKEY* pkey) {
    KeyExchange kx;
    kx.private_key.resize(32);
    kx.public_key.resize(32);
    size_t len = 32;
    if (EVP_PKEY_get_raw_private_key(pkey, kx.private_key.data(), &len) != 1 || len != 32)
        throw CryptoError("x25519 private key export failed");
    len = 32;
    if (EVP_PKEY_get_raw_public_key(pkey, kx.public_key.data(), &len) != 1 || len != 32)
        throw CryptoError("x25519 public key export failed");
    return kx;
}

}  // namespace

KeyExchange x25519_generate() {
    PkeyCtx ctx(EVP_PKEY_CTX_new_id(EVP_PKEY_X25519, nullptr));
    if (!ctx || EVP_PKEY_keygen_init(ctx.get()) != 1) throw CryptoError("x25519 keygen init failed");
    EVP_PKEY* raw = nullptr;
    if (EVP_PKEY_keygen(ctx.get(), &raw) != 1) throw CryptoError("x25519 keygen failed");
    Pkey pkey(raw);
    return keypair_from_pkey(pkey.get());
}

KeyExchange x25519_from_private(ByteView private_key) {
    if (private_key.size() != 32) throw CryptoError("x25519 private key must be 32 bytes");
    Pkey pkey(EVP_PKEY_new_raw_private_key(EVP_PKEY_X25519, nullptr, private_key.data(), 32));
    if (!pkey) throw CryptoError("x25519 private key import failed");
    return keypair_from_pkey(pkey.get());
}

Bytes x25519_shared(ByteView private_key, ByteView peer_public) {
    if (private_key.size() != 32 || peer_public.size() != 32)
        throw CryptoError("x25519 keys must be 32 bytes");
    Pkey own(EVP_PKEY_new_raw_private_key(EVP_PKEY_X25519, nullptr, private_key.data(), 32));
    Pkey peer(EVP_PKEY_new_raw_public_key(EVP_PKEY_X25519, nullptr, peer_public.data(), 32));
    if (!own || !peer) throw CryptoError("x25519 key import failed");
    PkeyCtx ctx(EVP_PKEY_CTX_new(own.get(), nullptr));
    Bytes shared(32);
    size_t len = 32;
    // OpenSSL rejects the all-zero (small-subgroup) result itself.
    if (!ctx || EVP_PKEY_derive_init(ctx.get()) != 1 ||
        EVP_PKEY_derive_set_peer(ctx.get(), peer.get()) != 1 ||
        EVP_PKEY_derive(ctx.get(), shared.data(), &len) != 1 || len != 32)
        throw CryptoError("x25519 shared secret derivation failed (degenerate peer key?)");
    return shared;
}

// -------------------------------------------------------- TLS 1.3 key schedule ----

HandshakeSecrets tls13_handshake_secrets(ByteView ecdhe_shared, ByteView transcript_hash) {
    static const Bytes zeros(32, 0);
    Bytes early = hkdf_extract({}, zeros);
    Bytes derived = hkdf_expand_label(early, "derived", sha256({}), 32);
    Bytes handshake = hkdf_extract(derived, ecdhe_shared);
    HandshakeSecrets out;
    out.client = hkdf_expand_label(handshake, "c hs traffic", transcript_hash, 32);
    out.server = hkdf_expand_label(handshake, "s hs traffic", transcript_hash, 32);
    return out;
}

Aead aead_for_cipher_suite(uint16_t suite) {
    switch (suite) {
        case 0x1301: return Aead::aes128_gcm;
        case 0x1303: return Aead::chacha20_poly1305;
        default:
            throw CryptoError("server selected a cipher suite the probe never offered: 0x" +
                              to_hex(Bytes{static_cast<uint8_t>(suite >> 8), static_cast<uint8_t>(suite)}));
    }
}

// ------------------------------------------------------------ retry integrity ----

Bytes retry_integrity_tag(const wire::ConnectionId& original_dcid, ByteView retry_without_tag) {
    ByteWriter pseudo;
    pseudo.u8(static_cast<uint8_t>(original_dcid.size()));
    pseudo.bytes(original_dcid.id);
    pseudo.bytes(retry_without_tag);

    DirectionalKeys k;
    k.aead = Aead::aes128_gcm;
    k.key.assign(kRetryKeyV1, kRetryKeyV1 + sizeof kRetryKeyV1);
    k.iv.assign(kRetryNonceV1, kRetryNonceV1 + sizeof kRetryNonceV1);
    // packet number 0 leaves the fixed nonce untouched; empty plaintext -> tag only.
    return aead_seal(k, 0, pseudo.view(), {});
}

bool verify_retry_integrity(const wire::ConnectionId& original_dcid, ByteView retry_packet) {
    if (retry_packet.size() < kAeadTagLen) return false;
    Bytes expect =
        retry_integrity_tag(original_dcid, retry_packet.first(retry_packet.size() - kAeadTagLen));
    ByteView got = retry_packet.last(kAeadTagLen);
    return CRYPTO_memcmp(expect.data(), got.data(), kAeadTagLen) == 0;
}

}  // namespace quicscout::pktcrypto
