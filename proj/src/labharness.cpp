#include "quicscout/labharness.hpp"

#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cstring>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "quicscout/pktcrypto.hpp"
#include "quicscout/rng.hpp"
#include "quicscout/wire.hpp"

namespace quicscout::lab {

namespace fp = quicscout::fingerprint;
namespace tls = quicscout::tlsmini;
using tls::ExtOrderSignature;

// ------------------------------------------------------------ script table ----

namespace {

uint64_t fnv1a64(ByteView data) {
    uint64_t h = 1469598103934665603ULL;
    for (uint8_t b : data) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

uint64_t fnv1a64(std::string_view s) {
    return fnv1a64(ByteView(reinterpret_cast<const uint8_t*>(s.data()), s.size()));
}

constexpr ExtOrderSignature kSvFirst = ExtOrderSignature::supported_versions_first;
constexpr ExtOrderSignature kKsFirst = ExtOrderSignature::key_share_first;

Close close_of(uint64_t code, uint64_t trigger, std::string reason) {
    Close c;
    c.code = code;
    c.trigger_frame_type = trigger;
    c.reason = std::move(reason);
    return c;
}

std::vector<Script> build_scripts() {
    std::vector<Script> all;
    auto add = [&](Script s) { all.push_back(std::move(s)); };

    auto basic = [](std::string name, std::vector<ExtOrderSignature> sigs,
                    fp::TpOrderKind kind, std::vector<uint64_t> ids) {
        Script s;
        s.library = std::move(name);
        s.signatures = std::move(sigs);
        s.tp_kind = kind;
        s.tp_ids = std::move(ids);
        return s;
    };
    using fp::TpOrderKind;

    {
        Script s = basic("msquic", {kSvFirst}, TpOrderKind::fixed,
                         {0, 2, 3, 4, 6, 7, 8, 10, 11, 15});
        s.alpn_closes = {close_of(0x178, 6, "")};
        add(s);
    }
    {
        Script s = basic("quic-go", {kSvFirst}, TpOrderKind::fixed, {6, 7, 4, 8, 3, 11, 2, 0, 15});
        s.alpn_closes = {close_of(0x178, 0, "")};
        add(s);
    }
    {
        Script s = basic("picoquic", {kSvFirst}, TpOrderKind::fixed, {4, 8, 3, 6, 7, 11, 15, 0, 2});
        s.alpn_closes = {close_of(0x178, 6, "")};
        add(s);
    }
    {
        Script s = basic("haproxy", {kSvFirst}, TpOrderKind::fixed, {0, 2, 15, 3, 4, 6, 7, 8});
        s.alpn_closes = {close_of(0x178, 0, "")};
        add(s);
    }
    {
        Script s = basic("ngtcp2", {kSvFirst}, TpOrderKind::fixed, {0, 2, 15, 6, 7, 4, 8});
        s.alpn_closes = {close_of(0x178, 6, "")};
        add(s);
    }
    {
        Script s = basic("quiche", {kKsFirst}, TpOrderKind::fixed, {0, 3, 4, 6, 7, 8, 10, 11, 15});
        s.alpn_closes = {close_of(0x178, 0, "")};
        s.cipher_suite = tls::kTlsChacha20Poly1305Sha256;
        add(s);
    }
    {
        Script s = basic("neqo", {kKsFirst}, TpOrderKind::randomized, {0, 6, 4, 15, 8, 7});
        s.alpn_closes = {close_of(0x178, 6, "")};
        add(s);
    }
    {
        Script s = basic("xquic", {kSvFirst}, TpOrderKind::fixed, {0, 3, 4, 6, 7, 8, 15});
        s.continue_without_alpn = true;
        add(s);
    }
    {
        Script s = basic("aioquic", {kSvFirst}, TpOrderKind::fixed, {0, 2, 4, 6, 7, 8, 10, 11, 15});
        s.alpn_closes = {close_of(0x128, 6, "No common ALPN protocols")};
        add(s);
    }
    {
        // Identified by its close alone: the transport-parameter order it emits
        // is deliberately absent from the reference rules.
        Script s = basic("kwik", {kKsFirst}, TpOrderKind::fixed, {0, 4, 6, 7, 8, 15, 2});
        s.alpn_closes = {close_of(0x178, 0, "unsupported application protocol: {alpn}")};
        add(s);
    }
    {
        Script s = basic("lsquic", {kKsFirst}, TpOrderKind::fixed, {4, 6, 7, 8, 0, 15, 2});
        s.alpn_closes = {close_of(0x178, 0, "no suitable application protocol")};
        add(s);
    }
    {
        Script s = basic("nginx", {kSvFirst, kKsFirst}, TpOrderKind::fixed,
                         {4, 8, 6, 7, 3, 11, 10, 0, 15, 2});
        s.alpn_closes = {close_of(0x178, 0, "handshake failed")};
        add(s);
    }
    {
        Script s = basic("quant", {kSvFirst}, TpOrderKind::randomized, {0, 2, 3, 4, 6, 8, 15});
        s.alpn_closes = {close_of(0x178, 6, "PTLS error 120 (NO_APPLICATION_PROTOCOL)")};
        add(s);
    }
    {
        Script s = basic("quinn", {kKsFirst}, TpOrderKind::fixed, {3, 4, 6, 7, 8, 2, 0, 15});
        s.alpn_closes = {close_of(0x178, 0, "peer doesn't support any known protocol")};
        add(s);
    }
    {
        Script s = basic("gquiche", {kKsFirst}, TpOrderKind::randomized, {0, 2, 3, 4, 6, 7, 8, 15});
        s.alpn_closes = {close_of(
            0x178, 6, "28:TLS handshake failure (ENCRYPTION_INITIAL) 120: no application protocol")};
        add(s);
    }
    {
        Script s = basic("haskell-quic", {kKsFirst}, TpOrderKind::fixed, {0, 3, 4, 6, 7, 8, 15});
        s.alpn_closes = {close_of(0x178, 0, "no supported application protocols")};
        add(s);
    }
    {
        Script s = basic("akaquic", {kSvFirst}, TpOrderKind::randomized, {0, 2, 3, 4, 6, 7, 8, 15});
        s.alpn_closes = {
            close_of(0x150, 0, "200:TLS handshake failure (ENCRYPTION_INITIAL) 80: internal error"),
            close_of(0x0a, 0, "PROTOCOL_VIOLATION: 28:No known ALPN provided by client")};
        add(s);
    }
    {
        Script s = basic("mvfst", {kSvFirst}, TpOrderKind::fixed, {0, 6, 7, 4, 8, 10, 3, 2, 15});
        s.alpn_closes = {close_of(0x178, 28,
                                  "fizz::FizzException: Unable to negotiate ALPN, as required by "
                                  "policy. policy=AlpnMode::Required")};
        add(s);
    }
    {
        Script s = basic("s2n-quic", {kSvFirst, kKsFirst}, TpOrderKind::fixed, {4, 6, 7, 8, 0, 15});
        s.silent_drop_on_alpn = true;
        s.sni_policy = SniPolicy::require_silent;
        add(s);
    }
    {
        Script s = basic("quicly", {kSvFirst}, TpOrderKind::fixed, {3, 6, 7, 4, 0, 15, 2, 8, 10});
        s.silent_drop_on_alpn = true;
        add(s);
    }

    std::sort(all.begin(), all.end(),
              [](const Script& a, const Script& b) { return a.library < b.library; });
    return all;
}

const std::vector<Script>& all_scripts() {
    static const std::vector<Script> scripts = build_scripts();
    return scripts;
}

}  // namespace

Script script_for(const std::string& library) {
    for (const Script& s : all_scripts()) {
        if (s.library == library) return s;
    }
    throw std::out_of_range("no script for library: " + library);
}

std::vector<std::string> farm_libraries() {
    std::vector<std::string> names;
    for (const Script& s : all_scripts()) names.push_back(s.library);
    return names;
}

Script lsquic_strict_sni_script() {
    Script s = script_for("lsquic");
    s.sni_policy = SniPolicy::require_close;
    s.sni_close = close_of(0x150, 0, "TLS alert 80");
    return s;
}

// --------------------------------------------------------- script endpoint ----

struct ScriptEndpoint::Conn {
    explicit Conn(uint64_t seed) : rng(seed) {}

    DetRng rng;
    wire::ConnectionId client_scid;
    wire::ConnectionId server_cid;
    wire::ConnectionId original_dcid;  // dcid of the first Initial, pre-retry
    pktcrypto::KeyExchange kx;
    ExtOrderSignature sig = ExtOrderSignature::supported_versions_first;

    bool keys_ready = false;
    pktcrypto::InitialKeys initial_keys;
    std::optional<uint64_t> largest_initial_pn;
    std::set<uint64_t> client_initial_pns;
    uint64_t next_initial_pn = 0;
    uint64_t next_handshake_pn = 0;
    uint64_t server_crypto_offset = 0;  // Initial-level CRYPTO bytes already sent

    tls::CryptoStream crypto;
    Bytes transcript;
    bool retry_sent = false;
    Bytes retry_token;
    bool hrr_sent = false;
    Bytes hrr_cookie;
    bool responded = false;
    bool dead = false;
};

ScriptEndpoint::ScriptEndpoint(Script script, uint64_t seed)
    : script_(std::move(script)), seed_(seed) {
    if (script_.signatures.empty()) throw std::invalid_argument("script needs a signature");
}

ScriptEndpoint::~ScriptEndpoint() = default;
ScriptEndpoint::ScriptEndpoint(ScriptEndpoint&&) noexcept = default;
ScriptEndpoint& ScriptEndpoint::operator=(ScriptEndpoint&&) noexcept = default;

ScriptEndpoint::Conn& ScriptEndpoint::conn_for(const Bytes& client_scid) {
    std::string key = to_hex(client_scid);
    auto it = conns_.find(key);
    if (it == conns_.end()) {
        auto conn = std::make_unique<Conn>(seed_ ^ fnv1a64(client_scid));
        conn->client_scid = wire::ConnectionId(client_scid);
        conn->server_cid = wire::ConnectionId(conn->rng.bytes(8));
        conn->kx = pktcrypto::x25519_from_private(conn->rng.bytes(32));
        conn->sig = script_.signatures[conn->rng.below(script_.signatures.size())];
        it = conns_.emplace(key, std::move(conn)).first;
    }
    return *it->second;
}

namespace {

Bytes build_retry_packet(const wire::ConnectionId& dcid, const wire::ConnectionId& scid,
                         const Bytes& token, const wire::ConnectionId& original_dcid) {
    ByteWriter w;
    w.u8(0xf0);  // long header, fixed bit, type retry
    w.u32(wire::kQuicV1);
    w.u8(static_cast<uint8_t>(dcid.id.size()));
    w.bytes(dcid.id);
    w.u8(static_cast<uint8_t>(scid.id.size()));
    w.bytes(scid.id);
    w.bytes(token);
    Bytes tag = pktcrypto::retry_integrity_tag(original_dcid, w.view());
    w.bytes(tag);
    return w.take();
}

// HelloRetryRequest asking only for a cookie echo (the key-share group the
// client offered is acceptable, so the key_share extension must stay out).
Bytes build_hello_retry_request(const Bytes& session_id_echo, uint16_t cipher_suite,
                                const Bytes& cookie) {
    ByteWriter ext;
    ext.u16(tls::ext::supported_versions);
    ext.u16(2);
    ext.u16(0x0304);
    ext.u16(tls::ext::cookie);
    ext.u16(static_cast<uint16_t>(2 + cookie.size()));
    ext.u16(static_cast<uint16_t>(cookie.size()));
    ext.bytes(cookie);
    Bytes ext_block = ext.take();

    ByteWriter body;
    body.u16(0x0303);
    body.bytes(ByteView(tls::kHelloRetryRequestRandom, 32));
    body.u8(static_cast<uint8_t>(session_id_echo.size()));
    body.bytes(session_id_echo);
    body.u16(cipher_suite);
    body.u8(0);  // no compression
    body.u16(static_cast<uint16_t>(ext_block.size()));
    body.bytes(ext_block);
    Bytes b = body.take();

    ByteWriter msg;
    msg.u8(tls::msg::server_hello);
    msg.u24(static_cast<uint32_t>(b.size()));
    msg.bytes(b);
    return msg.take();
}

// The transcript contribution that replaces ClientHello1 once a
// HelloRetryRequest has been sent (RFC 8446 §4.4.1).
Bytes message_hash_of(ByteView client_hello1) {
    ByteWriter w;
    w.u8(254);
    w.u24(32);
    w.bytes(pktcrypto::sha256(client_hello1));
    return w.take();
}

void write_ack_for(ByteWriter& w, const std::set<uint64_t>& pns) {
    if (pns.empty()) return;
    uint64_t largest = *pns.rbegin();
    uint64_t first_range = 0;
    for (uint64_t pn = largest; pn > 0 && pns.count(pn - 1) != 0; pn--) first_range++;
    wire::write_ack(w, largest, 0, first_range);
}

Bytes default_tp_value(uint64_t id, const wire::ConnectionId& original_dcid,
                       const wire::ConnectionId& server_cid, DetRng& rng) {
    switch (id) {
        case 0x0: return original_dcid.id;
        case 0x2: return rng.bytes(16);
        case 0x3: return wire::encode_varint(1472);
        case 0x4: return wire::encode_varint(1000000);
        case 0x6: return wire::encode_varint(500000);
        case 0x7: return wire::encode_varint(500000);
        case 0x8: return wire::encode_varint(16);
        case 0x9: return wire::encode_varint(16);
        case 0xa: return wire::encode_varint(3);
        case 0xb: return wire::encode_varint(25);
        case 0xf: return server_cid.id;
        default: return wire::encode_varint(1);
    }
}

}  // namespace

Bytes ScriptEndpoint::initial_packet(Conn& c, const Bytes& frames, size_t pad_datagram_to,
                                     size_t tail_len) {
    wire::LongHeaderSpec spec;
    spec.type = wire::PacketType::initial;
    spec.version = wire::kQuicV1;
    spec.dcid = c.client_scid;
    spec.scid = c.server_cid;
    uint64_t pn = c.next_initial_pn++;
    const size_t pn_len = 1;
    size_t pad = 0;
    Bytes header;
    for (int i = 0; i < 4; i++) {
        header = wire::build_packet_header(spec, pn, pn_len, frames.size() + pad,
                                           pktcrypto::kAeadTagLen);
        size_t total = header.size() + frames.size() + pad + pktcrypto::kAeadTagLen + tail_len;
        if (total >= pad_datagram_to) break;
        pad = pad_datagram_to - (header.size() + frames.size() + pktcrypto::kAeadTagLen + tail_len);
    }
    Bytes payload = frames;
    if (pad > 0) {
        ByteWriter pw;
        wire::write_padding(pw, pad);
        Bytes pb = pw.take();
        payload.insert(payload.end(), pb.begin(), pb.end());
    }
    return pktcrypto::protect_packet(c.initial_keys.server, header, header.size() - pn_len, pn_len,
                                     pn, payload);
}

Bytes ScriptEndpoint::close_packet(Conn& c, const std::vector<Close>& closes,
                                   const std::string& offered_alpn) {
    ByteWriter frames;
    write_ack_for(frames, c.client_initial_pns);
    for (const Close& cl : closes) {
        std::string reason = cl.reason;
        size_t pos = reason.find("{alpn}");
        if (pos != std::string::npos) reason.replace(pos, 6, offered_alpn);
        wire::write_connection_close(frames, cl.code, cl.trigger_frame_type, reason,
                                     cl.application);
    }
    return initial_packet(c, frames.take(), 0, 0);
}

std::vector<Bytes> ScriptEndpoint::respond(Conn& c, const tls::ClientHelloSummary& ch) {
    // Server-name policy comes first, as a real TLS stack checks it before ALPN.
    bool have_sni = ch.sni.has_value() && !ch.sni->empty();
    if (!have_sni) {
        if (script_.sni_policy == SniPolicy::require_silent) {
            c.dead = true;
            return {};
        }
        if (script_.sni_policy == SniPolicy::require_close) {
            c.dead = true;
            return {close_packet(c, {*script_.sni_close}, "")};
        }
    }

    bool alpn_ok = std::find(ch.alpn.begin(), ch.alpn.end(), script_.supported_alpn) !=
                   ch.alpn.end();
    std::string offered = ch.alpn.empty() ? "" : ch.alpn.front();
    bool include_alpn = true;
    if (!alpn_ok) {
        if (script_.silent_drop_on_alpn) {
            c.dead = true;
            return {};
        }
        if (!script_.continue_without_alpn) {
            c.dead = true;
            return {close_packet(c, script_.alpn_closes, offered)};
        }
        include_alpn = false;
    }

    if (ch.key_share_x25519.size() != 32) {
        c.dead = true;
        return {};
    }

    // Transport parameters: scripted order, or a fresh shuffle per connection.
    std::vector<uint64_t> ids = script_.tp_ids;
    if (script_.tp_kind == fp::TpOrderKind::randomized) c.rng.shuffle(ids);
    std::vector<tls::TransportParam> params;
    for (uint64_t id : ids) {
        auto ov = script_.tp_value_overrides.find(id);
        Bytes value = ov != script_.tp_value_overrides.end()
                          ? ov->second
                          : default_tp_value(id, c.original_dcid, c.server_cid, c.rng);
        params.push_back(tls::TransportParam{id, std::move(value)});
    }

    tls::ServerHelloConfig shc;
    shc.random = c.rng.bytes(32);
    shc.session_id_echo = ch.session_id;
    shc.cipher_suite = script_.cipher_suite;
    shc.signature = c.sig;
    shc.key_share_public = c.kx.public_key;
    Bytes sh = tls::build_server_hello(shc);

    tls::EncryptedExtensionsConfig eec;
    if (include_alpn) eec.alpn = script_.supported_alpn;
    eec.transport_params = params;
    Bytes ee = tls::build_encrypted_extensions(eec);

    c.transcript.insert(c.transcript.end(), sh.begin(), sh.end());
    Bytes shared = pktcrypto::x25519_shared(c.kx.private_key, ch.key_share_x25519);
    pktcrypto::HandshakeSecrets secrets =
        pktcrypto::tls13_handshake_secrets(shared, pktcrypto::sha256(c.transcript));
    pktcrypto::Aead aead = pktcrypto::aead_for_cipher_suite(script_.cipher_suite);
    pktcrypto::DirectionalKeys hs_keys = pktcrypto::derive_packet_keys(secrets.server, aead);

    ByteWriter hs_frames;
    wire::write_crypto(hs_frames, 0, ee);
    Bytes hs_payload = hs_frames.take();
    wire::LongHeaderSpec hs_spec;
    hs_spec.type = wire::PacketType::handshake;
    hs_spec.version = wire::kQuicV1;
    hs_spec.dcid = c.client_scid;
    hs_spec.scid = c.server_cid;
    uint64_t hs_pn = c.next_handshake_pn++;
    Bytes hs_header =
        wire::build_packet_header(hs_spec, hs_pn, 1, hs_payload.size(), pktcrypto::kAeadTagLen);
    Bytes hs_packet = pktcrypto::protect_packet(hs_keys, hs_header, hs_header.size() - 1, 1, hs_pn,
                                                hs_payload);

    ByteWriter in_frames;
    write_ack_for(in_frames, c.client_initial_pns);
    wire::write_crypto(in_frames, c.server_crypto_offset, sh);
    c.server_crypto_offset += sh.size();
    // The Initial here carries CRYPTO (ack-eliciting), so the datagram must be
    // expanded to 1200 bytes; padding lives in the Initial's payload.
    Bytes datagram = initial_packet(c, in_frames.take(), 1200, hs_packet.size());
    datagram.insert(datagram.end(), hs_packet.begin(), hs_packet.end());
    c.responded = true;
    c.dead = true;  // one flight per connection; later client packets are ignored
    return {datagram};
}

std::vector<Bytes> ScriptEndpoint::handle_datagram(ByteView datagram) {
    wire::SplitResult split;
    try {
        split = wire::split_coalesced(datagram);
    } catch (const ParseError&) {
        return {};
    }
    for (const wire::RawPacket& p : split.packets) {
        if (p.header.type == wire::PacketType::version_negotiation) continue;
        if (p.header.version != wire::kQuicV1) {
            // Unknown version: answer with Version Negotiation, but only for a
            // datagram large enough to rule out an off-path prober (RFC 9000 §6).
            if (datagram.size() < 1200) return {};
            return {wire::build_version_negotiation(p.header.scid, p.header.dcid,
                                                    {wire::kQuicV1})};
        }
        if (p.header.type != wire::PacketType::initial) continue;

        Conn& c = conn_for(p.header.scid.id);
        if (c.dead) continue;

        if (script_.send_retry_first && !c.retry_sent) {
            c.original_dcid = p.header.dcid;
            c.retry_token = c.rng.bytes(16);
            c.retry_sent = true;
            return {build_retry_packet(c.client_scid, c.server_cid, c.retry_token,
                                       c.original_dcid)};
        }
        if (script_.send_retry_first && p.header.token != c.retry_token) continue;

        if (!c.keys_ready) {
            if (c.original_dcid.empty()) c.original_dcid = p.header.dcid;
            c.initial_keys = pktcrypto::derive_initial_keys(p.header.dcid, wire::kQuicV1);
            c.keys_ready = true;
        }

        pktcrypto::UnprotectedPacket up;
        try {
            up = pktcrypto::unprotect_packet(c.initial_keys.client, p.packet,
                                             p.header.pn_offset - p.header.header_start,
                                             c.largest_initial_pn);
        } catch (const pktcrypto::CryptoError&) {
            continue;
        }
        if (!c.largest_initial_pn || up.packet_number > *c.largest_initial_pn) {
            c.largest_initial_pn = up.packet_number;
        }
        c.client_initial_pns.insert(up.packet_number);

        std::vector<wire::Frame> frames;
        try {
            frames = wire::parse_frames(up.plaintext);
        } catch (const ParseError&) {
            continue;
        }
        bool client_closed = false;
        for (const wire::Frame& f : frames) {
            if (const auto* cf = std::get_if<wire::CryptoFrame>(&f.v)) {
                try {
                    c.crypto.insert(cf->offset, cf->data);
                } catch (const ParseError&) {
                    c.dead = true;
                    return {};
                }
            } else if (std::holds_alternative<wire::ConnectionCloseFrame>(f.v)) {
                client_closed = true;
            }
        }
        if (client_closed) {
            c.dead = true;
            return {};
        }

        std::optional<Bytes> msg = c.crypto.next_message();
        if (!msg) continue;
        tls::ClientHelloSummary ch;
        try {
            ch = tls::parse_client_hello(*msg);
        } catch (const ParseError&) {
            c.dead = true;
            return {};
        }

        if (script_.send_hello_retry_request_first && !c.hrr_sent) {
            c.hrr_cookie = c.rng.bytes(24);
            Bytes hrr =
                build_hello_retry_request(ch.session_id, script_.cipher_suite, c.hrr_cookie);
            c.transcript = message_hash_of(*msg);
            c.transcript.insert(c.transcript.end(), hrr.begin(), hrr.end());
            ByteWriter frames_w;
            write_ack_for(frames_w, c.client_initial_pns);
            wire::write_crypto(frames_w, c.server_crypto_offset, hrr);
            c.server_crypto_offset += hrr.size();
            c.hrr_sent = true;
            return {initial_packet(c, frames_w.take(), 1200, 0)};
        }
        if (script_.send_hello_retry_request_first) {
            if (ch.cookie != c.hrr_cookie) {
                c.dead = true;
                return {};
            }
            c.transcript.insert(c.transcript.end(), msg->begin(), msg->end());
        } else {
            c.transcript = *msg;
        }
        return respond(c, ch);
    }
    return {};
}

// --------------------------------------------------------------------- farm ----

struct Farm::Listener {
    Script script;
    std::unique_ptr<ScriptEndpoint> endpoint;
    int fd = -1;
    uint16_t port = 0;
    std::thread thread;
};

Farm::Farm(std::vector<Script> scripts, uint64_t seed) : seed_(seed) {
    for (Script& s : scripts) {
        auto l = std::make_unique<Listener>();
        l->script = s;
        l->endpoint = std::make_unique<ScriptEndpoint>(s, seed_ ^ fnv1a64(s.library));
        l->fd = ::socket(AF_INET, SOCK_DGRAM, 0);
        if (l->fd < 0) throw std::runtime_error("socket() failed");
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = 0;
        if (::bind(l->fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
            throw std::runtime_error("bind() failed");
        }
        socklen_t len = sizeof(addr);
        if (::getsockname(l->fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
            throw std::runtime_error("getsockname() failed");
        }
        l->port = ntohs(addr.sin_port);
        listeners_.push_back(std::move(l));
    }
}

Farm Farm::standard(uint64_t seed) {
    std::vector<Script> scripts;
    for (const std::string& name : farm_libraries()) scripts.push_back(script_for(name));
    return Farm(std::move(scripts), seed);
}

Farm::~Farm() {
    stop();
    for (auto& l : listeners_) {
        if (l->fd >= 0) ::close(l->fd);
    }
}

void Farm::start() {
    if (running_.exchange(true)) return;
    start_time_ = std::chrono::steady_clock::now();
    for (auto& l : listeners_) {
        l->thread = std::thread([this, lp = l.get()] { serve(*lp); });
    }
}

void Farm::stop() {
    if (!running_.exchange(false)) return;
    for (auto& l : listeners_) {
        if (l->thread.joinable()) l->thread.join();
    }
}

void Farm::serve(Listener& l) {
    std::vector<uint8_t> buf(65536);
    while (running_.load()) {
        pollfd pfd{};
        pfd.fd = l.fd;
        pfd.events = POLLIN;
        int rc = ::poll(&pfd, 1, 50);
        if (rc <= 0) continue;
        sockaddr_storage peer{};
        socklen_t peer_len = sizeof(peer);
        ssize_t n = ::recvfrom(l.fd, buf.data(), buf.size(), MSG_DONTWAIT,
                               reinterpret_cast<sockaddr*>(&peer), &peer_len);
        if (n <= 0) continue;
        {
            std::lock_guard<std::mutex> lock(arrivals_mu_);
            arrivals_.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                              start_time_)
                                    .count());
        }
        std::vector<Bytes> replies =
            l.endpoint->handle_datagram(ByteView(buf.data(), static_cast<size_t>(n)));
        for (const Bytes& r : replies) {
            (void)::sendto(l.fd, r.data(), r.size(), 0, reinterpret_cast<sockaddr*>(&peer),
                           peer_len);
        }
    }
}

std::vector<Farm::Entry> Farm::entries() const {
    std::vector<Entry> out;
    for (const auto& l : listeners_) out.push_back(Entry{l->script.library, l->port});
    return out;
}

uint16_t Farm::port_for(const std::string& library) const {
    for (const auto& l : listeners_) {
        if (l->script.library == library) return l->port;
    }
    throw std::out_of_range("no listener for library: " + library);
}

std::string Farm::manifest_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& l : listeners_) {
        arr.push_back({{"library", l->script.library},
                       {"host", "127.0.0.1"},
                       {"port", l->port}});
    }
    return arr.dump(2) + "\n";
}

std::vector<double> Farm::arrival_seconds() const {
    std::lock_guard<std::mutex> lock(arrivals_mu_);
    return arrivals_;
}

}  // namespace quicscout::lab
