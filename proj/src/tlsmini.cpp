#include "quicscout/tlsmini.hpp"

#include <algorithm>
#include <cstring>
#include <set>

#include "quicscout/wire.hpp"

namespace quicscout::tlsmini {

const uint8_t kHelloRetryRequestRandom[32] = {
    0xcf, 0x21, 0xad, 0x74, 0xe5, 0x9a, 0x61, 0x11, 0xbe, 0x1d, 0x8c, 0x02, 0x1e, 0x65, 0xb8, 0x91,
    0xc2, 0xa2, 0x11, 0x16, 0x7a, 0xbb, 0x8c, 0x5e, 0x07, 0x9e, 0x09, 0xe2, 0xc8, 0xa8, 0x33, 0x9c};

// ------------------------------------------------------ transport parameters ----

Bytes encode_transport_params(const std::vector<TransportParam>& params) {
    ByteWriter w;
    for (const auto& p : params) {
        wire::write_varint(w, p.id);
        wire::write_varint(w, p.value.size());
        w.bytes(p.value);
    }
    return w.take();
}

std::vector<TransportParam> parse_transport_params(ByteView body) {
    std::vector<TransportParam> out;
    ByteReader r(body);
    while (!r.empty()) {
        TransportParam p;
        p.id = wire::read_varint(r);
        uint64_t len = wire::read_varint(r);
        if (len > r.remaining()) r.fail("transport parameter value exceeds extension");
        p.value = r.read_bytes(static_cast<size_t>(len));
        out.push_back(std::move(p));
    }
    return out;
}

// ---------------------------------------------------- extension order signal ----

const char* to_string(ExtOrderSignature s) {
    return s == ExtOrderSignature::supported_versions_first ? "43-51" : "51-43";
}

std::optional<ExtOrderSignature> ext_signature_from_string(std::string_view s) {
    if (s == "43-51") return ExtOrderSignature::supported_versions_first;
    if (s == "51-43") return ExtOrderSignature::key_share_first;
    return std::nullopt;
}

std::optional<ExtOrderSignature> ext_signature_of(const std::vector<uint16_t>& ext_order) {
    auto sv = std::find(ext_order.begin(), ext_order.end(), ext::supported_versions);
    auto ks = std::find(ext_order.begin(), ext_order.end(), ext::key_share);
    if (sv == ext_order.end() || ks == ext_order.end()) return std::nullopt;
    return sv < ks ? ExtOrderSignature::supported_versions_first : ExtOrderSignature::key_share_first;
}

// ------------------------------------------------------------------ builders ----

namespace {

void write_ext(ByteWriter& w, uint16_t type, const Bytes& body) {
    w.u16(type);
    w.u16(static_cast<uint16_t>(body.size()));
    w.bytes(body);
}

Bytes wrap_handshake(uint8_t msg_type, const Bytes& body) {
    ByteWriter w;
    w.u8(msg_type);
    w.u24(static_cast<uint32_t>(body.size()));
    w.bytes(body);
    return w.take();
}

void put_str(ByteWriter& w, std::string_view s) {
    w.bytes(ByteView(reinterpret_cast<const uint8_t*>(s.data()), s.size()));
}

}  // namespace

Bytes build_client_hello(const ClientHelloConfig& cfg) {
    if (cfg.alpn.empty()) throw std::invalid_argument("client hello needs at least one alpn entry");
    for (const auto& p : cfg.alpn)
        if (p.empty() || p.size() > 255)
            throw std::invalid_argument("alpn protocol name must be 1..255 bytes");
    if (cfg.random.size() != 32) throw std::invalid_argument("client random must be 32 bytes");
    if (cfg.key_share_public.size() != 32)
        throw std::invalid_argument("x25519 key share must be 32 bytes");
    if (cfg.session_id.size() > 32) throw std::invalid_argument("session id too long");
    if (cfg.sni && (cfg.sni->empty() || cfg.sni->size() > 255))
        throw std::invalid_argument("sni must be 1..255 bytes");
    if (cfg.cipher_suites.empty()) throw std::invalid_argument("cipher suite list is empty");

    ByteWriter body;
    body.u16(0x0303);  // legacy_version
    body.bytes(cfg.random);
    body.u8(static_cast<uint8_t>(cfg.session_id.size()));
    body.bytes(cfg.session_id);
    body.u16(static_cast<uint16_t>(cfg.cipher_suites.size() * 2));
    for (uint16_t c : cfg.cipher_suites) body.u16(c);
    body.u8(1);  // legacy compression methods: null only
    body.u8(0);

    ByteWriter exts;
    if (cfg.sni) {
        ByteWriter b;
        b.u16(static_cast<uint16_t>(cfg.sni->size() + 3));
        b.u8(0);  // name_type host_name
        b.u16(static_cast<uint16_t>(cfg.sni->size()));
        put_str(b, *cfg.sni);
        write_ext(exts, ext::server_name, b.take());
    }
    if (!cfg.cookie.empty()) {
        ByteWriter b;
        b.u16(static_cast<uint16_t>(cfg.cookie.size()));
        b.bytes(cfg.cookie);
        write_ext(exts, ext::cookie, b.take());
    }
    {
        ByteWriter b;
        size_t list_len = 0;
        for (const auto& p : cfg.alpn) list_len += 1 + p.size();
        b.u16(static_cast<uint16_t>(list_len));
        for (const auto& p : cfg.alpn) {
            b.u8(static_cast<uint8_t>(p.size()));
            put_str(b, p);
        }
        write_ext(exts, ext::alpn, b.take());
    }
    {
        ByteWriter b;
        b.u16(2);
        b.u16(kGroupX25519);
        write_ext(exts, ext::supported_groups, b.take());
    }
    {
        static const uint16_t algs[] = {0x0403, 0x0804, 0x0401, 0x0503, 0x0805, 0x0807};
        ByteWriter b;
        b.u16(sizeof algs / sizeof algs[0] * 2);
        for (uint16_t a : algs) b.u16(a);
        write_ext(exts, ext::signature_algorithms, b.take());
    }
    {
        ByteWriter b;
        b.u8(2);
        b.u16(0x0304);
        write_ext(exts, ext::supported_versions, b.take());
    }
    {
        ByteWriter b;
        b.u16(2 + 2 + 32);  // client_shares length
        b.u16(kGroupX25519);
        b.u16(32);
        b.bytes(cfg.key_share_public);
        write_ext(exts, ext::key_share, b.take());
    }
    write_ext(exts, ext::quic_transport_parameters, encode_transport_params(cfg.transport_params));

    Bytes ext_block = exts.take();
    body.u16(static_cast<uint16_t>(ext_block.size()));
    body.bytes(ext_block);
    return wrap_handshake(msg::client_hello, body.take());
}

Bytes build_server_hello(const ServerHelloConfig& cfg) {
    if (cfg.random.size() != 32) throw std::invalid_argument("server random must be 32 bytes");
    if (cfg.key_share_public.size() != 32)
        throw std::invalid_argument("x25519 key share must be 32 bytes");

    ByteWriter body;
    body.u16(0x0303);
    body.bytes(cfg.random);
    body.u8(static_cast<uint8_t>(cfg.session_id_echo.size()));
    body.bytes(cfg.session_id_echo);
    body.u16(cfg.cipher_suite);
    body.u8(0);  // compression null

    ByteWriter exts;
    auto put_supported_versions = [&] {
        ByteWriter b;
        b.u16(0x0304);
        write_ext(exts, ext::supported_versions, b.take());
    };
    auto put_key_share = [&] {
        ByteWriter b;
        b.u16(kGroupX25519);
        b.u16(32);
        b.bytes(cfg.key_share_public);
        write_ext(exts, ext::key_share, b.take());
    };
    if (cfg.signature == ExtOrderSignature::supported_versions_first) {
        put_supported_versions();
        put_key_share();
    } else {
        put_key_share();
        put_supported_versions();
    }

    Bytes ext_block = exts.take();
    body.u16(static_cast<uint16_t>(ext_block.size()));
    body.bytes(ext_block);
    return wrap_handshake(msg::server_hello, body.take());
}

Bytes build_encrypted_extensions(const EncryptedExtensionsConfig& cfg) {
    ByteWriter exts;
    if (cfg.alpn) {
        if (cfg.alpn->empty() || cfg.alpn->size() > 255)
            throw std::invalid_argument("alpn protocol name must be 1..255 bytes");
        ByteWriter b;
        b.u16(static_cast<uint16_t>(1 + cfg.alpn->size()));
        b.u8(static_cast<uint8_t>(cfg.alpn->size()));
        put_str(b, *cfg.alpn);
        write_ext(exts, ext::alpn, b.take());
    }
    write_ext(exts, ext::quic_transport_parameters, encode_transport_params(cfg.transport_params));

    ByteWriter body;
    Bytes ext_block = exts.take();
    body.u16(static_cast<uint16_t>(ext_block.size()));
    body.bytes(ext_block);
    return wrap_handshake(msg::encrypted_extensions, body.take());
}

// ------------------------------------------------------------------- parsers ----

namespace {

// Opens a handshake message, checks the type, and returns a reader over the body.
ByteReader open_message(ByteView message, uint8_t want_type, const char* what) {
    ByteReader r(message);
    uint8_t got = r.read_u8();
    if (got != want_type)
        r.fail(std::string("expected ") + what + " message, found type " + std::to_string(got));
    uint32_t len = r.read_u24();
    if (len != r.remaining()) r.fail("handshake message length disagrees with buffer");
    return r;
}

Bytes read_vec8(ByteReader& r) {
    uint8_t n = r.read_u8();
    return r.read_bytes(n);
}

Bytes read_vec16(ByteReader& r) {
    uint16_t n = r.read_u16();
    return r.read_bytes(n);
}

}  // namespace

ClientHelloSummary parse_client_hello(ByteView message) {
    ByteReader r = open_message(message, msg::client_hello, "client hello");
    ClientHelloSummary out;

    if (r.read_u16() != 0x0303) r.fail("legacy_version must be 0x0303");
    out.random = r.read_bytes(32);
    out.session_id = read_vec8(r);
    Bytes suites = read_vec16(r);
    if (suites.size() % 2 != 0) r.fail("odd cipher suite list length");
    for (size_t i = 0; i < suites.size(); i += 2)
        out.cipher_suites.push_back(static_cast<uint16_t>(suites[i] << 8 | suites[i + 1]));
    Bytes compression = read_vec8(r);
    if (compression.empty()) r.fail("empty compression list");

    Bytes ext_block = read_vec16(r);
    if (!r.empty()) r.fail("trailing bytes after client hello extensions");
    ByteReader er((ByteView(ext_block)));
    while (!er.empty()) {
        uint16_t type = er.read_u16();
        Bytes body = read_vec16(er);
        out.ext_order.push_back(type);
        ByteReader br((ByteView(body)));
        switch (type) {
            case ext::server_name: {
                Bytes list = read_vec16(br);
                ByteReader lr((ByteView(list)));
                while (!lr.empty()) {
                    uint8_t name_type = lr.read_u8();
                    Bytes name = read_vec16(lr);
                    if (name_type == 0 && !out.sni)
                        out.sni = std::string(name.begin(), name.end());
                }
                break;
            }
            case ext::alpn: {
                Bytes list = read_vec16(br);
                ByteReader lr((ByteView(list)));
                while (!lr.empty()) {
                    Bytes name = read_vec8(lr);
                    out.alpn.emplace_back(name.begin(), name.end());
                }
                break;
            }
            case ext::key_share: {
                Bytes shares = read_vec16(br);
                ByteReader sr((ByteView(shares)));
                while (!sr.empty()) {
                    uint16_t group = sr.read_u16();
                    Bytes key = read_vec16(sr);
                    if (group == kGroupX25519 && out.key_share_x25519.empty())
                        out.key_share_x25519 = std::move(key);
                }
                break;
            }
            case ext::quic_transport_parameters:
                out.transport_params = parse_transport_params(body);
                break;
            case ext::cookie:
                out.cookie = read_vec16(br);
                break;
            default: break;  // recorded in ext_order, content skipped
        }
    }
    return out;
}

ServerHelloSummary parse_server_hello(ByteView message) {
    ByteReader r = open_message(message, msg::server_hello, "server hello");
    ServerHelloSummary out;

    if (r.read_u16() != 0x0303) r.fail("legacy_version must be 0x0303");
    out.random = r.read_bytes(32);
    out.is_hello_retry_request =
        std::memcmp(out.random.data(), kHelloRetryRequestRandom, 32) == 0;
    out.session_id_echo = read_vec8(r);
    out.cipher_suite = r.read_u16();
    if (r.read_u8() != 0) r.fail("nonzero compression method");

    Bytes ext_block = read_vec16(r);
    if (!r.empty()) r.fail("trailing bytes after server hello extensions");
    ByteReader er((ByteView(ext_block)));
    while (!er.empty()) {
        uint16_t type = er.read_u16();
        Bytes body = read_vec16(er);
        out.ext_order.push_back(type);
        ByteReader br((ByteView(body)));
        switch (type) {
            case ext::supported_versions: {
                if (br.read_u16() != 0x0304) br.fail("server selected a TLS version other than 1.3");
                break;
            }
            case ext::key_share: {
                if (out.is_hello_retry_request) {
                    out.hrr_selected_group = br.read_u16();
                } else {
                    uint16_t group = br.read_u16();
                    Bytes key = read_vec16(br);
                    if (group != kGroupX25519)
                        br.fail("server picked a key share group the probe never offered");
                    if (key.size() != 32) br.fail("x25519 server share must be 32 bytes");
                    out.key_share_x25519 = std::move(key);
                }
                break;
            }
            case ext::cookie: {
                if (out.is_hello_retry_request) out.hrr_cookie = read_vec16(br);
                break;
            }
            default: break;
        }
    }
    return out;
}

EncryptedExtensionsSummary parse_encrypted_extensions(ByteView message) {
    ByteReader r = open_message(message, msg::encrypted_extensions, "encrypted extensions");
    EncryptedExtensionsSummary out;

    Bytes ext_block = read_vec16(r);
    if (!r.empty()) r.fail("trailing bytes after encrypted extensions");
    bool saw_tp = false;
    ByteReader er((ByteView(ext_block)));
    while (!er.empty()) {
        uint16_t type = er.read_u16();
        Bytes body = read_vec16(er);
        out.ext_order.push_back(type);
        ByteReader br((ByteView(body)));
        switch (type) {
            case ext::alpn: {
                out.alpn_present = true;
                Bytes list = read_vec16(br);
                ByteReader lr((ByteView(list)));
                if (!lr.empty()) {
                    Bytes name = read_vec8(lr);
                    out.alpn_selected = std::string(name.begin(), name.end());
                }
                break;
            }
            case ext::quic_transport_parameters: {
                saw_tp = true;
                out.transport_params = parse_transport_params(body);
                std::set<uint64_t> seen;
                for (const auto& p : out.transport_params)
                    if (!seen.insert(p.id).second) out.duplicate_tp_ids = true;
                break;
            }
            default: break;
        }
    }
    if (!saw_tp)
        throw ParseError("encrypted extensions carry no quic transport parameters", message.size());
    return out;
}

// ------------------------------------------------------------ crypto stream ----

void CryptoStream::insert(uint64_t offset, ByteView data) {
    if (data.empty()) return;
    uint64_t a = offset;
    uint64_t b = offset + data.size();

    auto it = segments_.lower_bound(a);
    if (it != segments_.begin()) {
        auto p = std::prev(it);
        if (p->first + p->second.size() >= a) it = p;
    }

    uint64_t new_start = a, new_end = b;
    std::vector<std::map<uint64_t, Bytes>::iterator> absorbed;
    for (auto cur = it; cur != segments_.end() && cur->first <= b; ++cur) {
        uint64_t s = cur->first;
        uint64_t e = s + cur->second.size();
        if (e < a) continue;
        // Overlapping bytes must agree: a peer re-sending different content at
        // the same offset is a protocol violation we refuse to hide.
        uint64_t lo = std::max(a, s), hi = std::min(b, e);
        for (uint64_t i = lo; i < hi; i++)
            if (cur->second[i - s] != data[i - a])
                throw ParseError("crypto stream retransmission disagrees with buffered bytes",
                                 static_cast<size_t>(i));
        new_start = std::min(new_start, s);
        new_end = std::max(new_end, e);
        absorbed.push_back(cur);
    }

    Bytes merged(static_cast<size_t>(new_end - new_start), 0);
    for (auto seg : absorbed)
        std::copy(seg->second.begin(), seg->second.end(),
                  merged.begin() + static_cast<size_t>(seg->first - new_start));
    std::copy(data.begin(), data.end(), merged.begin() + static_cast<size_t>(a - new_start));
    for (auto seg : absorbed) segments_.erase(seg);
    segments_.emplace(new_start, std::move(merged));
}

size_t CryptoStream::contiguous_length() const {
    if (segments_.empty() || segments_.begin()->first != 0) return 0;
    return segments_.begin()->second.size();
}

uint64_t CryptoStream::bytes_buffered() const {
    uint64_t n = 0;
    for (const auto& [off, seg] : segments_) n += seg.size();
    return n;
}

std::optional<Bytes> CryptoStream::next_message() {
    size_t have = contiguous_length();
    if (have < read_pos_ + 4) return std::nullopt;
    const Bytes& seg = segments_.begin()->second;
    size_t len = static_cast<size_t>(seg[read_pos_ + 1]) << 16 |
                 static_cast<size_t>(seg[read_pos_ + 2]) << 8 | seg[read_pos_ + 3];
    if (have < read_pos_ + 4 + len) return std::nullopt;
    Bytes msg(seg.begin() + read_pos_, seg.begin() + read_pos_ + 4 + len);
    read_pos_ += 4 + len;
    return msg;
}

}  // namespace quicscout::tlsmini
