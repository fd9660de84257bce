#include "quicscout/wire.hpp"

#include <algorithm>

namespace quicscout::wire {

// ---------------------------------------------------------------- varints ----

size_t varint_size(uint64_t v) {
    if (v < (1ull << 6)) return 1;
    if (v < (1ull << 14)) return 2;
    if (v < (1ull << 30)) return 4;
    if (v <= kVarintMax) return 8;
    throw std::invalid_argument("value exceeds varint range (2^62 - 1)");
}

void write_varint(ByteWriter& w, uint64_t v) {
    switch (varint_size(v)) {
        case 1: w.u8(static_cast<uint8_t>(v)); break;
        case 2: w.u16(static_cast<uint16_t>(v | 0x4000)); break;
        case 4: w.u32(static_cast<uint32_t>(v | 0x80000000u)); break;
        default: w.u64(v | 0xc000000000000000ull); break;
    }
}

Bytes encode_varint(uint64_t v) {
    ByteWriter w;
    write_varint(w, v);
    return w.take();
}

uint64_t read_varint(ByteReader& r) {
    uint8_t first = r.read_u8();
    size_t len = size_t{1} << (first >> 6);
    uint64_t v = first & 0x3f;
    for (size_t i = 1; i < len; i++) v = (v << 8) | r.read_u8();
    return v;
}

std::pair<uint64_t, size_t> decode_varint(ByteView in) {
    ByteReader r(in);
    uint64_t v = read_varint(r);
    return {v, r.pos()};
}

// -------------------------------------------------------------- long header ----

const char* packet_type_name(PacketType t) {
    switch (t) {
        case PacketType::initial: return "initial";
        case PacketType::zero_rtt: return "0rtt";
        case PacketType::handshake: return "handshake";
        case PacketType::retry: return "retry";
        case PacketType::version_negotiation: return "version-negotiation";
    }
    return "?";
}

namespace {

ConnectionId read_cid(ByteReader& r) {
    uint8_t len = r.read_u8();
    if (len > kMaxCidLen) r.fail("connection id length exceeds 20");
    return ConnectionId(r.read_bytes(len));
}

}  // namespace

LongHeader parse_long_header(ByteView datagram, size_t offset) {
    ByteReader r(datagram);
    r.skip(offset);

    LongHeader h;
    h.header_start = offset;
    h.first_byte = r.read_u8();
    if (!(h.first_byte & 0x80)) r.fail("not a long header (form bit clear)");

    h.version = r.read_u32();
    if (h.version == 0) {
        // Version negotiation: type bits carry no meaning (RFC 8999).
        h.type = PacketType::version_negotiation;
        h.dcid = read_cid(r);
        h.scid = read_cid(r);
        h.packet_end = datagram.size();
        return h;
    }

    if (!(h.first_byte & 0x40)) r.fail("fixed bit is zero");
    h.type = static_cast<PacketType>((h.first_byte >> 4) & 0x03);
    h.dcid = read_cid(r);
    h.scid = read_cid(r);

    switch (h.type) {
        case PacketType::initial: {
            uint64_t token_len = read_varint(r);
            if (token_len > r.remaining()) r.fail("initial token exceeds datagram");
            h.token = r.read_bytes(static_cast<size_t>(token_len));
            break;
        }
        case PacketType::retry: {
            // Token runs to the end of the datagram, minus the 16-byte integrity tag.
            if (r.remaining() < 16) r.fail("retry packet shorter than integrity tag");
            h.token = r.read_bytes(r.remaining() - 16);
            h.retry_tag = r.read_bytes(16);
            h.packet_end = datagram.size();
            return h;
        }
        default: break;
    }

    h.length = read_varint(r);
    if (h.length < 1) r.fail("packet length shorter than a packet number");
    h.pn_offset = r.pos();
    if (h.length > r.remaining()) r.fail("packet length exceeds datagram");
    h.packet_end = h.pn_offset + static_cast<size_t>(h.length);
    return h;
}

SplitResult split_coalesced(ByteView datagram) {
    SplitResult out;
    size_t pos = 0;
    while (pos < datagram.size() && (datagram[pos] & 0x80)) {
        LongHeader h = parse_long_header(datagram, pos);
        out.packets.push_back({h, datagram.subspan(pos, h.packet_end - pos)});
        pos = h.packet_end;
    }
    out.trailer = datagram.subspan(pos);
    return out;
}

Bytes build_packet_header(const LongHeaderSpec& spec, uint64_t packet_number, size_t pn_len,
                          size_t payload_len, size_t aead_overhead) {
    if (spec.type == PacketType::retry || spec.type == PacketType::version_negotiation)
        throw std::invalid_argument("build_packet_header handles number-bearing packets only");
    if (pn_len < 1 || pn_len > 4) throw std::invalid_argument("packet number length must be 1..4");

    ByteWriter w;
    uint8_t type_bits = static_cast<uint8_t>(spec.type);
    w.u8(static_cast<uint8_t>(0xc0 | (type_bits << 4) | (pn_len - 1)));
    w.u32(spec.version);
    w.u8(static_cast<uint8_t>(spec.dcid.size()));
    w.bytes(spec.dcid.id);
    w.u8(static_cast<uint8_t>(spec.scid.size()));
    w.bytes(spec.scid.id);
    if (spec.type == PacketType::initial) {
        write_varint(w, spec.token.size());
        w.bytes(spec.token);
    }
    write_varint(w, pn_len + payload_len + aead_overhead);
    for (size_t i = pn_len; i-- > 0;) w.u8(static_cast<uint8_t>(packet_number >> (8 * i)));
    return w.take();
}

// ------------------------------------------------------ version negotiation ----

VersionNegotiation parse_version_negotiation(ByteView datagram) {
    ByteReader r(datagram);
    uint8_t first = r.read_u8();
    if (!(first & 0x80)) r.fail("not a long header (form bit clear)");
    uint32_t version = r.read_u32();
    if (version != 0) r.fail("version negotiation must carry version 0");

    VersionNegotiation vn;
    vn.dcid = read_cid(r);
    vn.scid = read_cid(r);
    if (r.remaining() == 0) r.fail("empty supported-version list");
    if (r.remaining() % 4 != 0) r.fail("truncated supported-version entry");
    while (!r.empty()) vn.versions.push_back(r.read_u32());
    return vn;
}

Bytes build_version_negotiation(const ConnectionId& dcid, const ConnectionId& scid,
                                const std::vector<uint32_t>& versions) {
    if (versions.empty()) throw std::invalid_argument("version list must be non-empty");
    ByteWriter w;
    w.u8(0xc0);  // form bit set; remaining bits arbitrary, fixed for determinism
    w.u32(0);
    w.u8(static_cast<uint8_t>(dcid.size()));
    w.bytes(dcid.id);
    w.u8(static_cast<uint8_t>(scid.size()));
    w.bytes(scid.id);
    for (uint32_t v : versions) w.u32(v);
    return w.take();
}

// -------------------------------------------------------------------- frames ----

namespace {

AckFrame parse_ack(ByteReader& r, bool ecn) {
    AckFrame ack;
    ack.ecn = ecn;
    ack.largest_acked = read_varint(r);
    ack.ack_delay = read_varint(r);
    uint64_t range_count = read_varint(r);
    uint64_t first_range = read_varint(r);
    if (first_range > ack.largest_acked) r.fail("ack range underflows below zero");
    uint64_t smallest = ack.largest_acked - first_range;
    ack.ranges.push_back({smallest, ack.largest_acked});
    for (uint64_t i = 0; i < range_count; i++) {
        uint64_t gap = read_varint(r);
        uint64_t len = read_varint(r);
        if (gap + 2 > smallest) r.fail("ack gap underflows below zero");
        uint64_t largest = smallest - gap - 2;
        if (len > largest) r.fail("ack range underflows below zero");
        smallest = largest - len;
        ack.ranges.push_back({smallest, largest});
    }
    if (ecn) {
        read_varint(r);  // ECT(0)
        read_varint(r);  // ECT(1)
        read_varint(r);  // ECN-CE
    }
    return ack;
}

ConnectionCloseFrame parse_close(ByteReader& r, bool application) {
    ConnectionCloseFrame c;
    c.application = application;
    c.error_code = read_varint(r);
    if (!application) c.trigger_frame_type = read_varint(r);
    uint64_t reason_len = read_varint(r);
    if (reason_len > r.remaining()) r.fail("close reason exceeds payload");
    c.reason_raw = r.read_bytes(static_cast<size_t>(reason_len));
    c.reason_valid_utf8 = is_valid_utf8(c.reason_raw);
    c.reason = utf8_lossy(c.reason_raw);
    return c;
}

// Skips a frame outside the observed subset using its RFC 9000 grammar.  Returns
// false when the grammar is unknown, in which case the caller swallows the rest
// of the payload as an opaque tail.
bool skip_known_frame(uint64_t type, ByteReader& r) {
    auto skip_varints = [&](int n) {
        for (int i = 0; i < n; i++) read_varint(r);
    };
    auto skip_len_prefixed = [&] {
        uint64_t n = read_varint(r);
        if (n > r.remaining()) r.fail("length-prefixed field exceeds payload");
        r.skip(static_cast<size_t>(n));
    };

    if (type >= 0x08 && type <= 0x0f) {  // STREAM, with OFF/LEN/FIN bits
        read_varint(r);                  // stream id
        if (type & 0x04) read_varint(r);
        if (type & 0x02) skip_len_prefixed();
        else r.skip(r.remaining());
        return true;
    }
    switch (type) {
        case 0x04: skip_varints(3); return true;  // RESET_STREAM
        case 0x05: skip_varints(2); return true;  // STOP_SENDING
        case 0x07: skip_len_prefixed(); return true;  // NEW_TOKEN
        case 0x10: skip_varints(1); return true;  // MAX_DATA
        case 0x11: skip_varints(2); return true;  // MAX_STREAM_DATA
        case 0x12:
        case 0x13: skip_varints(1); return true;  // MAX_STREAMS
        case 0x14: skip_varints(1); return true;  // DATA_BLOCKED
        case 0x15: skip_varints(2); return true;  // STREAM_DATA_BLOCKED
        case 0x16:
        case 0x17: skip_varints(1); return true;  // STREAMS_BLOCKED
        case 0x18: {                              // NEW_CONNECTION_ID
            skip_varints(2);
            uint8_t cid_len = r.read_u8();
            r.skip(cid_len);
            r.skip(16);  // stateless reset token
            return true;
        }
        case 0x19: skip_varints(1); return true;  // RETIRE_CONNECTION_ID
        case 0x1a:
        case 0x1b: r.skip(8); return true;  // PATH_CHALLENGE / PATH_RESPONSE
        case 0x1e: return true;             // HANDSHAKE_DONE
        case 0x30: r.skip(r.remaining()); return true;  // DATAGRAM, no length
        case 0x31: skip_len_prefixed(); return true;    // DATAGRAM, with length
        default: return false;
    }
}

}  // namespace

std::vector<Frame> parse_frames(ByteView payload) {
    std::vector<Frame> out;
    ByteReader r(payload);
    while (!r.empty()) {
        size_t start = r.pos();
        uint64_t type = read_varint(r);
        Frame f;
        f.wire_offset = start;
        switch (type) {
            case frame_type::padding: {
                PaddingFrame p{1};
                while (!r.empty() && r.peek_u8() == 0) {
                    r.skip(1);
                    p.count++;
                }
                f.v = p;
                break;
            }
            case frame_type::ping: f.v = PingFrame{}; break;
            case frame_type::ack: f.v = parse_ack(r, false); break;
            case frame_type::ack_ecn: f.v = parse_ack(r, true); break;
            case frame_type::crypto: {
                CryptoFrame c;
                c.offset = read_varint(r);
                uint64_t len = read_varint(r);
                if (len > r.remaining()) r.fail("crypto frame data exceeds payload");
                c.data = r.read_bytes(static_cast<size_t>(len));
                f.v = std::move(c);
                break;
            }
            case frame_type::connection_close: f.v = parse_close(r, false); break;
            case frame_type::connection_close_app: f.v = parse_close(r, true); break;
            default: {
                size_t body_start = r.pos();
                if (!skip_known_frame(type, r)) r.skip(r.remaining());
                OpaqueFrame o;
                o.type = type;
                ByteView body = payload.subspan(body_start, r.pos() - body_start);
                o.body.assign(body.begin(), body.end());
                f.v = std::move(o);
                break;
            }
        }
        f.wire_size = r.pos() - start;
        out.push_back(std::move(f));
    }
    return out;
}

void write_padding(ByteWriter& w, size_t n) { w.zeros(n); }

void write_ping(ByteWriter& w) { write_varint(w, frame_type::ping); }

void write_ack(ByteWriter& w, uint64_t largest, uint64_t ack_delay, uint64_t first_range) {
    write_varint(w, frame_type::ack);
    write_varint(w, largest);
    write_varint(w, ack_delay);
    write_varint(w, 0);  // additional range count
    write_varint(w, first_range);
}

void write_crypto(ByteWriter& w, uint64_t offset, ByteView data) {
    write_varint(w, frame_type::crypto);
    write_varint(w, offset);
    write_varint(w, data.size());
    w.bytes(data);
}

void write_connection_close(ByteWriter& w, uint64_t error_code, uint64_t trigger_frame_type,
                            std::string_view reason, bool application) {
    write_varint(w, application ? frame_type::connection_close_app : frame_type::connection_close);
    write_varint(w, error_code);
    if (!application) write_varint(w, trigger_frame_type);
    write_varint(w, reason.size());
    w.bytes(ByteView(reinterpret_cast<const uint8_t*>(reason.data()), reason.size()));
}

// ---------------------------------------------------------------------- utf8 ----

namespace {

// Returns the sequence length if a valid UTF-8 scalar starts at s[i], else 0.
size_t utf8_seq_len(ByteView s, size_t i) {
    uint8_t b0 = s[i];
    if (b0 < 0x80) return 1;
    auto cont = [&](size_t k) { return i + k < s.size() && (s[i + k] & 0xc0) == 0x80; };
    if (b0 >= 0xc2 && b0 <= 0xdf) return cont(1) ? 2 : 0;
    if (b0 == 0xe0) return cont(1) && s[i + 1] >= 0xa0 && cont(2) ? 3 : 0;
    if (b0 >= 0xe1 && b0 <= 0xec) return cont(1) && cont(2) ? 3 : 0;
    if (b0 == 0xed) return cont(1) && s[i + 1] <= 0x9f && cont(2) ? 3 : 0;  // no surrogates
    if (b0 >= 0xee && b0 <= 0xef) return cont(1) && cont(2) ? 3 : 0;
    if (b0 == 0xf0) return cont(1) && s[i + 1] >= 0x90 && cont(2) && cont(3) ? 4 : 0;
    if (b0 >= 0xf1 && b0 <= 0xf3) return cont(1) && cont(2) && cont(3) ? 4 : 0;
    if (b0 == 0xf4) return cont(1) && s[i + 1] <= 0x8f && cont(2) && cont(3) ? 4 : 0;
    return 0;
}

}  // namespace

bool is_valid_utf8(ByteView s) {
    for (size_t i = 0; i < s.size();) {
        size_t n = utf8_seq_len(s, i);
        if (n == 0) return false;
        i += n;
    }
    return true;
}

std::string utf8_lossy(ByteView s) {
    std::string out;
    out.reserve(s.size());
    for (size_t i = 0; i < s.size();) {
        size_t n = utf8_seq_len(s, i);
        if (n == 0) {
            out += "\xef\xbf\xbd";  // U+FFFD
            i++;
        } else {
            out.append(reinterpret_cast<const char*>(s.data()) + i, n);
            i += n;
        }
    }
    return out;
}

}  // namespace quicscout::wire
