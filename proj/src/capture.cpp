#include "quicscout/capture.hpp"

#include <fstream>

namespace quicscout::probe {

namespace {
constexpr uint8_t kMagic[4] = {'Q', 'F', 'L', 'T'};
constexpr uint8_t kFormatVersion = 1;
}  // namespace

const char* probe_kind_name(ProbeKind k) {
    return k == ProbeKind::version_negotiation ? "vn" : "handshake";
}

Bytes serialize_capture(const Capture& c) {
    ByteWriter w;
    w.bytes(ByteView(kMagic, 4));
    w.u8(kFormatVersion);
    w.u8(static_cast<uint8_t>(c.kind));
    w.u32(c.version);
    w.u16(static_cast<uint16_t>(c.alpn.size()));
    w.bytes(ByteView(reinterpret_cast<const uint8_t*>(c.alpn.data()), c.alpn.size()));
    w.u16(static_cast<uint16_t>(c.sni.size()));
    w.bytes(ByteView(reinterpret_cast<const uint8_t*>(c.sni.data()), c.sni.size()));
    w.u8(static_cast<uint8_t>(c.dcid.id.size()));
    w.bytes(c.dcid.id);
    w.u8(static_cast<uint8_t>(c.scid.id.size()));
    w.bytes(c.scid.id);
    w.u8(static_cast<uint8_t>(c.x25519_private.size()));
    w.bytes(c.x25519_private);
    w.u8(static_cast<uint8_t>(c.client_random.size()));
    w.bytes(c.client_random);
    w.u32(static_cast<uint32_t>(c.records.size()));
    for (const auto& r : c.records) {
        w.u8(r.dir);
        w.u64(r.t_micros);
        w.u32(static_cast<uint32_t>(r.data.size()));
        w.bytes(r.data);
    }
    return w.take();
}

Capture parse_capture(ByteView data) {
    ByteReader r(data);
    Bytes magic = r.read_bytes(4);
    if (!views_equal(magic, ByteView(kMagic, 4))) r.fail("not a capture file (bad magic)");
    if (r.read_u8() != kFormatVersion) r.fail("unsupported capture format version");

    Capture c;
    uint8_t kind = r.read_u8();
    if (kind > 1) r.fail("unknown probe kind");
    c.kind = static_cast<ProbeKind>(kind);
    c.version = r.read_u32();
    Bytes alpn = r.read_bytes(r.read_u16());
    c.alpn.assign(alpn.begin(), alpn.end());
    Bytes sni = r.read_bytes(r.read_u16());
    c.sni.assign(sni.begin(), sni.end());
    c.dcid.id = r.read_bytes(r.read_u8());
    c.scid.id = r.read_bytes(r.read_u8());
    c.x25519_private = r.read_bytes(r.read_u8());
    c.client_random = r.read_bytes(r.read_u8());
    uint32_t n = r.read_u32();
    for (uint32_t i = 0; i < n; i++) {
        CaptureRecord rec;
        rec.dir = r.read_u8();
        if (rec.dir > 1) r.fail("bad record direction");
        rec.t_micros = r.read_u64();
        rec.data = r.read_bytes(r.read_u32());
        c.records.push_back(std::move(rec));
    }
    if (!r.empty()) r.fail("trailing bytes after capture records");
    return c;
}

void write_capture_file(const std::string& path, const Capture& c) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    Bytes data = serialize_capture(c);
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

Capture read_capture_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_capture(data);
}

}  // namespace quicscout::probe
