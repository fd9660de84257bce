#include "quicscout/session.hpp"

#include <algorithm>
#include <stdexcept>

namespace quicscout::probe {

const char* outcome_name(Outcome o) {
    switch (o) {
        case Outcome::timeout: return "timeout";
        case Outcome::version_negotiation: return "version_negotiation";
        case Outcome::closed: return "closed";
        case Outcome::handshake_progressed: return "handshake_progressed";
        case Outcome::unparseable: return "unparseable";
    }
    return "unknown";
}

ClientIdentity make_identity(DetRng& rng) {
    ClientIdentity id;
    id.dcid.id = rng.bytes(8);
    id.scid.id = rng.bytes(8);
    id.x25519_private = rng.bytes(32);
    id.client_random = rng.bytes(32);
    return id;
}

std::vector<tlsmini::TransportParam> client_transport_params(const wire::ConnectionId& scid) {
    return {
        {0x04, wire::encode_varint(10485760)},  // initial_max_data
        {0x06, wire::encode_varint(1048576)},   // initial_max_stream_data_bidi_local
        {0x07, wire::encode_varint(1048576)},   // initial_max_stream_data_bidi_remote
        {0x08, wire::encode_varint(100)},       // initial_max_streams_bidi
        {0x09, wire::encode_varint(100)},       // initial_max_streams_uni
        {0x0f, scid.id},                        // initial_source_connection_id
    };
}

ProbeSession::ProbeSession(ProbeConfig cfg, ClientIdentity id)
    : cfg_(std::move(cfg)), id_(std::move(id)) {
    if (cfg_.kind == ProbeKind::version_negotiation) {
        if (!wire::is_reserved_version(cfg_.reserved_version))
            throw std::invalid_argument("version-negotiation probes need a reserved version");
    } else {
        if (cfg_.alpn.empty()) throw std::invalid_argument("handshake probes need an alpn");
        if (id_.x25519_private.size() != 32 || id_.client_random.size() != 32)
            throw std::invalid_argument("handshake probes need a 32-byte key and random");
    }
    if (id_.dcid.id.empty() || id_.dcid.id.size() > 20 || id_.scid.id.size() > 20)
        throw std::invalid_argument("bad connection id lengths");
    resends_left_ = std::max(0, cfg_.retries);
    remote_cid_ = id_.dcid;
    if (cfg_.kind == ProbeKind::handshake)
        initial_keys_ = pktcrypto::derive_initial_keys(id_.dcid, wire::kQuicV1);
    start();
}

void ProbeSession::queue(Bytes datagram) {
    result_.datagrams_sent++;
    outgoing_.push_back(std::move(datagram));
}

std::vector<Bytes> ProbeSession::take_outgoing() {
    std::vector<Bytes> out = std::move(outgoing_);
    outgoing_.clear();
    return out;
}

Bytes ProbeSession::build_client_hello_bytes() const {
    tlsmini::ClientHelloConfig ch;
    ch.sni = cfg_.sni;
    ch.alpn = {cfg_.alpn};
    ch.transport_params = client_transport_params(id_.scid);
    ch.key_share_public = pktcrypto::x25519_from_private(id_.x25519_private).public_key;
    ch.random = id_.client_random;
    ch.cookie = cookie_;
    return tlsmini::build_client_hello(ch);
}

void ProbeSession::start() {
    if (cfg_.kind == ProbeKind::version_negotiation) {
        // An Initial-shaped packet under a reserved version.  The payload cannot
        // be valid under any version the server knows, which is the point: the
        // only meaningful answer is its version list.
        wire::LongHeaderSpec spec;
        spec.type = wire::PacketType::initial;
        spec.version = cfg_.reserved_version;
        spec.dcid = id_.dcid;
        spec.scid = id_.scid;
        size_t payload_len = 1200;
        Bytes header;
        for (int i = 0; i < 3; i++) {
            header = wire::build_packet_header(spec, 0, 1, payload_len, 0);
            if (header.size() + payload_len == 1200) break;
            payload_len = 1200 - header.size();
        }
        ByteWriter w;
        w.bytes(header);
        w.zeros(payload_len);
        first_datagram_ = w.take();
    } else {
        client_hello_ = build_client_hello_bytes();
        transcript_ = client_hello_;
        ByteWriter frames;
        wire::write_crypto(frames, 0, client_hello_);
        client_crypto_offset_ = client_hello_.size();
        first_datagram_ = protected_initial(frames.take(), 1200, 0);
    }
    queue(first_datagram_);
}

Bytes ProbeSession::protected_initial(const Bytes& frames, size_t pad_datagram_to,
                                      size_t tail_len) {
    wire::LongHeaderSpec spec;
    spec.type = wire::PacketType::initial;
    spec.version = wire::kQuicV1;
    spec.dcid = remote_cid_;
    spec.scid = id_.scid;
    spec.token = token_;
    uint64_t pn = next_initial_pn_++;
    const size_t pn_len = 1;
    size_t pad = 0;
    Bytes header;
    for (int i = 0; i < 4; i++) {
        header = wire::build_packet_header(spec, pn, pn_len, frames.size() + pad,
                                           pktcrypto::kAeadTagLen);
        size_t total = header.size() + frames.size() + pad + pktcrypto::kAeadTagLen + tail_len;
        if (total >= pad_datagram_to) break;
        pad = pad_datagram_to -
              (header.size() + frames.size() + pktcrypto::kAeadTagLen + tail_len);
    }
    Bytes payload = frames;
    if (pad > 0) {
        ByteWriter pw;
        wire::write_padding(pw, pad);
        Bytes pb = pw.take();
        payload.insert(payload.end(), pb.begin(), pb.end());
    }
    return pktcrypto::protect_packet(initial_keys_.client, header, header.size() - pn_len,
                                     pn_len, pn, payload);
}

Bytes ProbeSession::protected_handshake(const Bytes& frames) {
    wire::LongHeaderSpec spec;
    spec.type = wire::PacketType::handshake;
    spec.version = wire::kQuicV1;
    spec.dcid = remote_cid_;
    spec.scid = id_.scid;
    uint64_t pn = next_handshake_pn_++;
    const size_t pn_len = 1;
    Bytes header =
        wire::build_packet_header(spec, pn, pn_len, frames.size(), pktcrypto::kAeadTagLen);
    return pktcrypto::protect_packet(client_handshake_keys_, header, header.size() - pn_len,
                                     pn_len, pn, frames);
}

void ProbeSession::on_datagram(ByteView datagram) {
    if (done_) return;
    result_.datagrams_received++;
    try {
        wire::SplitResult split = wire::split_coalesced(datagram);
        for (const auto& pkt : split.packets) {
            if (done_) break;
            if (cfg_.kind == ProbeKind::version_negotiation &&
                pkt.header.type != wire::PacketType::version_negotiation) {
                fail("expected a version negotiation response");
                break;
            }
            switch (pkt.header.type) {
                case wire::PacketType::version_negotiation:
                    handle_version_negotiation(pkt.packet);
                    break;
                case wire::PacketType::retry:
                    handle_retry(pkt.header, pkt.packet);
                    break;
                case wire::PacketType::initial:
                    handle_initial(pkt.header, pkt.packet);
                    break;
                case wire::PacketType::handshake: {
                    size_t pn_offset = pkt.header.pn_offset - pkt.header.header_start;
                    if (!handshake_keys_ready_)
                        pending_handshake_.push_back(
                            {Bytes(pkt.packet.begin(), pkt.packet.end()), pn_offset});
                    else
                        handle_handshake_packet(pkt.packet, pn_offset);
                    break;
                }
                case wire::PacketType::zero_rtt:
                    break;  // never sent by servers; skip
            }
        }
        // split.trailer (short-header bytes or padding) carries nothing we need
    } catch (const ParseError& e) {
        fail(std::string("response parse error: ") + e.what());
        return;
    } catch (const pktcrypto::CryptoError& e) {
        fail(std::string("response crypto error: ") + e.what());
        return;
    }
    if (done_) return;

    if (cfg_.kind == ProbeKind::version_negotiation) {
        // handle_version_negotiation finishes the session; anything else is wrong
        fail("expected a version negotiation response");
        return;
    }
    if (!result_.observation.closes.empty()) {
        send_acks(true);
        finish(Outcome::closed);
        return;
    }
    if (encrypted_extensions_seen_) {
        send_acks(true);
        finish(Outcome::handshake_progressed);
        return;
    }
    send_acks(false);
}

void ProbeSession::handle_version_negotiation(ByteView packet) {
    wire::VersionNegotiation vn = wire::parse_version_negotiation(packet);
    result_.offered_versions = vn.versions;
    finish(Outcome::version_negotiation);
}

void ProbeSession::handle_retry(const wire::LongHeader& h, ByteView packet) {
    if (retry_seen_) {
        fail("second retry packet");
        return;
    }
    if (largest_initial_received_.has_value()) return;  // late retry, ignore
    if (!pktcrypto::verify_retry_integrity(id_.dcid, packet)) {
        fail("retry integrity tag invalid");
        return;
    }
    if (h.token.empty()) {
        fail("retry without a token");
        return;
    }
    retry_seen_ = true;
    result_.saw_retry = true;
    token_ = h.token;
    remote_cid_ = h.scid;
    initial_keys_ = pktcrypto::derive_initial_keys(remote_cid_, wire::kQuicV1);
    // Same ClientHello again: new packet number, fresh crypto stream.
    ByteWriter frames;
    wire::write_crypto(frames, 0, client_hello_);
    queue(protected_initial(frames.take(), 1200, 0));
}

void ProbeSession::handle_initial(const wire::LongHeader& h, ByteView packet) {
    size_t pn_offset = h.pn_offset - h.header_start;
    pktcrypto::UnprotectedPacket up;
    try {
        up = pktcrypto::unprotect_packet(initial_keys_.server, packet, pn_offset,
                                         largest_initial_received_);
    } catch (const pktcrypto::AuthenticationError&) {
        fail("initial packet failed authentication");
        return;
    }
    if (!remote_cid_known_) {
        remote_cid_ = h.scid;
        remote_cid_known_ = true;
    }
    initial_pns_received_.insert(up.packet_number);
    if (!largest_initial_received_ || up.packet_number > *largest_initial_received_)
        largest_initial_received_ = up.packet_number;

    for (const auto& fr : wire::parse_frames(up.plaintext)) {
        if (done_) return;
        if (const auto* crypto = std::get_if<wire::CryptoFrame>(&fr.v))
            crypto_initial_.insert(crypto->offset, crypto->data);
        else if (const auto* close = std::get_if<wire::ConnectionCloseFrame>(&fr.v))
            record_close(*close);
    }
    drain_initial_messages();
}

void ProbeSession::drain_initial_messages() {
    while (!done_ && !server_hello_seen_) {
        auto msg = crypto_initial_.next_message();
        if (!msg) return;
        tlsmini::ServerHelloSummary sh = tlsmini::parse_server_hello(*msg);
        if (sh.is_hello_retry_request) {
            if (hrr_seen_) {
                fail("second hello retry request");
                return;
            }
            hrr_seen_ = true;
            result_.saw_hello_retry_request = true;
            if (sh.hrr_selected_group && *sh.hrr_selected_group != tlsmini::kGroupX25519) {
                fail("hrr-unsupported");
                return;
            }
            // RFC 8446 §4.4.1: the first hello collapses into a message_hash item.
            ByteWriter mh;
            mh.u8(254);
            mh.u24(32);
            mh.bytes(pktcrypto::sha256(client_hello_));
            transcript_ = mh.take();
            transcript_.insert(transcript_.end(), msg->begin(), msg->end());
            cookie_ = sh.hrr_cookie;
            client_hello_ = build_client_hello_bytes();
            transcript_.insert(transcript_.end(), client_hello_.begin(), client_hello_.end());
            ByteWriter frames;
            wire::write_crypto(frames, client_crypto_offset_, client_hello_);
            client_crypto_offset_ += client_hello_.size();
            queue(protected_initial(frames.take(), 1200, 0));
            continue;
        }
        server_hello_seen_ = true;
        transcript_.insert(transcript_.end(), msg->begin(), msg->end());
        result_.cipher_suite = sh.cipher_suite;
        result_.observation.ext_signature = tlsmini::ext_signature_of(sh.ext_order);
        derive_handshake_keys(sh);
    }
}

void ProbeSession::derive_handshake_keys(const tlsmini::ServerHelloSummary& sh) {
    if (sh.cipher_suite != tlsmini::kTlsAes128GcmSha256 &&
        sh.cipher_suite != tlsmini::kTlsChacha20Poly1305Sha256) {
        fail("server selected a cipher suite the probe never offered");
        return;
    }
    if (sh.key_share_x25519.size() != 32) {
        fail("server hello without a usable key share");
        return;
    }
    Bytes shared = pktcrypto::x25519_shared(id_.x25519_private, sh.key_share_x25519);
    pktcrypto::HandshakeSecrets secrets =
        pktcrypto::tls13_handshake_secrets(shared, pktcrypto::sha256(transcript_));
    pktcrypto::Aead aead = pktcrypto::aead_for_cipher_suite(sh.cipher_suite);
    client_handshake_keys_ = pktcrypto::derive_packet_keys(secrets.client, aead);
    server_handshake_keys_ = pktcrypto::derive_packet_keys(secrets.server, aead);
    handshake_keys_ready_ = true;
    std::vector<PendingPacket> pending = std::move(pending_handshake_);
    pending_handshake_.clear();
    for (const auto& p : pending) {
        if (done_) break;
        handle_handshake_packet(p.packet, p.pn_offset);
    }
}

void ProbeSession::handle_handshake_packet(ByteView packet, size_t pn_offset) {
    pktcrypto::UnprotectedPacket up;
    try {
        up = pktcrypto::unprotect_packet(server_handshake_keys_, packet, pn_offset,
                                         largest_handshake_received_);
    } catch (const pktcrypto::AuthenticationError&) {
        fail("handshake packet failed authentication");
        return;
    }
    handshake_pns_received_.insert(up.packet_number);
    if (!largest_handshake_received_ || up.packet_number > *largest_handshake_received_)
        largest_handshake_received_ = up.packet_number;

    for (const auto& fr : wire::parse_frames(up.plaintext)) {
        if (done_) return;
        if (const auto* crypto = std::get_if<wire::CryptoFrame>(&fr.v))
            crypto_handshake_.insert(crypto->offset, crypto->data);
        else if (const auto* close = std::get_if<wire::ConnectionCloseFrame>(&fr.v))
            record_close(*close);
    }
    drain_handshake_messages();
}

void ProbeSession::drain_handshake_messages() {
    // Only the first handshake-level message matters: EncryptedExtensions ends
    // the observation; Certificate and the rest of the flight stay unread.
    while (!done_ && !encrypted_extensions_seen_) {
        auto msg = crypto_handshake_.next_message();
        if (!msg) return;
        tlsmini::EncryptedExtensionsSummary ee = tlsmini::parse_encrypted_extensions(*msg);
        encrypted_extensions_seen_ = true;
        result_.raw_transport_params = ee.transport_params;
        result_.alpn_selected = ee.alpn_selected;
        auto& obs = result_.observation;
        obs.have_tp = true;
        obs.tp_order = fingerprint::normalize_tp_order(ee.transport_params);
        obs.alpn_missing_in_ee = !ee.alpn_present;
    }
}

void ProbeSession::record_close(const wire::ConnectionCloseFrame& f) {
    fingerprint::CloseObservation c;
    c.error_code = f.error_code;
    c.frame_type = f.trigger_frame_type;
    c.reason = f.reason;
    result_.observation.closes.push_back(std::move(c));
}

void ProbeSession::send_acks(bool include_close) {
    if (cfg_.kind != ProbeKind::handshake) return;
    bool ack_initial = !initial_pns_received_.empty();
    bool ack_handshake = handshake_keys_ready_ && !handshake_pns_received_.empty();
    if (!include_close) {
        if (!ack_initial && !ack_handshake) return;
        if (ack_datagrams_sent_ >= cfg_.max_ack_round_trips) return;
    }

    auto first_range = [](const std::set<uint64_t>& pns) {
        uint64_t largest = *pns.rbegin();
        uint64_t run = 0;
        while (largest >= run + 1 && pns.count(largest - run - 1)) run++;
        return std::pair<uint64_t, uint64_t>{largest, run};
    };

    Bytes handshake_packet;
    if (ack_handshake || (include_close && handshake_keys_ready_)) {
        ByteWriter f;
        if (ack_handshake) {
            auto [largest, run] = first_range(handshake_pns_received_);
            wire::write_ack(f, largest, 0, run);
        }
        if (include_close && handshake_keys_ready_)
            wire::write_connection_close(f, wire::transport_error::no_error, 0, "");
        if (f.size() > 0) handshake_packet = protected_handshake(f.view());
    }
    Bytes datagram;
    if (ack_initial || (include_close && !handshake_keys_ready_)) {
        ByteWriter f;
        if (ack_initial) {
            auto [largest, run] = first_range(initial_pns_received_);
            wire::write_ack(f, largest, 0, run);
        }
        if (include_close && !handshake_keys_ready_)
            wire::write_connection_close(f, wire::transport_error::no_error, 0, "");
        datagram = protected_initial(f.view(), 1200, handshake_packet.size());
    }
    datagram.insert(datagram.end(), handshake_packet.begin(), handshake_packet.end());
    if (datagram.empty()) return;
    if (!include_close) ack_datagrams_sent_++;
    queue(std::move(datagram));
}

void ProbeSession::finish(Outcome o) {
    if (done_) return;
    result_.outcome = o;
    result_.observation.silent = (result_.datagrams_received == 0);
    done_ = true;
}

void ProbeSession::fail(std::string detail) {
    if (done_) return;
    result_.failure_detail = std::move(detail);
    finish(Outcome::unparseable);
}

void ProbeSession::on_timeout() {
    if (done_) return;
    if (result_.datagrams_received == 0 && resends_left_ > 0) {
        resends_left_--;
        queue(first_datagram_);
        return;
    }
    if (cfg_.kind == ProbeKind::handshake) send_acks(true);
    finish(Outcome::timeout);
}

ProbeResult replay_capture(const Capture& c) {
    ProbeConfig cfg;
    cfg.kind = c.kind;
    if (c.kind == ProbeKind::handshake)
        cfg.alpn = c.alpn;
    else
        cfg.reserved_version = c.version;
    if (!c.sni.empty()) cfg.sni = c.sni;
    ClientIdentity id{c.dcid, c.scid, c.x25519_private, c.client_random};
    ProbeSession session(std::move(cfg), std::move(id));
    for (const auto& rec : c.records) {
        if (session.done()) break;
        if (rec.dir == kDirReceived)
            session.on_datagram(rec.data);
        else
            (void)session.take_outgoing();
    }
    while (!session.done()) session.on_timeout();
    return session.result();
}

}  // namespace quicscout::probe
