// End-to-end exercises of the probe state machine against the scripted lab
// endpoints: full handshakes, close behaviors, version negotiation, retry and
// hello-retry-request detours, capture round trips, and live loopback runs.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "quicscout/capture.hpp"
#include "quicscout/fingerprint.hpp"
#include "quicscout/labharness.hpp"
#include "quicscout/runner.hpp"
#include "quicscout/session.hpp"

namespace fp = quicscout::fingerprint;
namespace lab = quicscout::lab;
namespace probe = quicscout::probe;
namespace tls = quicscout::tlsmini;
using quicscout::Bytes;
using quicscout::ByteView;
using quicscout::DetRng;
using quicscout::ParseError;

namespace {

// Moves datagrams between a session and an endpoint until the session settles.
// Optionally records every endpoint reply.
probe::ProbeResult pump(probe::ProbeSession& session, lab::ScriptEndpoint& ep,
                        std::vector<Bytes>* replies_log = nullptr) {
    int guard = 0;
    while (!session.done() && guard++ < 100) {
        std::vector<Bytes> outgoing = session.take_outgoing();
        std::vector<Bytes> replies;
        for (const Bytes& d : outgoing) {
            for (Bytes& r : ep.handle_datagram(d)) replies.push_back(std::move(r));
        }
        if (replies.empty()) {
            session.on_timeout();
            continue;
        }
        for (const Bytes& r : replies) {
            if (replies_log != nullptr) replies_log->push_back(r);
            if (!session.done()) session.on_datagram(r);
        }
    }
    REQUIRE(session.done());
    return session.result();
}

probe::ProbeConfig valid_cfg() {
    probe::ProbeConfig cfg;
    cfg.alpn = "h3";
    cfg.sni = "example.org";
    return cfg;
}

probe::ProbeConfig invalid_alpn_cfg() {
    probe::ProbeConfig cfg = valid_cfg();
    cfg.alpn = "h3x";
    return cfg;
}

probe::ProbeResult probe_endpoint(lab::ScriptEndpoint& ep, const probe::ProbeConfig& cfg,
                                  uint64_t id_seed, std::vector<Bytes>* replies_log = nullptr) {
    DetRng rng(id_seed);
    probe::ClientIdentity id = probe::make_identity(rng);
    probe::ProbeSession session(cfg, id);
    return pump(session, ep, replies_log);
}

probe::ProbeResult probe_script(const lab::Script& script, uint64_t ep_seed, uint64_t id_seed,
                                const probe::ProbeConfig& cfg) {
    lab::ScriptEndpoint ep(script, ep_seed);
    return probe_endpoint(ep, cfg, id_seed);
}

std::vector<uint64_t> sorted(std::vector<uint64_t> v) {
    std::sort(v.begin(), v.end());
    return v;
}

}  // namespace

TEST_CASE("valid handshake probe reaches encrypted extensions on every scripted library") {
    std::vector<std::string> names = lab::farm_libraries();
    REQUIRE(names.size() == 20);
    uint64_t i = 0;
    for (const std::string& name : names) {
        INFO("library: ", name);
        lab::Script script = lab::script_for(name);
        probe::ProbeResult res = probe_script(script, 1000 + i, 2000 + i, valid_cfg());
        i++;
        REQUIRE(res.outcome == probe::Outcome::handshake_progressed);
        const fp::FlightObservation& obs = res.observation;
        REQUIRE(obs.have_tp);
        if (script.tp_kind == fp::TpOrderKind::fixed) {
            CHECK(obs.tp_order == script.tp_ids);
        } else {
            CHECK(sorted(obs.tp_order) == sorted(script.tp_ids));
        }
        REQUIRE(obs.ext_signature.has_value());
        CHECK(std::find(script.signatures.begin(), script.signatures.end(), *obs.ext_signature) !=
              script.signatures.end());
        REQUIRE(res.alpn_selected.has_value());
        CHECK(*res.alpn_selected == "h3");
        uint16_t want_suite =
            name == "quiche" ? tls::kTlsChacha20Poly1305Sha256 : tls::kTlsAes128GcmSha256;
        REQUIRE(res.cipher_suite.has_value());
        CHECK(*res.cipher_suite == want_suite);
        CHECK(obs.closes.empty());
        CHECK(!obs.silent);
        CHECK(!obs.alpn_missing_in_ee);
        CHECK(res.datagrams_sent <= 4);
        CHECK(res.datagrams_received >= 1);
    }
}

TEST_CASE("invalid alpn probe reproduces each scripted rejection") {
    uint64_t i = 0;
    for (const std::string& name : lab::farm_libraries()) {
        INFO("library: ", name);
        lab::Script script = lab::script_for(name);
        probe::ProbeResult res = probe_script(script, 3000 + i, 4000 + i, invalid_alpn_cfg());
        i++;
        const fp::FlightObservation& obs = res.observation;
        if (!script.alpn_closes.empty()) {
            REQUIRE(res.outcome == probe::Outcome::closed);
            REQUIRE(obs.closes.size() == script.alpn_closes.size());
            for (size_t k = 0; k < obs.closes.size(); k++) {
                const lab::Close& want = script.alpn_closes[k];
                CHECK(obs.closes[k].error_code == want.code);
                REQUIRE(obs.closes[k].frame_type.has_value());
                CHECK(*obs.closes[k].frame_type == want.trigger_frame_type);
                std::string want_reason = want.reason;
                size_t pos = want_reason.find("{alpn}");
                if (pos != std::string::npos) want_reason.replace(pos, 6, "h3x");
                CHECK(obs.closes[k].reason == want_reason);
            }
        } else if (script.continue_without_alpn) {
            REQUIRE(res.outcome == probe::Outcome::handshake_progressed);
            CHECK(obs.alpn_missing_in_ee);
            CHECK(!res.alpn_selected.has_value());
            CHECK(obs.have_tp);
        } else {
            REQUIRE(res.outcome == probe::Outcome::timeout);
            CHECK(obs.silent);
            CHECK(obs.closes.empty());
        }
    }
}

TEST_CASE("one valid and one invalid probe classify every scripted library") {
    fp::Database db = fp::default_database();
    uint64_t i = 0;
    for (const std::string& name : lab::farm_libraries()) {
        INFO("library: ", name);
        lab::Script script = lab::script_for(name);
        lab::ScriptEndpoint ep(script, 5000 + i);
        uint64_t id_seed = 9000 + 100 * i;
        i++;
        std::vector<fp::FlightObservation> flights;
        flights.push_back(probe_endpoint(ep, valid_cfg(), id_seed++).observation);
        flights.push_back(probe_endpoint(ep, invalid_alpn_cfg(), id_seed++).observation);
        fp::Classification cls = fp::classify(db, flights);
        int extra = 0;
        while (cls.needs_rehandshake && extra++ < 4) {
            flights.push_back(probe_endpoint(ep, valid_cfg(), id_seed++).observation);
            cls = fp::classify(db, flights);
        }
        REQUIRE(cls.library.has_value());
        CHECK(*cls.library == name);
        CHECK(!cls.conflict);
    }
}

TEST_CASE("version negotiation probe elicits the v1 offer") {
    lab::ScriptEndpoint ep(lab::script_for("ngtcp2"), 42);
    probe::ProbeConfig cfg;
    cfg.kind = probe::ProbeKind::version_negotiation;
    probe::ProbeResult res = probe_endpoint(ep, cfg, 77);
    REQUIRE(res.outcome == probe::Outcome::version_negotiation);
    CHECK(res.offered_versions == std::vector<uint32_t>{quicscout::wire::kQuicV1});

    SUBCASE("a different reserved version works the same") {
        cfg.reserved_version = 0x3a4a5a6a;
        probe::ProbeResult res2 = probe_endpoint(ep, cfg, 78);
        CHECK(res2.outcome == probe::Outcome::version_negotiation);
    }
}

TEST_CASE("undersized unknown-version datagrams are dropped, full-size ones answered") {
    lab::ScriptEndpoint ep(lab::script_for("quiche"), 43);
    DetRng rng(5);
    probe::ClientIdentity id = probe::make_identity(rng);
    probe::ProbeConfig cfg;
    cfg.kind = probe::ProbeKind::version_negotiation;
    probe::ProbeSession session(cfg, id);
    std::vector<Bytes> out = session.take_outgoing();
    REQUIRE(out.size() == 1);
    REQUIRE(out[0].size() >= 1200);

    Bytes truncated(out[0].begin(), out[0].begin() + 600);
    CHECK(ep.handle_datagram(truncated).empty());
    CHECK(ep.handle_datagram(out[0]).size() == 1);
}

TEST_CASE("handshake flight answering a version negotiation probe is flagged") {
    // Cross-feed: a full server flight arrives at a session expecting a version list.
    lab::ScriptEndpoint ep(lab::script_for("quiche"), 44);
    std::vector<Bytes> replies;
    probe_endpoint(ep, valid_cfg(), 80, &replies);
    REQUIRE(!replies.empty());

    DetRng rng(81);
    probe::ClientIdentity id = probe::make_identity(rng);
    probe::ProbeConfig cfg;
    cfg.kind = probe::ProbeKind::version_negotiation;
    probe::ProbeSession session(cfg, id);
    session.take_outgoing();
    session.on_datagram(replies[0]);
    REQUIRE(session.done());
    CHECK(session.result().outcome == probe::Outcome::unparseable);
    CHECK(session.result().failure_detail.find("version negotiation") != std::string::npos);
}

TEST_CASE("address validation retry is followed, token echoed, and tag checked") {
    lab::Script script = lab::script_for("picoquic");
    script.send_retry_first = true;

    SUBCASE("the handshake completes through the retry") {
        lab::ScriptEndpoint ep(script, 60);
        probe::ProbeResult res = probe_endpoint(ep, valid_cfg(), 90);
        REQUIRE(res.outcome == probe::Outcome::handshake_progressed);
        CHECK(res.saw_retry);
        CHECK(res.observation.tp_order == script.tp_ids);
        CHECK(res.datagrams_sent >= 2);  // first flight + post-retry resend
    }

    SUBCASE("classification is unaffected by the retry detour") {
        lab::ScriptEndpoint ep(script, 61);
        std::vector<fp::FlightObservation> flights{
            probe_endpoint(ep, valid_cfg(), 91).observation,
            probe_endpoint(ep, invalid_alpn_cfg(), 92).observation};
        fp::Classification cls = fp::classify(fp::default_database(), flights);
        REQUIRE(cls.library.has_value());
        CHECK(*cls.library == "picoquic");
    }

    SUBCASE("a corrupted integrity tag aborts the probe") {
        lab::ScriptEndpoint ep(script, 62);
        DetRng rng(93);
        probe::ClientIdentity id = probe::make_identity(rng);
        probe::ProbeSession session(valid_cfg(), id);
        std::vector<Bytes> out = session.take_outgoing();
        REQUIRE(out.size() == 1);
        std::vector<Bytes> replies = ep.handle_datagram(out[0]);
        REQUIRE(replies.size() == 1);
        replies[0].back() ^= 0x01;  // flip one bit of the integrity tag
        session.on_datagram(replies[0]);
        REQUIRE(session.done());
        CHECK(session.result().outcome == probe::Outcome::unparseable);
        CHECK(session.result().failure_detail.find("retry") != std::string::npos);
    }
}

TEST_CASE("hello retry request cookie round trip") {
    lab::Script script = lab::script_for("quant");
    script.send_hello_retry_request_first = true;
    lab::ScriptEndpoint ep(script, 70);
    probe::ProbeResult res = probe_endpoint(ep, valid_cfg(), 95);
    REQUIRE(res.outcome == probe::Outcome::handshake_progressed);
    CHECK(res.saw_hello_retry_request);
    CHECK(sorted(res.observation.tp_order) == sorted(script.tp_ids));
    REQUIRE(res.alpn_selected.has_value());
    CHECK(*res.alpn_selected == "h3");
}

TEST_CASE("a double close is recorded frame by frame") {
    lab::ScriptEndpoint ep(lab::script_for("akaquic"), 71);
    probe::ProbeResult res = probe_endpoint(ep, invalid_alpn_cfg(), 96);
    REQUIRE(res.outcome == probe::Outcome::closed);
    REQUIRE(res.observation.closes.size() == 2);
    CHECK(res.observation.closes[0].error_code == 0x150);
    CHECK(res.observation.closes[1].error_code == 0x0a);
    CHECK(res.observation.closes[1].reason ==
          "PROTOCOL_VIOLATION: 28:No known ALPN provided by client");
}

TEST_CASE("strict server-name endpoint closes with a tls alert when sni is absent") {
    lab::Script script = lab::lsquic_strict_sni_script();
    lab::ScriptEndpoint ep(script, 72);

    probe::ProbeConfig no_sni = valid_cfg();
    no_sni.sni.reset();
    probe::ProbeResult res = probe_endpoint(ep, no_sni, 97);
    REQUIRE(res.outcome == probe::Outcome::closed);
    REQUIRE(res.observation.closes.size() == 1);
    CHECK(res.observation.closes[0].error_code == 0x150);
    CHECK(res.observation.closes[0].reason == "TLS alert 80");

    // The close alone already points at the right library.
    fp::Classification cls =
        fp::classify(fp::default_database(), {res.observation});
    REQUIRE(cls.library.has_value());
    CHECK(*cls.library == "lsquic");

    probe::ProbeResult ok = probe_endpoint(ep, valid_cfg(), 98);
    CHECK(ok.outcome == probe::Outcome::handshake_progressed);
}

TEST_CASE("server-name-required endpoint stays silent without sni") {
    lab::ScriptEndpoint ep(lab::script_for("s2n-quic"), 73);
    probe::ProbeConfig no_sni = valid_cfg();
    no_sni.sni.reset();
    probe::ProbeResult res = probe_endpoint(ep, no_sni, 99);
    CHECK(res.outcome == probe::Outcome::timeout);
    CHECK(res.observation.silent);

    probe::ProbeResult ok = probe_endpoint(ep, valid_cfg(), 100);
    CHECK(ok.outcome == probe::Outcome::handshake_progressed);
}

TEST_CASE("identical seeds and identities reproduce identical wire traffic") {
    lab::Script script = lab::script_for("mvfst");
    std::vector<Bytes> replies_a;
    std::vector<Bytes> replies_b;
    {
        lab::ScriptEndpoint ep(script, 555);
        probe_endpoint(ep, valid_cfg(), 556, &replies_a);
    }
    {
        lab::ScriptEndpoint ep(script, 555);
        probe_endpoint(ep, valid_cfg(), 556, &replies_b);
    }
    REQUIRE(!replies_a.empty());
    CHECK(replies_a == replies_b);
    CHECK(replies_a[0].size() >= 1200);  // server first flight is expanded
}

TEST_CASE("capture files round trip and replay reproduces the live observation") {
    std::vector<lab::Script> scripts{lab::script_for("quiche"), lab::script_for("akaquic")};
    lab::Farm farm(std::move(scripts), 4242);
    farm.start();
    probe::RateLimiter limiter(200);

    SUBCASE("full handshake: record, serialize, replay") {
        probe::Target target{"127.0.0.1", farm.port_for("quiche")};
        probe::ProbeConfig cfg = valid_cfg();
        cfg.timeout_ms = 2000;
        DetRng rng(600);
        probe::ClientIdentity id = probe::make_identity(rng);
        probe::Capture cap;
        probe::LiveOptions opts;
        opts.limiter = &limiter;
        opts.capture = &cap;
        probe::ProbeResult live = probe::run_probe(target, cfg, id, opts);
        REQUIRE(live.outcome == probe::Outcome::handshake_progressed);
        REQUIRE(cap.records.size() >= 2);
        CHECK(cap.records[0].dir == probe::kDirSent);
        CHECK(cap.dcid == id.dcid);

        Bytes blob = probe::serialize_capture(cap);
        probe::Capture back = probe::parse_capture(blob);
        CHECK(back == cap);

        std::filesystem::path path =
            std::filesystem::temp_directory_path() / "quicscout_capture_test.qflt";
        probe::write_capture_file(path.string(), cap);
        probe::Capture from_file = probe::read_capture_file(path.string());
        CHECK(from_file == cap);
        std::filesystem::remove(path);

        probe::ProbeResult replayed = probe::replay_capture(cap);
        CHECK(replayed.outcome == live.outcome);
        CHECK(replayed.observation.tp_order == live.observation.tp_order);
        CHECK(replayed.observation.ext_signature == live.observation.ext_signature);
        CHECK(replayed.alpn_selected == live.alpn_selected);
        CHECK(replayed.cipher_suite == live.cipher_suite);
    }

    SUBCASE("close flight: replay preserves the recorded close frames") {
        probe::Target target{"127.0.0.1", farm.port_for("akaquic")};
        probe::ProbeConfig cfg = invalid_alpn_cfg();
        cfg.timeout_ms = 2000;
        DetRng rng(601);
        probe::ClientIdentity id = probe::make_identity(rng);
        probe::Capture cap;
        probe::LiveOptions opts;
        opts.limiter = &limiter;
        opts.capture = &cap;
        probe::ProbeResult live = probe::run_probe(target, cfg, id, opts);
        REQUIRE(live.outcome == probe::Outcome::closed);
        REQUIRE(live.observation.closes.size() == 2);

        probe::ProbeResult replayed = probe::replay_capture(cap);
        REQUIRE(replayed.outcome == probe::Outcome::closed);
        REQUIRE(replayed.observation.closes.size() == 2);
        CHECK(replayed.observation.closes[0].error_code ==
              live.observation.closes[0].error_code);
        CHECK(replayed.observation.closes[1].reason == live.observation.closes[1].reason);
    }

    farm.stop();
}

TEST_CASE("malformed capture blobs are rejected") {
    probe::Capture cap;
    cap.kind = probe::ProbeKind::handshake;
    cap.version = quicscout::wire::kQuicV1;
    cap.alpn = "h3";
    cap.dcid = quicscout::wire::ConnectionId(Bytes{1, 2, 3, 4});
    cap.scid = quicscout::wire::ConnectionId(Bytes{5, 6, 7, 8});
    cap.x25519_private = Bytes(32, 0x11);
    cap.client_random = Bytes(32, 0x22);
    cap.records.push_back(probe::CaptureRecord{probe::kDirSent, 10, {0xde, 0xad}});
    Bytes blob = probe::serialize_capture(cap);

    SUBCASE("bad magic") {
        blob[0] ^= 0xff;
        CHECK_THROWS_AS(probe::parse_capture(blob), ParseError);
    }
    SUBCASE("unknown format version") {
        blob[4] = 99;
        CHECK_THROWS_AS(probe::parse_capture(blob), ParseError);
    }
    SUBCASE("truncation") {
        blob.resize(blob.size() - 3);
        CHECK_THROWS_AS(probe::parse_capture(blob), ParseError);
    }
    SUBCASE("trailing bytes") {
        blob.push_back(0);
        CHECK_THROWS_AS(probe::parse_capture(blob), ParseError);
    }
}

TEST_CASE("farm manifest lists every library with its own port") {
    lab::Farm farm = lab::Farm::standard(31337);
    std::vector<lab::Farm::Entry> entries = farm.entries();
    REQUIRE(entries.size() == 20);
    std::set<uint16_t> ports;
    std::vector<std::string> names;
    for (const auto& e : entries) {
        ports.insert(e.port);
        names.push_back(e.library);
    }
    CHECK(ports.size() == 20);
    std::sort(names.begin(), names.end());
    CHECK(names == lab::farm_libraries());

    nlohmann::json manifest = nlohmann::json::parse(farm.manifest_json());
    REQUIRE(manifest.is_array());
    REQUIRE(manifest.size() == 20);
    CHECK(manifest[0].contains("library"));
    CHECK(manifest[0]["host"] == "127.0.0.1");
}

TEST_CASE("every database rule is reproduced by at least one script") {
    const fp::Database& db = fp::default_database();

    for (const fp::TpRule& rule : db.tp_rules) {
        INFO("library: ", rule.library);
        lab::Script s = lab::script_for(rule.library);
        for (fp::ExtOrderSignature sig : rule.signatures) {
            CHECK(std::find(s.signatures.begin(), s.signatures.end(), sig) != s.signatures.end());
        }
        CHECK(s.tp_kind == rule.kind);
        if (rule.kind == fp::TpOrderKind::fixed) {
            CHECK(s.tp_ids == rule.ids);
        } else {
            CHECK(std::set<uint64_t>(s.tp_ids.begin(), s.tp_ids.end()) ==
                  std::set<uint64_t>(rule.ids.begin(), rule.ids.end()));
        }
    }

    // A scripted close reproduces a rule when every constrained field agrees,
    // with the offer placeholder expanded the way the endpoint does it.
    auto close_reproduces = [](const fp::ErrorRule& rule, const lab::Close& c,
                               const std::string& offer) {
        if (rule.error_code && c.code != *rule.error_code) return false;
        if (rule.frame_type && (c.application || c.trigger_frame_type != *rule.frame_type))
            return false;
        std::string reason = c.reason;
        if (size_t at = reason.find("{alpn}"); at != std::string::npos)
            reason.replace(at, 6, offer);
        if (rule.no_reason) return reason.empty();
        if (rule.reason_pattern) return fp::glob_match(*rule.reason_pattern, reason);
        return true;
    };
    for (const fp::ErrorRule& rule : db.error_rules) {
        INFO("library: ", rule.library);
        lab::Script s = lab::script_for(rule.library);
        bool reproduced = false;
        if (rule.alpn_missing_in_ee) reproduced = s.continue_without_alpn;
        for (const lab::Close& c : s.alpn_closes)
            if (close_reproduces(rule, c, "h3x")) reproduced = true;
        // lsquic's alert-80 rule comes from its strict server-name variant.
        lab::Script strict = lab::lsquic_strict_sni_script();
        if (rule.library == "lsquic" && strict.sni_close &&
            close_reproduces(rule, *strict.sni_close, "h3x"))
            reproduced = true;
        CHECK(reproduced);
    }
}
