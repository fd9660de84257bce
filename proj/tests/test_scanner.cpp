// Target ingestion, blocklists, record serialization, merge semantics, and the
// scan pipeline end to end against the loopback farm.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "quicscout/labharness.hpp"
#include "quicscout/scanner.hpp"

namespace fp = quicscout::fingerprint;
namespace lab = quicscout::lab;
namespace probe = quicscout::probe;
namespace scan = quicscout::scanner;
using quicscout::ParseError;

TEST_CASE("target lines parse with defaults, ports, and sni") {
    auto targets = scan::parse_targets("192.0.2.1\n"
                                       "198.51.100.7,8443\n"
                                       "2001:db8::1,443,example.com\n"
                                       "# comment\n"
                                       "\n"
                                       "203.0.113.5,443,one.test # trailing comment\n");
    REQUIRE(targets.size() == 4);
    CHECK(targets[0].address == "192.0.2.1");
    CHECK(targets[0].port == 443);
    CHECK(!targets[0].sni.has_value());
    CHECK(targets[1].port == 8443);
    CHECK(targets[2].address == "2001:db8::1");
    REQUIRE(targets[2].sni.has_value());
    CHECK(*targets[2].sni == "example.com");
    CHECK(*targets[3].sni == "one.test");
}

TEST_CASE("duplicate target lines collapse, distinct sni lines fan out") {
    auto targets = scan::parse_targets("192.0.2.1,443,a.test\n"
                                       "192.0.2.1,443,a.test\n"
                                       "192.0.2.1,443,b.test\n"
                                       "192.0.2.1\n");
    REQUIRE(targets.size() == 3);
    CHECK(*targets[0].sni == "a.test");
    CHECK(*targets[1].sni == "b.test");
    CHECK(!targets[2].sni.has_value());
}

TEST_CASE("per-address sni fan-out is capped") {
    std::string text;
    for (int i = 0; i < 10; i++) {
        text += "192.0.2.1,443,host" + std::to_string(i) + ".test\n";
    }
    text += "192.0.2.2,443,other.test\n";
    auto targets = scan::parse_targets(text, 3);
    REQUIRE(targets.size() == 4);  // 3 capped + 1 other address
    CHECK(targets[3].address == "192.0.2.2");
}

TEST_CASE("malformed target lines fail with their line number") {
    CHECK_THROWS_WITH_AS(scan::parse_targets("192.0.2.1\nnot-an-ip\n"),
                         doctest::Contains("line 2"), ParseError);
    CHECK_THROWS_WITH_AS(scan::parse_targets("192.0.2.1,99999\n"), doctest::Contains("port"),
                         ParseError);
    CHECK_THROWS_WITH_AS(scan::parse_targets("192.0.2.1,443,x.test,extra\n"),
                         doctest::Contains("line 1"), ParseError);
    // Host names are a non-goal: only literal addresses are accepted.
    CHECK_THROWS_AS(scan::parse_targets("example.com\n"), ParseError);
}

TEST_CASE("blocklist prefixes cover v4 and v6") {
    scan::Blocklist bl;
    bl.add("192.0.2.0/24");
    bl.add("203.0.113.9");
    bl.add("2001:db8::/32");
    CHECK(bl.size() == 3);

    CHECK(bl.contains("192.0.2.55"));
    CHECK(!bl.contains("192.0.3.1"));
    CHECK(bl.contains("203.0.113.9"));
    CHECK(!bl.contains("203.0.113.8"));
    CHECK(bl.contains("2001:db8:ffff::1"));
    CHECK(!bl.contains("2001:db9::1"));
    CHECK(!bl.contains("not-an-address"));

    SUBCASE("a zero-length prefix matches every v4 address") {
        bl.add("0.0.0.0/0");
        CHECK(bl.contains("8.8.8.8"));
        CHECK(!bl.contains("2001:db9::1"));  // family-specific
    }
    SUBCASE("text form, with comments and errors") {
        scan::Blocklist fromtext = scan::Blocklist::from_text("# internal\n10.0.0.0/8\n");
        CHECK(fromtext.contains("10.1.2.3"));
        CHECK_THROWS_WITH_AS(scan::Blocklist::from_text("10.0.0.0/8\nbogus/xx\n"),
                             doctest::Contains("line 2"), ParseError);
        CHECK_THROWS_AS(scan::Blocklist::from_text("192.0.2.0/33\n"), ParseError);
    }
}

TEST_CASE("scan records serialize to one json line and back") {
    scan::ScanRecord r;
    r.target = scan::Target{"2001:db8::5", 8443, "site.test"};
    r.status = "ok";
    r.quic = true;
    scan::ProbeSummary vn;
    vn.kind = "vn";
    vn.outcome = "version_negotiation";
    vn.offered_versions = {1};
    vn.datagrams_sent = 1;
    vn.datagrams_received = 1;
    r.probes.push_back(vn);
    scan::ProbeSummary h3;
    h3.kind = "h3";
    h3.outcome = "handshake_progressed";
    h3.observation.ext_signature = quicscout::tlsmini::ExtOrderSignature::key_share_first;
    h3.observation.have_tp = true;
    h3.observation.tp_order = {0, 3, 4, 6, 7, 8, 10, 11, 15};
    h3.datagrams_sent = 2;
    h3.datagrams_received = 1;
    r.probes.push_back(h3);
    scan::ProbeSummary bad;
    bad.kind = "invalid-alpn";
    bad.outcome = "closed";
    bad.observation.closes.push_back(fp::CloseObservation{0x178, 0, ""});
    r.probes.push_back(bad);
    r.classification.library = "quiche";
    r.classification.method = "both";
    r.classification.tp_candidates = {"quiche"};
    r.classification.error_candidates = {"haproxy", "quiche"};
    r.duration_micros = 123456;
    r.db_version = 1;

    std::string line = scan::record_to_json(r);
    CHECK(line.find('\n') == std::string::npos);
    scan::ScanRecord back = scan::record_from_json(line);
    CHECK(back.target == r.target);
    CHECK(back.status == r.status);
    CHECK(back.quic == r.quic);
    REQUIRE(back.probes.size() == 3);
    CHECK(back.probes[0].offered_versions == std::vector<uint32_t>{1});
    CHECK(back.probes[1].observation.ext_signature == h3.observation.ext_signature);
    CHECK(back.probes[1].observation.tp_order == h3.observation.tp_order);
    REQUIRE(back.probes[2].observation.closes.size() == 1);
    CHECK(back.probes[2].observation.closes[0].error_code == 0x178);
    CHECK(back.probes[2].observation.closes[0].frame_type == std::optional<uint64_t>{0});
    REQUIRE(back.classification.library.has_value());
    CHECK(*back.classification.library == "quiche");
    CHECK(back.classification.error_candidates == r.classification.error_candidates);
    CHECK(back.duration_micros == 123456);

    CHECK_THROWS_AS(scan::record_from_json("{not json"), ParseError);
    CHECK_THROWS_AS(scan::record_from_json("{\"port\": 1}"), ParseError);
}

namespace {

scan::ScanRecord identified_record(const std::string& address, const std::string& library,
                                   std::optional<std::string> sni = std::nullopt) {
    scan::ScanRecord r;
    r.target.address = address;
    r.target.port = 443;
    r.target.sni = std::move(sni);
    r.status = "ok";
    r.quic = true;
    scan::ProbeSummary p;
    p.kind = "h3";
    p.outcome = "handshake_progressed";
    r.probes.push_back(p);
    r.classification.library = library;
    r.classification.method = "transport_params";
    r.classification.tp_candidates = {library};
    r.db_version = 1;
    return r;
}

scan::ScanRecord silent_record(const std::string& address) {
    scan::ScanRecord r;
    r.target.address = address;
    r.target.port = 443;
    r.status = "ok";
    r.quic = false;
    scan::ProbeSummary p;
    p.kind = "h3";
    p.outcome = "timeout";
    p.observation.silent = true;
    r.probes.push_back(p);
    r.db_version = 1;
    return r;
}

}  // namespace

TEST_CASE("merging with an empty record is the identity") {
    scan::ScanRecord a = identified_record("192.0.2.1", "quiche");
    scan::ScanRecord empty;
    scan::ScanRecord m1 = scan::merge_records(a, empty);
    scan::ScanRecord m2 = scan::merge_records(empty, a);
    for (const scan::ScanRecord* m : {&m1, &m2}) {
        CHECK(m->classification.library == a.classification.library);
        CHECK(m->status == a.status);
        CHECK(m->probes.size() == a.probes.size());
        CHECK(m->classification.method == "transport_params");
    }
}

TEST_CASE("a timeout on one side defers to the identification on the other") {
    scan::ScanRecord without_sni = silent_record("192.0.2.9");
    scan::ScanRecord with_sni = identified_record("192.0.2.9", "s2n-quic", "site.test");
    scan::ScanRecord m = scan::merge_records(without_sni, with_sni);
    REQUIRE(m.classification.library.has_value());
    CHECK(*m.classification.library == "s2n-quic");
    CHECK(m.classification.method == "transport_params");
    CHECK(!m.classification.conflict);
    CHECK(m.target.sni == std::optional<std::string>{"site.test"});
    CHECK(m.quic);
    CHECK(m.probes.size() == 2);
}

TEST_CASE("agreement across scans upgrades the method, disagreement conflicts") {
    scan::ScanRecord a = identified_record("192.0.2.7", "quiche");
    scan::ScanRecord b = identified_record("192.0.2.7", "quiche", "site.test");

    SUBCASE("agree") {
        scan::ScanRecord m = scan::merge_records(a, b);
        REQUIRE(m.classification.library.has_value());
        CHECK(*m.classification.library == "quiche");
        CHECK(m.classification.method == "both-scans");
        CHECK(!m.classification.conflict);
        // Commutative on agreement.
        scan::ScanRecord n = scan::merge_records(b, a);
        CHECK(n.classification.library == m.classification.library);
        CHECK(n.classification.method == m.classification.method);
        CHECK(n.classification.tp_candidates == m.classification.tp_candidates);
        CHECK(n.status == m.status);
        CHECK(n.quic == m.quic);
    }
    SUBCASE("disagree") {
        scan::ScanRecord c = identified_record("192.0.2.7", "nginx", "site.test");
        scan::ScanRecord m = scan::merge_records(a, c);
        CHECK(!m.classification.library.has_value());
        CHECK(m.classification.conflict);
        CHECK(m.classification.ambiguous_with == std::vector<std::string>{"nginx", "quiche"});
        CHECK(m.probes.size() == 2);
    }
}

TEST_CASE("merge_scans joins by endpoint and passes singletons through") {
    std::vector<scan::ScanRecord> first{silent_record("192.0.2.1"),
                                        identified_record("192.0.2.2", "quinn")};
    std::vector<scan::ScanRecord> second{identified_record("192.0.2.1", "s2n-quic", "a.test"),
                                         identified_record("192.0.2.3", "mvfst", "b.test")};
    std::vector<scan::ScanRecord> merged = scan::merge_scans(first, second);
    REQUIRE(merged.size() == 3);
    CHECK(*merged[0].classification.library == "s2n-quic");
    CHECK(*merged[1].classification.library == "quinn");
    CHECK(merged[1].classification.method == "transport_params");  // untouched passthrough
    CHECK(*merged[2].classification.library == "mvfst");
}

TEST_CASE("the rate limiter meters a burst") {
    probe::RateLimiter limiter(5, std::chrono::milliseconds(200));
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < 5; i++) limiter.acquire();
    auto after_burst = std::chrono::steady_clock::now();
    CHECK(after_burst - t0 < std::chrono::milliseconds(100));
    limiter.acquire();  // sixth must wait for the window to roll
    auto after_block = std::chrono::steady_clock::now();
    CHECK(after_block - t0 >= std::chrono::milliseconds(150));
}

TEST_CASE("scan pipeline against the loopback farm") {
    std::vector<lab::Script> scripts{lab::script_for("quiche"), lab::script_for("kwik"),
                                     lab::script_for("s2n-quic"), lab::script_for("xquic")};
    lab::Farm farm(scripts, 808);
    farm.start();

    scan::ScanJob job;
    job.db = fp::default_database();
    job.rate = 500;
    job.timeout_ms = 1500;
    job.workers = 4;
    job.seed = 11;
    for (const lab::Farm::Entry& e : farm.entries()) {
        job.targets.push_back(scan::Target{"127.0.0.1", e.port, "site.test"});
    }

    SUBCASE("every endpoint is gated, probed, and classified") {
        std::vector<scan::ScanRecord> records = scan::run_scan(job);
        REQUIRE(records.size() == job.targets.size());
        for (size_t i = 0; i < records.size(); i++) {
            const scan::ScanRecord& r = records[i];
            INFO("target: ", farm.entries()[i].library);
            CHECK(r.status == "ok");
            CHECK(r.quic);
            REQUIRE(!r.probes.empty());
            CHECK(r.probes[0].kind == "vn");
            CHECK(r.probes[0].outcome == "version_negotiation");
            CHECK(r.probes[0].offered_versions == std::vector<uint32_t>{1});
            REQUIRE(r.classification.library.has_value());
            CHECK(*r.classification.library == farm.entries()[i].library);
            CHECK(!r.classification.conflict);
        }
    }

    SUBCASE("blocklisted targets are never contacted") {
        size_t before = farm.arrival_seconds().size();
        scan::ScanJob blocked = job;
        blocked.blocklist.add("127.0.0.0/8");
        std::vector<scan::ScanRecord> records = scan::run_scan(blocked);
        REQUIRE(records.size() == blocked.targets.size());
        for (const scan::ScanRecord& r : records) {
            CHECK(r.status == "skipped-blocklist");
            CHECK(r.probes.empty());
            CHECK(!r.quic);
        }
        CHECK(farm.arrival_seconds().size() == before);
    }

    SUBCASE("captures written during the scan classify identically offline") {
        namespace fs = std::filesystem;
        fs::path dir = fs::temp_directory_path() / "quicscout_scan_captures";
        fs::remove_all(dir);
        scan::ScanJob capturing = job;
        capturing.targets = {scan::Target{"127.0.0.1", farm.port_for("quiche"), "site.test"}};
        capturing.capture_dir = dir.string();
        std::vector<scan::ScanRecord> records = scan::run_scan(capturing);
        REQUIRE(records.size() == 1);
        REQUIRE(records[0].classification.library.has_value());

        fs::path target_dir;
        for (const auto& e : fs::directory_iterator(dir)) target_dir = e.path();
        REQUIRE(!target_dir.empty());
        scan::OfflineResult offline = scan::classify_capture_dir(target_dir.string(), job.db);
        REQUIRE(offline.classification.library.has_value());
        CHECK(*offline.classification.library == *records[0].classification.library);
        CHECK(offline.probes.size() == records[0].probes.size());
        fs::remove_all(dir);
    }

    farm.stop();
}

TEST_CASE("a dead port is gated out as not-quic") {
    // Bind a UDP port, learn its number, and close it so nothing answers.
    int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
    REQUIRE(fd >= 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    REQUIRE(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
    socklen_t len = sizeof(addr);
    REQUIRE(::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) == 0);
    uint16_t dead_port = ntohs(addr.sin_port);
    ::close(fd);

    scan::ScanJob job;
    job.db = fp::default_database();
    job.rate = 500;
    job.timeout_ms = 250;
    job.retries = 0;
    job.workers = 1;
    job.targets = {scan::Target{"127.0.0.1", dead_port, std::nullopt}};
    std::vector<scan::ScanRecord> records = scan::run_scan(job);
    REQUIRE(records.size() == 1);
    CHECK(records[0].status == "not-quic");
    REQUIRE(records[0].probes.size() == 1);  // the gate stopped the pipeline
    CHECK(records[0].probes[0].kind == "vn");
    CHECK(!records[0].classification.library.has_value());
}

TEST_CASE("disabling the gate runs the stateful probes directly") {
    lab::Farm farm({lab::script_for("ngtcp2")}, 909);
    farm.start();
    scan::ScanJob job;
    job.db = fp::default_database();
    job.probe_vn = false;
    job.rate = 500;
    job.timeout_ms = 1500;
    job.workers = 1;
    job.targets = {scan::Target{"127.0.0.1", farm.port_for("ngtcp2"), "site.test"}};
    std::vector<scan::ScanRecord> records = scan::run_scan(job);
    REQUIRE(records.size() == 1);
    REQUIRE(!records[0].probes.empty());
    CHECK(records[0].probes[0].kind == "invalid-alpn");
    REQUIRE(records[0].classification.library.has_value());
    CHECK(*records[0].classification.library == "ngtcp2");
    farm.stop();
}
