#pragma once

// Batch orchestration: ingest targets, honor a blocklist and a global rate cap,
// run the version-negotiation gate plus the invalid-ALPN and h3 probes per
// target, classify (with automatic repeat handshakes), and emit one structured
// record per target.  Also the offline path: classify from recorded captures.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "quicscout/fingerprint.hpp"
#include "quicscout/runner.hpp"
#include "quicscout/session.hpp"

namespace quicscout::scanner {

struct Target {
    std::string address;  // numeric IPv4 or IPv6
    uint16_t port = 443;
    std::optional<std::string> sni;
    bool operator==(const Target&) const = default;
};

// Parses `address[,port[,sni]]` lines ('#' comments, blank lines allowed).
// Addresses must be numeric; errors carry the 1-based line number.  Exact
// duplicates collapse; distinct SNI lines for one address yield one target
// each, capped at `sni_limit` SNI-bearing targets per address (0 = unlimited).
std::vector<Target> parse_targets(const std::string& text, int sni_limit = 0);

// IPv4/IPv6 prefix list; addresses inside any prefix are never contacted.
class Blocklist {
public:
    Blocklist() = default;
    static Blocklist from_text(const std::string& text);  // CIDR lines, '#' comments
    void add(const std::string& cidr);                    // bare address = /32 or /128
    bool contains(const std::string& address) const;      // non-numeric -> false
    size_t size() const { return v4_.size() + v6_.size(); }

private:
    struct V4 {
        uint32_t addr = 0;  // host byte order
        int bits = 32;
    };
    struct V6 {
        std::array<uint8_t, 16> addr{};
        int bits = 128;
    };
    std::vector<V4> v4_;
    std::vector<V6> v6_;
};

// One probe exchange inside a ScanRecord.
struct ProbeSummary {
    std::string kind;     // "vn", "invalid-alpn", "h3", "rehandshake"
    std::string outcome;  // probe::outcome_name value
    fingerprint::FlightObservation observation;
    std::vector<uint32_t> offered_versions;  // vn probes
    std::string failure_detail;
    int datagrams_sent = 0;
    int datagrams_received = 0;
};

struct ScanRecord {
    Target target;
    std::string status;  // "ok", "skipped-blocklist", "not-quic"
    bool quic = false;
    std::vector<ProbeSummary> probes;
    fingerprint::Classification classification;
    uint64_t duration_micros = 0;
    int db_version = 0;
};

// Line-delimited JSON codec; parse_record throws ParseError on malformed input.
std::string record_to_json(const ScanRecord& r);
ScanRecord record_from_json(const std::string& line);

struct ScanJob {
    std::vector<Target> targets;
    fingerprint::Database db;
    bool probe_vn = true;
    bool probe_invalid_alpn = true;
    bool probe_h3 = true;
    std::string alpn = "h3";
    std::string invalid_alpn = "h3x";  // deliberately unmatched offer
    int rate = 100;                    // datagrams per second, shared by all workers
    int timeout_ms = 3000;
    int retries = 1;
    int max_rehandshakes = 2;
    uint32_t reserved_version = wire::kDefaultReservedVersion;
    int workers = 8;
    uint64_t seed = 1;
    Blocklist blocklist;
    std::string capture_dir;  // when set, every probe exchange is recorded there
};

// Probes one target through the whole pipeline.  The limiter may be null.
ScanRecord scan_target(const ScanJob& job, const Target& target, probe::RateLimiter* limiter);

// Runs all targets on a worker pool; the sink is called exactly once per
// ingested target, serialized, in completion order.
void run_scan(const ScanJob& job, const std::function<void(const ScanRecord&)>& sink);
// Convenience wrapper preserving input order.
std::vector<ScanRecord> run_scan(const ScanJob& job);

// Merges records of the same endpoint from two scans (typically with and
// without SNI): one-sided identification wins, agreement upgrades the method to
// "both-scans", disagreement flags a conflict with both names retained.
// Merging with a default-constructed record is the identity.
ScanRecord merge_records(const ScanRecord& a, const ScanRecord& b);
// Key: (address, port).  Endpoints present in only one list pass through.
std::vector<ScanRecord> merge_scans(const std::vector<ScanRecord>& first,
                                    const std::vector<ScanRecord>& second);

// Offline classification: replay every capture file (*.qflt) under `dir`
// (sorted by name) and classify the resulting observations.
struct OfflineResult {
    std::vector<ProbeSummary> probes;
    fingerprint::Classification classification;
};
OfflineResult classify_capture_dir(const std::string& dir, const fingerprint::Database& db);
std::string offline_result_to_json(const OfflineResult& r);

}  // namespace quicscout::scanner
