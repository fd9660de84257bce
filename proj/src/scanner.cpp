#include "quicscout/scanner.hpp"

#include <arpa/inet.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "quicscout/capture.hpp"

namespace quicscout::scanner {

namespace fp = quicscout::fingerprint;
namespace fs = std::filesystem;
using nlohmann::json;

// ----------------------------------------------------------------- ingest ----

namespace {

uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string trim(std::string_view s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

bool is_ipv4(const std::string& s) {
    in_addr a{};
    return inet_pton(AF_INET, s.c_str(), &a) == 1;
}

bool is_ipv6(const std::string& s) {
    in6_addr a{};
    return inet_pton(AF_INET6, s.c_str(), &a) == 1;
}

[[noreturn]] void line_error(const char* what, size_t line_no, const std::string& detail) {
    throw ParseError(std::string(what) + " line " + std::to_string(line_no) + ": " + detail, line_no);
}

}  // namespace

std::vector<Target> parse_targets(const std::string& text, int sni_limit) {
    std::vector<Target> out;
    std::set<std::tuple<std::string, uint16_t, std::string>> seen;
    std::map<std::string, int> sni_count;  // per address
    std::istringstream in(text);
    std::string raw;
    size_t line_no = 0;
    while (std::getline(in, raw)) {
        line_no++;
        std::string line = trim(raw.substr(0, raw.find('#')));
        if (line.empty()) continue;

        std::vector<std::string> fields;
        size_t start = 0;
        for (;;) {
            size_t comma = line.find(',', start);
            fields.push_back(trim(line.substr(start, comma - start)));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (fields.size() > 3) line_error("targets", line_no, "too many fields");

        Target t;
        t.address = fields[0];
        if (!is_ipv4(t.address) && !is_ipv6(t.address)) {
            line_error("targets", line_no, "unrecognized address '" + t.address + "'");
        }
        if (fields.size() >= 2 && !fields[1].empty()) {
            int port = 0;
            try {
                size_t used = 0;
                port = std::stoi(fields[1], &used);
                if (used != fields[1].size()) port = 0;
            } catch (const std::exception&) {
                port = 0;
            }
            if (port < 1 || port > 65535) {
                line_error("targets", line_no, "bad port '" + fields[1] + "'");
            }
            t.port = static_cast<uint16_t>(port);
        }
        if (fields.size() == 3 && !fields[2].empty()) t.sni = fields[2];

        auto key = std::make_tuple(t.address, t.port, t.sni.value_or(""));
        if (!seen.insert(key).second) continue;  // duplicates collapse
        if (t.sni.has_value() && sni_limit > 0) {
            int& n = sni_count[t.address];
            if (n >= sni_limit) continue;
            n++;
        }
        out.push_back(std::move(t));
    }
    return out;
}

// -------------------------------------------------------------- blocklist ----

void Blocklist::add(const std::string& cidr) {
    std::string addr = cidr;
    int bits = -1;
    size_t slash = cidr.find('/');
    if (slash != std::string::npos) {
        addr = cidr.substr(0, slash);
        std::string suffix = cidr.substr(slash + 1);
        try {
            size_t used = 0;
            bits = std::stoi(suffix, &used);
            if (used != suffix.size()) bits = -1;
        } catch (const std::exception&) {
            bits = -1;
        }
    }
    in_addr a4{};
    in6_addr a6{};
    if (inet_pton(AF_INET, addr.c_str(), &a4) == 1) {
        if (bits == -1) bits = 32;
        if (bits < 0 || bits > 32) throw ParseError("bad prefix length in '" + cidr + "'", 0);
        v4_.push_back(V4{ntohl(a4.s_addr), bits});
    } else if (inet_pton(AF_INET6, addr.c_str(), &a6) == 1) {
        if (bits == -1) bits = 128;
        if (bits < 0 || bits > 128) throw ParseError("bad prefix length in '" + cidr + "'", 0);
        V6 v;
        std::copy(std::begin(a6.s6_addr), std::end(a6.s6_addr), v.addr.begin());
        v.bits = bits;
        v6_.push_back(v);
    } else {
        throw ParseError("unrecognized address in '" + cidr + "'", 0);
    }
}

Blocklist Blocklist::from_text(const std::string& text) {
    Blocklist bl;
    std::istringstream in(text);
    std::string raw;
    size_t line_no = 0;
    while (std::getline(in, raw)) {
        line_no++;
        std::string line = trim(raw.substr(0, raw.find('#')));
        if (line.empty()) continue;
        try {
            bl.add(line);
        } catch (const ParseError& e) {
            line_error("blocklist", line_no, e.what());
        }
    }
    return bl;
}

bool Blocklist::contains(const std::string& address) const {
    in_addr a4{};
    if (inet_pton(AF_INET, address.c_str(), &a4) == 1) {
        uint32_t host = ntohl(a4.s_addr);
        for (const V4& n : v4_) {
            if (n.bits == 0) return true;
            if ((host >> (32 - n.bits)) == (n.addr >> (32 - n.bits))) return true;
        }
        return false;
    }
    in6_addr a6{};
    if (inet_pton(AF_INET6, address.c_str(), &a6) == 1) {
        for (const V6& n : v6_) {
            int full = n.bits / 8;
            int rest = n.bits % 8;
            if (!std::equal(n.addr.begin(), n.addr.begin() + full, std::begin(a6.s6_addr))) {
                continue;
            }
            if (rest != 0) {
                uint8_t mask = static_cast<uint8_t>(0xff00 >> rest);
                if ((a6.s6_addr[full] & mask) != (n.addr[size_t(full)] & mask)) continue;
            }
            return true;
        }
        return false;
    }
    return false;
}

// ------------------------------------------------------------ record codec ----

namespace {

json observation_to_json(const fp::FlightObservation& o) {
    json j;
    if (o.ext_signature) j["ext_signature"] = tlsmini::to_string(*o.ext_signature);
    j["have_tp"] = o.have_tp;
    j["tp_order"] = o.tp_order;
    json closes = json::array();
    for (const fp::CloseObservation& c : o.closes) {
        json cj;
        cj["code"] = c.error_code;
        if (c.frame_type) cj["frame_type"] = *c.frame_type;
        cj["reason"] = c.reason;
        closes.push_back(cj);
    }
    j["closes"] = closes;
    j["alpn_missing_in_ee"] = o.alpn_missing_in_ee;
    j["silent"] = o.silent;
    return j;
}

fp::FlightObservation observation_from_json(const json& j) {
    fp::FlightObservation o;
    if (j.contains("ext_signature")) {
        auto sig = tlsmini::ext_signature_from_string(j["ext_signature"].get<std::string>());
        if (!sig) throw ParseError("bad ext_signature in record", 0);
        o.ext_signature = *sig;
    }
    o.have_tp = j.value("have_tp", false);
    if (j.contains("tp_order")) o.tp_order = j["tp_order"].get<std::vector<uint64_t>>();
    if (j.contains("closes")) {
        for (const json& cj : j["closes"]) {
            fp::CloseObservation c;
            c.error_code = cj.at("code").get<uint64_t>();
            if (cj.contains("frame_type")) c.frame_type = cj["frame_type"].get<uint64_t>();
            c.reason = cj.value("reason", "");
            o.closes.push_back(std::move(c));
        }
    }
    o.alpn_missing_in_ee = j.value("alpn_missing_in_ee", false);
    o.silent = j.value("silent", false);
    return o;
}

json classification_to_json(const fp::Classification& c) {
    json j;
    if (c.library) j["library"] = *c.library;
    j["method"] = c.method;
    j["conflict"] = c.conflict;
    j["needs_rehandshake"] = c.needs_rehandshake;
    j["ambiguous_with"] = c.ambiguous_with;
    j["tp_candidates"] = c.tp_candidates;
    j["error_candidates"] = c.error_candidates;
    return j;
}

fp::Classification classification_from_json(const json& j) {
    fp::Classification c;
    if (j.contains("library")) c.library = j["library"].get<std::string>();
    c.method = j.value("method", "");
    c.conflict = j.value("conflict", false);
    c.needs_rehandshake = j.value("needs_rehandshake", false);
    if (j.contains("ambiguous_with")) {
        c.ambiguous_with = j["ambiguous_with"].get<std::vector<std::string>>();
    }
    if (j.contains("tp_candidates")) {
        c.tp_candidates = j["tp_candidates"].get<std::vector<std::string>>();
    }
    if (j.contains("error_candidates")) {
        c.error_candidates = j["error_candidates"].get<std::vector<std::string>>();
    }
    return c;
}

}  // namespace

std::string record_to_json(const ScanRecord& r) {
    json j;
    j["address"] = r.target.address;
    j["port"] = r.target.port;
    if (r.target.sni) j["sni"] = *r.target.sni;
    j["status"] = r.status;
    j["quic"] = r.quic;
    json probes = json::array();
    for (const ProbeSummary& p : r.probes) {
        json pj;
        pj["kind"] = p.kind;
        pj["outcome"] = p.outcome;
        if (!p.offered_versions.empty()) pj["offered_versions"] = p.offered_versions;
        pj["observation"] = observation_to_json(p.observation);
        if (!p.failure_detail.empty()) pj["failure_detail"] = p.failure_detail;
        pj["datagrams_sent"] = p.datagrams_sent;
        pj["datagrams_received"] = p.datagrams_received;
        probes.push_back(pj);
    }
    j["probes"] = probes;
    j["classification"] = classification_to_json(r.classification);
    j["duration_micros"] = r.duration_micros;
    j["db_version"] = r.db_version;
    return j.dump();
}

ScanRecord record_from_json(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad scan record: ") + e.what(), 0);
    }
    try {
        ScanRecord r;
        r.target.address = j.at("address").get<std::string>();
        r.target.port = j.at("port").get<uint16_t>();
        if (j.contains("sni")) r.target.sni = j["sni"].get<std::string>();
        r.status = j.value("status", "");
        r.quic = j.value("quic", false);
        if (j.contains("probes")) {
            for (const json& pj : j["probes"]) {
                ProbeSummary p;
                p.kind = pj.at("kind").get<std::string>();
                p.outcome = pj.at("outcome").get<std::string>();
                if (pj.contains("offered_versions")) {
                    p.offered_versions = pj["offered_versions"].get<std::vector<uint32_t>>();
                }
                if (pj.contains("observation")) {
                    p.observation = observation_from_json(pj["observation"]);
                }
                p.failure_detail = pj.value("failure_detail", "");
                p.datagrams_sent = pj.value("datagrams_sent", 0);
                p.datagrams_received = pj.value("datagrams_received", 0);
                r.probes.push_back(std::move(p));
            }
        }
        if (j.contains("classification")) {
            r.classification = classification_from_json(j["classification"]);
        }
        r.duration_micros = j.value("duration_micros", uint64_t{0});
        r.db_version = j.value("db_version", 0);
        return r;
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad scan record: ") + e.what(), 0);
    }
}

// ------------------------------------------------------------- target scan ----

namespace {

std::string capture_dir_name(const Target& t) {
    std::string name = t.address + "_" + std::to_string(t.port);
    if (t.sni) name += "_" + *t.sni;
    for (char& c : name) {
        if (c == ':' || c == '/' || c == '\\') c = '-';
    }
    return name;
}

}  // namespace

ScanRecord scan_target(const ScanJob& job, const Target& target, probe::RateLimiter* limiter) {
    ScanRecord rec;
    rec.target = target;
    rec.db_version = 1;
    auto t0 = std::chrono::steady_clock::now();
    auto stamp = [&] {
        rec.duration_micros = static_cast<uint64_t>(
            std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() -
                                                                  t0)
                .count());
    };

    if (job.blocklist.contains(target.address)) {
        rec.status = "skipped-blocklist";
        stamp();
        return rec;
    }

    probe::Target pt{target.address, target.port};
    uint64_t probe_seq = 0;
    std::string target_key =
        target.address + "," + std::to_string(target.port) + "," + target.sni.value_or("");

    auto run_one = [&](const std::string& kind, const probe::ProbeConfig& cfg) {
        probe_seq++;
        DetRng rng(job.seed ^ fnv1a64(target_key) ^ (probe_seq * 0x9e3779b97f4a7c15ULL));
        probe::ClientIdentity id = probe::make_identity(rng);
        probe::Capture cap;
        probe::LiveOptions opts;
        opts.limiter = limiter;
        if (!job.capture_dir.empty()) opts.capture = &cap;
        probe::ProbeResult result;
        std::string error;
        try {
            result = probe::run_probe(pt, cfg, id, opts);
        } catch (const std::exception& e) {
            error = e.what();
        }
        ProbeSummary s;
        s.kind = kind;
        s.outcome = error.empty() ? probe::outcome_name(result.outcome) : "error";
        s.observation = result.observation;
        s.offered_versions = result.offered_versions;
        s.failure_detail = error.empty() ? result.failure_detail : error;
        s.datagrams_sent = result.datagrams_sent;
        s.datagrams_received = result.datagrams_received;
        rec.probes.push_back(s);
        if (result.datagrams_received > 0) rec.quic = true;
        if (!job.capture_dir.empty() && error.empty()) {
            fs::path dir = fs::path(job.capture_dir) / capture_dir_name(target);
            fs::create_directories(dir);
            std::string file = std::to_string(probe_seq) + "-" + kind + ".qflt";
            probe::write_capture_file((dir / file).string(), cap);
        }
        return result;
    };

    if (job.probe_vn) {
        probe::ProbeConfig cfg;
        cfg.kind = probe::ProbeKind::version_negotiation;
        cfg.reserved_version = job.reserved_version;
        cfg.timeout_ms = job.timeout_ms;
        cfg.retries = job.retries;
        probe::ProbeResult r = run_one("vn", cfg);
        if (r.outcome == probe::Outcome::timeout) {
            // The gate: nothing answered the stateless probe, spend no more on
            // this endpoint.
            rec.status = "not-quic";
            stamp();
            return rec;
        }
    }

    auto handshake_cfg = [&](const std::string& alpn) {
        probe::ProbeConfig cfg;
        cfg.kind = probe::ProbeKind::handshake;
        cfg.alpn = alpn;
        cfg.sni = target.sni;
        cfg.timeout_ms = job.timeout_ms;
        cfg.retries = job.retries;
        return cfg;
    };

    std::vector<fp::FlightObservation> flights;
    if (job.probe_invalid_alpn) {
        flights.push_back(run_one("invalid-alpn", handshake_cfg(job.invalid_alpn)).observation);
    }
    if (job.probe_h3) {
        flights.push_back(run_one("h3", handshake_cfg(job.alpn)).observation);
    }
    if (!flights.empty()) {
        rec.classification = fp::classify(job.db, flights);
        int rehandshakes = 0;
        while (rec.classification.needs_rehandshake && job.probe_h3 &&
               rehandshakes++ < job.max_rehandshakes) {
            flights.push_back(run_one("rehandshake", handshake_cfg(job.alpn)).observation);
            rec.classification = fp::classify(job.db, flights);
        }
    }
    rec.status = "ok";
    stamp();
    return rec;
}

void run_scan(const ScanJob& job, const std::function<void(const ScanRecord&)>& sink) {
    probe::RateLimiter limiter(job.rate);
    std::atomic<size_t> next{0};
    std::mutex sink_mu;
    size_t n = job.targets.size();
    int workers = std::max(1, std::min<int>(job.workers, static_cast<int>(n == 0 ? 1 : n)));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; w++) {
        pool.emplace_back([&] {
            for (;;) {
                size_t i = next.fetch_add(1);
                if (i >= n) return;
                ScanRecord rec = scan_target(job, job.targets[i], &limiter);
                std::lock_guard<std::mutex> lock(sink_mu);
                sink(rec);
            }
        });
    }
    for (std::thread& t : pool) t.join();
}

std::vector<ScanRecord> run_scan(const ScanJob& job) {
    std::map<std::tuple<std::string, uint16_t, std::string>, ScanRecord> by_target;
    std::mutex mu;
    run_scan(job, [&](const ScanRecord& r) {
        std::lock_guard<std::mutex> lock(mu);
        by_target[{r.target.address, r.target.port, r.target.sni.value_or("")}] = r;
    });
    std::vector<ScanRecord> out;
    out.reserve(job.targets.size());
    for (const Target& t : job.targets) {
        auto it = by_target.find({t.address, t.port, t.sni.value_or("")});
        if (it != by_target.end()) out.push_back(it->second);
    }
    return out;
}

// ------------------------------------------------------------------- merge ----

namespace {

bool record_is_empty(const ScanRecord& r) {
    return r.status.empty() && r.probes.empty() && !r.classification.library.has_value();
}

std::vector<std::string> union_sorted(std::vector<std::string> a,
                                      const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
    return a;
}

}  // namespace

ScanRecord merge_records(const ScanRecord& a, const ScanRecord& b) {
    if (record_is_empty(b)) return a;
    if (record_is_empty(a)) return b;

    const fp::Classification& ca = a.classification;
    const fp::Classification& cb = b.classification;
    bool ia = ca.library.has_value();
    bool ib = cb.library.has_value();

    ScanRecord m;
    // Keep the identified scan's target (its SNI is the one that worked).
    m.target = ib && !ia ? b.target : a.target;
    if (a.status == "ok" || b.status == "ok") {
        m.status = "ok";
    } else if (a.status == "not-quic" || b.status == "not-quic") {
        m.status = "not-quic";
    } else {
        m.status = a.status;
    }
    m.quic = a.quic || b.quic;
    m.probes = a.probes;
    m.probes.insert(m.probes.end(), b.probes.begin(), b.probes.end());
    m.duration_micros = a.duration_micros + b.duration_micros;
    m.db_version = std::max(a.db_version, b.db_version);

    fp::Classification& mc = m.classification;
    if (ia && ib) {
        if (*ca.library == *cb.library) {
            mc.library = ca.library;
            mc.method = "both-scans";
            mc.conflict = false;
            mc.needs_rehandshake = false;
        } else {
            // Successful identifications should agree; surface the disagreement
            // and keep both names.
            mc.library.reset();
            mc.method = "conflict";
            mc.conflict = true;
            mc.ambiguous_with = union_sorted({*ca.library}, {*cb.library});
        }
    } else if (ia) {
        mc = ca;
    } else if (ib) {
        mc = cb;
    } else {
        mc.conflict = ca.conflict || cb.conflict;
        mc.needs_rehandshake = ca.needs_rehandshake || cb.needs_rehandshake;
        mc.ambiguous_with = union_sorted(ca.ambiguous_with, cb.ambiguous_with);
    }
    mc.tp_candidates = union_sorted(ca.tp_candidates, cb.tp_candidates);
    mc.error_candidates = union_sorted(ca.error_candidates, cb.error_candidates);
    return m;
}

std::vector<ScanRecord> merge_scans(const std::vector<ScanRecord>& first,
                                    const std::vector<ScanRecord>& second) {
    std::vector<std::pair<std::string, uint16_t>> order;
    std::map<std::pair<std::string, uint16_t>, ScanRecord> merged;
    auto fold = [&](const ScanRecord& r) {
        std::pair<std::string, uint16_t> key{r.target.address, r.target.port};
        auto it = merged.find(key);
        if (it == merged.end()) {
            order.push_back(key);
            merged.emplace(key, r);
        } else {
            it->second = merge_records(it->second, r);
        }
    };
    for (const ScanRecord& r : first) fold(r);
    for (const ScanRecord& r : second) fold(r);
    std::vector<ScanRecord> out;
    out.reserve(order.size());
    for (const auto& key : order) out.push_back(merged.at(key));
    return out;
}

// ----------------------------------------------------------------- offline ----

OfflineResult classify_capture_dir(const std::string& dir, const fp::Database& db) {
    std::vector<fs::path> files;
    for (const fs::directory_entry& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".qflt") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());

    OfflineResult res;
    std::vector<fp::FlightObservation> flights;
    for (const fs::path& f : files) {
        probe::Capture cap = probe::read_capture_file(f.string());
        probe::ProbeResult r = probe::replay_capture(cap);
        ProbeSummary s;
        if (cap.kind == probe::ProbeKind::version_negotiation) {
            s.kind = "vn";
        } else {
            s.kind = cap.alpn == "h3" ? "h3" : "invalid-alpn";
        }
        s.outcome = probe::outcome_name(r.outcome);
        s.observation = r.observation;
        s.offered_versions = r.offered_versions;
        s.failure_detail = r.failure_detail;
        s.datagrams_sent = r.datagrams_sent;
        s.datagrams_received = r.datagrams_received;
        res.probes.push_back(s);
        if (cap.kind == probe::ProbeKind::handshake) flights.push_back(r.observation);
    }
    res.classification = fp::classify(db, flights);
    return res;
}

std::string offline_result_to_json(const OfflineResult& r) {
    json j;
    json probes = json::array();
    for (const ProbeSummary& p : r.probes) {
        json pj;
        pj["kind"] = p.kind;
        pj["outcome"] = p.outcome;
        if (!p.offered_versions.empty()) pj["offered_versions"] = p.offered_versions;
        pj["observation"] = observation_to_json(p.observation);
        if (!p.failure_detail.empty()) pj["failure_detail"] = p.failure_detail;
        pj["datagrams_sent"] = p.datagrams_sent;
        pj["datagrams_received"] = p.datagrams_received;
        probes.push_back(pj);
    }
    j["probes"] = probes;
    j["classification"] = classification_to_json(r.classification);
    return j.dump();
}

}  // namespace quicscout::scanner
