// quicscout command-line front end.
//
//   scan      probe targets from a list and emit one JSON record per line
//   classify  re-run recorded probe captures offline and classify the endpoint
//   db-lint   check the rule database and report stats and collisions
//   farm      serve the scripted loopback endpoint farm until interrupted
//   golden    generate a reference capture directory from the scripted farm

#include <pthread.h>

#include <CLI11.hpp>
#include <csignal>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "quicscout/fingerprint.hpp"
#include "quicscout/labharness.hpp"
#include "quicscout/rng.hpp"
#include "quicscout/scanner.hpp"
#include "quicscout/session.hpp"
#include "quicscout/wire.hpp"

namespace fs = std::filesystem;
namespace fp = quicscout::fingerprint;
namespace lab = quicscout::lab;
namespace probe = quicscout::probe;
namespace scan = quicscout::scanner;
namespace wire = quicscout::wire;
using nlohmann::json;
using quicscout::Bytes;
using quicscout::DetRng;

namespace {

std::string read_text_file(const std::string& path) {
    std::ostringstream ss;
    if (path == "-") {
        ss << std::cin.rdbuf();
        return ss.str();
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    ss << in.rdbuf();
    return ss.str();
}

fp::Database load_db(const std::string& path) {
    if (path.empty()) return fp::default_database();
    return fp::database_from_json(read_text_file(path));
}

uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint32_t parse_hex32(const std::string& text) {
    size_t used = 0;
    unsigned long v = std::stoul(text, &used, 16);
    if (used != text.size() || v > 0xffffffffUL)
        throw std::runtime_error("not a 32-bit hex value: " + text);
    return static_cast<uint32_t>(v);
}

// ------------------------------------------------------------------- scan ----

struct ScanOpts {
    std::string targets_path;
    std::string db_path;
    std::string out_path = "-";
    std::string probes = "vn,invalid,h3";
    std::string blocklist_path;
    std::string captures_dir;
    std::string reserved_version_hex;
    std::string alpn = "h3";
    std::string invalid_alpn = "h3x";
    int rate = 100;
    int sni_limit = 100;
    int timeout_ms = 3000;
    int retries = 1;
    int rehandshakes = 2;
    int workers = 8;
    uint64_t seed = 1;
};

int cmd_scan(const ScanOpts& o) {
    scan::ScanJob job;
    job.db = load_db(o.db_path);
    job.targets = scan::parse_targets(read_text_file(o.targets_path), o.sni_limit);
    if (!o.blocklist_path.empty())
        job.blocklist = scan::Blocklist::from_text(read_text_file(o.blocklist_path));

    job.probe_vn = job.probe_invalid_alpn = job.probe_h3 = false;
    std::stringstream tokens(o.probes);
    std::string token;
    while (std::getline(tokens, token, ',')) {
        if (token == "vn")
            job.probe_vn = true;
        else if (token == "invalid")
            job.probe_invalid_alpn = true;
        else if (token == "h3")
            job.probe_h3 = true;
        else
            throw std::runtime_error("unknown probe kind: " + token + " (expected vn,invalid,h3)");
    }
    if (!o.reserved_version_hex.empty()) {
        uint32_t v = parse_hex32(o.reserved_version_hex);
        if (!wire::is_reserved_version(v))
            throw std::runtime_error("version must match the reserved pattern 0x?a?a?a?a");
        job.reserved_version = v;
    }
    job.alpn = o.alpn;
    job.invalid_alpn = o.invalid_alpn;
    job.rate = o.rate;
    job.timeout_ms = o.timeout_ms;
    job.retries = o.retries;
    job.max_rehandshakes = o.rehandshakes;
    job.workers = o.workers;
    job.seed = o.seed;
    job.capture_dir = o.captures_dir;

    std::ofstream file_out;
    std::ostream* out = &std::cout;
    if (o.out_path != "-" && !o.out_path.empty()) {
        file_out.open(o.out_path, std::ios::binary);
        if (!file_out) throw std::runtime_error("cannot open for writing: " + o.out_path);
        out = &file_out;
    }
    size_t written = 0;
    scan::run_scan(job, [&](const scan::ScanRecord& r) {
        (*out) << scan::record_to_json(r) << '\n';
        out->flush();
        written++;
    });
    if (!*out) throw std::runtime_error("write failure on " + o.out_path);
    std::cerr << "scan complete: " << written << " record(s)\n";
    return 0;
}

// --------------------------------------------------------------- classify ----

int cmd_classify(const std::string& flights_dir, const std::string& db_path) {
    if (!fs::is_directory(flights_dir))
        throw std::runtime_error("not a directory: " + flights_dir);
    scan::OfflineResult res = scan::classify_capture_dir(flights_dir, load_db(db_path));
    std::cout << scan::offline_result_to_json(res) << '\n';
    return 0;
}

// ---------------------------------------------------------------- db-lint ----

int cmd_db_lint(const std::string& db_path) {
    fp::Database db = load_db(db_path);

    std::vector<std::string> problems;
    std::set<std::string> libraries;
    std::set<std::string> seen_rows;
    int fixed = 0, randomized = 0;
    for (const fp::TpRule& r : db.tp_rules) {
        libraries.insert(r.library);
        if (r.library.empty()) problems.push_back("tp rule with empty library name");
        if (r.ids.empty()) problems.push_back(r.library + ": tp rule with no ids");
        if (r.signatures.empty()) problems.push_back(r.library + ": tp rule with no signatures");
        std::set<uint64_t> unique_ids(r.ids.begin(), r.ids.end());
        if (unique_ids.size() != r.ids.size())
            problems.push_back(r.library + ": duplicate ids in one tp rule");
        (r.kind == fp::TpOrderKind::fixed ? fixed : randomized)++;
        std::string row = r.library;
        for (fp::ExtOrderSignature s : r.signatures) row += "|" + std::string(to_string(s));
        for (uint64_t id : r.ids) row += "," + std::to_string(id);
        if (!seen_rows.insert(row).second) problems.push_back(r.library + ": duplicate tp row");
    }
    for (const fp::ErrorRule& r : db.error_rules) {
        libraries.insert(r.library);
        if (r.library.empty()) problems.push_back("error rule with empty library name");
        bool has_signal = r.error_code || r.frame_type || r.reason_pattern || r.no_reason ||
                          r.alpn_missing_in_ee;
        if (!has_signal) problems.push_back(r.library + ": error rule matches everything");
    }

    json j;
    j["libraries"] = libraries.size();
    j["tp_rules"] = db.tp_rules.size();
    j["tp_rules_fixed"] = fixed;
    j["tp_rules_randomized"] = randomized;
    j["error_rules"] = db.error_rules.size();
    json collisions = json::array();
    for (const fp::LibraryPair& p : fp::enumerate_tp_collisions(db))
        collisions.push_back(json::array({p.a, p.b}));
    j["tp_collisions"] = collisions;
    json overlaps = json::array();
    for (const fp::LibraryPair& p : fp::enumerate_tp_partial_overlaps(db))
        overlaps.push_back(json::array({p.a, p.b}));
    j["tp_partial_overlaps"] = overlaps;
    j["unique_by_error"] = fp::uniquely_identified_by_error(db);
    j["problems"] = problems;
    std::cout << j.dump(2) << '\n';
    return problems.empty() ? 0 : 1;
}

// ------------------------------------------------------------------- farm ----

int cmd_farm(uint64_t seed, const std::string& manifest_path) {
    // Block the shutdown signals before the serve threads start so they
    // inherit the mask and only this thread handles them.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    lab::Farm farm = lab::Farm::standard(seed);
    farm.start();
    std::string manifest = farm.manifest_json();
    if (!manifest_path.empty()) {
        std::ofstream out(manifest_path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open for writing: " + manifest_path);
        out << manifest << '\n';
    }
    std::cout << manifest << std::endl;
    std::cerr << "farm serving " << farm.entries().size()
              << " endpoints on loopback; Ctrl-C to stop\n";
    int sig = 0;
    sigwait(&set, &sig);
    farm.stop();
    std::cerr << "farm stopped\n";
    return 0;
}

// ----------------------------------------------------------------- golden ----

// Runs one probe against an in-process scripted endpoint, with every datagram
// recorded, and returns the capture.  No sockets are involved.
probe::Capture record_probe(lab::ScriptEndpoint& ep, const probe::ProbeConfig& cfg,
                            const probe::ClientIdentity& id) {
    probe::Capture cap;
    cap.kind = cfg.kind;
    cap.version =
        cfg.kind == probe::ProbeKind::version_negotiation ? cfg.reserved_version : wire::kQuicV1;
    if (cfg.kind == probe::ProbeKind::handshake) {
        cap.alpn = cfg.alpn;
        cap.x25519_private = id.x25519_private;
        cap.client_random = id.client_random;
    }
    cap.sni = cfg.sni.value_or("");
    cap.dcid = id.dcid;
    cap.scid = id.scid;

    probe::ProbeSession session(cfg, id);
    uint64_t t = 0;
    for (int guard = 0; !session.done() && guard < 100; guard++) {
        std::vector<Bytes> replies;
        for (Bytes& d : session.take_outgoing()) {
            cap.records.push_back(probe::CaptureRecord{probe::kDirSent, t++, d});
            for (Bytes& r : ep.handle_datagram(d)) replies.push_back(std::move(r));
        }
        if (session.done()) break;
        if (replies.empty()) {
            session.on_timeout();
            continue;
        }
        for (Bytes& r : replies) {
            cap.records.push_back(probe::CaptureRecord{probe::kDirReceived, t++, r});
            session.on_datagram(r);
        }
    }
    return cap;
}

int cmd_golden(const std::string& out_dir, uint64_t seed, const std::string& sni) {
    fp::Database db = fp::default_database();
    fs::create_directories(out_dir);

    probe::ProbeConfig vn_cfg;
    vn_cfg.kind = probe::ProbeKind::version_negotiation;
    probe::ProbeConfig h3_cfg;
    h3_cfg.alpn = "h3";
    h3_cfg.sni = sni;
    probe::ProbeConfig bad_cfg;
    bad_cfg.alpn = "h3x";
    bad_cfg.sni = sni;
    const std::vector<std::pair<std::string, probe::ProbeConfig>> plan{
        {"vn.qflt", vn_cfg},
        {"handshake-1.qflt", h3_cfg},
        {"handshake-2.qflt", h3_cfg},
        {"invalid-alpn.qflt", bad_cfg},
    };

    bool all_ok = true;
    for (const std::string& name : lab::farm_libraries()) {
        lab::ScriptEndpoint ep(lab::script_for(name), seed ^ fnv1a64(name));
        fs::path dir = fs::path(out_dir) / name;
        fs::create_directories(dir);
        uint64_t probe_seq = 0;
        for (const auto& [fname, cfg] : plan) {
            DetRng rng(seed ^ fnv1a64(name) ^ (++probe_seq * 0x9e3779b97f4a7c15ULL));
            probe::ClientIdentity id = probe::make_identity(rng);
            probe::write_capture_file((dir / fname).string(), record_probe(ep, cfg, id));
        }
        scan::OfflineResult res = scan::classify_capture_dir(dir.string(), db);
        if (res.classification.library && *res.classification.library == name) {
            std::cerr << name << ": ok\n";
        } else {
            all_ok = false;
            std::cerr << name << ": capture set does not classify back to " << name << " (got "
                      << res.classification.library.value_or("<none>") << ")\n";
        }
    }
    if (!all_ok) return 1;
    std::cerr << "golden captures written to " << out_dir << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"quicscout: find QUIC endpoints and identify the serving library"};
    app.require_subcommand(1);

    ScanOpts so;
    CLI::App* scan_cmd = app.add_subcommand("scan", "Probe a target list and emit JSON records");
    scan_cmd->add_option("--targets", so.targets_path,
                         "Target list file, lines of address[,port[,sni]] ('-' = stdin)")
        ->required();
    scan_cmd->add_option("--db", so.db_path, "Rule database JSON (default: built-in)");
    scan_cmd->add_option("--out", so.out_path, "Output file for JSON lines ('-' = stdout)");
    scan_cmd->add_option("--probes", so.probes, "Probe kinds to run, comma-separated: vn,invalid,h3");
    scan_cmd->add_option("--rate", so.rate, "Global datagram send cap per second")
        ->check(CLI::PositiveNumber);
    scan_cmd->add_option("--blocklist", so.blocklist_path, "CIDR file of addresses never contacted");
    scan_cmd->add_option("--sni-limit", so.sni_limit, "Max SNI-bearing targets per address")
        ->check(CLI::NonNegativeNumber);
    scan_cmd->add_option("--timeout", so.timeout_ms, "Receive window per wait, milliseconds")
        ->check(CLI::PositiveNumber);
    scan_cmd->add_option("--retries", so.retries, "First-flight resends on silence")
        ->check(CLI::NonNegativeNumber);
    scan_cmd->add_option("--rehandshakes", so.rehandshakes,
                         "Extra handshakes allowed to split randomized-order candidates")
        ->check(CLI::NonNegativeNumber);
    scan_cmd->add_option("--reserved-version", so.reserved_version_hex,
                         "Hex version for the negotiation-forcing probe (pattern 0x?a?a?a?a)");
    scan_cmd->add_option("--workers", so.workers, "Concurrent probe workers")
        ->check(CLI::PositiveNumber);
    scan_cmd->add_option("--seed", so.seed, "Base seed for per-probe client identities");
    scan_cmd->add_option("--captures", so.captures_dir, "Directory to record every probe exchange");
    scan_cmd->add_option("--alpn", so.alpn, "ALPN offered by the h3 probe");
    scan_cmd->add_option("--invalid-alpn", so.invalid_alpn,
                         "Deliberately unmatched ALPN for the failure probe");

    std::string flights_dir, classify_db;
    CLI::App* classify_cmd =
        app.add_subcommand("classify", "Classify an endpoint from recorded captures, offline");
    classify_cmd->add_option("--flights", flights_dir, "Directory of .qflt capture files")
        ->required();
    classify_cmd->add_option("--db", classify_db, "Rule database JSON (default: built-in)");

    std::string lint_db;
    CLI::App* lint_cmd = app.add_subcommand("db-lint", "Check a rule database and print stats");
    lint_cmd->add_option("--db", lint_db, "Rule database JSON (default: built-in)");

    uint64_t farm_seed = 1;
    std::string manifest_path;
    CLI::App* farm_cmd =
        app.add_subcommand("farm", "Serve the scripted endpoint farm on loopback");
    farm_cmd->add_option("--seed", farm_seed, "Farm determinism seed");
    farm_cmd->add_option("--manifest", manifest_path, "Also write the port manifest to this file");

    std::string golden_dir, golden_sni = "example.org";
    uint64_t golden_seed = 7;
    CLI::App* golden_cmd =
        app.add_subcommand("golden", "Generate reference captures from the scripted farm");
    golden_cmd->add_option("--out", golden_dir, "Output directory (one subdirectory per library)")
        ->required();
    golden_cmd->add_option("--seed", golden_seed, "Determinism seed");
    golden_cmd->add_option("--sni", golden_sni, "Server name sent by the handshake probes");

    CLI11_PARSE(app, argc, argv);

    try {
        if (scan_cmd->parsed()) return cmd_scan(so);
        if (classify_cmd->parsed()) return cmd_classify(flights_dir, classify_db);
        if (lint_cmd->parsed()) return cmd_db_lint(lint_db);
        if (farm_cmd->parsed()) return cmd_farm(farm_seed, manifest_path);
        if (golden_cmd->parsed()) return cmd_golden(golden_dir, golden_seed, golden_sni);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
