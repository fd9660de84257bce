#pragma once

// Server-library identification from first-flight observations.  Two signal
// families feed the classifier:
//   - transport-parameter ordering: the sequence of transport parameter ids in
//     EncryptedExtensions (values dropped, greasing ids removed) together with
//     the ServerHello extension-order signal (43-51 vs 51-43),
//   - invalid-ALPN failure details: CONNECTION_CLOSE code, triggering frame
//     type, reason phrase shape, or distinctive non-close behavior.
// The rule database ships embedded and can also be loaded from JSON.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "quicscout/bytes.hpp"
#include "quicscout/tlsmini.hpp"

namespace quicscout::fingerprint {

using tlsmini::ExtOrderSignature;

// ------------------------------------------------------------------ database ----

enum class TpOrderKind : uint8_t {
    fixed,       // ids always appear in exactly this order
    randomized,  // ids form this set, order shuffled per handshake
};

struct TpRule {
    std::string library;
    std::vector<ExtOrderSignature> signatures;  // usually one; nginx emits both
    TpOrderKind kind = TpOrderKind::fixed;
    std::vector<uint64_t> ids;  // fixed: exact order; randomized: the id set
};

struct ErrorRule {
    std::string library;
    std::optional<uint64_t> error_code;          // nullopt: any close code
    std::optional<uint64_t> frame_type;          // nullopt: any / absent
    std::optional<std::string> reason_pattern;   // anchored glob, '*' wildcard
    bool no_reason = false;                      // reason phrase must be empty
    bool alpn_missing_in_ee = false;             // handshake continues, EE has no alpn
};

struct Database {
    std::vector<TpRule> tp_rules;
    std::vector<ErrorRule> error_rules;
};

// Parse/serialize the JSON rule format.  Throws std::runtime_error on
// malformed input (unknown order kind, bad signature string, missing fields).
Database database_from_json(const std::string& json_text);
std::string database_to_json(const Database& db);

// The built-in rule set (also shipped as data/fingerprints.json).
const Database& default_database();
const char* default_database_json();

// --------------------------------------------------------------- observations ----

// One CONNECTION_CLOSE seen during a probe.
struct CloseObservation {
    uint64_t error_code = 0;
    std::optional<uint64_t> frame_type;  // present for transport closes (0x1c)
    std::string reason;                  // UTF-8, lossily decoded
};

// Everything the classifier consumes from a single probe exchange.
struct FlightObservation {
    std::optional<ExtOrderSignature> ext_signature;
    bool have_tp = false;
    std::vector<uint64_t> tp_order;      // normalized: greasing ids removed, values dropped
    std::vector<CloseObservation> closes;  // in arrival order; may be empty
    bool alpn_missing_in_ee = false;     // EE parsed but carried no alpn extension
    bool silent = false;                 // probe elicited nothing at all
};

// Drop greasing ids and values, keep wire order.
std::vector<uint64_t> normalize_tp_order(const std::vector<tlsmini::TransportParam>& params);

// ------------------------------------------------------------------ matching ----

// Anchored glob match; '*' matches any run of bytes, everything else is literal.
bool glob_match(std::string_view pattern, std::string_view text);

bool tp_rule_matches(const TpRule& rule, ExtOrderSignature sig,
                     const std::vector<uint64_t>& order);
bool error_rule_matches(const ErrorRule& rule, const FlightObservation& flight);

// -------------------------------------------------------------- classification ----

struct Classification {
    std::optional<std::string> library;
    std::string method;                       // "transport_params", "error", or "both"
    bool conflict = false;                    // signals identify different libraries
    bool needs_rehandshake = false;           // another handshake would disambiguate
    std::vector<std::string> ambiguous_with;  // candidate set when library is unset
    std::vector<std::string> tp_candidates;   // all libraries the tp signal allows
    std::vector<std::string> error_candidates;  // all libraries the failure signal allows
};

// Combine any number of probe observations for one endpoint.  Later flights are
// typically repeat handshakes used to tell randomized orders from fixed ones.
Classification classify(const Database& db, const std::vector<FlightObservation>& flights);

// ------------------------------------------------------------------- auditing ----

struct LibraryPair {
    std::string a, b;  // a < b lexicographically
    bool operator==(const LibraryPair&) const = default;
};

// Library pairs whose transport-parameter rules can produce identical
// observations in every signature context (the classifier needs the failure
// signal or repeat handshakes to split these).
std::vector<LibraryPair> enumerate_tp_collisions(const Database& db);

// Pairs that can coincide in some but not every signature context.
std::vector<LibraryPair> enumerate_tp_partial_overlaps(const Database& db);

// Libraries whose close-based rules match observations no other library's
// rules accept (behavior-only rules are excluded from this count).
std::vector<std::string> uniquely_identified_by_error(const Database& db);

}  // namespace quicscout::fingerprint
