#include "quicscout/fingerprint.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace quicscout::fingerprint {

using nlohmann::json;

// ------------------------------------------------------------- normalization ----

std::vector<uint64_t> normalize_tp_order(const std::vector<tlsmini::TransportParam>& params) {
    std::vector<uint64_t> out;
    out.reserve(params.size());
    for (const auto& p : params)
        if (!tlsmini::is_grease_tp_id(p.id)) out.push_back(p.id);
    return out;
}

// ------------------------------------------------------------------ matching ----

bool glob_match(std::string_view pattern, std::string_view text) {
    size_t pi = 0, ti = 0;
    size_t star = std::string_view::npos, mark = 0;
    while (ti < text.size()) {
        if (pi < pattern.size() && pattern[pi] == '*') {
            star = pi++;
            mark = ti;
        } else if (pi < pattern.size() && pattern[pi] == text[ti]) {
            pi++;
            ti++;
        } else if (star != std::string_view::npos) {
            pi = star + 1;
            ti = ++mark;
        } else {
            return false;
        }
    }
    while (pi < pattern.size() && pattern[pi] == '*') pi++;
    return pi == pattern.size();
}

bool tp_rule_matches(const TpRule& rule, ExtOrderSignature sig,
                     const std::vector<uint64_t>& order) {
    if (std::find(rule.signatures.begin(), rule.signatures.end(), sig) == rule.signatures.end())
        return false;
    if (rule.kind == TpOrderKind::fixed) return order == rule.ids;
    std::vector<uint64_t> a = order, b = rule.ids;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    return a == b;
}

bool error_rule_matches(const ErrorRule& rule, const FlightObservation& flight) {
    if (rule.alpn_missing_in_ee) return flight.alpn_missing_in_ee;
    for (const auto& close : flight.closes) {
        if (rule.error_code && close.error_code != *rule.error_code) continue;
        if (rule.frame_type && (!close.frame_type || *close.frame_type != *rule.frame_type))
            continue;
        if (rule.no_reason) {
            if (!close.reason.empty()) continue;
        } else if (rule.reason_pattern) {
            if (!glob_match(*rule.reason_pattern, close.reason)) continue;
        }
        return true;
    }
    return false;
}

// -------------------------------------------------------------- classification ----

namespace {

std::vector<std::string> sorted_unique(std::vector<std::string> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

std::vector<std::string> intersect(const std::vector<std::string>& a,
                                   const std::vector<std::string>& b) {
    std::vector<std::string> out;
    for (const auto& s : a)
        if (contains(b, s)) out.push_back(s);
    return out;
}

std::vector<std::string> unite(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return sorted_unique(std::move(a));
}

}  // namespace

Classification classify(const Database& db, const std::vector<FlightObservation>& flights) {
    Classification c;

    // Orderings observed across flights.  A library stays a candidate only if,
    // for every observed flight, at least one of its rules accepts the ordering
    // (a fixed-order library cannot explain two different orderings; a
    // randomized one explains any permutation of its set).
    struct TpObs {
        ExtOrderSignature sig;
        std::vector<uint64_t> order;
    };
    std::vector<TpObs> tp_obs;
    for (const auto& f : flights)
        if (f.have_tp && f.ext_signature) tp_obs.push_back({*f.ext_signature, f.tp_order});

    std::vector<std::string> tp_cand;
    if (!tp_obs.empty()) {
        std::vector<std::string> libs;
        for (const auto& r : db.tp_rules) libs.push_back(r.library);
        for (const auto& lib : sorted_unique(std::move(libs))) {
            bool explains_all = true;
            for (const auto& obs : tp_obs) {
                bool any = false;
                for (const auto& r : db.tp_rules)
                    if (r.library == lib && tp_rule_matches(r, obs.sig, obs.order)) any = true;
                if (!any) {
                    explains_all = false;
                    break;
                }
            }
            if (explains_all) tp_cand.push_back(lib);
        }
    }
    c.tp_candidates = tp_cand;

    // Failure-signal candidates: union over flights that showed any failure signal.
    std::vector<std::string> err_cand;
    for (const auto& f : flights) {
        if (f.closes.empty() && !f.alpn_missing_in_ee) continue;
        for (const auto& r : db.error_rules)
            if (error_rule_matches(r, f)) err_cand.push_back(r.library);
    }
    err_cand = sorted_unique(std::move(err_cand));
    c.error_candidates = err_cand;

    auto finish = [&](const std::string& lib) {
        c.library = lib;
        bool in_e = contains(err_cand, lib);
        bool in_t = contains(tp_cand, lib);
        c.method = in_e && in_t ? "both" : in_e ? "error" : "transport_params";
    };

    // A failure signal that only one library's rules accept is the strongest
    // signal; the ordering may corroborate it but cannot override it unless it
    // points at a different single library (then: conflict, decided by no one).
    if (err_cand.size() == 1) {
        if (tp_cand.empty() || contains(tp_cand, err_cand[0])) {
            finish(err_cand[0]);
        } else {
            c.conflict = true;
            c.ambiguous_with = unite(tp_cand, err_cand);
        }
        return c;
    }

    if (tp_cand.size() == 1) {
        if (err_cand.empty() || contains(err_cand, tp_cand[0])) {
            finish(tp_cand[0]);
        } else {
            c.conflict = true;
            c.ambiguous_with = unite(tp_cand, err_cand);
        }
        return c;
    }

    if (tp_cand.size() >= 2) {
        std::vector<std::string> pool = tp_cand;
        if (!err_cand.empty()) {
            std::vector<std::string> both = intersect(tp_cand, err_cand);
            if (both.size() == 1) {
                finish(both[0]);
                return c;
            }
            if (both.empty()) {
                c.conflict = true;
                c.ambiguous_with = unite(tp_cand, err_cand);
                return c;
            }
            pool = both;
        }

        // Typically a fixed-order library colliding with a randomized one that
        // happens to share the id set.  Repeat handshakes split them: any two
        // differing orderings prove randomization, consistently identical
        // orderings are read as the fixed library.
        std::vector<std::string> fixed_libs, rand_libs;
        for (const auto& lib : pool) {
            bool fx = false, rd = false;
            for (const auto& r : db.tp_rules)
                if (r.library == lib) (r.kind == TpOrderKind::fixed ? fx : rd) = true;
            if (fx) fixed_libs.push_back(lib);
            if (rd) rand_libs.push_back(lib);
        }
        if (tp_obs.size() >= 2) {
            bool varied = false;
            for (size_t i = 1; i < tp_obs.size(); i++)
                if (tp_obs[i].order != tp_obs[0].order) varied = true;
            const std::vector<std::string>& chosen = varied ? rand_libs : fixed_libs;
            if (chosen.size() == 1) {
                finish(chosen[0]);
                return c;
            }
            if (!varied && fixed_libs.empty() && rand_libs.size() == 1) {
                finish(rand_libs[0]);
                return c;
            }
        } else {
            c.needs_rehandshake = !fixed_libs.empty() && !rand_libs.empty();
        }
        c.ambiguous_with = pool;
        return c;
    }

    if (err_cand.size() >= 2) c.ambiguous_with = err_cand;
    return c;
}

// ------------------------------------------------------------------- auditing ----

namespace {

bool contents_coincide(const TpRule& a, const TpRule& b) {
    if (a.kind == TpOrderKind::fixed && b.kind == TpOrderKind::fixed) return a.ids == b.ids;
    std::vector<uint64_t> x = a.ids, y = b.ids;
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    return x == y;
}

struct LibraryTp {
    std::set<ExtOrderSignature> sigs;
    std::vector<const TpRule*> rules;
};

std::map<std::string, LibraryTp> group_by_library(const Database& db) {
    std::map<std::string, LibraryTp> out;
    for (const auto& r : db.tp_rules) {
        auto& lib = out[r.library];
        lib.rules.push_back(&r);
        for (auto s : r.signatures) lib.sigs.insert(s);
    }
    return out;
}

void enumerate_overlaps(const Database& db, std::vector<LibraryPair>& full,
                        std::vector<LibraryPair>& partial) {
    auto libs = group_by_library(db);
    for (auto a = libs.begin(); a != libs.end(); ++a) {
        for (auto b = std::next(a); b != libs.end(); ++b) {
            std::vector<ExtOrderSignature> shared;
            for (auto s : a->second.sigs)
                if (b->second.sigs.count(s)) shared.push_back(s);
            if (shared.empty()) continue;

            bool all = true, any = false;
            for (auto sig : shared) {
                bool here = false;
                for (const TpRule* ra : a->second.rules) {
                    if (std::find(ra->signatures.begin(), ra->signatures.end(), sig) ==
                        ra->signatures.end())
                        continue;
                    for (const TpRule* rb : b->second.rules) {
                        if (std::find(rb->signatures.begin(), rb->signatures.end(), sig) ==
                            rb->signatures.end())
                            continue;
                        if (contents_coincide(*ra, *rb)) here = true;
                    }
                }
                all = all && here;
                any = any || here;
            }
            if (!any) continue;
            if (all && a->second.sigs == b->second.sigs)
                full.push_back({a->first, b->first});
            else
                partial.push_back({a->first, b->first});
        }
    }
}

}  // namespace

std::vector<LibraryPair> enumerate_tp_collisions(const Database& db) {
    std::vector<LibraryPair> full, partial;
    enumerate_overlaps(db, full, partial);
    return full;
}

std::vector<LibraryPair> enumerate_tp_partial_overlaps(const Database& db) {
    std::vector<LibraryPair> full, partial;
    enumerate_overlaps(db, full, partial);
    return partial;
}

std::vector<std::string> uniquely_identified_by_error(const Database& db) {
    std::vector<std::string> unique;
    for (const auto& rule : db.error_rules) {
        if (rule.alpn_missing_in_ee) continue;  // behavior-only, not a close

        // Synthesize the observation this rule describes and see whose rules accept it.
        CloseObservation close;
        close.error_code = rule.error_code.value_or(0x0a);
        close.frame_type = rule.frame_type;
        if (!rule.no_reason && rule.reason_pattern) {
            std::string reason;
            for (char ch : *rule.reason_pattern)
                if (ch == '*')
                    reason += "x";
                else
                    reason += ch;
            close.reason = reason;
        }
        FlightObservation flight;
        flight.closes.push_back(close);

        bool only_self = true;
        for (const auto& other : db.error_rules)
            if (error_rule_matches(other, flight) && other.library != rule.library)
                only_self = false;
        if (only_self && error_rule_matches(rule, flight)) unique.push_back(rule.library);
    }
    return sorted_unique(std::move(unique));
}

// ---------------------------------------------------------------------- json ----

namespace {

const char* to_string(TpOrderKind k) {
    return k == TpOrderKind::fixed ? "fixed" : "randomized";
}

TpOrderKind order_kind_from_string(const std::string& s) {
    if (s == "fixed") return TpOrderKind::fixed;
    if (s == "randomized") return TpOrderKind::randomized;
    throw std::runtime_error("unknown transport-parameter order kind: " + s);
}

}  // namespace

Database database_from_json(const std::string& json_text) {
    json j = json::parse(json_text);
    if (!j.is_object()) throw std::runtime_error("rule database must be a JSON object");
    if (j.value("version", 0) != 1) throw std::runtime_error("unsupported rule database version");

    Database db;
    for (const auto& jr : j.at("transport_parameter_rules")) {
        TpRule r;
        r.library = jr.at("library").get<std::string>();
        if (r.library.empty()) throw std::runtime_error("rule with empty library name");
        for (const auto& js : jr.at("signatures")) {
            auto sig = tlsmini::ext_signature_from_string(js.get<std::string>());
            if (!sig)
                throw std::runtime_error("bad extension-order signature for " + r.library);
            r.signatures.push_back(*sig);
        }
        if (r.signatures.empty())
            throw std::runtime_error("rule without signatures for " + r.library);
        r.kind = order_kind_from_string(jr.at("order").get<std::string>());
        for (const auto& ji : jr.at("ids")) r.ids.push_back(ji.get<uint64_t>());
        if (r.ids.empty()) throw std::runtime_error("rule without ids for " + r.library);
        db.tp_rules.push_back(std::move(r));
    }
    for (const auto& jr : j.at("error_rules")) {
        ErrorRule r;
        r.library = jr.at("library").get<std::string>();
        if (r.library.empty()) throw std::runtime_error("rule with empty library name");
        if (jr.contains("code")) r.error_code = jr.at("code").get<uint64_t>();
        if (jr.contains("frame_type")) r.frame_type = jr.at("frame_type").get<uint64_t>();
        if (jr.contains("reason")) r.reason_pattern = jr.at("reason").get<std::string>();
        r.no_reason = jr.value("no_reason", false);
        r.alpn_missing_in_ee = jr.value("alpn_missing_in_ee", false);
        if (r.no_reason && r.reason_pattern)
            throw std::runtime_error("rule for " + r.library +
                                     " sets both no_reason and a reason pattern");
        if (r.alpn_missing_in_ee && (r.error_code || r.frame_type || r.reason_pattern ||
                                     r.no_reason))
            throw std::runtime_error("behavior rule for " + r.library +
                                     " must not carry close matchers");
        if (!r.alpn_missing_in_ee && !r.error_code && !r.reason_pattern && !r.no_reason)
            throw std::runtime_error("rule for " + r.library + " matches every close");
        db.error_rules.push_back(std::move(r));
    }
    return db;
}

std::string database_to_json(const Database& db) {
    json j;
    j["version"] = 1;
    j["transport_parameter_rules"] = json::array();
    for (const auto& r : db.tp_rules) {
        json jr;
        jr["library"] = r.library;
        jr["signatures"] = json::array();
        for (auto s : r.signatures) jr["signatures"].push_back(tlsmini::to_string(s));
        jr["order"] = to_string(r.kind);
        jr["ids"] = r.ids;
        j["transport_parameter_rules"].push_back(std::move(jr));
    }
    j["error_rules"] = json::array();
    for (const auto& r : db.error_rules) {
        json jr;
        jr["library"] = r.library;
        if (r.error_code) jr["code"] = *r.error_code;
        if (r.frame_type) jr["frame_type"] = *r.frame_type;
        if (r.reason_pattern) jr["reason"] = *r.reason_pattern;
        if (r.no_reason) jr["no_reason"] = true;
        if (r.alpn_missing_in_ee) jr["alpn_missing_in_ee"] = true;
        j["error_rules"].push_back(std::move(jr));
    }
    return j.dump(2) + "\n";
}

const Database& default_database() {
    static const Database db = database_from_json(default_database_json());
    return db;
}

}  // namespace quicscout::fingerprint
