#include "quicscout/fingerprint.hpp"

namespace quicscout::fingerprint {

// Built-in rule set.  data/fingerprints.json carries the same content for
// external tooling; a test keeps the two in sync.
const char* default_database_json() {
    return R"JSON({
  "version": 1,
  "transport_parameter_rules": [
    {"library": "s2n-quic",     "signatures": ["43-51"],          "order": "fixed",      "ids": [4, 6, 7, 8, 0, 15]},
    {"library": "s2n-quic",     "signatures": ["51-43"],          "order": "fixed",      "ids": [4, 6, 7, 8, 0, 15]},
    {"library": "lsquic",       "signatures": ["51-43"],          "order": "fixed",      "ids": [4, 6, 7, 8, 0, 15, 2]},
    {"library": "ngtcp2",       "signatures": ["43-51"],          "order": "fixed",      "ids": [0, 2, 15, 6, 7, 4, 8]},
    {"library": "xquic",        "signatures": ["43-51"],          "order": "fixed",      "ids": [0, 3, 4, 6, 7, 8, 15]},
    {"library": "haskell-quic", "signatures": ["51-43"],          "order": "fixed",      "ids": [0, 3, 4, 6, 7, 8, 15]},
    {"library": "haproxy",      "signatures": ["43-51"],          "order": "fixed",      "ids": [0, 2, 15, 3, 4, 6, 7, 8]},
    {"library": "quinn",        "signatures": ["51-43"],          "order": "fixed",      "ids": [3, 4, 6, 7, 8, 2, 0, 15]},
    {"library": "quic-go",      "signatures": ["43-51"],          "order": "fixed",      "ids": [6, 7, 4, 8, 3, 11, 2, 0, 15]},
    {"library": "picoquic",     "signatures": ["43-51"],          "order": "fixed",      "ids": [4, 8, 3, 6, 7, 11, 15, 0, 2]},
    {"library": "quicly",       "signatures": ["43-51"],          "order": "fixed",      "ids": [3, 6, 7, 4, 0, 15, 2, 8, 10]},
    {"library": "mvfst",        "signatures": ["43-51"],          "order": "fixed",      "ids": [0, 6, 7, 4, 8, 10, 3, 2, 15]},
    {"library": "quiche",       "signatures": ["51-43"],          "order": "fixed",      "ids": [0, 3, 4, 6, 7, 8, 10, 11, 15]},
    {"library": "aioquic",      "signatures": ["43-51"],          "order": "fixed",      "ids": [0, 2, 4, 6, 7, 8, 10, 11, 15]},
    {"library": "nginx",        "signatures": ["43-51", "51-43"], "order": "fixed",      "ids": [4, 8, 6, 7, 3, 11, 10, 0, 15, 2]},
    {"library": "msquic",       "signatures": ["43-51"],          "order": "fixed",      "ids": [0, 2, 3, 4, 6, 7, 8, 10, 11, 15]},
    {"library": "gquiche",      "signatures": ["51-43"],          "order": "randomized", "ids": [0, 2, 3, 4, 6, 7, 8, 15]},
    {"library": "akaquic",      "signatures": ["43-51"],          "order": "randomized", "ids": [0, 2, 3, 4, 6, 7, 8, 15]},
    {"library": "quant",        "signatures": ["43-51"],          "order": "randomized", "ids": [0, 2, 3, 4, 6, 8, 15]},
    {"library": "neqo",         "signatures": ["51-43"],          "order": "randomized", "ids": [0, 6, 4, 15, 8, 7]}
  ],
  "error_rules": [
    {"library": "msquic",       "code": 376, "no_reason": true},
    {"library": "quic-go",      "code": 376, "no_reason": true},
    {"library": "picoquic",     "code": 376, "no_reason": true},
    {"library": "haproxy",      "code": 376, "no_reason": true},
    {"library": "ngtcp2",       "code": 376, "no_reason": true},
    {"library": "quiche",       "code": 376, "no_reason": true},
    {"library": "neqo",         "code": 376, "frame_type": 6, "no_reason": true},
    {"library": "xquic",        "alpn_missing_in_ee": true},
    {"library": "aioquic",      "code": 296, "frame_type": 6, "reason": "No common ALPN protocols"},
    {"library": "kwik",         "code": 376, "reason": "unsupported application protocol: *"},
    {"library": "lsquic",       "code": 376, "reason": "no suitable application protocol"},
    {"library": "lsquic",       "code": 336, "reason": "TLS alert 80"},
    {"library": "nginx",        "code": 376, "reason": "handshake failed"},
    {"library": "quant",        "code": 376, "frame_type": 6, "reason": "PTLS error 120 (NO_APPLICATION_PROTOCOL)"},
    {"library": "quinn",        "code": 376, "reason": "peer doesn't support any known protocol"},
    {"library": "gquiche",      "code": 376, "frame_type": 6, "reason": "28:TLS handshake failure (ENCRYPTION_INITIAL) 120: no application protocol"},
    {"library": "haskell-quic", "code": 376, "reason": "no supported application protocols"},
    {"library": "akaquic",      "code": 336, "reason": "200:TLS handshake failure (ENCRYPTION_INITIAL) 80: internal error"},
    {"library": "akaquic",      "reason": "PROTOCOL_VIOLATION: 28:No known ALPN provided by client"},
    {"library": "mvfst",        "code": 376, "frame_type": 28, "reason": "fizz::FizzException: Unable to negotiate ALPN, as required by policy. policy=AlpnMode::Required"}
  ]
})JSON";
}

}  // namespace quicscout::fingerprint
