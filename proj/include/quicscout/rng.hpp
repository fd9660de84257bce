#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "quicscout/bytes.hpp"

namespace quicscout {

// Deterministic RNG helpers.  mt19937_64's output sequence is fully specified by
// the standard; the bounded draw and shuffle below avoid std::uniform_int_distribution
// and std::shuffle, whose algorithms are implementation-defined, so a given seed
// produces the same stream on every platform.
class DetRng {
public:
    explicit DetRng(uint64_t seed) : eng_(seed) {}

    uint64_t next() { return eng_(); }

    // Uniform draw in [0, n) via rejection sampling.
    uint64_t below(uint64_t n) {
        if (n == 0) return 0;
        uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
        uint64_t v;
        do {
            v = eng_();
        } while (v >= limit);
        return v % n;
    }

    bool coin() { return (eng_() & 1) != 0; }

    Bytes bytes(size_t n) {
        Bytes out(n);
        for (size_t i = 0; i < n; i++) out[i] = static_cast<uint8_t>(eng_() >> 56);
        return out;
    }

    // Fisher-Yates with the deterministic bounded draw above.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; i--) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
};

// Cryptographically random bytes (OpenSSL RAND_bytes) for live session identities.
Bytes secure_random(size_t n);

}  // namespace quicscout
