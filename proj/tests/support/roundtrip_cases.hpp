#pragma once

// Seeded randomized encode->parse->compare cases for the wire formats.  Shared
// between the unit tests (smoke-sized run) and the acceptance suite (full run).
// Returns the number of mismatching cases; any nonzero value is a bug.

#include <cstdint>
#include <string>

namespace roundtrip_cases {

struct Result {
    int cases = 0;
    int mismatches = 0;
    std::string first_failure;  // empty when clean
};

Result run_varint_cases(int n, uint64_t seed);
Result run_header_cases(int n, uint64_t seed);
Result run_frame_cases(int n, uint64_t seed);

}  // namespace roundtrip_cases
