// SPDX-License-Identifier: MIT
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace vinn {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Contract violation by the caller (bad shapes, empty batches, ...).
struct contract_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A parameter value outside its admissible range.
struct parameter_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A geometric domain that cannot support the requested operation.
struct domain_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Non-finite values encountered while evaluating a field or jet.
struct evaluation_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A query outside the truncation box of a trained model.
struct extrapolation_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A required artifact (checkpoint, run file) is missing.
struct dependency_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Lattice probability left (0,1); a larger step count is required.
struct step_count_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Deterministic counter-based stream split: one master seed, many
/// independent substreams (step index, purpose tag) without shared state.
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
    // SplitMix64 over the combined word.
    std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    x ^= x >> 30; x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27; x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    return std::mt19937_64(split_seed(seed, stream));
}

/// Packed upper-triangle indexing for symmetric d x d matrices:
/// (i,j) with i <= j maps to a flat index in [0, d(d+1)/2).
inline int sym_pair_count(int d) { return d * (d + 1) / 2; }

inline int sym_pair_index(int i, int j, int d) {
    if (i > j) std::swap(i, j);
    return i * d - i * (i - 1) / 2 + (j - i);
}

/// Inverse of sym_pair_index: flat index -> (i,j), i <= j.
inline std::pair<int, int> sym_pair_unindex(int idx, int d) {
    int i = 0;
    while (idx >= d - i) { idx -= d - i; ++i; }
    return {i, i + idx};
}

/// FNV-1a content hash, used for run provenance stamps.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

} // namespace vinn
