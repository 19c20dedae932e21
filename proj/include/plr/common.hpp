#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace plr {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a provider does not support a requested operation
// (e.g. a file-backed embedding dump without logits).
class CapabilityError : public Error {
public:
    explicit CapabilityError(const std::string& msg) : Error(msg) {}
};

// Deterministic RNG used everywhere instead of <random> distributions,
// whose output is implementation-defined. splitmix64 core.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1) with 53 bits of precision.
    double uniform01() { return double(next() >> 11) * 0x1.0p-53; }

    // Unbiased integer in [0, n) by rejection.
    uint64_t below(uint64_t n);

    // Standard normal via Box-Muller (cached second value).
    double gauss();

    // First k entries of a seeded permutation of 0..n-1 (sample without
    // replacement); k == n gives a full shuffle.
    std::vector<size_t> sample_indices(size_t n, size_t k);

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Order-sensitive 64-bit hash of a list of values; used to derive
// per-replicate seeds from a master seed.
uint64_t stable_hash64(const std::vector<uint64_t>& parts);

// SHA-256 hex digest of a byte string.
std::string sha256_hex(const std::string& data);

} // namespace plr
