#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "opsec/bytes.hpp"

namespace opsec {

// Seeded stream. Draw helpers avoid std:: distributions so output is
// identical across standard library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), eng_(seed) {}

    uint64_t next_u64() { return eng_(); }
    uint64_t below(uint64_t n);                 // uniform in [0, n)
    int64_t range(int64_t lo, int64_t hi);      // uniform in [lo, hi]
    double uniform();                           // [0, 1)
    double exponential(double mean);
    bool bernoulli(double p) { return uniform() < p; }
    Bytes bytes(size_t n);

    // Independent child stream keyed by label.
    Rng split(std::string_view label, uint64_t index = 0) const;

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    std::mt19937_64 eng_;
};

uint64_t splitmix64(uint64_t x);

} // namespace opsec
