#include "opsec/rng.hpp"

#include <cmath>

namespace opsec {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

uint64_t Rng::below(uint64_t n) {
    if (n <= 1) return 0;
    // rejection sampling to remove modulo bias
    uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    uint64_t v;
    do {
        v = eng_();
    } while (v >= limit);
    return v % n;
}

int64_t Rng::range(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo) + 1));
}

double Rng::uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

double Rng::exponential(double mean) { return -mean * std::log1p(-uniform()); }

Bytes Rng::bytes(size_t n) {
    Bytes out(n);
    for (size_t i = 0; i < n; i += 8) {
        uint64_t v = eng_();
        for (size_t j = 0; j < 8 && i + j < n; ++j) out[i + j] = static_cast<uint8_t>(v >> (8 * j));
    }
    return out;
}

Rng Rng::split(std::string_view label, uint64_t index) const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : label) {
        h ^= static_cast<uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    return Rng(splitmix64(seed_ ^ splitmix64(h ^ splitmix64(index))));
}

} // namespace opsec
