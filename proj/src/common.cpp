#include "cmaseg/common.hpp"

#include <cmath>

namespace cmaseg {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::config: return "CONFIG";
        case ErrorCode::input: return "INPUT";
        case ErrorCode::dim: return "DIM";
        case ErrorCode::io: return "IO";
        case ErrorCode::numeric: return "NUMERIC";
    }
    return "UNKNOWN";
}

static uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

Rng::Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
}

Rng Rng::derive(uint64_t seed, uint64_t stream) {
    uint64_t x = seed ^ (0xa0761d6478bd642full * (stream + 1));
    Rng r(0);
    for (auto& w : r.s_) w = splitmix64(x);
    return r;
}

static inline uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

uint64_t Rng::next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

size_t Rng::uniform_index(size_t n) {
    if (n == 0) fail(ErrorCode::input, "uniform_index: empty range");
    return static_cast<size_t>(uniform() * static_cast<double>(n)) % n;
}

int Rng::uniform_int(int lo, int hi) {
    return lo + static_cast<int>(uniform_index(static_cast<size_t>(hi - lo + 1)));
}

double Rng::normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

}  // namespace cmaseg
