#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace cmaseg {

using scalar = double;

// Error categories; the numeric value doubles as the CLI exit code.
enum class ErrorCode : int {
    config = 2,
    input = 3,
    dim = 4,
    io = 5,
    numeric = 6,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) { throw Error(code, msg); }

// xoshiro256** with splitmix64 seeding. Self-contained so RNG state can be
// checkpointed exactly (4 words) and sequences are identical across builds.
class Rng {
public:
    explicit Rng(uint64_t seed);
    // Derives an independent stream, e.g. per run or per video.
    static Rng derive(uint64_t seed, uint64_t stream);

    uint64_t next_u64();
    double uniform();                       // [0, 1)
    double uniform(double lo, double hi);   // [lo, hi)
    size_t uniform_index(size_t n);         // [0, n), n >= 1
    int uniform_int(int lo, int hi);        // [lo, hi] inclusive
    double normal();                        // standard normal, Box-Muller
    bool bernoulli(double p);

    std::array<uint64_t, 4> state() const { return s_; }
    void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }

private:
    std::array<uint64_t, 4> s_{};
};

}  // namespace cmaseg
