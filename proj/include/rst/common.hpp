#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace rst {

// Base class for all library errors; subclasses signal intent to the CLI
// (user/config problems exit 1, internal failures exit 2).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct ParseError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// Floor for log arguments; entropy-style terms treat x*ln(x) as 0 at x=0.
inline constexpr double kLogFloor = 1e-12;

inline double safe_log(double x) {
    return std::log(x < kLogFloor ? kLogFloor : x);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Stable sub-seed derivation so every phase of a run draws from its own
// stream: reseeding by (seed, iteration, phase) keeps resumed runs on the
// exact trajectory of uninterrupted ones.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    return splitmix64(splitmix64(splitmix64(base) ^ a) ^ b);
}

}  // namespace rst
