#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tickcast {

inline constexpr std::string_view kToolVersion = "0.1.0";

// Timestamps are microseconds since epoch throughout.
using Timestamp = std::int64_t;
inline constexpr std::int64_t kMicrosPerSecond = 1'000'000;
inline constexpr std::int64_t kMicrosPerMilli = 1'000;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input text (bad JSON, bad numbers).
struct ParseError : Error {
    using Error::Error;
};

// Structurally valid input missing or mistyping a required field.
struct SchemaError : Error {
    explicit SchemaError(const std::string& field, const std::string& detail)
        : Error("schema error: field '" + field + "': " + detail), field_name(field) {}
    std::string field_name;
};

// Event timestamps went backwards.
struct OrderingError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// Numeric failure: divergence, non-finite values where finite required.
struct NumericError : Error {
    using Error::Error;
};

// Precondition violation on an otherwise valid call (empty book side,
// quantile level outside (0,1), ...).
struct DomainError : Error {
    using Error::Error;
};

inline std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// SplitMix64; used to derive independent child seeds from (master, index).
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97f4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    return splitmix64(master ^ splitmix64(index + 0x51BD5A342FD6E0B1ULL));
}

}  // namespace tickcast
