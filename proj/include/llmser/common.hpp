#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace llmser {

// Bad or missing configuration. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unusable input data (unreadable file, malformed record, unresolvable reference).
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Remote call failed after all retries. Carries the attempt count.
class TransportError : public std::runtime_error {
public:
    TransportError(const std::string& msg, int attempts)
        : std::runtime_error(msg), attempts_(attempts) {}
    int attempts() const { return attempts_; }

private:
    int attempts_ = 0;
};

// A pipeline stage could not run, usually because an upstream artifact is missing.
class StageError : public std::runtime_error {
public:
    StageError(const std::string& stage, const std::string& msg)
        : std::runtime_error("stage '" + stage + "': " + msg), stage_(stage) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

// FNV-1a, 64 bit. Used for cache keys, manifests and seed derivation; stable
// across platforms and runs.
constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = kFnvOffset) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t fnv1a64_mix(std::uint64_t value, std::uint64_t h) {
    for (int i = 0; i < 8; ++i) {
        h ^= (value >> (8 * i)) & 0xffu;
        h *= kFnvPrime;
    }
    return h;
}

std::string to_hex(std::uint64_t v);

// Trims ASCII whitespace from both ends.
std::string trim(std::string_view s);

}  // namespace llmser
