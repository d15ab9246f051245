#pragma once

// Shared plumbing: error types, hashing, seeded RNG, compensated sums,
// small file/JSON helpers. Everything downstream includes this first.

#include <chrono>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace interlace {

using Json = nlohmann::ordered_json;

//
// Errors
//

struct Error : std::runtime_error {
    Error(std::string kind, const std::string& msg)
        : std::runtime_error(kind + ": " + msg), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

#define INTERLACE_ERROR(Name)                                              \
    struct Name : Error {                                                  \
        explicit Name(const std::string& msg) : Error(#Name, msg) {}       \
    }

INTERLACE_ERROR(ZeroNormVector);
INTERLACE_ERROR(GraphDetached);
INTERLACE_ERROR(NonFiniteValue);
INTERLACE_ERROR(InvalidConfig);
INTERLACE_ERROR(SequenceTooLong);
INTERLACE_ERROR(TokenOutOfRange);
INTERLACE_ERROR(ChecksumMismatch);
INTERLACE_ERROR(VersionMismatch);
INTERLACE_ERROR(EmptyCalibration);
INTERLACE_ERROR(EmptyResult);
INTERLACE_ERROR(InvalidRatio);
INTERLACE_ERROR(InsufficientTriplets);
INTERLACE_ERROR(InsufficientLayers);
INTERLACE_ERROR(WindowOutOfRange);
INTERLACE_ERROR(PlanModelMismatch);
INTERLACE_ERROR(AllMasked);
INTERLACE_ERROR(NonFiniteLoss);
INTERLACE_ERROR(SpecTooSmall);
INTERLACE_ERROR(ZeroBaseline);
INTERLACE_ERROR(ClockResolutionTooCoarse);
INTERLACE_ERROR(IoError);
INTERLACE_ERROR(SchemaError);

#undef INTERLACE_ERROR

//
// Hashing — FNV-1a 64, used for all content fingerprints.
//

class Fnv1a {
public:
    void update(const void* p, size_t n) {
        const auto* b = static_cast<const uint8_t*>(p);
        for (size_t i = 0; i < n; i++) {
            h_ ^= b[i];
            h_ *= 0x100000001b3ull;
        }
    }
    void update_u64(uint64_t v) { update(&v, sizeof(v)); }
    void update_i64(int64_t v) { update(&v, sizeof(v)); }
    void update_f64(double v) { update(&v, sizeof(v)); }
    void update_f64s(const std::vector<double>& v) { update(v.data(), v.size() * sizeof(double)); }
    void update_str(const std::string& s) {
        update_u64(s.size());
        update(s.data(), s.size());
    }
    uint64_t value() const { return h_; }
    std::string hex() const {
        char buf[17];
        snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h_));
        return std::string(buf);
    }

private:
    uint64_t h_ = 0xcbf29ce484222325ull;
};

// Monotonic wall clock in seconds, for timing measurements only — timing
// never feeds any serialized artifact that must be reproducible.
inline double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

//
// RNG — std::mt19937_64 for bits (engine output is pinned by the standard),
// with our own distributions on top so streams are identical across stdlibs.
//

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Mixes a seed with stream tags so independent substreams never collide.
inline uint64_t mix_seed(uint64_t seed, uint64_t tag0, uint64_t tag1 = 0) {
    uint64_t s = seed;
    uint64_t h = splitmix64(s);
    s ^= tag0 * 0x9e3779b97f4a7c15ull;
    h ^= splitmix64(s);
    s ^= tag1 * 0xc2b2ae3d27d4eb4full;
    h ^= splitmix64(s);
    return h;
}

class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t bits() { return eng_(); }

    // uniform in [0, 1)
    double uniform() { return (bits() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n), rejection sampled
    uint64_t bounded(uint64_t n) {
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v;
        do {
            v = bits();
        } while (v >= limit);
        return v % n;
    }

    // standard normal, Box-Muller with cached second value
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Fisher-Yates over [0, n)
    std::vector<int64_t> permutation(int64_t n) {
        std::vector<int64_t> idx(n);
        for (int64_t i = 0; i < n; i++) idx[i] = i;
        for (int64_t i = n - 1; i > 0; i--) {
            std::swap(idx[i], idx[static_cast<int64_t>(bounded(static_cast<uint64_t>(i + 1)))]);
        }
        return idx;
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Seeded uniform subset of size m from [0, n), returned in ascending order.
inline std::vector<int64_t> seeded_subset(int64_t n, int64_t m, uint64_t seed) {
    if (m > n) throw InvalidConfig("subset size " + std::to_string(m) + " exceeds population " + std::to_string(n));
    Rng rng(seed);
    std::vector<int64_t> idx = rng.permutation(n);
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    return idx;
}

//
// Compensated (Kahan) accumulation
//

class KahanSum {
public:
    void add(double x) {
        const double y = x - c_;
        const double t = s_ + y;
        c_ = (t - s_) - y;
        s_ = t;
    }
    double value() const { return s_; }

private:
    double s_ = 0.0;
    double c_ = 0.0;
};

//
// Small file helpers
//

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for read: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline Json read_json_file(const std::string& path) {
    try {
        return Json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError("invalid JSON in " + path + ": " + e.what());
    }
}

inline void write_json_file(const std::string& path, const Json& j) {
    write_file(path, j.dump(2) + "\n");
}

// Shortest round-trip representation, reused for CSV cells so text output
// is as deterministic as the JSON files.
inline std::string double_str(double v) { return Json(v).dump(); }

}  // namespace interlace
