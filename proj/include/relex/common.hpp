#pragma once

// Shared plumbing: error types, deterministic RNG, little-endian binary IO,
// and the FNV-1a content digest used by pipeline manifests.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace relex {

class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// File exists but its bytes do not form the expected format.
class FormatError : public Error {
  public:
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Format recognised but the version is not supported.
class VersionError : public Error {
  public:
    explicit VersionError(const std::string& msg) : Error(msg) {}
};

// Dimensions disagree (tensor shapes, matrix products, vocab sizes).
class ShapeError : public Error {
  public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf surfaced during numerical work.
class NumericError : public Error {
  public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// A required input artifact is missing or stale.
class DependencyError : public Error {
  public:
    explicit DependencyError(const std::string& msg) : Error(msg) {}
};

// Bad command line or configuration, distinct from runtime failures.
class UsageError : public Error {
  public:
    explicit UsageError(const std::string& msg) : Error(msg) {}
};

// ---------------------------------------------------------------------------
// Deterministic RNG.
//
// mt19937_64 is pinned by the standard, but the std distributions are not,
// so uniform/normal draws are spelled out here. Same seed, same stream,
// on any platform.

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {
        // splitmix64 warmup decorrelates small seeds
        for (int i = 0; i < 4; ++i) next_u64();
    }

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) {
        // rejection sampling keeps the draw unbiased
        std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // standard normal via Box-Muller, one cached spare
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// ---------------------------------------------------------------------------
// FNV-1a 64-bit. Used as the manifest content digest (integrity checking,
// not cryptography) and for per-stage seed derivation.

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

// Every stage draws randomness from seed ^ hash(stage name), so rerunning a
// single stage reproduces the full run's stream for that stage.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stage) {
    return master ^ fnv1a64(stage);
}

inline std::string digest_hex(std::uint64_t d) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(d));
    return std::string(buf);
}

inline std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file for digest: " + path);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[65536];
    while (in) {
        in.read(buf, sizeof(buf));
        std::streamsize got = in.gcount();
        if (got > 0) h = fnv1a64(buf, static_cast<std::size_t>(got), h);
    }
    return digest_hex(h);
}

// ---------------------------------------------------------------------------
// Little-endian binary IO. Explicit byte order keeps the file formats
// identical across hosts.

inline void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline bool read_u32(std::istream& in, std::uint32_t& v) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
    v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
        (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    return true;
}

inline void write_f32(std::ostream& out, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    write_u32(out, v);
}

inline bool read_f32(std::istream& in, float& f) {
    std::uint32_t v;
    if (!read_u32(in, v)) return false;
    std::memcpy(&f, &v, 4);
    return true;
}

inline std::uint32_t read_u32_strict(std::istream& in, const char* what) {
    std::uint32_t v;
    if (!read_u32(in, v)) throw FormatError(std::string("truncated ") + what);
    return v;
}

inline float read_f32_strict(std::istream& in, const char* what) {
    float f;
    if (!read_f32(in, f)) throw FormatError(std::string("truncated ") + what);
    return f;
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::string& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write file: " + path);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

}  // namespace relex
