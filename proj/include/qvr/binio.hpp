#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "qvr/errors.hpp"

namespace qvr {

// Little-endian primitives for the on-disk formats. Values are serialized
// byte-by-byte so the files read back identically on any host.

inline void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
    write_u32(out, static_cast<std::uint32_t>(v));
    write_u32(out, static_cast<std::uint32_t>(v >> 32));
}

inline void write_i32(std::ostream& out, std::int32_t v) {
    write_u32(out, static_cast<std::uint32_t>(v));
}

inline void write_f32(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(out, bits);
}

inline void write_f64(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(out, bits);
}

inline std::uint32_t read_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) {
        throw IoError(std::string("unexpected end of file while reading ") + what);
    }
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t read_u64(std::istream& in, const char* what) {
    const std::uint64_t lo = read_u32(in, what);
    const std::uint64_t hi = read_u32(in, what);
    return lo | (hi << 32);
}

inline std::int32_t read_i32(std::istream& in, const char* what) {
    return static_cast<std::int32_t>(read_u32(in, what));
}

inline float read_f32(std::istream& in, const char* what) {
    const std::uint32_t bits = read_u32(in, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline double read_f64(std::istream& in, const char* what) {
    const std::uint64_t bits = read_u64(in, what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline void write_magic(std::ostream& out, const char magic[4]) { out.write(magic, 4); }

inline void expect_magic(std::istream& in, const char magic[4], const char* format_name) {
    char got[4];
    in.read(got, 4);
    if (in.gcount() != 4) {
        throw IoError(std::string("unexpected end of file while reading ") + format_name +
                      " magic");
    }
    if (std::memcmp(got, magic, 4) != 0) {
        throw FormatError(std::string("not a ") + format_name + " file (bad magic bytes)");
    }
}

inline void expect_version(std::istream& in, std::uint32_t expected, const char* format_name) {
    const std::uint32_t v = read_u32(in, "version");
    if (v != expected) {
        throw FormatError(std::string(format_name) + " version " + std::to_string(v) +
                          " unsupported (expected " + std::to_string(expected) + ")");
    }
}

// FNV-1a, used to fingerprint payloads so an index can tell which model
// snapshot it was built from.
class Fnv1a {
  public:
    void update(const void* data, std::size_t n) {
        const unsigned char* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            hash_ ^= p[i];
            hash_ *= 0x100000001b3ULL;
        }
    }
    void update_f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        unsigned char b[4] = {static_cast<unsigned char>(bits),
                              static_cast<unsigned char>(bits >> 8),
                              static_cast<unsigned char>(bits >> 16),
                              static_cast<unsigned char>(bits >> 24)};
        update(b, 4);
    }
    std::uint64_t digest() const { return hash_; }

  private:
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

}  // namespace qvr
