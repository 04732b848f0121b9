#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "bbuda/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "bbuda file formats and wire protocol assume a little-endian host");

namespace bbuda {

// ---------------------------------------------------------------------------
// CRC32 (IEEE, polynomial 0xEDB88320) — used by checkpoint/dataset trailers
// and the teacher wire protocol.
// ---------------------------------------------------------------------------

namespace detail {
inline const std::array<uint32_t, 256>& crc32_table() {
    static const std::array<uint32_t, 256> table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k)
                c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : (c >> 1);
            t[i] = c;
        }
        return t;
    }();
    return table;
}
}  // namespace detail

inline uint32_t crc32_update(uint32_t crc, const void* bytes, size_t n) {
    const auto& table = detail::crc32_table();
    const auto* p = static_cast<const unsigned char*>(bytes);
    crc ^= 0xFFFFFFFFu;
    for (size_t i = 0; i < n; ++i) crc = table[(crc ^ p[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

inline uint32_t crc32(const void* bytes, size_t n) { return crc32_update(0, bytes, n); }

inline uint32_t crc32(const std::vector<uint8_t>& bytes) {
    return crc32(bytes.data(), bytes.size());
}

// FNV-1a 64-bit, used for dataset content hashes in run manifests.
inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

// splitmix64 step; also the basis for combining seeds deterministically.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) { return splitmix64(splitmix64(a) ^ (b + 0x9E3779B97F4A7C15ull)); }

// ---------------------------------------------------------------------------
// Little-endian buffer serialization
// ---------------------------------------------------------------------------

class ByteWriter {
 public:
    std::vector<uint8_t>& bytes() { return buf_; }
    const std::vector<uint8_t>& bytes() const { return buf_; }

    void u8(uint8_t v) { buf_.push_back(v); }
    void u16(uint16_t v) { raw(&v, 2); }
    void u32(uint32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
    void f32(float v) { raw(&v, 4); }
    void raw(const void* p, size_t n) {
        const auto* b = static_cast<const uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void str(const std::string& s) {
        if (s.size() > 0xFFFF) throw value_error("string too long to serialize: " + std::to_string(s.size()));
        u16(static_cast<uint16_t>(s.size()));
        raw(s.data(), s.size());
    }
    void f32_span(const float* p, size_t n) { raw(p, n * sizeof(float)); }

 private:
    std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
    ByteReader(const uint8_t* data, size_t n) : p_(data), end_(data + n) {}
    explicit ByteReader(const std::vector<uint8_t>& buf) : ByteReader(buf.data(), buf.size()) {}

    size_t remaining() const { return static_cast<size_t>(end_ - p_); }

    uint8_t u8() { return take(1)[0]; }
    uint16_t u16() { uint16_t v; std::memcpy(&v, take(2), 2); return v; }
    uint32_t u32() { uint32_t v; std::memcpy(&v, take(4), 4); return v; }
    uint64_t u64() { uint64_t v; std::memcpy(&v, take(8), 8); return v; }
    float f32() { float v; std::memcpy(&v, take(4), 4); return v; }
    std::string str() {
        size_t n = u16();
        const uint8_t* p = take(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }
    void f32_span(float* out, size_t n) { std::memcpy(out, take(n * sizeof(float)), n * sizeof(float)); }

 private:
    const uint8_t* take(size_t n) {
        if (remaining() < n) throw format_error("truncated record: wanted " + std::to_string(n) +
                                                " bytes, have " + std::to_string(remaining()));
        const uint8_t* p = p_;
        p_ += n;
        return p;
    }
    const uint8_t* p_;
    const uint8_t* end_;
};

// ---------------------------------------------------------------------------
// Whole-file IO
// ---------------------------------------------------------------------------

inline std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open file: " + path);
    f.seekg(0, std::ios::end);
    auto n = static_cast<size_t>(f.tellg());
    f.seekg(0);
    std::vector<uint8_t> buf(n);
    if (n && !f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n)))
        throw io_error("cannot read file: " + path);
    return buf;
}

inline void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open file for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw io_error("write failed: " + path);
}

inline std::string read_file_text(const std::string& path) {
    auto b = read_file_bytes(path);
    return std::string(b.begin(), b.end());
}

inline void write_file_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw io_error("cannot open file for writing: " + path);
    f << text;
    if (!f) throw io_error("write failed: " + path);
}

}  // namespace bbuda
