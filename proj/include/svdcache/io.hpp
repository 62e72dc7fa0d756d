// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary buffers, CRC-32 checksums and atomic file writes
// shared by the basis and trajectory containers.

#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace svdcache {

struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// File is not the expected container (bad magic, truncation, garbage fields).
struct format_error : io_error {
    using io_error::io_error;
};
// Container version is not supported by this build.
struct version_error : io_error {
    using io_error::io_error;
};
// Payload bytes do not match the stored CRC (or are missing entirely).
struct checksum_error : io_error {
    using io_error::io_error;
};
// Raised by ByteReader when the buffer runs out; loaders reclassify it.
struct eof_error : io_error {
    using io_error::io_error;
};

// CRC-32 (IEEE 802.3, reflected, poly 0xEDB88320).
inline std::uint32_t crc32(const unsigned char* data, std::size_t len,
                           std::uint32_t seed = 0) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) {
                c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : (c >> 1);
            }
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = seed ^ 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) {
        c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
    }
    return c ^ 0xFFFFFFFFu;
}

inline std::uint32_t crc32(const std::vector<unsigned char>& data) {
    return crc32(data.data(), data.size());
}

class ByteWriter {
  public:
    void put_bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    void put_u32(std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
        put_bytes(b, 4);
    }
    void put_i32(std::int32_t v) { put_u32(static_cast<std::uint32_t>(v)); }
    void put_f64(double v) {
        std::uint64_t u;
        std::memcpy(&u, &v, 8);
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
        put_bytes(b, 8);
    }
    const std::vector<unsigned char>& bytes() const { return buf_; }

  private:
    std::vector<unsigned char> buf_;
};

class ByteReader {
  public:
    explicit ByteReader(std::vector<unsigned char> data) : buf_(std::move(data)) {}

    void get_bytes(void* p, std::size_t n) {
        if (pos_ + n > buf_.size()) throw eof_error("unexpected end of file");
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }
    std::uint32_t get_u32() {
        unsigned char b[4];
        get_bytes(b, 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }
    std::int32_t get_i32() { return static_cast<std::int32_t>(get_u32()); }
    double get_f64() {
        unsigned char b[8];
        get_bytes(b, 8);
        std::uint64_t u = 0;
        for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        double v;
        std::memcpy(&v, &u, 8);
        return v;
    }
    std::size_t pos() const { return pos_; }
    std::size_t size() const { return buf_.size(); }
    const std::vector<unsigned char>& bytes() const { return buf_; }

  private:
    std::vector<unsigned char> buf_;
    std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path.string());
    std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return data;
}

// Write-temp-then-rename so concurrent readers never observe a partial file.
inline void atomic_write_file(const std::filesystem::path& path,
                              const void* data, std::size_t size) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::random_device rd;
    fs::path tmp = path;
    tmp += ".tmp" + std::to_string(rd());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw io_error("cannot open " + tmp.string() + " for writing");
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
        if (!out) throw io_error("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline void atomic_write_file(const std::filesystem::path& path,
                              const std::vector<unsigned char>& data) {
    atomic_write_file(path, data.data(), data.size());
}

inline void atomic_write_file(const std::filesystem::path& path, const std::string& text) {
    atomic_write_file(path, text.data(), text.size());
}

}  // namespace svdcache
