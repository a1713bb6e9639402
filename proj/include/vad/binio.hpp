#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vad/errors.hpp"

namespace vad {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts need byte swaps");

// Append-style little-endian writer over a byte vector.
class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void f32(float v) { raw(&v, 4); }
    void f64(double v) { raw(&v, 8); }
    void bytes(const void* p, std::size_t n) { raw(p, n); }
    void magic(const char* tag) { raw(tag, std::strlen(tag)); }

    void f32_array(const float* p, std::size_t n) { raw(p, n * 4); }
    void f32_array(const double* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) f32(static_cast<float>(p[i]));
    }

    const std::vector<std::uint8_t>& data() const { return buf_; }

private:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
    explicit ByteReader(const std::vector<std::uint8_t>& v) : ByteReader(v.data(), v.size()) {}

    std::uint8_t u8() { return take(1)[0]; }
    std::uint32_t u32() { std::uint32_t v; std::memcpy(&v, take(4), 4); return v; }
    std::uint64_t u64() { std::uint64_t v; std::memcpy(&v, take(8), 8); return v; }
    float f32() { float v; std::memcpy(&v, take(4), 4); return v; }
    double f64() { double v; std::memcpy(&v, take(8), 8); return v; }

    void bytes(void* out, std::size_t n) { std::memcpy(out, take(n), n); }

    void expect_magic(const char* tag, const std::string& what) {
        std::size_t n = std::strlen(tag);
        if (remaining() < n || std::memcmp(data_ + pos_, tag, n) != 0)
            raise(ErrorKind::Format, what + ": bad magic (expected " + tag + ")");
        pos_ += n;
    }

    void f32_into(double* out, std::size_t n) {
        const std::uint8_t* p = take(n * 4);
        for (std::size_t i = 0; i < n; ++i) {
            float v;
            std::memcpy(&v, p + 4 * i, 4);
            out[i] = static_cast<double>(v);
        }
    }
    void f32_into(float* out, std::size_t n) { bytes(out, n * 4); }

    std::size_t remaining() const { return size_ - pos_; }
    bool at_end() const { return pos_ == size_; }

private:
    const std::uint8_t* take(std::size_t n) {
        if (remaining() < n) raise(ErrorKind::Format, "unexpected end of data");
        const std::uint8_t* p = data_ + pos_;
        pos_ += n;
        return p;
    }
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) raise(ErrorKind::NotFound, "cannot open " + path.string());
    f.seekg(0, std::ios::end);
    std::streamoff len = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(len));
    if (len > 0) f.read(reinterpret_cast<char*>(buf.data()), len);
    if (!f) raise(ErrorKind::Io, "read failed: " + path.string());
    return buf;
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& data) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) raise(ErrorKind::Io, "cannot create " + path.string());
    f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!f) raise(ErrorKind::Io, "write failed: " + path.string());
}

inline void write_file_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) raise(ErrorKind::Io, "cannot create " + path.string());
    f << text;
    if (!f) raise(ErrorKind::Io, "write failed: " + path.string());
}

} // namespace vad
