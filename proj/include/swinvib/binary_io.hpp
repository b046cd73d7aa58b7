#pragma once
// Little-endian primitives and atomic file replacement used by the SVF1/SVQ1/SVM1
// readers and writers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "swinvib/error.hpp"

namespace swinvib::io {

class ByteWriter {
public:
    void bytes(std::string_view raw) { buf_.insert(buf_.end(), raw.begin(), raw.end()); }

    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }

    template <typename UInt>
    void uint(UInt v) {
        for (std::size_t i = 0; i < sizeof(UInt); ++i) {
            buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
        }
    }

    void u32(std::uint32_t v) { uint(v); }
    void u64(std::uint64_t v) { uint(v); }
    void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }

    const std::vector<char>& data() const noexcept { return buf_; }

private:
    std::vector<char> buf_;
};

/// Bounds-checked cursor over a byte buffer. Running past the end throws a
/// FormatError carrying the field name supplied by the caller.
class ByteReader {
public:
    explicit ByteReader(std::span<const char> data) : data_(data) {}

    std::size_t remaining() const noexcept { return data_.size() - pos_; }
    std::size_t position() const noexcept { return pos_; }

    std::string bytes(std::size_t n, const std::string& field) {
        need(n, field);
        std::string out(data_.data() + pos_, n);
        pos_ += n;
        return out;
    }

    std::uint8_t u8(const std::string& field) {
        need(1, field);
        return static_cast<std::uint8_t>(data_[pos_++]);
    }

    template <typename UInt>
    UInt uint(const std::string& field) {
        need(sizeof(UInt), field);
        UInt v = 0;
        for (std::size_t i = 0; i < sizeof(UInt); ++i) {
            v |= static_cast<UInt>(static_cast<std::uint8_t>(data_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(UInt);
        return v;
    }

    std::uint32_t u32(const std::string& field) { return uint<std::uint32_t>(field); }
    std::uint64_t u64(const std::string& field) { return uint<std::uint64_t>(field); }
    float f32(const std::string& field) { return std::bit_cast<float>(u32(field)); }
    double f64(const std::string& field) { return std::bit_cast<double>(u64(field)); }

private:
    void need(std::size_t n, const std::string& field) const {
        if (remaining() < n) {
            throw FormatError(field, "unexpected end of data while reading " + field);
        }
    }

    std::span<const char> data_;
    std::size_t pos_ = 0;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("path", "cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes to `<path>.tmp` and renames over `path`, so readers never observe a
/// partially written file.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const char> data) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw FormatError("path", "cannot open " + tmp.string() + " for writing");
        }
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        if (!out) {
            throw FormatError("path", "short write to " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
    write_file_atomic(path, std::span<const char>(text.data(), text.size()));
}

}  // namespace swinvib::io
