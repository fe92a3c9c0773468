#pragma once

// Little-endian byte serialization, independent of host byte order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "amc/error.hpp"

namespace amc::io {

class ByteWriter {
   public:
    void put_u8(std::uint8_t v) { buf_.push_back(v); }
    void put_u16(std::uint16_t v) { put_le(v, 2); }
    void put_i16(std::int16_t v) { put_le(static_cast<std::uint16_t>(v), 2); }
    void put_u32(std::uint32_t v) { put_le(v, 4); }
    void put_u64(std::uint64_t v) { put_le(v, 8); }
    void put_f32(float v) { put_le(std::bit_cast<std::uint32_t>(v), 4); }
    void put_f64(double v) { put_le(std::bit_cast<std::uint64_t>(v), 8); }
    void put_bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void put_string(std::string_view s) {
        put_u32(static_cast<std::uint32_t>(s.size()));
        put_bytes(s);
    }

    const std::vector<std::uint8_t>& bytes() const { return buf_; }

   private:
    void put_le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    std::vector<std::uint8_t> buf_;
};

class ByteReader {
   public:
    ByteReader(const std::vector<std::uint8_t>& buf, std::string source) : buf_(buf), source_(std::move(source)) {}

    std::uint8_t get_u8() { return static_cast<std::uint8_t>(get_le(1)); }
    std::uint16_t get_u16() { return static_cast<std::uint16_t>(get_le(2)); }
    std::int16_t get_i16() { return static_cast<std::int16_t>(get_le(2)); }
    std::uint32_t get_u32() { return static_cast<std::uint32_t>(get_le(4)); }
    std::uint64_t get_u64() { return get_le(8); }
    float get_f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(get_le(4))); }
    double get_f64() { return std::bit_cast<double>(get_le(8)); }

    std::string get_bytes(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::string get_string() { return get_bytes(get_u32()); }

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return buf_.size() - pos_; }

    void need(std::size_t n) const {
        if (remaining() < n) {
            fail(ErrorKind::io, source_ + ": truncated at byte " + std::to_string(pos_) + " (needed " +
                                    std::to_string(n) + " more)");
        }
    }

   private:
    std::uint64_t get_le(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    const std::vector<std::uint8_t>& buf_;
    std::string source_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::io, "cannot open " + path + " for reading");
    }
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        fail(ErrorKind::io, "cannot open " + path + " for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        fail(ErrorKind::io, "write to " + path + " failed");
    }
}

inline void write_text(const std::string& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        fail(ErrorKind::io, "cannot open " + path + " for writing");
    }
    out << text;
    if (!out) {
        fail(ErrorKind::io, "write to " + path + " failed");
    }
}

}  // namespace amc::io
