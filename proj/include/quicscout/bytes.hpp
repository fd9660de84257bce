#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace quicscout {

using Bytes = std::vector<uint8_t>;
using ByteView = std::span<const uint8_t>;

// Thrown by all wire-format parsers.  `offset` is the byte position (within the
// buffer handed to the parser) at which the problem was detected.
class ParseError : public std::runtime_error {
public:
    ParseError(std::string msg, size_t offset)
        : std::runtime_error(msg + " (at offset " + std::to_string(offset) + ")"),
          offset_(offset) {}
    size_t offset() const { return offset_; }

private:
    size_t offset_;
};

// Bounds-checked forward cursor over a byte buffer.
class ByteReader {
public:
    explicit ByteReader(ByteView data) : data_(data) {}

    size_t pos() const { return pos_; }
    size_t remaining() const { return data_.size() - pos_; }
    bool empty() const { return remaining() == 0; }

    uint8_t peek_u8() const {
        require(1, "unexpected end of input");
        return data_[pos_];
    }

    uint8_t read_u8() {
        require(1, "unexpected end of input");
        return data_[pos_++];
    }

    uint16_t read_u16() { return static_cast<uint16_t>(read_be(2)); }
    uint32_t read_u24() { return static_cast<uint32_t>(read_be(3)); }
    uint32_t read_u32() { return static_cast<uint32_t>(read_be(4)); }
    uint64_t read_u64() { return read_be(8); }

    ByteView read_view(size_t n) {
        require(n, "unexpected end of input");
        ByteView out = data_.subspan(pos_, n);
        pos_ += n;
        return out;
    }

    Bytes read_bytes(size_t n) {
        ByteView v = read_view(n);
        return Bytes(v.begin(), v.end());
    }

    void skip(size_t n) { (void)read_view(n); }

    ByteView rest() const { return data_.subspan(pos_); }

    [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, pos_); }

    void require(size_t n, const char* msg) const {
        if (remaining() < n) throw ParseError(msg, pos_);
    }

private:
    uint64_t read_be(size_t n) {
        require(n, "unexpected end of input");
        uint64_t v = 0;
        for (size_t i = 0; i < n; i++) v = (v << 8) | data_[pos_ + i];
        pos_ += n;
        return v;
    }

    ByteView data_;
    size_t pos_ = 0;
};

// Append-only big-endian byte builder.
class ByteWriter {
public:
    void u8(uint8_t v) { out_.push_back(v); }
    void u16(uint16_t v) { be(v, 2); }
    void u24(uint32_t v) { be(v, 3); }
    void u32(uint32_t v) { be(v, 4); }
    void u64(uint64_t v) { be(v, 8); }
    void bytes(ByteView v) { out_.insert(out_.end(), v.begin(), v.end()); }
    void bytes(const Bytes& v) { out_.insert(out_.end(), v.begin(), v.end()); }
    void zeros(size_t n) { out_.insert(out_.end(), n, 0); }

    size_t size() const { return out_.size(); }
    uint8_t& operator[](size_t i) { return out_[i]; }

    // Patch a previously written big-endian field in place.
    void patch_u24(size_t at, uint32_t v) {
        out_[at] = static_cast<uint8_t>(v >> 16);
        out_[at + 1] = static_cast<uint8_t>(v >> 8);
        out_[at + 2] = static_cast<uint8_t>(v);
    }
    void patch_u16(size_t at, uint16_t v) {
        out_[at] = static_cast<uint8_t>(v >> 8);
        out_[at + 1] = static_cast<uint8_t>(v);
    }

    Bytes take() { return std::move(out_); }
    const Bytes& view() const { return out_; }

private:
    void be(uint64_t v, size_t n) {
        for (size_t i = n; i-- > 0;) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    Bytes out_;
};

inline std::string to_hex(ByteView data) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (uint8_t b : data) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xf]);
    }
    return out;
}

inline Bytes from_hex(std::string_view hex) {
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    if (hex.size() % 2 != 0) throw std::invalid_argument("odd-length hex string");
    Bytes out;
    out.reserve(hex.size() / 2);
    for (size_t i = 0; i < hex.size(); i += 2) {
        int hi = nibble(hex[i]), lo = nibble(hex[i + 1]);
        if (hi < 0 || lo < 0) throw std::invalid_argument("invalid hex digit");
        out.push_back(static_cast<uint8_t>(hi << 4 | lo));
    }
    return out;
}

inline bool views_equal(ByteView a, ByteView b) {
    return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size()) == 0);
}

}  // namespace quicscout
