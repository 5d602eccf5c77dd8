#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpay {

using Bytes = std::vector<uint8_t>;
using Digest = std::array<uint8_t, 32>;

inline constexpr Digest kZeroDigest{};

// Field widths of the canonical wire layout. Message/block size metrics are
// computed from these, so they are fixed here and nowhere else.
namespace wire {
inline constexpr size_t kDigestBytes = 32;
inline constexpr size_t kSignatureBytes = 64;
inline constexpr size_t kCoinIdBytes = 8;
inline constexpr size_t kEntityIdBytes = 4;
inline constexpr size_t kTimestampBytes = 8;
inline constexpr size_t kAmountBytes = 8;
inline constexpr size_t kGpsBytes = 8;  // 2 x 4-byte coordinates
inline constexpr size_t kCountBytes = 2;
inline constexpr size_t kTagBytes = 1;
}  // namespace wire

std::string to_hex(const uint8_t* data, size_t n);
std::string to_hex(const Bytes& b);
std::string to_hex(const Digest& d);
Bytes from_hex(const std::string& hex);

Bytes str_bytes(const std::string& s);

// Big-endian serializer for the canonical layout.
class ByteWriter {
public:
    void u8(uint8_t v) { buf_.push_back(v); }
    void u16(uint16_t v);
    void u32(uint32_t v);
    void u64(uint64_t v);
    void f32(float v);
    void raw(const uint8_t* data, size_t n) { buf_.insert(buf_.end(), data, data + n); }
    void raw(const Bytes& b) { raw(b.data(), b.size()); }
    void digest(const Digest& d) { raw(d.data(), d.size()); }
    void str(const std::string& s);  // u16 length prefix

    const Bytes& bytes() const { return buf_; }
    Bytes take() { return std::move(buf_); }
    size_t size() const { return buf_.size(); }

private:
    Bytes buf_;
};

class ByteReader {
public:
    explicit ByteReader(const Bytes& b) : data_(b.data()), size_(b.size()) {}
    ByteReader(const uint8_t* data, size_t n) : data_(data), size_(n) {}

    uint8_t u8();
    uint16_t u16();
    uint32_t u32();
    uint64_t u64();
    float f32();
    void raw(uint8_t* out, size_t n);
    Digest digest();
    std::string str();

    size_t remaining() const { return size_ - pos_; }
    bool done() const { return pos_ == size_; }

private:
    void need(size_t n) const {
        if (pos_ + n > size_) throw std::runtime_error("byte reader underrun");
    }
    const uint8_t* data_;
    size_t size_;
    size_t pos_ = 0;
};

}  // namespace mpay
