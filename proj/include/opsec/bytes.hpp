#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace opsec {

using Bytes = std::vector<uint8_t>;
using ByteView = std::span<const uint8_t>;

inline void put_u16(Bytes& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

inline void put_u32(Bytes& out, uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<uint8_t>(v >> s));
}

inline void put_u64(Bytes& out, uint64_t v) {
    for (int s = 56; s >= 0; s -= 8) out.push_back(static_cast<uint8_t>(v >> s));
}

inline uint16_t get_u16(const uint8_t* p) {
    return static_cast<uint16_t>((p[0] << 8) | p[1]);
}

inline uint32_t get_u32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | p[3];
}

inline uint64_t get_u64(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | p[i];
    return v;
}

inline void append(Bytes& out, ByteView v) { out.insert(out.end(), v.begin(), v.end()); }

// length-prefixed (u16) field
inline void put_field(Bytes& out, ByteView v) {
    put_u16(out, static_cast<uint16_t>(v.size()));
    append(out, v);
}

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

std::string to_hex(ByteView v);

// Sequential big-endian reader; throws OpsecError(InvalidArgument) on underrun.
class Reader {
public:
    explicit Reader(ByteView v) : v_(v) {}

    uint8_t u8();
    uint16_t u16();
    uint32_t u32();
    uint64_t u64();
    Bytes take(size_t n);
    Bytes field();
    bool done() const { return pos_ == v_.size(); }
    size_t remaining() const { return v_.size() - pos_; }

private:
    void need(size_t n) const;
    ByteView v_;
    size_t pos_ = 0;
};

} // namespace opsec
