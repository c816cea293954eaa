#include "opsec/bytes.hpp"

#include "opsec/error.hpp"

namespace opsec {

std::string to_hex(ByteView v) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(v.size() * 2);
    for (uint8_t b : v) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 0xf]);
    }
    return s;
}

void Reader::need(size_t n) const {
    if (v_.size() - pos_ < n) throw OpsecError(Errc::InvalidArgument, "truncated field");
}

uint8_t Reader::u8() {
    need(1);
    return v_[pos_++];
}

uint16_t Reader::u16() {
    need(2);
    uint16_t v = get_u16(v_.data() + pos_);
    pos_ += 2;
    return v;
}

uint32_t Reader::u32() {
    need(4);
    uint32_t v = get_u32(v_.data() + pos_);
    pos_ += 4;
    return v;
}

uint64_t Reader::u64() {
    need(8);
    uint64_t v = get_u64(v_.data() + pos_);
    pos_ += 8;
    return v;
}

Bytes Reader::take(size_t n) {
    need(n);
    Bytes out(v_.begin() + pos_, v_.begin() + pos_ + n);
    pos_ += n;
    return out;
}

Bytes Reader::field() { return take(u16()); }

} // namespace opsec
