#include "opsec/wire.hpp"

#include <sodium.h>

#include <algorithm>
#include <cstring>

#include "opsec/error.hpp"

namespace opsec::wire {

std::optional<MessageType> message_type_from_code(uint16_t code) {
    if (code >= 0x0001 && code <= 0x0006) return static_cast<MessageType>(code);
    return std::nullopt;
}

const char* message_type_name(MessageType t) {
    switch (t) {
    case MessageType::OpsecHello: return "OpsecHello";
    case MessageType::ServDisc: return "ServDisc";
    case MessageType::ObHello: return "ObHello";
    case MessageType::ServAnn: return "ServAnn";
    case MessageType::ServReq: return "ServReq";
    case MessageType::ObReady: return "ObReady";
    }
    return "?";
}

Bytes encode_message(const OpsecMessage& msg) {
    if (msg.payload.size() > MAX_PAYLOAD)
        throw OpsecError(Errc::PayloadTooLong, std::to_string(msg.payload.size()) + " octets");
    Bytes out;
    out.reserve(msg.payload.size() + FRAMING_LEN);
    append(out, START_TAG);
    put_u16(out, static_cast<uint16_t>(msg.msg_type));
    put_u32(out, msg.box_id);
    put_u16(out, static_cast<uint16_t>(msg.payload.size()));
    append(out, msg.payload);
    append(out, END_TAG);
    return out;
}

Bytes encode_messages(const std::vector<OpsecMessage>& msgs) {
    Bytes out;
    for (const auto& m : msgs) append(out, encode_message(m));
    return out;
}

std::vector<OpsecMessage> decode_messages(ByteView h) {
    std::vector<OpsecMessage> out;
    const size_t n = h.size();
    size_t i = 0;
    while (i + FRAMING_LEN <= n) {
        if (std::memcmp(h.data() + i, START_TAG.data(), 4) != 0) {
            ++i;
            continue;
        }
        const uint8_t* p = h.data() + i;
        auto type = message_type_from_code(get_u16(p + 4));
        size_t len = get_u16(p + 10);
        size_t end = i + HEADER_LEN + len;
        if (!type || end + 4 > n || std::memcmp(h.data() + end, END_TAG.data(), 4) != 0) {
            ++i;
            continue;
        }
        OpsecMessage m;
        m.msg_type = *type;
        m.box_id = get_u32(p + 6);
        m.payload.assign(p + HEADER_LEN, p + HEADER_LEN + len);
        out.push_back(std::move(m));
        i = end + 4;
    }
    return out;
}

std::string base64url_encode(ByteView data) {
    const int variant = sodium_base64_VARIANT_URLSAFE_NO_PADDING;
    std::string out(sodium_base64_encoded_len(data.size(), variant), '\0');
    sodium_bin2base64(out.data(), out.size(), data.data(), data.size(), variant);
    out.resize(std::strlen(out.c_str()));
    return out;
}

std::optional<Bytes> base64url_decode(std::string_view text) {
    Bytes out(text.size() * 3 / 4 + 3);
    size_t len = 0;
    const char* end = nullptr;
    if (sodium_base642bin(out.data(), out.size(), text.data(), text.size(), nullptr, &len, &end,
                          sodium_base64_VARIANT_URLSAFE_NO_PADDING) != 0)
        return std::nullopt;
    if (end != text.data() + text.size()) return std::nullopt;
    out.resize(len);
    return out;
}

static bool is_b64url(char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-' ||
           c == '_';
}

static std::string path_marker() { return "/" + std::string(OPSEC_PATH_PREFIX) + "/"; }

std::string embed_in_path(const std::vector<OpsecMessage>& messages, bool /*safe_encoding*/) {
    return path_marker() + base64url_encode(encode_messages(messages));
}

std::vector<OpsecMessage> extract_from_path(std::string_view path) {
    const std::string marker = path_marker();
    size_t pos = path.find(marker);
    if (pos == std::string_view::npos) return {};
    size_t start = pos + marker.size();
    size_t stop = start;
    while (stop < path.size() && is_b64url(path[stop])) ++stop;
    auto bin = base64url_decode(path.substr(start, stop - start));
    if (!bin) return {};
    return decode_messages(*bin);
}

OpsecEnvelope make_envelope(std::vector<OpsecMessage> messages) {
    OpsecEnvelope env;
    env.origin_path = embed_in_path(messages);
    env.messages = std::move(messages);
    return env;
}

OpsecEnvelope append_to_envelope(const OpsecEnvelope& env, const OpsecMessage& msg,
                                 size_t path_budget) {
    OpsecEnvelope out;
    out.messages = env.messages;
    out.messages.push_back(msg);
    out.origin_path = embed_in_path(out.messages);
    if (out.origin_path.size() > path_budget)
        throw OpsecError(Errc::PathBudgetExceeded, std::to_string(out.origin_path.size()) + " > " +
                                                       std::to_string(path_budget));
    return out;
}

} // namespace opsec::wire
