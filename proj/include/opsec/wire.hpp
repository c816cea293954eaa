#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "opsec/bytes.hpp"

namespace opsec::wire {

inline constexpr std::array<uint8_t, 4> START_TAG{0x4F, 0x50, 0x53, 0x31}; // "OPS1"
inline constexpr std::array<uint8_t, 4> END_TAG{0x31, 0x53, 0x50, 0x4F};   // "1SPO"
inline constexpr size_t HEADER_LEN = 4 + 2 + 4 + 2;
inline constexpr size_t FRAMING_LEN = HEADER_LEN + 4;
inline constexpr size_t MAX_PAYLOAD = 65535;
inline constexpr size_t DEFAULT_PATH_BUDGET = 4096;
inline constexpr std::string_view OPSEC_PATH_PREFIX = ".opsec";

enum class MessageType : uint16_t {
    OpsecHello = 0x0001,
    ServDisc = 0x0002,
    ObHello = 0x0003,
    ServAnn = 0x0004,
    ServReq = 0x0005,
    ObReady = 0x0006,
};

std::optional<MessageType> message_type_from_code(uint16_t code);
const char* message_type_name(MessageType t);

struct OpsecMessage {
    MessageType msg_type = MessageType::OpsecHello;
    uint32_t box_id = 0;
    Bytes payload;

    bool operator==(const OpsecMessage&) const = default;
};

struct OpsecEnvelope {
    std::vector<OpsecMessage> messages;
    std::string origin_path;
};

Bytes encode_message(const OpsecMessage& msg);
Bytes encode_messages(const std::vector<OpsecMessage>& msgs);
std::vector<OpsecMessage> decode_messages(ByteView haystack);

std::string base64url_encode(ByteView data);
std::optional<Bytes> base64url_decode(std::string_view text);

// safe_encoding selects the URL-safe alphabet; it is the only supported mode.
std::string embed_in_path(const std::vector<OpsecMessage>& messages, bool safe_encoding = true);
std::vector<OpsecMessage> extract_from_path(std::string_view path);

OpsecEnvelope make_envelope(std::vector<OpsecMessage> messages);
OpsecEnvelope append_to_envelope(const OpsecEnvelope& env, const OpsecMessage& msg,
                                 size_t path_budget = DEFAULT_PATH_BUDGET);

} // namespace opsec::wire
