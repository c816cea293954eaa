#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "opsec/bytes.hpp"
#include "opsec/keys.hpp"
#include "opsec/wire.hpp"

// Payload schemas carried inside the six wire message types, plus the
// sealed data and alert records of the per-hop channels.
namespace opsec::protocol {

using SfId = keys::Digest;
using SessionTag = std::array<uint8_t, 8>;

enum class Dir : uint8_t { Up = 0, Down = 1 };

SfId sf_id_from_name(std::string_view name);
keys::Digest announce_hash(const SfId& id);
SessionTag session_tag_for(const keys::Nonce& client_nonce);

struct OpsecHello {
    Bytes client_public;
    keys::Nonce client_nonce{};
    Bytes encode() const;
    static std::optional<OpsecHello> decode(ByteView p);
};

struct DiscEntry {
    Dir dir = Dir::Up;
    SfId sf{};
    bool operator==(const DiscEntry&) const = default;
};

struct ServDisc {
    std::vector<DiscEntry> entries;
    Bytes encode() const;
    static std::optional<ServDisc> decode(ByteView p);
};

struct ObHello {
    Bytes box_public;
    keys::Nonce box_nonce{};
    Bytes quote;  // serialized AttestationQuote
    Bytes encode() const;
    static std::optional<ObHello> decode(ByteView p);
};

enum class Phase : uint8_t { Request = 0, Response = 1 };

struct ServAnn {
    Phase phase = Phase::Request;
    keys::Digest servdisc_digest{};
    std::vector<keys::Digest> hashes;
    Bytes signature;  // box signature over the fields above
    Bytes signed_body(uint32_t box_id) const;
    Bytes encode() const;
    static std::optional<ServAnn> decode(ByteView p);
};

struct Assignment {
    Dir dir = Dir::Up;
    SfId sf{};
    uint32_t box_id = 0;
    bool operator==(const Assignment&) const = default;
};

struct Grant {
    uint32_t box_id = 0;
    Bytes sealed;
};

struct ServReq {
    SessionTag tag{};
    std::vector<Assignment> assignments;
    std::vector<Grant> grants;
    Bytes encode() const;
    static std::optional<ServReq> decode(ByteView p);
};

namespace grant_flags {
inline constexpr uint8_t UP_MEMBER = 0x01;
inline constexpr uint8_t DOWN_MEMBER = 0x02;
inline constexpr uint8_t UP_LAST = 0x04;
inline constexpr uint8_t DOWN_FIRST = 0x08;
} // namespace grant_flags

// Plaintext of a sealed grant, readable only by the addressed box.
struct GrantBody {
    Bytes master_secret;
    uint8_t flags = 0;
    Bytes up_egress_key;    // key_up of the next upstream box, empty when last
    Bytes down_ingress_key; // key_down of the previous downstream box, empty when first
    Bytes content_key;      // end-to-end key for TLS-like origins at the chain ends
    Bytes encode() const;
    static std::optional<GrantBody> decode(ByteView p);
};

struct ObReady {
    Bytes signature;
    Bytes encode() const;
    static std::optional<ObReady> decode(ByteView p);
};

inline constexpr std::array<uint8_t, 4> DATA_MAGIC{'O', 'P', 'S', 'R'};
inline constexpr std::array<uint8_t, 4> ALERT_MAGIC{'O', 'P', 'S', 'A'};
inline constexpr uint64_t ALERT_COUNTER_BASE = uint64_t(1) << 63;

struct DataRecord {
    SessionTag tag{};
    uint64_t counter = 0;
    Bytes ciphertext;
    Bytes encode() const;
    static std::optional<DataRecord> decode(ByteView p);
};

bool is_data_record(ByteView p);

enum class VerdictKind : uint8_t { Pass = 0, Alert = 1, Terminate = 2 };

struct AlertBody {
    VerdictKind kind = VerdictKind::Alert;
    SfId sf{};
    std::string reason;
    Bytes encode() const;
    static std::optional<AlertBody> decode(ByteView p);
};

struct AlertRecord {
    SessionTag tag{};
    uint32_t box_id = 0;
    uint64_t counter = 0;
    Bytes ciphertext;
    Bytes encode() const;
    static std::optional<AlertRecord> decode(ByteView p);
};

bool is_alert_record(ByteView p);

// Finds the first message of a type (and box id, when given).
const wire::OpsecMessage* find_message(const std::vector<wire::OpsecMessage>& ms, wire::MessageType t,
                                       std::optional<uint32_t> box_id = std::nullopt);

} // namespace opsec::protocol
