#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string_view>

#include "opsec/bytes.hpp"
#include "opsec/rng.hpp"

namespace opsec::keys {

inline constexpr std::string_view SUITE_TAG = "opsec-ed25519-x25519-chacha20poly1305-sha256";
inline constexpr size_t MASTER_SECRET_LEN = 48;
inline constexpr size_t KEY_LEN = 32;
inline constexpr size_t NONCE_LEN = 32;
inline constexpr size_t PUBLIC_LEN = 64;   // ed25519 pk || x25519 pk
inline constexpr size_t PRIVATE_LEN = 96;  // ed25519 sk || x25519 sk
inline constexpr size_t SIGNATURE_LEN = 64;
inline constexpr size_t SEAL_OVERHEAD = 16;

using Nonce = std::array<uint8_t, NONCE_LEN>;
using SymKey = std::array<uint8_t, KEY_LEN>;
using Digest = std::array<uint8_t, 32>;

void init_crypto();

struct KeyPair {
    Bytes public_part;
    Bytes private_part;
    std::string_view algorithm_tag = SUITE_TAG;
};

KeyPair generate_keypair(Rng& rng);
Nonce make_nonce(Rng& rng);

Digest sha256(ByteView data);
Digest sha256_concat(std::initializer_list<ByteView> parts);

// TLS 1.2 P_SHA256 expansion.
Bytes prf_sha256(ByteView secret, std::string_view label, ByteView seed, size_t out_len);

Bytes derive_master_secret(const Nonce& client_nonce, const Nonce& box_nonce, ByteView shared_entropy);

enum class Role { Client, Box };

struct HopChannel {
    Bytes master_secret;
    Nonce client_nonce{};
    Nonce box_nonce{};
    SymKey key_up{};
    SymKey key_down{};
    uint64_t send_counter = 0;  // last counter sealed
    uint64_t recv_counter = 0;  // highest counter accepted
};

std::pair<SymKey, SymKey> derive_session_keys(const HopChannel& ch);
HopChannel make_channel(Bytes master_secret, const Nonce& client_nonce, const Nonce& box_nonce);

Bytes seal(const SymKey& key, uint64_t counter, ByteView plaintext);
Bytes open(const SymKey& key, uint64_t counter, ByteView record);

// Stateful per-direction sealing. Client sends up and receives down; box the reverse.
Bytes channel_seal(HopChannel& ch, Role self, ByteView plaintext, uint64_t* counter_out);
Bytes channel_open(HopChannel& ch, Role self, uint64_t counter, ByteView record);

// Receiver-side counter discipline: counters must strictly increase.
class ReplayGuard {
public:
    void accept(uint64_t counter);
    uint64_t last() const { return last_; }

private:
    uint64_t last_ = 0;
};

Bytes asym_seal(ByteView public_part, ByteView plaintext, Rng& rng);
Bytes asym_open(ByteView private_part, ByteView blob);

Bytes sign(ByteView private_part, ByteView message);
bool verify(ByteView public_part, ByteView message, ByteView signature);

Bytes sign_transcript(ByteView private_part, ByteView servdisc_bytes, ByteView servreq_bytes);
bool verify_transcript(ByteView public_part, ByteView servdisc_bytes, ByteView servreq_bytes,
                       ByteView signature);

struct AttestationQuote {
    uint32_t box_identity = 0;
    Digest code_hash{};
    Digest key_digest{};  // sha256 of the box public part the quote vouches for
    Bytes authority_signature;

    Bytes serialize() const;
    static std::optional<AttestationQuote> parse(ByteView data);
    bool operator==(const AttestationQuote&) const = default;
};

class AttestationAuthority {
public:
    explicit AttestationAuthority(Rng& rng);

    void register_box(uint32_t box_identity, const Digest& code_hash);
    bool is_registered(uint32_t box_identity, const Digest& code_hash) const;
    AttestationQuote issue_quote(uint32_t box_identity, const Digest& code_hash,
                                 ByteView box_public) const;
    const Bytes& public_part() const { return kp_.public_part; }

private:
    KeyPair kp_;
    std::set<std::pair<uint32_t, Digest>> registry_;
};

AttestationQuote issue_quote(const AttestationAuthority& authority, uint32_t box_identity,
                             const Digest& code_hash, ByteView box_public);
// Self-made quote by a party that is not the authority.
AttestationQuote forge_quote(const KeyPair& signer, uint32_t box_identity, const Digest& code_hash,
                             ByteView box_public);
bool verify_quote(ByteView authority_public, const AttestationQuote& quote);
bool verify_quote_for(ByteView authority_public, const AttestationQuote& quote, ByteView box_public);

Digest boilerplate_code_hash();

} // namespace opsec::keys
