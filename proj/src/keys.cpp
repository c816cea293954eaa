#include "opsec/keys.hpp"

#include <sodium.h>

#include <cstring>
#include <stdexcept>

#include "opsec/error.hpp"

namespace opsec::keys {

namespace {

constexpr size_t ED_PK = crypto_sign_PUBLICKEYBYTES;
constexpr size_t ED_SK = crypto_sign_SECRETKEYBYTES;
constexpr size_t X_PK = crypto_box_PUBLICKEYBYTES;
constexpr size_t X_SK = crypto_box_SECRETKEYBYTES;

static_assert(ED_PK + X_PK == PUBLIC_LEN);
static_assert(ED_SK + X_SK == PRIVATE_LEN);

void require_len(ByteView v, size_t n, const char* what) {
    if (v.size() != n) throw OpsecError(Errc::InvalidArgument, std::string(what) + " has wrong length");
}

Bytes hmac_sha256(ByteView key, ByteView msg) {
    crypto_auth_hmacsha256_state st;
    crypto_auth_hmacsha256_init(&st, key.data(), key.size());
    crypto_auth_hmacsha256_update(&st, msg.data(), msg.size());
    Bytes out(crypto_auth_hmacsha256_BYTES);
    crypto_auth_hmacsha256_final(&st, out.data());
    return out;
}

std::array<uint8_t, crypto_box_NONCEBYTES> seal_nonce(ByteView eph_pk, ByteView recipient_pk) {
    std::array<uint8_t, crypto_box_NONCEBYTES> n{};
    crypto_generichash_state st;
    crypto_generichash_init(&st, nullptr, 0, n.size());
    crypto_generichash_update(&st, eph_pk.data(), eph_pk.size());
    crypto_generichash_update(&st, recipient_pk.data(), recipient_pk.size());
    crypto_generichash_final(&st, n.data(), n.size());
    return n;
}

Bytes quote_body(uint32_t id, const Digest& code_hash, const Digest& key_digest) {
    Bytes body = to_bytes("opsec quote");
    put_u32(body, id);
    append(body, code_hash);
    append(body, key_digest);
    return body;
}

} // namespace

void init_crypto() {
    static const bool ok = sodium_init() >= 0;
    if (!ok) throw std::runtime_error("sodium_init failed");
}

KeyPair generate_keypair(Rng& rng) {
    init_crypto();
    Bytes sign_seed = rng.bytes(crypto_sign_SEEDBYTES);
    Bytes box_seed = rng.bytes(crypto_box_SEEDBYTES);
    KeyPair kp;
    kp.public_part.resize(PUBLIC_LEN);
    kp.private_part.resize(PRIVATE_LEN);
    crypto_sign_seed_keypair(kp.public_part.data(), kp.private_part.data(), sign_seed.data());
    crypto_box_seed_keypair(kp.public_part.data() + ED_PK, kp.private_part.data() + ED_SK,
                            box_seed.data());
    return kp;
}

Nonce make_nonce(Rng& rng) {
    Nonce n{};
    Bytes b = rng.bytes(NONCE_LEN);
    std::memcpy(n.data(), b.data(), NONCE_LEN);
    return n;
}

Digest sha256(ByteView data) {
    Digest d{};
    crypto_hash_sha256(d.data(), data.data(), data.size());
    return d;
}

Digest sha256_concat(std::initializer_list<ByteView> parts) {
    crypto_hash_sha256_state st;
    crypto_hash_sha256_init(&st);
    for (auto p : parts) crypto_hash_sha256_update(&st, p.data(), p.size());
    Digest d{};
    crypto_hash_sha256_final(&st, d.data());
    return d;
}

Bytes prf_sha256(ByteView secret, std::string_view label, ByteView seed, size_t out_len) {
    Bytes label_seed = to_bytes(label);
    append(label_seed, seed);
    Bytes out;
    Bytes a = hmac_sha256(secret, label_seed);
    while (out.size() < out_len) {
        Bytes in = a;
        append(in, label_seed);
        append(out, hmac_sha256(secret, in));
        a = hmac_sha256(secret, a);
    }
    out.resize(out_len);
    return out;
}

Bytes derive_master_secret(const Nonce& client_nonce, const Nonce& box_nonce, ByteView shared_entropy) {
    if (shared_entropy.empty()) throw OpsecError(Errc::InvalidArgument, "empty shared entropy");
    Bytes seed(client_nonce.begin(), client_nonce.end());
    append(seed, box_nonce);
    return prf_sha256(shared_entropy, "master secret", seed, MASTER_SECRET_LEN);
}

std::pair<SymKey, SymKey> derive_session_keys(const HopChannel& ch) {
    if (ch.master_secret.size() != MASTER_SECRET_LEN)
        throw OpsecError(Errc::InvalidArgument, "master secret missing");
    Bytes seed(ch.client_nonce.begin(), ch.client_nonce.end());
    append(seed, ch.box_nonce);
    Bytes up = prf_sha256(ch.master_secret, "opsec up", seed, KEY_LEN);
    Bytes down = prf_sha256(ch.master_secret, "opsec down", seed, KEY_LEN);
    std::pair<SymKey, SymKey> keys;
    std::memcpy(keys.first.data(), up.data(), KEY_LEN);
    std::memcpy(keys.second.data(), down.data(), KEY_LEN);
    return keys;
}

HopChannel make_channel(Bytes master_secret, const Nonce& client_nonce, const Nonce& box_nonce) {
    HopChannel ch;
    ch.master_secret = std::move(master_secret);
    ch.client_nonce = client_nonce;
    ch.box_nonce = box_nonce;
    auto [up, down] = derive_session_keys(ch);
    ch.key_up = up;
    ch.key_down = down;
    return ch;
}

static std::array<uint8_t, crypto_aead_chacha20poly1305_ietf_NPUBBYTES> aead_nonce(uint64_t counter) {
    std::array<uint8_t, crypto_aead_chacha20poly1305_ietf_NPUBBYTES> n{};
    for (int i = 0; i < 8; ++i) n[4 + i] = static_cast<uint8_t>(counter >> (56 - 8 * i));
    return n;
}

Bytes seal(const SymKey& key, uint64_t counter, ByteView plaintext) {
    init_crypto();
    auto nonce = aead_nonce(counter);
    Bytes ad;
    put_u64(ad, counter);
    Bytes out(plaintext.size() + SEAL_OVERHEAD);
    unsigned long long clen = 0;
    crypto_aead_chacha20poly1305_ietf_encrypt(out.data(), &clen, plaintext.data(), plaintext.size(),
                                              ad.data(), ad.size(), nullptr, nonce.data(), key.data());
    out.resize(clen);
    return out;
}

Bytes open(const SymKey& key, uint64_t counter, ByteView record) {
    init_crypto();
    if (record.size() < SEAL_OVERHEAD) throw OpsecError(Errc::AuthenticationFailure, "short record");
    auto nonce = aead_nonce(counter);
    Bytes ad;
    put_u64(ad, counter);
    Bytes out(record.size() - SEAL_OVERHEAD);
    unsigned long long mlen = 0;
    if (crypto_aead_chacha20poly1305_ietf_decrypt(out.data(), &mlen, nullptr, record.data(),
                                                  record.size(), ad.data(), ad.size(), nonce.data(),
                                                  key.data()) != 0)
        throw OpsecError(Errc::AuthenticationFailure, "record rejected");
    out.resize(mlen);
    return out;
}

void ReplayGuard::accept(uint64_t counter) {
    if (counter <= last_) throw OpsecError(Errc::ReplayDetected, "counter " + std::to_string(counter));
    last_ = counter;
}

Bytes channel_seal(HopChannel& ch, Role self, ByteView plaintext, uint64_t* counter_out) {
    const SymKey& key = self == Role::Client ? ch.key_up : ch.key_down;
    uint64_t c = ++ch.send_counter;
    if (counter_out) *counter_out = c;
    return seal(key, c, plaintext);
}

Bytes channel_open(HopChannel& ch, Role self, uint64_t counter, ByteView record) {
    if (counter <= ch.recv_counter)
        throw OpsecError(Errc::ReplayDetected, "counter " + std::to_string(counter));
    const SymKey& key = self == Role::Client ? ch.key_down : ch.key_up;
    Bytes pt = open(key, counter, record);
    ch.recv_counter = counter;
    return pt;
}

Bytes asym_seal(ByteView public_part, ByteView plaintext, Rng& rng) {
    init_crypto();
    require_len(public_part, PUBLIC_LEN, "public part");
    ByteView recipient = public_part.subspan(ED_PK, X_PK);
    Bytes seed = rng.bytes(crypto_box_SEEDBYTES);
    std::array<uint8_t, X_PK> eph_pk{};
    std::array<uint8_t, X_SK> eph_sk{};
    crypto_box_seed_keypair(eph_pk.data(), eph_sk.data(), seed.data());
    auto nonce = seal_nonce(eph_pk, recipient);
    Bytes blob(X_PK + plaintext.size() + crypto_box_MACBYTES);
    std::memcpy(blob.data(), eph_pk.data(), X_PK);
    if (crypto_box_easy(blob.data() + X_PK, plaintext.data(), plaintext.size(), nonce.data(),
                        recipient.data(), eph_sk.data()) != 0)
        throw OpsecError(Errc::InvalidArgument, "seal failed");
    sodium_memzero(eph_sk.data(), eph_sk.size());
    return blob;
}

Bytes asym_open(ByteView private_part, ByteView blob) {
    init_crypto();
    require_len(private_part, PRIVATE_LEN, "private part");
    if (blob.size() < X_PK + crypto_box_MACBYTES)
        throw OpsecError(Errc::AuthenticationFailure, "short blob");
    ByteView sk = private_part.subspan(ED_SK, X_SK);
    std::array<uint8_t, X_PK> own_pk{};
    crypto_scalarmult_base(own_pk.data(), sk.data());
    ByteView eph_pk = blob.first(X_PK);
    auto nonce = seal_nonce(eph_pk, own_pk);
    Bytes out(blob.size() - X_PK - crypto_box_MACBYTES);
    if (crypto_box_open_easy(out.data(), blob.data() + X_PK, blob.size() - X_PK, nonce.data(),
                             eph_pk.data(), sk.data()) != 0)
        throw OpsecError(Errc::AuthenticationFailure, "sealed blob rejected");
    return out;
}

Bytes sign(ByteView private_part, ByteView message) {
    init_crypto();
    require_len(private_part, PRIVATE_LEN, "private part");
    Bytes sig(SIGNATURE_LEN);
    crypto_sign_detached(sig.data(), nullptr, message.data(), message.size(), private_part.data());
    return sig;
}

bool verify(ByteView public_part, ByteView message, ByteView signature) {
    init_crypto();
    if (public_part.size() != PUBLIC_LEN || signature.size() != SIGNATURE_LEN) return false;
    return crypto_sign_verify_detached(signature.data(), message.data(), message.size(),
                                       public_part.data()) == 0;
}

static Digest transcript_digest(ByteView servdisc, ByteView servreq) {
    Bytes lens;
    put_u32(lens, static_cast<uint32_t>(servdisc.size()));
    put_u32(lens, static_cast<uint32_t>(servreq.size()));
    Bytes label = to_bytes("opsec transcript");
    return sha256_concat({label, lens, servdisc, servreq});
}

Bytes sign_transcript(ByteView private_part, ByteView servdisc_bytes, ByteView servreq_bytes) {
    return sign(private_part, transcript_digest(servdisc_bytes, servreq_bytes));
}

bool verify_transcript(ByteView public_part, ByteView servdisc_bytes, ByteView servreq_bytes,
                       ByteView signature) {
    return verify(public_part, transcript_digest(servdisc_bytes, servreq_bytes), signature);
}

Bytes AttestationQuote::serialize() const {
    Bytes out;
    put_u32(out, box_identity);
    append(out, code_hash);
    append(out, key_digest);
    put_field(out, authority_signature);
    return out;
}

std::optional<AttestationQuote> AttestationQuote::parse(ByteView data) {
    try {
        Reader r(data);
        AttestationQuote q;
        q.box_identity = r.u32();
        Bytes ch = r.take(32);
        Bytes kd = r.take(32);
        std::memcpy(q.code_hash.data(), ch.data(), 32);
        std::memcpy(q.key_digest.data(), kd.data(), 32);
        q.authority_signature = r.field();
        if (!r.done()) return std::nullopt;
        return q;
    } catch (const OpsecError&) {
        return std::nullopt;
    }
}

AttestationAuthority::AttestationAuthority(Rng& rng) : kp_(generate_keypair(rng)) {}

void AttestationAuthority::register_box(uint32_t box_identity, const Digest& code_hash) {
    registry_.insert({box_identity, code_hash});
}

bool AttestationAuthority::is_registered(uint32_t box_identity, const Digest& code_hash) const {
    return registry_.count({box_identity, code_hash}) > 0;
}

AttestationQuote AttestationAuthority::issue_quote(uint32_t box_identity, const Digest& code_hash,
                                                   ByteView box_public) const {
    if (!is_registered(box_identity, code_hash))
        throw OpsecError(Errc::UnknownIdentity, "box " + std::to_string(box_identity));
    return forge_quote(kp_, box_identity, code_hash, box_public);
}

AttestationQuote issue_quote(const AttestationAuthority& authority, uint32_t box_identity,
                             const Digest& code_hash, ByteView box_public) {
    return authority.issue_quote(box_identity, code_hash, box_public);
}

AttestationQuote forge_quote(const KeyPair& signer, uint32_t box_identity, const Digest& code_hash,
                             ByteView box_public) {
    AttestationQuote q;
    q.box_identity = box_identity;
    q.code_hash = code_hash;
    q.key_digest = sha256(box_public);
    q.authority_signature = sign(signer.private_part, quote_body(box_identity, code_hash, q.key_digest));
    return q;
}

bool verify_quote(ByteView authority_public, const AttestationQuote& quote) {
    return verify(authority_public, quote_body(quote.box_identity, quote.code_hash, quote.key_digest),
                  quote.authority_signature);
}

bool verify_quote_for(ByteView authority_public, const AttestationQuote& quote, ByteView box_public) {
    return verify_quote(authority_public, quote) && quote.key_digest == sha256(box_public);
}

Digest boilerplate_code_hash() { return sha256(to_bytes("opsec-box boilerplate v1")); }

} // namespace opsec::keys
