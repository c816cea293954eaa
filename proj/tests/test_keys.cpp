#include <gtest/gtest.h>

#include "opsec/error.hpp"
#include "opsec/keys.hpp"
#include "oracles.hpp"

#include <unordered_set>

using namespace opsec;
using namespace opsec::keys;

namespace {

template <typename F>
Errc error_of(F&& f) {
    try {
        f();
    } catch (const OpsecError& e) {
        return e.code();
    }
    return Errc::InvalidArgument;
}

Bytes nb(const Nonce& n) { return Bytes(n.begin(), n.end()); }

} // namespace

TEST(Keys, KeypairDeterministic) {
    Rng a(42), b(42);
    auto k1 = generate_keypair(a), k2 = generate_keypair(b);
    EXPECT_EQ(k1.public_part, k2.public_part);
    EXPECT_EQ(k1.public_part.size(), PUBLIC_LEN);
}

TEST(Keys, SignVerify) {
    Rng rng(1);
    auto k = generate_keypair(rng), other = generate_keypair(rng);
    Bytes msg = to_bytes("hello");
    auto sig = sign(k.private_part, msg);
    EXPECT_TRUE(verify(k.public_part, msg, sig));
    EXPECT_FALSE(verify(other.public_part, msg, sig));
}

TEST(Keys, NonceUniqueness) {
    Rng rng(3);
    std::unordered_set<std::string> seen;
    seen.reserve(1000000);
    for (int i = 0; i < 1000000; ++i) {
        auto n = make_nonce(rng);
        ASSERT_TRUE(seen.insert(std::string(n.begin(), n.end())).second);
    }
}

Bytes from_hex(const std::string& h) {
    Bytes out;
    for (size_t i = 0; i < h.size(); i += 2) out.push_back(uint8_t(std::stoi(h.substr(i, 2), nullptr, 16)));
    return out;
}

// Published TLS 1.2 PRF (SHA-256) vector.
TEST(Keys, PrfKnownVector) {
    Bytes out = prf_sha256(from_hex("9bbe436ba940f017b17652849a71db35"), "test label",
                           from_hex("a0ba9f936cda311827a6f796ffd5198c"), 100);
    EXPECT_EQ(to_hex(out),
              "e3f229ba727be17b8d122620557cd453c2aab21d07c3d495329b52d4e61edb5a6b301791e90d35c9c9a46b4e14baf9af"
              "0fa022f7077def17abfd3797c0564bab4fbc91666e9def9b97fce34f796789baa48082d122ee42c5a72e5a5110fff701"
              "87347b66");
}

// Values computed offline with an independent HMAC-SHA256 P_hash.
TEST(Keys, DerivationVectors) {
    Nonce cn{}, bn{};
    for (int i = 0; i < 32; ++i) {
        cn[i] = uint8_t(i);
        bn[i] = uint8_t(32 + i);
    }
    auto ms = derive_master_secret(cn, bn, to_bytes("entropy"));
    EXPECT_EQ(to_hex(ms), "304af3199fd13c73f801e1dc7ecc01c064b678be286715c1c73d2e5d62c3cdecba20f95f8b9e1a3e70c883efc28e7a97");
    auto ch = make_channel(ms, cn, bn);
    EXPECT_EQ(to_hex(ch.key_up), "a4fcf11756e0aa8384c42161fab1bd2404d0911ab0e58f0bf8322a2089b56016");
    EXPECT_EQ(to_hex(ch.key_down), "5a51fc3791b4ce8ef2cbae0a434c720c1fbbc7926e1bae0338a65ccbcda2b328");
}

TEST(Keys, MasterSecretBasics) {
    Rng rng(4);
    auto cn = make_nonce(rng), bn = make_nonce(rng);
    Bytes ent = rng.bytes(32);
    auto m1 = derive_master_secret(cn, bn, ent);
    EXPECT_EQ(m1.size(), 48u);
    EXPECT_EQ(m1, derive_master_secret(cn, bn, ent));
    EXPECT_EQ(error_of([&] { derive_master_secret(cn, bn, {}); }), Errc::InvalidArgument);
}

TEST(Keys, MasterSecretAvalanche) {
    Rng rng(5);
    double total = 0;
    const int trials = 1000;
    for (int i = 0; i < trials; ++i) {
        auto cn = make_nonce(rng), bn = make_nonce(rng);
        Bytes ent = rng.bytes(32);
        auto m1 = derive_master_secret(cn, bn, ent);
        size_t bit = rng.below(256);
        cn[bit / 8] ^= uint8_t(1u << (bit % 8));
        auto m2 = derive_master_secret(cn, bn, ent);
        total += oracle::hamming(m1, m2) / 384.0;
    }
    EXPECT_GE(total / trials, 0.30);
}

TEST(Keys, SessionKeysDistinctAndAgree) {
    Rng rng(6);
    for (int i = 0; i < 10000; ++i) {
        auto cn = make_nonce(rng), bn = make_nonce(rng);
        auto ms = derive_master_secret(cn, bn, rng.bytes(16));
        auto client = make_channel(ms, cn, bn);
        auto box = make_channel(ms, cn, bn);
        ASSERT_NE(client.key_up, client.key_down);
        ASSERT_EQ(client.key_up, box.key_up);
        ASSERT_EQ(client.key_down, box.key_down);
    }
}

TEST(Keys, BoxNonceChangesBothKeys) {
    Rng rng(7);
    for (int i = 0; i < 1000; ++i) {
        auto cn = make_nonce(rng), bn = make_nonce(rng);
        auto ms = derive_master_secret(cn, bn, rng.bytes(16));
        auto a = make_channel(ms, cn, bn);
        bn[rng.below(32)] ^= 0x10;
        auto b = make_channel(ms, cn, bn);
        ASSERT_NE(a.key_up, b.key_up);
        ASSERT_NE(a.key_down, b.key_down);
    }
}

TEST(Keys, SealOpenRoundTrip) {
    Rng rng(8);
    SymKey k{};
    k[0] = 1;
    Bytes pt = rng.bytes(100);
    auto rec = seal(k, 9, pt);
    EXPECT_EQ(open(k, 9, rec), pt);
    EXPECT_EQ(error_of([&] { open(k, 10, rec); }), Errc::AuthenticationFailure);
    SymKey k2 = k;
    k2[1] = 2;
    EXPECT_EQ(error_of([&] { open(k2, 9, rec); }), Errc::AuthenticationFailure);
}

TEST(Keys, TamperCompleteness) {
    Rng rng(9);
    SymKey k{};
    for (auto& b : k) b = uint8_t(rng.below(256));
    for (int i = 0; i < 10000; ++i) {
        Bytes pt = rng.bytes(1 + rng.below(64));
        uint64_t c = rng.next_u64();
        auto rec = seal(k, c, pt);
        size_t bit = rng.below(rec.size() * 8);
        rec[bit / 8] ^= uint8_t(1u << (bit % 8));
        ASSERT_EQ(error_of([&] { open(k, c, rec); }), Errc::AuthenticationFailure);
    }
}

TEST(Keys, ChannelReplay) {
    Rng rng(10);
    auto cn = make_nonce(rng), bn = make_nonce(rng);
    auto ms = derive_master_secret(cn, bn, rng.bytes(16));
    auto client = make_channel(ms, cn, bn), box = make_channel(ms, cn, bn);
    Bytes last;
    uint64_t c = 0;
    for (int i = 0; i < 5; ++i) last = channel_seal(client, Role::Client, to_bytes("x"), &c);
    EXPECT_EQ(c, 5u);
    EXPECT_EQ(channel_open(box, Role::Box, 5, last), to_bytes("x"));
    EXPECT_EQ(error_of([&] { channel_open(box, Role::Box, 5, last); }), Errc::ReplayDetected);
    ReplayGuard g;
    g.accept(5);
    EXPECT_EQ(error_of([&] { g.accept(5); }), Errc::ReplayDetected);
    auto down = channel_seal(box, Role::Box, to_bytes("y"), &c);
    EXPECT_EQ(channel_open(client, Role::Client, c, down), to_bytes("y"));
}

TEST(Keys, AsymSealIsolation) {
    Rng rng(11);
    auto a = generate_keypair(rng), b = generate_keypair(rng);
    Bytes secret = rng.bytes(48);
    auto blob = asym_seal(a.public_part, secret, rng);
    EXPECT_EQ(asym_open(a.private_part, blob), secret);
    EXPECT_EQ(error_of([&] { asym_open(b.private_part, blob); }), Errc::AuthenticationFailure);
    Rng r1(99), r2(99);
    EXPECT_EQ(asym_seal(a.public_part, secret, r1), asym_seal(a.public_part, secret, r2));
}

TEST(Keys, TranscriptBinding) {
    Rng rng(12);
    auto k = generate_keypair(rng), other = generate_keypair(rng);
    for (int i = 0; i < 10000; ++i) {
        Bytes sd = rng.bytes(1 + rng.below(40)), sr = rng.bytes(1 + rng.below(40));
        auto sig = sign_transcript(k.private_part, sd, sr);
        ASSERT_TRUE(verify_transcript(k.public_part, sd, sr, sig));
        Bytes& target = rng.bernoulli(0.5) ? sd : sr;
        switch (rng.below(3)) {
        case 0: target[rng.below(target.size())] ^= uint8_t(1 + rng.below(255)); break;
        case 1: target.erase(target.begin() + static_cast<long>(rng.below(target.size()))); break;
        default: target.insert(target.begin() + static_cast<long>(rng.below(target.size() + 1)), uint8_t(rng.below(256)));
        }
        ASSERT_FALSE(verify_transcript(k.public_part, sd, sr, sig));
    }
    Bytes sd = to_bytes("sd"), sr = to_bytes("sr");
    EXPECT_FALSE(verify_transcript(k.public_part, sd, sr, sign_transcript(other.private_part, sd, sr)));
    // moving bytes across the segment boundary is an edit too
    EXPECT_FALSE(verify_transcript(k.public_part, to_bytes("s"), to_bytes("dsr"),
                                   sign_transcript(k.private_part, sd, sr)));
}

TEST(Keys, AttestationQuotes) {
    Rng rng(13);
    AttestationAuthority auth(rng);
    auto box = generate_keypair(rng);
    auto code = boilerplate_code_hash();
    EXPECT_EQ(error_of([&] { issue_quote(auth, 5, code, box.public_part); }), Errc::UnknownIdentity);
    auth.register_box(5, code);
    auto q = issue_quote(auth, 5, code, box.public_part);
    EXPECT_TRUE(verify_quote(auth.public_part(), q));
    EXPECT_TRUE(verify_quote_for(auth.public_part(), q, box.public_part));
    auto parsed = AttestationQuote::parse(q.serialize());
    ASSERT_TRUE(parsed);
    EXPECT_EQ(*parsed, q);

    auto altered = q;
    altered.code_hash[0] ^= 1;
    EXPECT_FALSE(verify_quote(auth.public_part(), altered));

    auto fake_key = generate_keypair(rng);
    auto fake = forge_quote(fake_key, 5, code, fake_key.public_part);
    EXPECT_FALSE(verify_quote(auth.public_part(), fake));
    // replayed honest quote under a different keypair
    EXPECT_FALSE(verify_quote_for(auth.public_part(), q, fake_key.public_part));
}
