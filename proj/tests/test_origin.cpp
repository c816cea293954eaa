#include <gtest/gtest.h>

#include "opsec/error.hpp"
#include "opsec/origin.hpp"
#include "opsec/wire.hpp"

using namespace opsec;
using namespace opsec::origin;

TEST(Origin, RedirectReflectsPathVerbatim) {
    ServerProfile p;
    wire::OpsecMessage m{wire::MessageType::OpsecHello, 0, Bytes(32, 9)};
    std::string path = wire::embed_in_path({m});
    auto r = handle_get(p, path, 1234);
    EXPECT_EQ(r.status, 301);
    EXPECT_NE(r.headers.at("Location").find(path), std::string::npos);
    EXPECT_EQ(r.ts_ecr, 1234u);
    auto back = wire::extract_from_path(reflected_text(r));
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0], m);
}

TEST(Origin, ErrorReflectEchoesInBody) {
    ServerProfile p;
    p.reflection_mode = ReflectionMode::ErrorReflect;
    wire::OpsecMessage a{wire::MessageType::OpsecHello, 0, Bytes(32, 1)};
    wire::OpsecMessage b{wire::MessageType::ObHello, 3, Bytes(70, 2)};
    std::string path = wire::embed_in_path({a, b});
    auto r = handle_get(p, path, 77);
    EXPECT_EQ(r.status, 404);
    EXPECT_NE(r.body.find(path), std::string::npos);
    EXPECT_EQ(wire::extract_from_path(reflected_text(r)), (std::vector<wire::OpsecMessage>{a, b}));
}

TEST(Origin, NoReflectDropsPath) {
    ServerProfile p;
    p.reflection_mode = ReflectionMode::NoReflect;
    std::string path = wire::embed_in_path({{wire::MessageType::OpsecHello, 0, Bytes(32, 1)}});
    auto r = handle_get(p, path, 5);
    EXPECT_EQ(r.status, 404);
    EXPECT_TRUE(wire::extract_from_path(reflected_text(r)).empty());
    EXPECT_EQ(r.ts_ecr, 5u);
}

TEST(Origin, TimestampEchoAndClose) {
    ServerProfile p;
    p.close_after_response = true;
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        uint32_t ts = static_cast<uint32_t>(rng.next_u64());
        auto r = handle_get(p, "/x", ts);
        ASSERT_EQ(r.ts_ecr, ts);
        ASSERT_TRUE(r.close);
    }
}

TEST(Origin, DefaultMixFrequencies) {
    auto mix = ReflectionMix::defaults();
    EXPECT_NO_THROW(mix.validate());
    Rng rng(11);
    std::map<ReflectionMode, int> counts;
    const int n = 100000;
    for (int i = 0; i < n; ++i) counts[sample_profile(mix, rng).reflection_mode]++;
    const double sum = 0.634 + 0.294 + 0.0634;
    EXPECT_NEAR(counts[ReflectionMode::RedirectReflect] / double(n), 0.634 / sum, 0.01);
    EXPECT_NEAR(counts[ReflectionMode::ErrorReflect] / double(n), 0.294 / sum, 0.01);
    EXPECT_NEAR(counts[ReflectionMode::NoReflect] / double(n), 0.0634 / sum, 0.01);
}

TEST(Origin, DegenerateAndBadMix) {
    Rng rng(1);
    ReflectionMix only{{{ReflectionMode::RedirectReflect, 1.0}}};
    for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_profile(only, rng).reflection_mode, ReflectionMode::RedirectReflect);
    ReflectionMix bad{{{ReflectionMode::RedirectReflect, 0.5}, {ReflectionMode::ErrorReflect, 0.4}}};
    try {
        sample_profile(bad, rng);
        FAIL();
    } catch (const OpsecError& e) {
        EXPECT_EQ(e.code(), Errc::BadDistribution);
    }
}
