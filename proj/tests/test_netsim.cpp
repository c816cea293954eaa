#include <gtest/gtest.h>

#include "opsec/error.hpp"
#include "opsec/netsim.hpp"

using namespace opsec;
using namespace opsec::netsim;

namespace {

SfSpec counter(const std::string& name) {
    SfSpec sf;
    sf.name = name;
    sf.kind = "byte_counter";
    return sf;
}

IspSpec isp(uint32_t id, obox::Coverage cov = obox::Coverage::Both, bool willing = true) {
    IspSpec s;
    s.isp_id = id;
    s.willing = willing;
    s.coverage = cov;
    s.catalog = {counter("ids")};
    return s;
}

Scenario base(std::vector<IspSpec> isps) {
    Scenario sc;
    sc.seed = 11;
    sc.isps = std::move(isps);
    sc.link_delay_us.assign(sc.isps.size() + 1, 10'000);
    sc.origin.content["/index.html"] = "<html>hello</html>";
    sc.client.sfc_up = {"ids"};
    return sc;
}

const SessionMetrics& only(const Metrics& m) { return m.sessions.at(0); }

} // namespace

TEST(Netsim, MinimalScenarioBuilds) {
    auto sc = base({isp(1)});
    EXPECT_NO_THROW(build(sc));
}

TEST(Netsim, OverlappingRegistryIsConfigInvalid) {
    auto sc = base({isp(1)});
    sc.registry.bindings[443] = 443;
    try {
        build(sc);
        FAIL();
    } catch (const OpsecError& e) {
        EXPECT_EQ(e.code(), Errc::ConfigInvalid);
    }
}

TEST(Netsim, DelayCountMustMatchPath) {
    auto sc = base({isp(1)});
    sc.link_delay_us.pop_back();
    EXPECT_THROW(build(sc), OpsecError);
}

TEST(Netsim, UpOnlyWithoutRestorerIsRejected) {
    auto sc = base({isp(1, obox::Coverage::Up)});
    EXPECT_THROW(build(sc), OpsecError);
}

TEST(Netsim, SameSeedSameDigest) {
    auto sc = base({isp(1), isp(2, obox::Coverage::Down)});
    sc.traffic.sessions = 5;
    sc.traffic.clients = 2;
    sc.traffic.start_spread_us = 30'000;
    auto a = build(sc).run();
    auto b = build(sc).run();
    EXPECT_EQ(a.event_digest, b.event_digest);
    sc.seed = 12;
    auto c = build(sc).run();
    EXPECT_NE(a.event_digest, c.event_digest);
}

TEST(Netsim, HonestSingleIspTakesThreeAndAHalfRtt) {
    auto sc = base({isp(1)});
    auto sim = build(sc);
    auto m = sim.run();
    EXPECT_EQ(only(m).outcome, "Ready");
    EXPECT_EQ(only(m).assignments, 1u);
    EXPECT_DOUBLE_EQ(only(m).rtt_equivalents, 3.5);
    auto log = rtt_from_event_log(sim.event_lines());
    EXPECT_DOUBLE_EQ(log.at(0), 3.5);
    EXPECT_EQ(only(m).responses_ok, 1u);
}

TEST(Netsim, ClosingOriginCostsFiveRtt) {
    auto sc = base({isp(1)});
    sc.origin.close_after_response = true;
    auto sim = build(sc);
    auto m = sim.run();
    EXPECT_EQ(only(m).outcome, "Ready");
    EXPECT_DOUBLE_EQ(only(m).rtt_equivalents, 5.0);
    EXPECT_DOUBLE_EQ(rtt_from_event_log(sim.event_lines()).at(0), 5.0);
    EXPECT_EQ(only(m).responses_ok, 1u);
}

TEST(Netsim, NoWillingIspFailOpenFallsBack) {
    auto sc = base({isp(1, obox::Coverage::Both, false)});
    auto m = build(sc).run();
    EXPECT_EQ(only(m).outcome, "Ready");
    EXPECT_TRUE(only(m).fell_back);
    EXPECT_EQ(only(m).refused_probes, 1);
    EXPECT_DOUBLE_EQ(only(m).rtt_equivalents, 2.5);
    EXPECT_EQ(m.refused_probes, 1u);
    EXPECT_EQ(only(m).responses_ok, 1u);
}

TEST(Netsim, NoWillingIspFailClosedAborts) {
    auto sc = base({isp(1, obox::Coverage::Both, false)});
    sc.client.fail_mode = client::FailMode::FailClosed;
    auto m = build(sc).run();
    EXPECT_EQ(only(m).outcome, "Aborted");
    EXPECT_EQ(only(m).bytes_sent, 0u);
}

TEST(Netsim, DataIsDeliveredAndStreamMeasured) {
    auto sc = base({isp(1)});
    sc.traffic.stream_packets = 20;
    auto m = build(sc).run();
    EXPECT_EQ(only(m).stream_sent, 20u);
    EXPECT_EQ(only(m).stream_measured, 20u);
    EXPECT_EQ(only(m).payload_mismatches, 0u);
    EXPECT_DOUBLE_EQ(only(m).mean_box_latency_us, 50.0);
    EXPECT_EQ(only(m).bytes_delivered, only(m).bytes_sent);
}

TEST(Netsim, TlsOriginSeesPlaintextAfterContentKey) {
    auto sc = base({isp(1), isp(2, obox::Coverage::Down)});
    sc.origin.tls_like = true;
    sc.client.sfc_down = {"ids"};
    auto m = build(sc).run();
    EXPECT_EQ(only(m).outcome, "Ready");
    EXPECT_EQ(only(m).assignments, 2u);
    EXPECT_EQ(only(m).responses_ok, 1u);
    EXPECT_EQ(only(m).payload_mismatches, 0u);
}

TEST(Netsim, NatGivesDistinctOutsidePortsAndDropsUnmapped) {
    auto sc = base({isp(1)});
    sc.nat = true;
    sc.traffic.sessions = 4;
    sc.traffic.clients = 4;
    auto sim = build(sc);
    auto m = sim.run();
    std::set<std::string> outside;
    size_t syns = 0;
    for (auto& line : sim.event_lines()) {
        if (line.find("\"ev\":\"recv\",\"at\":\"origin\"") == std::string::npos) continue;
        if (line.find("\"leg\":\"SYN\"") == std::string::npos) continue;
        auto sa = line.find("\"sp\":");
        ++syns;
        outside.insert(line.substr(sa, line.find(',', sa) - sa));
    }
    EXPECT_GE(syns, 4u);
    EXPECT_EQ(outside.size(), syns);
    EXPECT_EQ(m.nat_unmapped, 0u);
    for (auto& s : m.sessions) EXPECT_EQ(s.outcome, "Ready");
}

TEST(Netsim, NatCapacityOverflowDrops) {
    auto sc = base({isp(1)});
    sc.nat = true;
    sc.nat_capacity = 1;
    sc.traffic.sessions = 2;
    sc.traffic.clients = 2;
    auto m = build(sc).run();
    EXPECT_GT(m.nat_drops, 0u);
}

TEST(Netsim, ScaleController) {
    EXPECT_EQ(target_instances(90, 30), 3u);
    EXPECT_EQ(target_instances(91, 30), 4u);
    EXPECT_EQ(target_instances(1, 30), 1u);
    EXPECT_EQ(target_instances(0, 30), 1u);
    EXPECT_EQ(target_instances(500, STATIC_POOL), 1u);
    EXPECT_EQ(pick_instance({2, 1, 1}, {false, false, false}), 1u);
    EXPECT_EQ(pick_instance({2, 0, 1}, {false, true, false}), 2u);
}

TEST(Netsim, PoolGrowsWithConcurrentFlows) {
    auto sc = base({isp(1)});
    sc.isps[0].theta = 30;
    sc.traffic.sessions = 90;
    sc.traffic.clients = 90;
    sc.traffic.stream_packets = 20;
    sc.keep_event_lines = false;
    auto m = build(sc).run();
    EXPECT_EQ(m.isps[0].max_instances, 3u);
    size_t pinned = 0;
    for (auto f : m.isps[0].flows_per_instance) pinned += f;
    EXPECT_EQ(pinned, 90u);
    EXPECT_EQ(m.isps[0].instance_timeline.back().second, 1u);
}

TEST(Netsim, StaticPoolStaysAtOne) {
    auto sc = base({isp(1)});
    sc.traffic.sessions = 40;
    sc.traffic.clients = 40;
    auto m = build(sc).run();
    EXPECT_EQ(m.isps[0].max_instances, 1u);
}

TEST(Netsim, ServDiscTamperingAborts) {
    auto sc = base({isp(1), isp(2, obox::Coverage::Both)});
    sc.isps[0].adversary = Adversary::TampersServDisc;
    for (auto mode : {client::FailMode::FailOpen, client::FailMode::FailClosed}) {
        sc.client.fail_mode = mode;
        auto m = build(sc).run();
        EXPECT_EQ(only(m).outcome, "Aborted");
        EXPECT_EQ(only(m).abort_reason, "TranscriptTampered");
        EXPECT_GE(m.isps[0].mutations, 1u);
    }
}

TEST(Netsim, ServReqTamperingAborts) {
    auto sc = base({isp(1), isp(2)});
    sc.isps[0].adversary = Adversary::TampersServReq;
    auto m = build(sc).run();
    EXPECT_EQ(only(m).outcome, "Aborted");
    EXPECT_EQ(only(m).abort_reason, "TranscriptTampered");
}

TEST(Netsim, FakeQuoteBoxIsNotAssigned) {
    auto sc = base({isp(1), isp(2)});
    sc.isps[0].adversary = Adversary::FakeQuote;
    auto m = build(sc).run();
    EXPECT_EQ(only(m).outcome, "Ready");
    EXPECT_EQ(only(m).assignments, 1u);
}

TEST(Netsim, DroppingIspForcesFallbackOrAbort) {
    auto sc = base({isp(1, obox::Coverage::Both, false), isp(2)});
    sc.isps[0].adversary = Adversary::DropsOpsec;
    auto m = build(sc).run();
    EXPECT_EQ(only(m).outcome, "Ready");
    EXPECT_TRUE(only(m).fell_back);
    EXPECT_EQ(only(m).timeouts, 1);
    sc.client.fail_mode = client::FailMode::FailClosed;
    m = build(sc).run();
    EXPECT_EQ(only(m).outcome, "Aborted");
}

TEST(Netsim, InvariantsHoldOnMixedPath) {
    auto sc = base({isp(1, obox::Coverage::Up), isp(2, obox::Coverage::Both, false), isp(3, obox::Coverage::Down),
                    isp(4)});
    sc.nat = true;
    sc.traffic.sessions = 60;
    sc.traffic.clients = 20;
    sc.traffic.start_spread_us = 200'000;
    sc.traffic.stream_packets = 3;
    sc.keep_event_lines = false;
    auto m = build(sc).run();
    EXPECT_GT(m.inv.server_dst_checked, 0u);
    EXPECT_EQ(m.inv.server_dst_violations, 0u);
    EXPECT_GT(m.inv.client_ports_checked, 0u);
    EXPECT_EQ(m.inv.client_ports_violations, 0u);
    EXPECT_GT(m.inv.transit_src_checked, 0u);
    EXPECT_EQ(m.inv.transit_src_violations, 0u);
    EXPECT_EQ(m.inv.server_collisions, 0u);
    for (auto& s : m.sessions) {
        EXPECT_EQ(s.outcome, "Ready");
        EXPECT_EQ(s.payload_mismatches, 0u);
        EXPECT_EQ(s.bytes_delivered, s.bytes_sent);
    }
}

TEST(Netsim, LegacyFlowsOnOpsecPortsAreUntouched) {
    auto sc = base({isp(1), isp(2, obox::Coverage::Down)});
    sc.traffic.sessions = 0;
    sc.traffic.legacy_sessions = 50;
    sc.traffic.legacy_on_opsec_ports = true;
    sc.traffic.clients = 25;
    auto m = build(sc).run();
    EXPECT_EQ(m.inv.ts_violations, 0u);
    EXPECT_GT(m.inv.ts_checked, 0u);
    EXPECT_EQ(m.inv.client_ports_violations, 0u);
    for (auto& s : m.sessions) {
        EXPECT_EQ(s.outcome, "Ready");
        EXPECT_EQ(s.responses_ok, 1u);
    }
    EXPECT_EQ(m.isps[0].conns_first, 0u);
}

TEST(Netsim, RandomScenariosValidate) {
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        auto sc = random_scenario(rng, {3, 1, 20, true});
        EXPECT_NO_THROW(sc.validate());
    }
}

TEST(Netsim, LoadSweepShape) {
    auto sc = base({isp(1)});
    sc.traffic.requests.clear();
    LoadSpec spec;
    spec.flows = {10, 60};
    spec.stream_packets = 30;
    auto r = run_load_sweep(sc, spec);
    ASSERT_EQ(r.points.size(), 4u);
    EXPECT_DOUBLE_EQ(r.single_flow_us, 50.0);
    EXPECT_EQ(r.points[0].mode, "dynamic");
    EXPECT_EQ(r.points[1].mode, "static");
    EXPECT_LE(r.points[2].p95_us, r.points[3].p95_us);
}
