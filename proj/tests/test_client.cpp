#include <gtest/gtest.h>

#include <set>

#include "pipeline.hpp"

using namespace opsec;
using pipeline::Fixture;
using pipeline::Path;

namespace {

const auto IDS = protocol::sf_id_from_name("ids");
const auto RDR = protocol::sf_id_from_name("rdr");

obox::SecurityFunction ids_sf() {
    return obox::keyword_ids("ids", {{"malware-sig-01", protocol::VerdictKind::Alert},
                                     {"kill-switch", protocol::VerdictKind::Terminate}});
}
obox::SecurityFunction rdr_sf() { return obox::byte_counter("rdr"); }

client::SfcSpec both_chains() { return {{IDS}, {RDR}}; }

} // namespace

TEST(Client, FirstGetCarriesHelloThenDisc) {
    Fixture fx;
    auto [s, get] = fx.begin(both_chains());
    ASSERT_TRUE(get);
    EXPECT_EQ(s.state, client::SessionState::AwaitResponse1);
    auto msgs = wire::extract_from_path(get->path);
    ASSERT_EQ(msgs.size(), 2u);
    EXPECT_EQ(msgs[0].msg_type, wire::MessageType::OpsecHello);
    EXPECT_EQ(msgs[1].msg_type, wire::MessageType::ServDisc);
    auto disc = protocol::ServDisc::decode(msgs[1].payload);
    ASSERT_TRUE(disc);
    ASSERT_EQ(disc->entries.size(), 2u);
    EXPECT_EQ(disc->entries[0].dir, protocol::Dir::Up);
    EXPECT_EQ(disc->entries[1].dir, protocol::Dir::Down);
    EXPECT_TRUE(fx.reg.contains(get->dst_port));
    EXPECT_EQ(get->ts_val, portplan::pack_ts(get->dst_port, 50000));
}

TEST(Client, EmptySfcFailOpenIsPlain) {
    Fixture fx;
    auto [s, get] = fx.begin({});
    EXPECT_FALSE(get);
    EXPECT_EQ(s.state, client::SessionState::Ready);
    EXPECT_TRUE(s.legacy);
}

TEST(Client, OversizedChainAbortsOnBudget) {
    Fixture fx;
    client::SfcSpec big;
    for (int i = 0; i < 200; ++i) big.sfc_up.push_back(protocol::sf_id_from_name("sf" + std::to_string(i)));
    auto [s, get] = fx.begin(big);
    EXPECT_FALSE(get);
    EXPECT_EQ(s.state, client::SessionState::Aborted);
    EXPECT_EQ(s.abort_reason, Errc::PathBudgetExceeded);
}

TEST(Client, PortChoiceIsUniformOverEligible) {
    Fixture fx;
    std::map<uint16_t, int> seen;
    for (int i = 0; i < 2000; ++i) seen[fx.begin(both_chains()).second->dst_port]++;
    ASSERT_EQ(seen.size(), 2u);
    EXPECT_NEAR(seen[7443], 1000, 150);
    EXPECT_NEAR(seen[8443], 1000, 150);
}

TEST(Client, SingleBidirectionalBoxGetsBothFunctions) {
    Fixture fx;
    auto box = fx.make_box(11, obox::Coverage::Both, {ids_sf(), rdr_sf()});
    Path p;
    p.hops = {{&box}};
    auto [s, get] = fx.begin(both_chains());
    auto r1 = p.round(*get);
    ASSERT_TRUE(r1);
    auto get2 = client::on_response_1(s, *r1, false, fx.rng);
    ASSERT_TRUE(get2);
    ASSERT_EQ(s.assignments.size(), 2u);
    for (auto& a : s.assignments) EXPECT_EQ(a.box_id, 11u);
    auto req = protocol::ServReq::decode(wire::extract_from_path(get2->path).at(0).payload);
    ASSERT_TRUE(req);
    EXPECT_EQ(req->grants.size(), 1u);

    auto r2 = p.round(*get2);
    EXPECT_FALSE(client::on_response_2(s, *r2, fx.rng));
    EXPECT_EQ(s.state, client::SessionState::Ready);
    EXPECT_EQ(s.rounds, 2);
}

TEST(Client, TwoBoxesEachOpenOnlyTheirGrant) {
    Fixture fx;
    auto up = fx.make_box(21, obox::Coverage::Up, {ids_sf()});
    auto down = fx.make_box(22, obox::Coverage::Down, {rdr_sf()});
    Path p;
    p.hops = {{&up}, {&down}};
    auto [s, get] = fx.begin(both_chains());
    auto r1 = p.round(*get);
    auto get2 = client::on_response_1(s, *r1, false, fx.rng);
    ASSERT_TRUE(get2);
    auto req = protocol::ServReq::decode(wire::extract_from_path(get2->path).at(0).payload);
    ASSERT_EQ(req->grants.size(), 2u);
    const obox::BoxState* boxes[] = {&up, &down};
    for (auto& g : req->grants)
        for (auto* b : boxes) {
            auto& kp = obox::EnclaveAudit::keypair(*b);
            if (g.box_id == b->box_id()) EXPECT_NO_THROW(keys::asym_open(kp.private_part, g.sealed));
            else EXPECT_THROW(keys::asym_open(kp.private_part, g.sealed), OpsecError);
        }
    auto r2 = p.round(*get2);
    client::on_response_2(s, *r2, fx.rng);
    EXPECT_EQ(s.state, client::SessionState::Ready);
    EXPECT_NE(s.channels.at(21).master_secret, s.channels.at(22).master_secret);
}

TEST(Client, NoBoxFailClosedAborts) {
    Fixture fx;
    Path p;
    auto [s, get] = fx.begin(both_chains(), client::FailMode::FailClosed);
    auto r1 = p.round(*get);
    EXPECT_FALSE(client::on_response_1(s, *r1, false, fx.rng));
    EXPECT_EQ(s.state, client::SessionState::Aborted);
    EXPECT_EQ(s.abort_reason, Errc::NoWillingBox);
}

TEST(Client, NoBoxFailOpenIsReadyUnprotected) {
    Fixture fx;
    Path p;
    auto [s, get] = fx.begin(both_chains());
    p.handshake(s, get, fx.rng);
    EXPECT_EQ(s.state, client::SessionState::Ready);
    EXPECT_FALSE(s.protected_session());
    auto h = client::send_app_data(s, to_bytes("GET /page"));
    EXPECT_EQ(h.payload, to_bytes("GET /page"));
}

TEST(Client, NoReflectFailClosedAborts) {
    Fixture fx;
    auto box = fx.make_box(11, obox::Coverage::Both, {ids_sf(), rdr_sf()});
    Path p;
    p.hops = {{&box}};
    p.profile.reflection_mode = origin::ReflectionMode::NoReflect;
    auto [s, get] = fx.begin(both_chains(), client::FailMode::FailClosed);
    p.handshake(s, get, fx.rng);
    EXPECT_EQ(s.state, client::SessionState::Aborted);
}

TEST(Client, ErrorReflectAlsoCompletes) {
    Fixture fx;
    auto box = fx.make_box(11, obox::Coverage::Both, {ids_sf(), rdr_sf()});
    Path p;
    p.hops = {{&box}};
    p.profile.reflection_mode = origin::ReflectionMode::ErrorReflect;
    auto [s, get] = fx.begin(both_chains(), client::FailMode::FailClosed);
    p.handshake(s, get, fx.rng);
    EXPECT_EQ(s.state, client::SessionState::Ready);
    EXPECT_EQ(s.assignments.size(), 2u);
}

TEST(Client, EditedServDiscAbortsUnderBothPolicies) {
    for (auto mode : {client::FailMode::FailOpen, client::FailMode::FailClosed}) {
        Fixture fx;
        auto box = fx.make_box(11, obox::Coverage::Both, {ids_sf(), rdr_sf()});
        Path p;
        // Adversarial ISP rewrites the envelope before the box.
        p.hops = {{&box, [](Bytes& b) {
                       auto path = *http::request_path(b);
                       auto msgs = wire::extract_from_path(path);
                       if (msgs.size() < 2 || msgs[1].msg_type != wire::MessageType::ServDisc) return;
                       msgs[1].payload.back() ^= 1;
                       std::string text(b.begin(), b.end());
                       text.replace(text.find(path), path.size(), wire::embed_in_path(msgs));
                       b = to_bytes(text);
                   }}};
        auto [s, get] = fx.begin(both_chains(), mode);
        p.handshake(s, get, fx.rng);
        EXPECT_EQ(s.state, client::SessionState::Aborted);
        EXPECT_EQ(s.abort_reason, Errc::TranscriptTampered);
    }
}

TEST(Client, SilentBoxFailOpenLeavesFunctionUnassigned) {
    Fixture fx;
    auto a = fx.make_box(31, obox::Coverage::Both, {ids_sf()});
    auto b = fx.make_box(32, obox::Coverage::Both, {rdr_sf()});
    Path p;
    // The ISP hosting box 32 drops every ServReq-bearing GET before its box.
    bool drop = false;
    p.hops = {{&a}, {&b, [&](Bytes& bytes) {
                  auto msgs = wire::extract_from_path(*http::request_path(bytes));
                  drop = protocol::find_message(msgs, wire::MessageType::ServReq) != nullptr;
                  if (drop) bytes = http::request_bytes("/", "origin.example");
              }}};
    auto [s, get] = fx.begin(both_chains());
    p.handshake(s, get, fx.rng);
    EXPECT_EQ(s.state, client::SessionState::Ready);
    EXPECT_TRUE(drop);
    for (auto& asg : s.assignments) EXPECT_NE(asg.box_id, 32u);
}

TEST(Client, SilentBoxFailClosedAborts) {
    Fixture fx;
    auto a = fx.make_box(31, obox::Coverage::Both, {ids_sf(), rdr_sf()});
    Path p;
    p.hops = {{&a, [&](Bytes& bytes) {
                  auto msgs = wire::extract_from_path(*http::request_path(bytes));
                  if (protocol::find_message(msgs, wire::MessageType::ServReq))
                      bytes = http::request_bytes("/", "origin.example");
              }}};
    auto [s, get] = fx.begin(both_chains(), client::FailMode::FailClosed);
    p.handshake(s, get, fx.rng);
    EXPECT_EQ(s.state, client::SessionState::Aborted);
}

TEST(Client, FakeQuoteBoxIsNeverACandidate) {
    Fixture fx;
    auto rogue = fx.make_box(41, obox::Coverage::Both, {ids_sf(), rdr_sf()}, true);
    auto honest = fx.make_box(42, obox::Coverage::Both, {ids_sf(), rdr_sf()});
    Path p;
    p.hops = {{&rogue}, {&honest}};
    auto [s, get] = fx.begin(both_chains(), client::FailMode::FailClosed);
    p.handshake(s, get, fx.rng);
    EXPECT_EQ(s.state, client::SessionState::Ready);
    ASSERT_FALSE(s.assignments.empty());
    for (auto& asg : s.assignments) EXPECT_EQ(asg.box_id, 42u);
}

TEST(Client, AssignmentFollowsPathOrderPerDirection) {
    Fixture fx;
    auto near = fx.make_box(51, obox::Coverage::Both, {ids_sf(), rdr_sf()});
    auto far = fx.make_box(52, obox::Coverage::Both, {ids_sf(), rdr_sf()});
    Path p;
    p.hops = {{&near}, {&far}};
    auto [s, get] = fx.begin(both_chains());
    p.handshake(s, get, fx.rng);
    ASSERT_EQ(s.state, client::SessionState::Ready);
    for (auto& a : s.assignments) {
        // upstream picks the client-nearest box, downstream the server-nearest
        EXPECT_EQ(a.box_id, a.dir == protocol::Dir::Up ? 51u : 52u);
    }
}

TEST(Client, AssignmentSoundness) {
    Fixture fx;
    auto up = fx.make_box(61, obox::Coverage::Up, {ids_sf(), rdr_sf()});
    auto down = fx.make_box(62, obox::Coverage::Down, {ids_sf(), rdr_sf()});
    auto rogue = fx.make_box(63, obox::Coverage::Both, {ids_sf(), rdr_sf()}, true);
    Path p;
    p.hops = {{&rogue}, {&up}, {&down}};
    client::SfcSpec sfc{{IDS, RDR}, {RDR, IDS}};
    auto [s, get] = fx.begin(sfc);
    p.handshake(s, get, fx.rng);
    ASSERT_EQ(s.state, client::SessionState::Ready);
    ASSERT_EQ(s.assignments.size(), 4u);
    for (auto& a : s.assignments) {
        auto* b = s.box(a.box_id);
        ASSERT_TRUE(b);
        EXPECT_TRUE(b->verified);
        auto& hs = a.dir == protocol::Dir::Up ? b->up_hashes : b->down_hashes;
        EXPECT_NE(std::find(hs.begin(), hs.end(), protocol::announce_hash(a.sf)), hs.end());
        EXPECT_EQ(a.box_id, a.dir == protocol::Dir::Up ? 61u : 62u);
    }
}

TEST(Client, OriginClosingExcludesDownOnlyBoxes) {
    Fixture fx;
    auto down = fx.make_box(62, obox::Coverage::Down, {ids_sf(), rdr_sf()});
    Path p;
    p.hops = {{&down}};
    p.profile.close_after_response = true;
    auto [s, get] = fx.begin(both_chains());
    p.handshake(s, get, fx.rng);
    EXPECT_EQ(s.state, client::SessionState::Ready);
    EXPECT_TRUE(s.assignments.empty());
}

TEST(Client, SendSealsUnderFirstBoxKeyUp) {
    Fixture fx;
    auto box = fx.make_box(11, obox::Coverage::Both, {ids_sf(), rdr_sf()});
    Path p;
    p.hops = {{&box}};
    p.profile.content["/page"] = "hello page";
    auto [s, get] = fx.begin(both_chains());
    p.handshake(s, get, fx.rng);
    ASSERT_EQ(s.state, client::SessionState::Ready);
    auto h = client::send_app_data(s, to_bytes("GET /page HTTP/1.1\r\n\r\n"));
    auto rec = protocol::DataRecord::decode(h.payload);
    ASSERT_TRUE(rec);
    auto* flow = obox::EnclaveAudit::flow(box, s.tag);
    ASSERT_TRUE(flow);
    EXPECT_EQ(keys::open(flow->channel.key_up, rec->counter, rec->ciphertext),
              to_bytes("GET /page HTTP/1.1\r\n\r\n"));
    EXPECT_EQ(h.dst_port, s.ports.p_star);
    EXPECT_EQ(h.ts_val, portplan::pack_ts(s.ports.p_star, s.ports.p_c));
}

TEST(Client, EndToEndDataThroughTwoBoxes) {
    for (bool tls : {false, true}) {
        Fixture fx;
        auto up = fx.make_box(21, obox::Coverage::Both, {ids_sf()});
        auto down = fx.make_box(22, obox::Coverage::Both, {rdr_sf()});
        Path p;
        p.hops = {{&up}, {&down}};
        p.profile.tls_like = tls;
        p.profile.content["/page"] = "hello page";
        auto [s, get] = fx.begin(both_chains(), client::FailMode::FailClosed, tls);
        p.handshake(s, get, fx.rng);
        ASSERT_EQ(s.state, client::SessionState::Ready);
        auto got = p.exchange(s, http::request_bytes("/page", "origin.example"));
        ASSERT_TRUE(got);
        auto resp = http::parse_response(*got);
        ASSERT_TRUE(resp);
        EXPECT_EQ(resp->body, "hello page");
        if (tls) EXPECT_TRUE(protocol::is_data_record(p.origin_saw));
        else EXPECT_EQ(*http::request_path(p.origin_saw), "/page");
        // links up to the last chain box carry sealed records, all links when the origin is TLS-like
        size_t sealed_links = tls ? p.wire_up.size() : s.up_chain.size();
        for (size_t i = 0; i < sealed_links; ++i) EXPECT_TRUE(protocol::is_data_record(p.wire_up[i]));
        for (size_t i = 1; i < p.wire_down.size(); ++i) EXPECT_TRUE(protocol::is_data_record(p.wire_down[i]));
    }
}

TEST(Client, AlertKeepsSessionReady) {
    Fixture fx;
    auto box = fx.make_box(11, obox::Coverage::Both, {ids_sf(), rdr_sf()});
    Path p;
    p.hops = {{&box}};
    auto [s, get] = fx.begin(both_chains());
    p.handshake(s, get, fx.rng);
    auto got = p.exchange(s, to_bytes("GET /x?q=malware-sig-01 HTTP/1.1\r\n\r\n"));
    EXPECT_TRUE(got);
    ASSERT_EQ(s.notifications.size(), 1u);
    EXPECT_EQ(s.notifications[0].kind, protocol::VerdictKind::Alert);
    EXPECT_EQ(s.notifications[0].box_id, 11u);
    EXPECT_EQ(s.state, client::SessionState::Ready);
}

TEST(Client, TerminateVerdictEndsSession) {
    Fixture fx;
    auto box = fx.make_box(11, obox::Coverage::Both, {ids_sf(), rdr_sf()});
    Path p;
    p.hops = {{&box}};
    auto [s, get] = fx.begin(both_chains());
    p.handshake(s, get, fx.rng);
    auto got = p.exchange(s, to_bytes("GET /kill-switch HTTP/1.1\r\n\r\n"));
    EXPECT_FALSE(got);
    EXPECT_EQ(s.state, client::SessionState::Terminated);
    EXPECT_THROW(client::send_app_data(s, to_bytes("x")), OpsecError);
    try {
        client::send_app_data(s, to_bytes("x"));
    } catch (const OpsecError& e) {
        EXPECT_EQ(e.code(), Errc::SessionNotReady);
    }
}

TEST(Client, UpOnlyBoxAlertArrivesViaReflection) {
    Fixture fx;
    auto box = fx.make_box(71, obox::Coverage::Up, {ids_sf()});
    Path p;
    p.hops = {{&box}};
    auto [s, get] = fx.begin({{IDS}, {}});
    p.handshake(s, get, fx.rng);
    ASSERT_EQ(s.state, client::SessionState::Ready);
    p.exchange(s, to_bytes("GET /malware-sig-01 HTTP/1.1\r\n\r\n"));
    ASSERT_EQ(s.notifications.size(), 1u);
    EXPECT_EQ(s.notifications[0].box_id, 71u);
}

TEST(Client, UnverifiableAlertIsDroppedAsSpoofed) {
    Fixture fx;
    auto box = fx.make_box(11, obox::Coverage::Both, {ids_sf(), rdr_sf()});
    Path p;
    p.hops = {{&box}};
    auto [s, get] = fx.begin(both_chains());
    p.handshake(s, get, fx.rng);
    protocol::AlertRecord rec;
    rec.tag = s.tag;
    rec.box_id = 11;
    rec.counter = protocol::ALERT_COUNTER_BASE + 1;
    rec.ciphertext = keys::seal(keys::SymKey{}, rec.counter, protocol::AlertBody{}.encode());
    EXPECT_EQ(client::on_alert(s, rec.encode()), client::AlertOutcome::Dropped);
    EXPECT_EQ(s.spoofed_alerts, 1);
    EXPECT_EQ(s.state, client::SessionState::Ready);
}

TEST(Client, SendBeforeReadyThrows) {
    Fixture fx;
    auto [s, get] = fx.begin(both_chains());
    EXPECT_THROW(client::send_app_data(s, to_bytes("x")), OpsecError);
}
