#include <gtest/gtest.h>

#include "pipeline.hpp"

using namespace opsec;
using pipeline::Fixture;
using pipeline::Path;

namespace {

const auto IDS = protocol::sf_id_from_name("ids");
const auto RDR = protocol::sf_id_from_name("rdr");

std::vector<obox::SecurityFunction> both_sfs() {
    return {obox::keyword_ids("ids", {{"malware-sig-01", protocol::VerdictKind::Alert}}), obox::byte_counter("rdr")};
}

} // namespace

TEST(Obox, FirstBoxAppendsHelloAndAnnouncement) {
    Fixture fx;
    auto box = fx.make_box(5, obox::Coverage::Both, both_sfs());
    auto [s, get] = fx.begin({{IDS}, {RDR}});
    Bytes req = http::request_bytes(get->path, "origin.example");
    auto out = box.on_transit_request(req, 1);
    EXPECT_FALSE(out.drop);
    auto msgs = wire::extract_from_path(*http::request_path(out.payload));
    ASSERT_EQ(msgs.size(), 4u);
    EXPECT_EQ(msgs[2].msg_type, wire::MessageType::ObHello);
    EXPECT_EQ(msgs[3].msg_type, wire::MessageType::ServAnn);
    EXPECT_EQ(msgs[2].box_id, 5u);
    auto ann = protocol::ServAnn::decode(msgs[3].payload);
    ASSERT_TRUE(ann);
    EXPECT_EQ(ann->phase, protocol::Phase::Request);
    ASSERT_EQ(ann->hashes.size(), 1u);
    EXPECT_EQ(ann->hashes[0], protocol::announce_hash(IDS));
    EXPECT_TRUE(box.has_flow(s.tag));
    EXPECT_FALSE(box.flow_ready(s.tag));
}

TEST(Obox, ServReqForAnotherBoxPassesUntouched) {
    Fixture fx;
    auto a = fx.make_box(1, obox::Coverage::Both, both_sfs());
    auto b = fx.make_box(2, obox::Coverage::Both, {});
    Path p;
    p.hops = {{&b}, {&a}};
    auto [s, get] = fx.begin({{IDS}, {RDR}});
    auto r1 = p.round(*get);
    auto get2 = client::on_response_1(s, *r1, false, fx.rng);
    ASSERT_TRUE(get2);
    Bytes req = http::request_bytes(get2->path, "origin.example");
    auto out = b.on_transit_request(req, 1);
    EXPECT_EQ(out.payload, req);
    EXPECT_FALSE(b.flow_ready(s.tag));
    EXPECT_EQ(b.metrics().grants_opened, 0u);
}

TEST(Obox, NonOpsecFlowIsByteIdenticalPassthrough) {
    Fixture fx;
    auto box = fx.make_box(1, obox::Coverage::Both, both_sfs());
    Bytes legacy = http::request_bytes("/index.html", "example.org");
    EXPECT_EQ(box.on_transit_request(legacy, 9).payload, legacy);
    EXPECT_EQ(box.on_data_packet(legacy, 9, portplan::Direction::Upstream).payload, legacy);
    Bytes resp = to_bytes("HTTP/1.1 200 OK\r\nContent-Length: 2\r\n\r\nok");
    EXPECT_EQ(box.on_data_packet(resp, 9, portplan::Direction::Downstream).payload, resp);
    EXPECT_EQ(box.on_transit_response(resp, 9).payload, resp);
    EXPECT_EQ(box.flow_count(), 0u);
}

TEST(Obox, CatalogLookup) {
    Fixture fx;
    auto box = fx.make_box(1, obox::Coverage::Both, {obox::byte_counter("a")});
    auto a = protocol::sf_id_from_name("a");
    auto b = protocol::sf_id_from_name("b");
    EXPECT_EQ(box.catalog_lookup({a, b}), std::vector<keys::Digest>{protocol::announce_hash(a)});
    EXPECT_EQ(box.catalog_lookup({a, a}).size(), 2u);
    auto empty = fx.make_box(2, obox::Coverage::Both, {});
    EXPECT_TRUE(empty.catalog_lookup({a, b}).empty());
}

TEST(Obox, EmptyCatalogStillAppendsHello) {
    Fixture fx;
    auto box = fx.make_box(3, obox::Coverage::Both, {});
    auto [s, get] = fx.begin({{IDS}, {}});
    auto out = box.on_transit_request(http::request_bytes(get->path, "h"), 1);
    auto msgs = wire::extract_from_path(*http::request_path(out.payload));
    ASSERT_EQ(msgs.size(), 4u);
    EXPECT_TRUE(protocol::ServAnn::decode(msgs[3].payload)->hashes.empty());
}

TEST(Obox, AbstainsWhenBudgetWouldBeExceeded) {
    Fixture fx;
    auto box = fx.make_box(3, obox::Coverage::Both, both_sfs(), false, 400);
    auto [s, get] = fx.begin({{IDS}, {RDR}});
    Bytes req = http::request_bytes(get->path, "h");
    auto out = box.on_transit_request(req, 1);
    EXPECT_EQ(out.payload, req);
    EXPECT_EQ(box.metrics().abstained, 1u);
    EXPECT_FALSE(box.has_flow(s.tag));
}

TEST(Obox, CorruptGrantMeansAbstain) {
    Fixture fx;
    auto box = fx.make_box(1, obox::Coverage::Both, both_sfs());
    Path p;
    p.hops = {{&box, [](Bytes& b) {
                   auto path = *http::request_path(b);
                   auto msgs = wire::extract_from_path(path);
                   auto* m = protocol::find_message(msgs, wire::MessageType::ServReq);
                   if (!m) return;
                   auto req = protocol::ServReq::decode(m->payload);
                   req->grants[0].sealed.back() ^= 0x40;
                   msgs[0].payload = req->encode();
                   std::string text(b.begin(), b.end());
                   text.replace(text.find(path), path.size(), wire::embed_in_path(msgs));
                   b = to_bytes(text);
               }}};
    auto [s, get] = fx.begin({{IDS}, {RDR}});
    auto r1 = p.round(*get);
    auto get2 = client::on_response_1(s, *r1, false, fx.rng);
    auto r2 = p.round(*get2);
    EXPECT_EQ(box.metrics().grant_open_failures, 1u);
    EXPECT_FALSE(box.has_flow(s.tag));
    // the client sees its own ServReq altered in the reflection
    client::on_response_2(s, *r2, fx.rng);
    EXPECT_EQ(s.state, client::SessionState::Aborted);
    EXPECT_EQ(s.abort_reason, Errc::TranscriptTampered);
}

TEST(Obox, AlertForwardsPayload) {
    Fixture fx;
    auto box = fx.make_box(1, obox::Coverage::Both, both_sfs());
    Path p;
    p.hops = {{&box}};
    auto [s, get] = fx.begin({{IDS}, {RDR}});
    p.handshake(s, get, fx.rng);
    Bytes body = to_bytes("GET /malware-sig-01 HTTP/1.1\r\n\r\n");
    auto got = p.exchange(s, body);
    EXPECT_TRUE(got);
    EXPECT_EQ(p.origin_saw, body);
    EXPECT_EQ(box.metrics().alerts_emitted, 1u);
    EXPECT_EQ(s.notifications.size(), 1u);
}

TEST(Obox, ChainOrderIsPreservedPerPacket) {
    Fixture fx;
    std::vector<obox::SecurityFunction> cat = {obox::byte_counter("f2"), obox::byte_counter("f1")};
    auto box = fx.make_box(1, obox::Coverage::Both, cat);
    Path p;
    p.hops = {{&box}};
    auto f1 = protocol::sf_id_from_name("f1");
    auto f2 = protocol::sf_id_from_name("f2");
    auto [s, get] = fx.begin({{f1, f2}, {}});
    p.handshake(s, get, fx.rng);
    ASSERT_EQ(s.state, client::SessionState::Ready);
    for (int i = 0; i < 5; ++i) p.exchange(s, to_bytes("GET / HTTP/1.1\r\n\r\n"));
    auto& tr = box.inspect_trace();
    ASSERT_EQ(tr.size(), 10u);
    for (size_t i = 0; i < tr.size(); i += 2) {
        EXPECT_EQ(tr[i], "f1");
        EXPECT_EQ(tr[i + 1], "f2");
    }
}

TEST(Obox, SelectiveProcessingAudit) {
    Fixture fx;
    auto used = fx.make_box(1, obox::Coverage::Both, both_sfs());
    auto idle = fx.make_box(2, obox::Coverage::Both, both_sfs());
    Path p;
    p.hops = {{&used}, {&idle}};
    auto [s, get] = fx.begin({{IDS}, {}});
    p.handshake(s, get, fx.rng);
    ASSERT_EQ(s.state, client::SessionState::Ready);
    for (int i = 0; i < 3; ++i) p.exchange(s, to_bytes("GET / HTTP/1.1\r\n\r\n"));
    EXPECT_TRUE(idle.open_audit().empty());
    EXPECT_FALSE(used.open_audit().empty());
    for (auto& a : used.open_audit()) EXPECT_TRUE(a.selected);
    EXPECT_EQ(idle.metrics().records_opened, 0u);
}

TEST(Obox, TamperedRecordIsDroppedAndCounted) {
    Fixture fx;
    auto box = fx.make_box(1, obox::Coverage::Both, both_sfs());
    Path p;
    bool flip = false;
    p.hops = {{&box, [&](Bytes& b) {
                   if (flip && protocol::is_data_record(b)) b.back() ^= 1;
               }}};
    auto [s, get] = fx.begin({{IDS}, {RDR}});
    p.handshake(s, get, fx.rng);
    flip = true;
    EXPECT_FALSE(p.exchange(s, to_bytes("GET / HTTP/1.1\r\n\r\n")));
    EXPECT_EQ(box.metrics().auth_failures, 1u);
}

TEST(Obox, ReplayedRecordIsDropped) {
    Fixture fx;
    auto box = fx.make_box(1, obox::Coverage::Both, both_sfs());
    Path p;
    p.hops = {{&box}};
    auto [s, get] = fx.begin({{IDS}, {RDR}});
    p.handshake(s, get, fx.rng);
    auto h = client::send_app_data(s, to_bytes("GET / HTTP/1.1\r\n\r\n"));
    EXPECT_FALSE(box.on_data_packet(h.payload, 1, portplan::Direction::Upstream).drop);
    EXPECT_TRUE(box.on_data_packet(h.payload, 1, portplan::Direction::Upstream).drop);
}

TEST(Obox, ControlResponseDetection) {
    Fixture fx;
    auto [s, get] = fx.begin({{IDS}, {}});
    origin::ServerProfile prof;
    auto r = origin::handle_get(prof, get->path, 0);
    EXPECT_TRUE(obox::is_control_response(http::response_bytes(r)));
    auto plain = origin::handle_get(prof, "/x", 0);
    EXPECT_FALSE(obox::is_control_response(http::response_bytes(plain)));
}
