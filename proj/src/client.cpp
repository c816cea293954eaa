#include "opsec/client.hpp"

#include <algorithm>
#include <set>

#include "opsec/http.hpp"

namespace opsec::client {

using protocol::Assignment;
using protocol::Dir;
using wire::MessageType;
using wire::OpsecMessage;

namespace {

void abort_session(ClientSession& s, Errc why, std::string diag) {
    s.state = SessionState::Aborted;
    s.abort_reason = why;
    s.diagnostic = std::move(diag);
}

keys::Digest servdisc_digest(const ClientSession& s) { return keys::sha256(s.transcript.servdisc); }

// Picks boxes for each chain entry: first verified announcer at or after the
// previous entry's position, so chain order survives the split across boxes.
std::vector<Assignment> assign(const ClientSession& s, Dir dir, const std::vector<SfId>& chain,
                               bool& complete) {
    std::vector<const DiscoveredBox*> order;
    for (auto& b : s.discovered) {
        if (!b.verified) continue;
        if (dir == Dir::Up && b.up_pos) order.push_back(&b);
        if (dir == Dir::Down && b.down_pos) {
            if (s.origin_closes && !b.up_pos) continue;
            order.push_back(&b);
        }
    }
    std::sort(order.begin(), order.end(), [dir](auto* a, auto* b) {
        return dir == Dir::Up ? *a->up_pos < *b->up_pos : *a->down_pos < *b->down_pos;
    });
    std::vector<Assignment> out;
    size_t floor = 0;
    for (auto& sf : chain) {
        auto h = protocol::announce_hash(sf);
        bool found = false;
        for (size_t i = floor; i < order.size(); ++i) {
            auto& hs = dir == Dir::Up ? order[i]->up_hashes : order[i]->down_hashes;
            if (std::find(hs.begin(), hs.end(), h) != hs.end()) {
                out.push_back({dir, sf, order[i]->box_id});
                floor = i;
                found = true;
                break;
            }
        }
        if (!found) complete = false;
    }
    return out;
}

std::vector<uint32_t> chain_boxes(const ClientSession& s, Dir dir) {
    std::vector<uint32_t> out;
    for (auto& a : s.assignments)
        if (a.dir == dir && (out.empty() || out.back() != a.box_id)) out.push_back(a.box_id);
    return out;
}

Bytes key_bytes(const keys::SymKey& k) { return Bytes(k.begin(), k.end()); }

std::optional<HttpGet> send_servreq(ClientSession& s, Rng& rng) {
    s.up_chain = chain_boxes(s, Dir::Up);
    s.down_chain = chain_boxes(s, Dir::Down);
    std::set<uint32_t> selected;
    for (auto& a : s.assignments) selected.insert(a.box_id);

    for (uint32_t id : selected) {
        if (s.channels.count(id)) continue;
        const DiscoveredBox* b = s.box(id);
        Bytes entropy = rng.bytes(32);
        auto ms = keys::derive_master_secret(s.client_nonce, b->box_nonce, entropy);
        s.channels[id] = keys::make_channel(ms, s.client_nonce, b->box_nonce);
    }
    for (auto it = s.channels.begin(); it != s.channels.end();) {
        if (!selected.count(it->first)) it = s.channels.erase(it);
        else ++it;
    }
    if (s.target.tls_like && s.content_key.empty()) s.content_key = rng.bytes(keys::KEY_LEN);

    protocol::ServReq req;
    req.tag = s.tag;
    req.assignments = s.assignments;
    for (uint32_t id : selected) {
        protocol::GrantBody g;
        g.master_secret = s.channels[id].master_secret;
        auto up = std::find(s.up_chain.begin(), s.up_chain.end(), id);
        auto down = std::find(s.down_chain.begin(), s.down_chain.end(), id);
        bool chain_end = false;
        if (up != s.up_chain.end()) {
            g.flags |= protocol::grant_flags::UP_MEMBER;
            if (up + 1 != s.up_chain.end()) g.up_egress_key = key_bytes(s.channels[*(up + 1)].key_up);
            else {
                g.flags |= protocol::grant_flags::UP_LAST;
                chain_end = true;
            }
        }
        if (down != s.down_chain.end()) {
            g.flags |= protocol::grant_flags::DOWN_MEMBER;
            if (down != s.down_chain.begin()) g.down_ingress_key = key_bytes(s.channels[*(down - 1)].key_down);
            else {
                g.flags |= protocol::grant_flags::DOWN_FIRST;
                chain_end = true;
            }
        }
        if (chain_end && s.target.tls_like) g.content_key = s.content_key;
        req.grants.push_back({id, keys::asym_seal(s.box(id)->public_part, g.encode(), rng)});
    }
    OpsecMessage msg{MessageType::ServReq, 0, req.encode()};
    std::string path;
    try {
        path = wire::make_envelope({msg}).origin_path;
        if (path.size() > s.policy.path_budget) throw OpsecError(Errc::PathBudgetExceeded, "ServReq");
        s.transcript.servreq = wire::encode_message(msg);
    } catch (const OpsecError& e) {
        abort_session(s, e.code(), e.what());
        return std::nullopt;
    }
    s.state = SessionState::AwaitResponse2;
    ++s.rounds;
    return make_get(s, path);
}

void finish_unprotected(ClientSession& s) {
    s.assignments.clear();
    s.up_chain.clear();
    s.down_chain.clear();
    s.state = SessionState::Ready;
}

} // namespace

const char* state_name(SessionState st) {
    switch (st) {
    case SessionState::Idle: return "Idle";
    case SessionState::AwaitResponse1: return "AwaitResponse1";
    case SessionState::AwaitResponse2: return "AwaitResponse2";
    case SessionState::Ready: return "Ready";
    case SessionState::Aborted: return "Aborted";
    case SessionState::Terminated: return "Terminated";
    }
    return "?";
}

const DiscoveredBox* ClientSession::box(uint32_t id) const {
    for (auto& b : discovered)
        if (b.box_id == id) return &b;
    return nullptr;
}

HttpGet make_get(const ClientSession& s, std::string path) {
    HttpGet g;
    g.dst_port = s.legacy ? s.target.p_s : s.ports.p_star;
    g.ts_val = s.legacy ? 0 : portplan::pack_ts(s.ports.p_star, s.ports.p_c);
    g.path = std::move(path);
    return g;
}

void rebind_port(ClientSession& s, uint16_t p_c) { s.ports.p_c = p_c; }

std::pair<ClientSession, std::optional<HttpGet>> begin_session(const Target& target, const SfcSpec& sfc,
                                                               const SessionPolicy& policy, Rng& rng,
                                                               const portplan::PortRegistry& reg,
                                                               uint16_t p_c, const Bytes& authority_public) {
    ClientSession s;
    s.target = target;
    s.sfc = sfc;
    s.policy = policy;
    s.authority_public = authority_public;
    s.keypair = keys::generate_keypair(rng);
    s.client_nonce = keys::make_nonce(rng);
    s.tag = protocol::session_tag_for(s.client_nonce);
    s.ports.p_c = p_c;
    s.ports.p_s = target.p_s;

    auto eligible = reg.opsec_ports_for(target.p_s);
    if (sfc.empty() && policy.fail_mode == FailMode::FailOpen) {
        s.legacy = true;
        s.state = SessionState::Ready;
        return {std::move(s), std::nullopt};
    }
    if (eligible.empty()) {
        s.legacy = true;
        if (policy.fail_mode == FailMode::FailClosed) abort_session(s, Errc::NoWillingBox, "no Opsec port for target");
        else s.state = SessionState::Ready;
        return {std::move(s), std::nullopt};
    }
    s.ports.p_star = eligible[rng.below(eligible.size())];

    protocol::OpsecHello hello{s.keypair.public_part, s.client_nonce};
    protocol::ServDisc disc;
    for (auto& id : sfc.sfc_up) disc.entries.push_back({Dir::Up, id});
    for (auto& id : sfc.sfc_down) disc.entries.push_back({Dir::Down, id});
    OpsecMessage m1{MessageType::OpsecHello, 0, hello.encode()};
    OpsecMessage m2{MessageType::ServDisc, 0, disc.encode()};
    std::string path;
    try {
        s.transcript.opsec_hello = wire::encode_message(m1);
        s.transcript.servdisc = wire::encode_message(m2);
        path = wire::make_envelope({m1, m2}).origin_path;
        if (path.size() > policy.path_budget)
            throw OpsecError(Errc::PathBudgetExceeded, std::to_string(path.size()) + " characters");
    } catch (const OpsecError& e) {
        abort_session(s, e.code(), e.what());
        return {std::move(s), std::nullopt};
    }
    s.state = SessionState::AwaitResponse1;
    s.rounds = 1;
    auto get = make_get(s, path);
    return {std::move(s), get};
}

std::optional<HttpGet> on_response_1(ClientSession& s, std::string_view reflected, bool origin_closes, Rng& rng) {
    if (s.state != SessionState::AwaitResponse1) return std::nullopt;
    s.origin_closes = origin_closes;
    auto msgs = wire::extract_from_path(reflected);

    if (!msgs.empty()) {
        auto* hello = protocol::find_message(msgs, MessageType::OpsecHello, 0u);
        auto* disc = protocol::find_message(msgs, MessageType::ServDisc, 0u);
        if (!hello || !disc || wire::encode_message(*hello) != s.transcript.opsec_hello ||
            wire::encode_message(*disc) != s.transcript.servdisc) {
            abort_session(s, Errc::TranscriptTampered, "transcript tampered: reflected discovery differs");
            return std::nullopt;
        }
    }

    s.discovered.clear();
    for (auto& m : msgs) {
        if (m.msg_type != MessageType::ObHello || m.box_id == 0 || s.box(m.box_id)) continue;
        auto ob = protocol::ObHello::decode(m.payload);
        if (!ob) continue;
        DiscoveredBox b;
        b.box_id = m.box_id;
        b.public_part = ob->box_public;
        b.box_nonce = ob->box_nonce;
        b.quote = keys::AttestationQuote::parse(ob->quote);
        b.verified = b.quote && b.quote->box_identity == m.box_id &&
                     keys::verify_quote_for(s.authority_public, *b.quote, b.public_part);
        s.discovered.push_back(std::move(b));
    }

    size_t up_idx = 0, down_idx = 0;
    const auto digest = servdisc_digest(s);
    for (auto& m : msgs) {
        if (m.msg_type != MessageType::ServAnn) continue;
        auto it = std::find_if(s.discovered.begin(), s.discovered.end(),
                               [&](auto& b) { return b.box_id == m.box_id; });
        if (it == s.discovered.end() || !it->verified) continue;
        auto ann = protocol::ServAnn::decode(m.payload);
        if (!ann || !keys::verify(it->public_part, ann->signed_body(m.box_id), ann->signature) ||
            ann->servdisc_digest != digest) {
            abort_session(s, Errc::TranscriptTampered, "transcript tampered: announcement mismatch");
            return std::nullopt;
        }
        if (ann->phase == protocol::Phase::Request && !it->up_pos) {
            it->up_pos = up_idx++;
            it->up_hashes = ann->hashes;
        } else if (ann->phase == protocol::Phase::Response && !it->down_pos) {
            it->down_pos = down_idx++;
            it->down_hashes = ann->hashes;
        }
    }

    bool complete = true;
    s.assignments = assign(s, Dir::Up, s.sfc.sfc_up, complete);
    auto down = assign(s, Dir::Down, s.sfc.sfc_down, complete);
    s.assignments.insert(s.assignments.end(), down.begin(), down.end());

    if (!complete && s.policy.fail_mode == FailMode::FailClosed) {
        abort_session(s, Errc::NoWillingBox, "no willing box for a requested function");
        return std::nullopt;
    }
    if (s.assignments.empty()) {
        finish_unprotected(s);
        return std::nullopt;
    }
    return send_servreq(s, rng);
}

std::optional<HttpGet> on_response_2(ClientSession& s, std::string_view reflected, Rng& rng) {
    if (s.state != SessionState::AwaitResponse2) return std::nullopt;
    auto msgs = wire::extract_from_path(reflected);
    if (!msgs.empty()) {
        auto* req = protocol::find_message(msgs, MessageType::ServReq, 0u);
        if (!req || wire::encode_message(*req) != s.transcript.servreq) {
            abort_session(s, Errc::TranscriptTampered, "transcript tampered: reflected ServReq differs");
            return std::nullopt;
        }
    }
    std::set<uint32_t> silent;
    for (auto& [id, ch] : s.channels) {
        auto* m = protocol::find_message(msgs, MessageType::ObReady, id);
        if (!m) {
            silent.insert(id);
            continue;
        }
        auto ready = protocol::ObReady::decode(m->payload);
        if (!ready || !keys::verify_transcript(s.box(id)->public_part, s.transcript.servdisc,
                                               s.transcript.servreq, ready->signature)) {
            abort_session(s, Errc::TranscriptTampered, "transcript tampered: ObReady signature mismatch");
            return std::nullopt;
        }
    }
    if (silent.empty()) {
        s.state = SessionState::Ready;
        return std::nullopt;
    }
    if (s.policy.fail_mode == FailMode::FailClosed) {
        abort_session(s, Errc::NoWillingBox, "assigned box did not confirm");
        return std::nullopt;
    }
    std::erase_if(s.assignments, [&](const Assignment& a) { return silent.count(a.box_id) > 0; });
    if (s.assignments.empty() || s.repaired) {
        finish_unprotected(s);
        return std::nullopt;
    }
    // Neighbour keys handed out in the first ServReq referenced the silent box.
    s.repaired = true;
    return send_servreq(s, rng);
}

void on_opsec_unreachable(ClientSession& s) {
    if (s.state == SessionState::Aborted || s.state == SessionState::Terminated) return;
    if (s.policy.fail_mode == FailMode::FailClosed) {
        abort_session(s, Errc::NoWillingBox, "Opsec port unreachable");
        return;
    }
    s.legacy = true;
    finish_unprotected(s);
}

portplan::PacketHeader send_app_data(ClientSession& s, ByteView plaintext) {
    if (s.state != SessionState::Ready) throw OpsecError(Errc::SessionNotReady, state_name(s.state));
    portplan::PacketHeader h;
    h.direction = portplan::Direction::Upstream;
    h.dst_addr = s.target.addr;
    h.src_port = s.ports.p_c;
    auto g = make_get(s, "");
    h.dst_port = g.dst_port;
    h.ts_val = g.ts_val;
    const keys::SymKey* key = nullptr;
    keys::SymKey content{};
    if (!s.up_chain.empty()) {
        key = &s.channels.at(s.up_chain.front()).key_up;
    } else if (s.target.tls_like && !s.content_key.empty()) {
        std::copy(s.content_key.begin(), s.content_key.end(), content.begin());
        key = &content;
    }
    if (!key) {
        h.payload.assign(plaintext.begin(), plaintext.end());
        return h;
    }
    protocol::DataRecord rec;
    rec.tag = s.tag;
    rec.counter = ++s.send_counter;
    rec.ciphertext = keys::seal(*key, rec.counter, plaintext);
    h.payload = rec.encode();
    return h;
}

Bytes receive_app_data(ClientSession& s, ByteView payload) {
    const keys::SymKey* key = nullptr;
    keys::SymKey content{};
    if (!s.down_chain.empty()) {
        key = &s.channels.at(s.down_chain.back()).key_down;
    } else if (s.target.tls_like && !s.content_key.empty()) {
        std::copy(s.content_key.begin(), s.content_key.end(), content.begin());
        key = &content;
    }
    if (!key) return Bytes(payload.begin(), payload.end());
    auto rec = protocol::DataRecord::decode(payload);
    if (!rec || rec->tag != s.tag) throw OpsecError(Errc::AuthenticationFailure, "expected sealed record");
    if (rec->counter <= s.down_guard.last()) throw OpsecError(Errc::ReplayDetected, "downstream record");
    Bytes pt = keys::open(*key, rec->counter, rec->ciphertext);
    s.down_guard.accept(rec->counter);
    return pt;
}

AlertOutcome on_alert(ClientSession& s, ByteView alert_record) {
    auto rec = protocol::AlertRecord::decode(alert_record);
    auto ch = rec ? s.channels.find(rec->box_id) : s.channels.end();
    if (!rec || rec->tag != s.tag || ch == s.channels.end() || rec->counter < protocol::ALERT_COUNTER_BASE) {
        ++s.spoofed_alerts;
        return AlertOutcome::Dropped;
    }
    std::optional<protocol::AlertBody> body;
    try {
        auto& guard = s.alert_guards[rec->box_id];
        if (rec->counter <= guard.last()) throw OpsecError(Errc::ReplayDetected, "alert");
        Bytes pt = keys::open(ch->second.key_down, rec->counter, rec->ciphertext);
        body = protocol::AlertBody::decode(pt);
        if (body) guard.accept(rec->counter);
    } catch (const OpsecError&) {
        body.reset();
    }
    if (!body) {
        ++s.spoofed_alerts;
        return AlertOutcome::Dropped;
    }
    s.notifications.push_back({rec->box_id, body->kind, body->sf, body->reason});
    if (body->kind == protocol::VerdictKind::Terminate) {
        s.state = SessionState::Terminated;
        return AlertOutcome::Terminated;
    }
    return AlertOutcome::Notified;
}

std::optional<Bytes> reflected_alert(std::string_view text) {
    auto span = http::find_envelope(text);
    if (!span) return std::nullopt;
    auto bin = wire::base64url_decode(text.substr(span->begin, span->end - span->begin));
    if (!bin || !protocol::is_alert_record(*bin)) return std::nullopt;
    return bin;
}

} // namespace opsec::client
