#include "opsec/obox.hpp"

#include <algorithm>
#include <cstring>

#include "opsec/error.hpp"
#include "opsec/http.hpp"
#include "opsec/origin.hpp"

namespace opsec::obox {

using protocol::Dir;
using protocol::Phase;
using wire::MessageType;
using wire::OpsecMessage;

namespace {

std::string_view as_text(ByteView v) { return {reinterpret_cast<const char*>(v.data()), v.size()}; }

BoxOutput passthrough(ByteView payload) {
    BoxOutput o;
    o.payload.assign(payload.begin(), payload.end());
    return o;
}

BoxOutput dropped() {
    BoxOutput o;
    o.drop = true;
    return o;
}

keys::SymKey to_key(const Bytes& b) {
    keys::SymKey k{};
    if (b.size() != k.size()) throw OpsecError(Errc::InvalidArgument, "key length");
    std::memcpy(k.data(), b.data(), k.size());
    return k;
}

bool sf_serves(SfDirection sd, Dir d) {
    return sd == SfDirection::Both || (sd == SfDirection::Up) == (d == Dir::Up);
}

} // namespace

const char* coverage_name(Coverage c) {
    switch (c) {
    case Coverage::Up: return "up";
    case Coverage::Down: return "down";
    case Coverage::Both: return "both";
    }
    return "?";
}

SecurityFunction keyword_ids(const std::string& name, std::vector<std::pair<std::string, VerdictKind>> signatures,
                             SfDirection dir) {
    SecurityFunction sf;
    sf.id = protocol::sf_id_from_name(name);
    sf.name = name;
    sf.direction = dir;
    sf.inspect = [signatures = std::move(signatures)](ByteView payload, const FlowContext&) {
        auto text = as_text(payload);
        for (auto& [sig, kind] : signatures)
            if (text.find(sig) != std::string_view::npos) return Verdict{kind, "signature " + sig};
        return Verdict{};
    };
    return sf;
}

SecurityFunction url_blocklist(const std::string& name, std::vector<std::string> blocked, VerdictKind kind) {
    SecurityFunction sf;
    sf.id = protocol::sf_id_from_name(name);
    sf.name = name;
    sf.direction = SfDirection::Up;
    sf.inspect = [blocked = std::move(blocked), kind](ByteView payload, const FlowContext&) {
        auto path = http::request_path(payload);
        if (path)
            for (auto& b : blocked)
                if (path->rfind(b, 0) == 0) return Verdict{kind, "blocked url " + b};
        return Verdict{};
    };
    return sf;
}

SecurityFunction byte_counter(const std::string& name) {
    SecurityFunction sf;
    sf.id = protocol::sf_id_from_name(name);
    sf.name = name;
    sf.direction = SfDirection::Both;
    sf.inspect = [](ByteView, const FlowContext&) { return Verdict{}; };
    return sf;
}

bool is_control_response(ByteView payload) {
    auto resp = http::parse_response(payload);
    if (!resp) return false;
    auto msgs = wire::extract_from_path(origin::reflected_text(*resp));
    return protocol::find_message(msgs, MessageType::OpsecHello) ||
           protocol::find_message(msgs, MessageType::ServReq);
}

BoxState::BoxState(uint32_t box_id, keys::KeyPair keypair, Bytes quote, Coverage coverage,
                   std::vector<SecurityFunction> catalog, uint64_t seed, size_t path_budget)
    : box_id_(box_id),
      keypair_(std::move(keypair)),
      quote_(std::move(quote)),
      coverage_(coverage),
      catalog_(std::move(catalog)),
      rng_(seed),
      path_budget_(path_budget) {}

bool BoxState::flow_ready(const protocol::SessionTag& tag) const {
    auto it = flows_.find(tag);
    return it != flows_.end() && it->second.ready;
}

std::optional<protocol::SessionTag> BoxState::bound_session(ConnId conn) const {
    auto it = bindings_.find(conn);
    if (it == bindings_.end()) return std::nullopt;
    return it->second;
}

void BoxState::drop_session(const protocol::SessionTag& tag) {
    flows_.erase(tag);
    std::erase_if(bindings_, [&](auto& kv) { return kv.second == tag; });
}

const SecurityFunction* BoxState::find_sf(const SfId& id) const {
    for (auto& sf : catalog_)
        if (sf.id == id) return &sf;
    return nullptr;
}

std::vector<keys::Digest> BoxState::catalog_lookup(const std::vector<SfId>& requested) const {
    std::vector<keys::Digest> out;
    for (auto& id : requested)
        if (find_sf(id)) out.push_back(protocol::announce_hash(id));
    return out;
}

std::vector<keys::Digest> BoxState::announce(const std::vector<protocol::DiscEntry>& req, Dir dir) const {
    std::vector<SfId> ids;
    for (auto& e : req) {
        if (e.dir != dir) continue;
        auto* sf = find_sf(e.sf);
        if (sf && sf_serves(sf->direction, dir)) ids.push_back(e.sf);
    }
    return catalog_lookup(ids);
}

BoxState::Flow* BoxState::start_flow(const std::vector<OpsecMessage>& msgs) {
    auto* hm = protocol::find_message(msgs, MessageType::OpsecHello);
    auto* dm = protocol::find_message(msgs, MessageType::ServDisc);
    if (!hm || !dm) return nullptr;
    auto hello = protocol::OpsecHello::decode(hm->payload);
    auto disc = protocol::ServDisc::decode(dm->payload);
    if (!hello || !disc) return nullptr;
    auto tag = protocol::session_tag_for(hello->client_nonce);
    Flow f;
    f.tag = tag;
    f.client_nonce = hello->client_nonce;
    f.box_nonce = keys::make_nonce(rng_);
    f.servdisc_seen = wire::encode_message(*dm);
    f.requested = disc->entries;
    auto [it, _] = flows_.insert_or_assign(tag, std::move(f));
    return &it->second;
}

std::optional<OpsecMessage> BoxState::hello_message(Flow& f) {
    protocol::ObHello h{keypair_.public_part, f.box_nonce, quote_};
    return OpsecMessage{MessageType::ObHello, box_id_, h.encode()};
}

OpsecMessage BoxState::servann_message(const Flow& f, Phase phase) const {
    protocol::ServAnn a;
    a.phase = phase;
    a.servdisc_digest = keys::sha256(f.servdisc_seen);
    a.hashes = announce(f.requested, phase == Phase::Request ? Dir::Up : Dir::Down);
    a.signature = keys::sign(keypair_.private_part, a.signed_body(box_id_));
    return {MessageType::ServAnn, box_id_, a.encode()};
}

std::optional<OpsecMessage> BoxState::process_servreq(const OpsecMessage& req_msg) {
    auto req = protocol::ServReq::decode(req_msg.payload);
    if (!req) return std::nullopt;
    auto it = flows_.find(req->tag);
    if (it == flows_.end()) return std::nullopt;
    auto g = std::find_if(req->grants.begin(), req->grants.end(), [&](auto& gr) { return gr.box_id == box_id_; });
    if (g == req->grants.end()) return std::nullopt;
    Flow& f = it->second;
    open_audit_.push_back({f.tag, true});
    std::optional<protocol::GrantBody> body;
    try {
        body = protocol::GrantBody::decode(keys::asym_open(keypair_.private_part, g->sealed));
        if (!body) throw OpsecError(Errc::AuthenticationFailure, "grant");
        f.channel = keys::make_channel(body->master_secret, f.client_nonce, f.box_nonce);
        f.up_egress.reset();
        f.down_ingress.reset();
        f.content_key.reset();
        if (!body->up_egress_key.empty()) f.up_egress = to_key(body->up_egress_key);
        if (!body->down_ingress_key.empty()) f.down_ingress = to_key(body->down_ingress_key);
        if (!body->content_key.empty()) f.content_key = to_key(body->content_key);
    } catch (const OpsecError&) {
        ++metrics_.grant_open_failures;
        drop_session(f.tag);
        return std::nullopt;
    }
    ++metrics_.grants_opened;
    f.flags = body->flags;
    f.up_sfs.clear();
    f.down_sfs.clear();
    for (auto& a : req->assignments) {
        if (a.box_id != box_id_) continue;
        (a.dir == Dir::Up ? f.up_sfs : f.down_sfs).push_back(a.sf);
    }
    f.up_guard = {};
    f.down_guard = {};
    f.ready = true;
    protocol::ObReady ready{keys::sign_transcript(keypair_.private_part, f.servdisc_seen,
                                                  wire::encode_message(req_msg))};
    return OpsecMessage{MessageType::ObReady, box_id_, ready.encode()};
}

BoxOutput BoxState::on_transit_request(ByteView payload, ConnId conn) {
    auto path = http::request_path(payload);
    if (!path || !covers_up(coverage_)) return passthrough(payload);
    auto msgs = wire::extract_from_path(*path);
    if (msgs.empty()) return passthrough(payload);

    std::optional<protocol::SessionTag> tag;
    std::vector<OpsecMessage> added;
    if (auto* req = protocol::find_message(msgs, MessageType::ServReq)) {
        auto ready = process_servreq(*req);
        if (!ready) return passthrough(payload);
        tag = protocol::ServReq::decode(req->payload)->tag;
        added.push_back(*ready);
    } else {
        Flow* f = start_flow(msgs);
        if (!f) return passthrough(payload);
        tag = f->tag;
        added.push_back(*hello_message(*f));
        added.push_back(servann_message(*f, Phase::Request));
    }

    auto all = msgs;
    all.insert(all.end(), added.begin(), added.end());
    std::string new_path = wire::embed_in_path(all);
    if (new_path.size() > path_budget_) {
        ++metrics_.abstained;
        drop_session(*tag);
        return passthrough(payload);
    }
    if (added.front().msg_type == MessageType::ObHello) ++metrics_.hellos_appended;
    bindings_[conn] = *tag;
    std::string text(as_text(payload));
    text.replace(text.find(*path), path->size(), new_path);
    BoxOutput o;
    o.payload = to_bytes(text);
    return o;
}

BoxOutput BoxState::on_transit_response(ByteView payload, ConnId conn) {
    if (!covers_down(coverage_)) return passthrough(payload);
    auto resp = http::parse_response(payload);
    if (!resp) return passthrough(payload);
    auto msgs = wire::extract_from_path(origin::reflected_text(*resp));
    if (msgs.empty()) return passthrough(payload);

    std::optional<protocol::SessionTag> tag;
    std::vector<OpsecMessage> added;
    if (auto* req = protocol::find_message(msgs, MessageType::ServReq)) {
        if (coverage_ != Coverage::Down) return passthrough(payload);
        auto ready = process_servreq(*req);
        if (!ready) return passthrough(payload);
        tag = protocol::ServReq::decode(req->payload)->tag;
        added.push_back(*ready);
    } else if (coverage_ == Coverage::Both) {
        auto* hm = protocol::find_message(msgs, MessageType::OpsecHello);
        auto hello = hm ? protocol::OpsecHello::decode(hm->payload) : std::nullopt;
        if (!hello) return passthrough(payload);
        auto it = flows_.find(protocol::session_tag_for(hello->client_nonce));
        if (it == flows_.end()) return passthrough(payload);
        tag = it->first;
        added.push_back(servann_message(it->second, Phase::Response));
    } else {
        Flow* f = start_flow(msgs);
        if (!f) return passthrough(payload);
        tag = f->tag;
        added.push_back(*hello_message(*f));
        added.push_back(servann_message(*f, Phase::Response));
    }

    auto all = msgs;
    all.insert(all.end(), added.begin(), added.end());
    std::string new_path = wire::embed_in_path(all);
    if (new_path.size() > path_budget_) {
        ++metrics_.abstained;
        drop_session(*tag);
        return passthrough(payload);
    }
    if (added.front().msg_type == MessageType::ObHello) ++metrics_.hellos_appended;
    bindings_[conn] = *tag;
    if (auto loc = resp->headers.find("Location"); loc != resp->headers.end())
        loc->second = http::replace_envelope(loc->second, new_path);
    resp->body = http::replace_envelope(resp->body, new_path);
    BoxOutput o;
    o.payload = http::response_bytes(*resp);
    return o;
}

Verdict BoxState::run_chain(Flow& f, const std::vector<SfId>& chain, ByteView pt, portplan::Direction dir,
                            BoxOutput& out) {
    FlowContext ctx{dir, f.tag};
    for (auto& id : chain) {
        auto* sf = find_sf(id);
        if (!sf) continue;
        ++metrics_.inspected[sf->name];
        if (inspect_trace_.size() < 100000) inspect_trace_.push_back(sf->name);
        Verdict v = sf->inspect(pt, ctx);
        if (v.kind == VerdictKind::Pass) continue;
        deliver_alert(f, alert_record(f, v.kind, id, v.reason), out);
        if (v.kind == VerdictKind::Terminate) {
            f.terminated = true;
            ++metrics_.terminated_flows;
            return v;
        }
    }
    return {};
}

Bytes BoxState::alert_record(Flow& f, VerdictKind kind, const SfId& sf, const std::string& reason) {
    protocol::AlertBody body{kind, sf, reason};
    protocol::AlertRecord rec;
    rec.tag = f.tag;
    rec.box_id = box_id_;
    rec.counter = protocol::ALERT_COUNTER_BASE + ++f.alert_counter;
    rec.ciphertext = keys::seal(f.channel.key_down, rec.counter, body.encode());
    ++metrics_.alerts_emitted;
    return rec.encode();
}

void BoxState::deliver_alert(Flow&, Bytes record, BoxOutput& out) {
    if (covers_down(coverage_)) {
        out.to_client.push_back(std::move(record));
    } else {
        std::string path = "/" + std::string(wire::OPSEC_PATH_PREFIX) + "/" + wire::base64url_encode(record);
        out.to_server.push_back(http::request_bytes(path, "alert"));
    }
}

BoxOutput BoxState::on_data_packet(ByteView payload, ConnId conn, portplan::Direction dir) {
    auto rec = protocol::DataRecord::decode(payload);
    std::optional<protocol::SessionTag> tag;
    if (rec) tag = rec->tag;
    else if (dir == portplan::Direction::Downstream) tag = bound_session(conn);
    if (!tag) {
        ++metrics_.passthrough;
        return passthrough(payload);
    }
    auto it = flows_.find(*tag);
    if (it == flows_.end() || !it->second.ready) {
        ++metrics_.passthrough;
        return passthrough(payload);
    }
    Flow& f = it->second;
    bindings_[conn] = f.tag;
    if (f.terminated) return dropped();

    BoxOutput out;
    if (dir == portplan::Direction::Upstream) {
        if (!(f.flags & protocol::grant_flags::UP_MEMBER)) return passthrough(payload);
        Bytes pt;
        open_audit_.push_back({f.tag, true});
        try {
            if (rec->counter <= f.up_guard.last()) throw OpsecError(Errc::ReplayDetected, "up");
            pt = keys::open(f.channel.key_up, rec->counter, rec->ciphertext);
            f.up_guard.accept(rec->counter);
        } catch (const OpsecError&) {
            ++metrics_.auth_failures;
            return dropped();
        }
        ++metrics_.records_opened;
        if (run_chain(f, f.up_sfs, pt, dir, out).kind == VerdictKind::Terminate) {
            out.drop = true;
            return out;
        }
        const keys::SymKey* egress = nullptr;
        if (f.up_egress) egress = &*f.up_egress;
        else if (f.content_key && (f.flags & protocol::grant_flags::UP_LAST)) egress = &*f.content_key;
        if (!egress) {
            out.payload = std::move(pt);
            return out;
        }
        protocol::DataRecord next;
        next.tag = f.tag;
        next.counter = ++f.up_egress_counter;
        next.ciphertext = keys::seal(*egress, next.counter, pt);
        out.payload = next.encode();
        return out;
    }

    if (!(f.flags & protocol::grant_flags::DOWN_MEMBER)) return passthrough(payload);
    const keys::SymKey* ingress = nullptr;
    if (f.flags & protocol::grant_flags::DOWN_FIRST) {
        if (f.content_key) ingress = &*f.content_key;
    } else {
        ingress = f.down_ingress ? &*f.down_ingress : nullptr;
        if (!ingress) {
            ++metrics_.chain_gaps;
            return dropped();
        }
    }
    Bytes pt;
    if (!ingress) {
        if (rec) {
            ++metrics_.chain_gaps;
            return dropped();
        }
        pt.assign(payload.begin(), payload.end());
    } else {
        if (!rec) {
            ++metrics_.chain_gaps;
            return dropped();
        }
        open_audit_.push_back({f.tag, true});
        try {
            if (rec->counter <= f.down_guard.last()) throw OpsecError(Errc::ReplayDetected, "down");
            pt = keys::open(*ingress, rec->counter, rec->ciphertext);
            f.down_guard.accept(rec->counter);
        } catch (const OpsecError&) {
            ++metrics_.auth_failures;
            return dropped();
        }
        ++metrics_.records_opened;
    }
    if (run_chain(f, f.down_sfs, pt, dir, out).kind == VerdictKind::Terminate) {
        out.drop = true;
        return out;
    }
    protocol::DataRecord next;
    next.tag = f.tag;
    next.counter = ++f.down_counter;
    next.ciphertext = keys::seal(f.channel.key_down, next.counter, pt);
    out.payload = next.encode();
    return out;
}

} // namespace opsec::obox
