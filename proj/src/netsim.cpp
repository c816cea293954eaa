#include "opsec/netsim.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <set>
#include <sodium.h>

#include "opsec/error.hpp"
#include "opsec/http.hpp"

namespace opsec::netsim {

using portplan::Addr;
using portplan::Direction;
using portplan::PacketHeader;
namespace tcp = portplan::tcp;

namespace {

constexpr Addr CLIENT_BASE = 0x0A000001;  // 10.0.0.1
constexpr Addr NAT_ADDR = 0xC6336401;     // 198.51.100.1
constexpr Addr ORIGIN_ADDR = 0xCB007101;  // 203.0.113.1
constexpr uint64_t CONTENT_DOWN_BASE = uint64_t(1) << 62;

enum class Leg : uint8_t { Syn, SynAck, Ack, Get, Resp, Rst, Fin, FinAck, Data, Alert };

const char* leg_name(Leg l) {
    switch (l) {
    case Leg::Syn: return "SYN";
    case Leg::SynAck: return "SYN-ACK";
    case Leg::Ack: return "ACK";
    case Leg::Get: return "GET";
    case Leg::Resp: return "RESP";
    case Leg::Rst: return "RST";
    case Leg::Fin: return "FIN";
    case Leg::FinAck: return "FIN-ACK";
    case Leg::Data: return "DATA";
    case Leg::Alert: return "ALERT";
    }
    return "?";
}

uint64_t fnv1a(ByteView b) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (uint8_t c : b) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h | 1;
}

struct Meta {
    uint64_t conn = 0;
    uint32_t session = 0;
    bool hs = false;
    Leg leg = Leg::Data;
    Time sent = 0;
    int first_isp = -1;
    bool opsec_target = false;
    uint16_t target_port = 0;
    uint32_t orig_ts_val = 0;
    Time box_latency = 0;
    bool stream = false;
    bool app = false;
    uint64_t payload_hash = 0;
};

struct Packet {
    PacketHeader h;
    Meta m;
};

enum class Kind : uint8_t { Arrive, Start, ConnectTimeout, ResponseTimeout, Stream, IspRelease, NatRelease, LocalRelease };

struct Event {
    Time t = 0;
    uint64_t seq = 0;
    Kind kind = Kind::Arrive;
    int station = 0;
    Direction dir = Direction::Upstream;
    Packet pkt;
    uint64_t a = 0;
    uint64_t b = 0;
};

struct EventOrder {
    bool operator()(const Event& x, const Event& y) const {
        return x.t != y.t ? x.t > y.t : x.seq > y.seq;
    }
};

using Key4 = std::tuple<Addr, Addr, uint16_t, uint16_t>;

struct ConnEntry {
    uint64_t id = 0;
    portplan::FlowPortState st;
    bool first = false;
    bool holds_port = false;
    Addr client_addr = 0;
    Addr server_addr = 0;
    std::vector<Key4> keys_up;
    std::vector<Key4> keys_down;
    bool closing = false;
    Time depart_up = 0;
    Time depart_down = 0;
};

struct Instance {
    std::unique_ptr<obox::BoxState> box;
    size_t load = 0;
    size_t ever = 0;
    bool retired = false;
    Time busy_until = 0;
};

struct Isp {
    IspSpec spec;
    int station = 0;
    std::string label;  // "isp<id>" in the event log
    keys::KeyPair kp;
    Bytes quote;
    Rng rng{0};
    std::vector<Instance> inst;
    std::map<protocol::SessionTag, size_t> directory;
    std::map<uint64_t, protocol::SessionTag> conn_tag;
    size_t active = 0;
    std::map<Key4, uint64_t> up_index;
    std::map<Key4, uint64_t> down_index;
    std::map<uint64_t, ConnEntry> entries;
    portplan::InUse in_use;
    uint64_t next_entry = 1;
    IspMetrics m;
};

struct Conn {
    uint64_t uid = 0;
    uint16_t local_port = 0;
    uint16_t remote_port = 0;
    bool opsec = false;
    enum class St { SynSent, Established, Closed } st = St::SynSent;
};

enum class Await { None, Resp1, Resp2, Data };

struct Pending {
    Bytes bytes;
    bool stream = false;
};

struct Actor {
    uint32_t id = 0;
    Addr addr = 0;
    bool legacy_flow = false;
    Rng rng{0};
    client::ClientSession cs;
    std::optional<Conn> conn;
    Await await = Await::None;
    std::optional<client::HttpGet> queued_get;
    std::vector<Pending> queued;
    bool handshake_done = false;
    bool ready_on_connect = false;
    bool done = false;
    bool closing = false;
    size_t next_request = 0;
    uint32_t stream_left = 0;
    uint64_t stream_seq = 0;
    uint64_t timer_token = 0;
    SessionMetrics m;
    Time latency_sum = 0;
};

struct HostPorts {
    uint16_t cursor = 0;
    std::set<uint16_t> used;
};

struct OriginConn {
    bool open = false;
};

std::string hex_digest(const uint8_t* d) {
    static const char* hx = "0123456789abcdef";
    std::string s;
    for (int i = 0; i < 32; ++i) {
        s.push_back(hx[d[i] >> 4]);
        s.push_back(hx[d[i] & 15]);
    }
    return s;
}

bool mutate_envelope(Bytes& request, wire::MessageType type, Rng& rng) {
    auto path = http::request_path(request);
    if (!path) return false;
    auto msgs = wire::extract_from_path(*path);
    for (auto& m : msgs) {
        if (m.msg_type != type || m.payload.empty()) continue;
        if (type == wire::MessageType::ServDisc) {
            auto disc = protocol::ServDisc::decode(m.payload);
            if (!disc || disc->entries.empty()) return false;
            size_t e = rng.below(disc->entries.size());
            disc->entries[e].sf[rng.below(32)] += 1;
            m.payload = disc->encode();
        } else {
            m.payload[rng.below(m.payload.size())] += 1;
        }
        std::string text(request.begin(), request.end());
        text.replace(text.find(*path), path->size(), wire::embed_in_path(msgs));
        request = to_bytes(text);
        return true;
    }
    return false;
}

} // namespace

const char* adversary_name(Adversary a) {
    switch (a) {
    case Adversary::Honest: return "honest";
    case Adversary::DropsOpsec: return "drops_opsec";
    case Adversary::TampersServDisc: return "tampers_servdisc";
    case Adversary::TampersServReq: return "tampers_servreq";
    case Adversary::FakeQuote: return "fake_quote";
    }
    return "?";
}

obox::SecurityFunction make_sf(const SfSpec& spec) {
    if (spec.kind == "keyword_ids") {
        std::vector<std::pair<std::string, protocol::VerdictKind>> sigs;
        for (auto& s : spec.signatures) sigs.emplace_back(s.pattern, s.verdict);
        return obox::keyword_ids(spec.name, std::move(sigs), spec.direction);
    }
    if (spec.kind == "url_blocklist") return obox::url_blocklist(spec.name, spec.blocked, spec.verdict);
    if (spec.kind == "byte_counter") {
        auto sf = obox::byte_counter(spec.name);
        sf.direction = spec.direction;
        return sf;
    }
    throw OpsecError(Errc::ConfigInvalid, "catalog: unknown kind " + spec.kind);
}

size_t target_instances(size_t active_flows, uint32_t theta) {
    if (theta == STATIC_POOL) return 1;
    return std::max<size_t>(1, (active_flows + theta - 1) / theta);
}

size_t pick_instance(const std::vector<size_t>& loads, const std::vector<bool>& retired) {
    size_t best = loads.size();
    for (size_t i = 0; i < loads.size(); ++i) {
        if (retired[i]) continue;
        if (best == loads.size() || loads[i] < loads[best]) best = i;
    }
    if (best == loads.size()) throw OpsecError(Errc::InconsistentState, "no live instance");
    return best;
}

Time Scenario::one_way_us() const {
    Time t = 0;
    for (auto d : link_delay_us) t += d;
    return t;
}

void Scenario::validate() const {
    registry.validate();
    if (link_delay_us.size() != isps.size() + 1)
        throw OpsecError(Errc::ConfigInvalid, "path.delays_ms: expected " + std::to_string(isps.size() + 1) + " links");
    for (size_t i = 0; i < link_delay_us.size(); ++i)
        if (link_delay_us[i] <= 0)
            throw OpsecError(Errc::ConfigInvalid, "path.delays_ms[" + std::to_string(i) + "]: must be positive");
    std::set<uint32_t> ids;
    bool willing_up = false, willing_down = false;
    for (size_t i = 0; i < isps.size(); ++i) {
        auto& s = isps[i];
        std::string where = "isps[" + std::to_string(i) + "]";
        if (s.isp_id == 0) throw OpsecError(Errc::ConfigInvalid, where + ".id: must be nonzero");
        if (!ids.insert(s.isp_id).second) throw OpsecError(Errc::ConfigInvalid, where + ".id: duplicate");
        for (auto& sf : s.catalog) {
            if (sf.name.empty()) throw OpsecError(Errc::ConfigInvalid, where + ".catalog: empty name");
            make_sf(sf);
        }
        if (s.willing && s.adversary != Adversary::DropsOpsec) {
            willing_up |= obox::covers_up(s.coverage);
            willing_down |= obox::covers_down(s.coverage);
        }
    }
    if (willing_up && !willing_down)
        throw OpsecError(Errc::ConfigInvalid, "isps: an upstream Opsec ISP needs a downstream-covering one to restore ports");
    if (!registry.listen_port(0) && registry.opsec_ports_for(origin.listen_port).empty())
        throw OpsecError(Errc::ConfigInvalid, "origin.listen_port: no Opsec port binds to it");
    if (traffic.clients == 0) throw OpsecError(Errc::ConfigInvalid, "traffic.clients: must be positive");
    if (traffic.rate_pps <= 0) throw OpsecError(Errc::ConfigInvalid, "traffic.rate_pps: must be positive");
    if (queue.service_us < 0) throw OpsecError(Errc::ConfigInvalid, "queue.service_us: negative");
    if (nat_capacity == 0) throw OpsecError(Errc::ConfigInvalid, "path.nat_capacity: must be positive");
    if (origin_mix) origin_mix->validate();
}

struct Simulation::Impl {
    Scenario sc;
    Rng rng;
    Rng auth_rng;
    keys::AttestationAuthority authority;
    origin::ServerProfile profile;
    std::vector<Isp> isps;
    std::vector<Actor> actors;
    std::vector<Event> heap;
    uint64_t seq = 0;
    Time now = 0;
    Time linger = 0;
    uint64_t next_conn = 1;
    std::map<Addr, HostPorts> hosts;
    std::map<std::pair<Addr, uint16_t>, std::pair<uint32_t, uint64_t>> sockets;  // -> (session, conn uid)
    // NAT
    std::map<std::pair<Addr, uint16_t>, uint16_t> nat_out;
    std::map<uint16_t, std::pair<Addr, uint16_t>> nat_in;
    uint16_t nat_cursor = 0;
    // origin
    std::map<std::pair<Addr, uint16_t>, OriginConn> oconns;
    std::map<protocol::SessionTag, keys::SymKey> tls_keys;
    std::map<protocol::SessionTag, uint64_t> tls_counters;
    Metrics metrics;
    crypto_hash_sha256_state digest;
    std::vector<std::string> lines;
    Rng adv_rng{0};

    explicit Impl(const Scenario& s)
        : sc(s), rng(s.seed), auth_rng(Rng(s.seed).split("authority")), authority(auth_rng) {
        keys::init_crypto();
        sc.validate();
        crypto_hash_sha256_init(&digest);
        adv_rng = rng.split("adversary");
        profile = sc.origin;
        if (sc.origin_mix) {
            Rng r = rng.split("origin");
            profile = origin::sample_profile(*sc.origin_mix, r, sc.origin);
        }
        linger = 4 * sc.one_way_us();
        metrics.one_way_us = sc.one_way_us();

        for (size_t i = 0; i < sc.isps.size(); ++i) {
            Isp isp;
            isp.spec = sc.isps[i];
            isp.station = static_cast<int>(i) + 1;
            isp.label = "isp" + std::to_string(isp.spec.isp_id);
            isp.rng = rng.split("isp", isp.spec.isp_id);
            isp.kp = keys::generate_keypair(isp.rng);
            auto code = keys::boilerplate_code_hash();
            if (isp.spec.adversary == Adversary::FakeQuote) {
                auto rogue = keys::generate_keypair(isp.rng);
                isp.quote = keys::forge_quote(rogue, isp.spec.isp_id, code, isp.kp.public_part).serialize();
            } else {
                authority.register_box(isp.spec.isp_id, code);
                isp.quote = authority.issue_quote(isp.spec.isp_id, code, isp.kp.public_part).serialize();
            }
            isp.m.isp_id = isp.spec.isp_id;
            isps.push_back(std::move(isp));
        }

        char head[160];
        std::snprintf(head, sizeof head, "{\"ev\":\"sim\",\"seed\":%" PRIu64 ",\"one_way\":%" PRId64 ",\"isps\":%zu}",
                      sc.seed, sc.one_way_us(), sc.isps.size());
        log(head);

        Rng starts = rng.split("starts");
        uint32_t total = sc.traffic.sessions + sc.traffic.legacy_sessions;
        for (uint32_t i = 0; i < total; ++i) {
            Actor a;
            a.id = i;
            a.legacy_flow = i >= sc.traffic.sessions;
            a.addr = CLIENT_BASE + (i % sc.traffic.clients);
            a.rng = rng.split("session", i);
            a.m.session = i;
            a.m.client_addr = a.addr;
            a.m.legacy_flow = a.legacy_flow;
            a.stream_left = a.legacy_flow ? 0 : sc.traffic.stream_packets;
            actors.push_back(std::move(a));
            Time t = sc.traffic.start_spread_us > 0 ? starts.range(0, sc.traffic.start_spread_us) : 0;
            Event e;
            e.kind = Kind::Start;
            e.a = i;
            schedule(t, std::move(e));
        }
    }

    void log(const std::string& line) {
        crypto_hash_sha256_update(&digest, reinterpret_cast<const uint8_t*>(line.data()), line.size());
        crypto_hash_sha256_update(&digest, reinterpret_cast<const uint8_t*>("\n"), 1);
        if (sc.keep_event_lines) lines.push_back(line);
    }

    // Opsec message types carried by a handshake payload, '+' separated.
    static std::string carried(const Packet& p) {
        if (!p.m.hs || p.h.payload.empty()) return {};
        std::vector<wire::OpsecMessage> ms;
        try {
            if (http::is_response(p.h.payload)) {
                auto r = http::parse_response(p.h.payload);
                if (r) ms = wire::extract_from_path(origin::reflected_text(*r));
            } else if (auto path = http::request_path(p.h.payload)) {
                ms = wire::extract_from_path(*path);
            }
        } catch (const OpsecError&) {
            return "?";
        }
        std::string out;
        for (auto& m : ms) {
            if (!out.empty()) out += '+';
            out += wire::message_type_name(m.msg_type);
        }
        return out;
    }

    void log_pkt(const char* ev, const char* at, const Packet& p, const char* act = nullptr) {
        char buf[400];
        std::snprintf(buf, sizeof buf,
                      "{\"t\":%" PRId64 ",\"ev\":\"%s\",\"at\":\"%s\",\"s\":%u,\"conn\":%" PRIu64
                      ",\"leg\":\"%s\",\"hs\":%d,\"sent\":%" PRId64
                      ",\"sa\":%u,\"da\":%u,\"sp\":%u,\"dp\":%u,\"tsv\":%u,\"tse\":%u,\"fl\":%u,\"len\":%zu",
                      now, ev, at, p.m.session, p.m.conn, leg_name(p.m.leg), p.m.hs ? 1 : 0, p.m.sent,
                      p.h.src_addr, p.h.dst_addr, p.h.src_port, p.h.dst_port, p.h.ts_val, p.h.ts_ecr, p.h.flags,
                      p.h.payload.size());
        std::string line = buf;
        if (act) line += std::string(",\"act\":\"") + act + "\"";
        std::string msgs = carried(p);
        if (!msgs.empty()) line += ",\"msgs\":\"" + msgs + "\"";
        line += "}";
        log(line);
    }

    void log_state(const Actor& a, const char* what) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "{\"t\":%" PRId64 ",\"ev\":\"state\",\"s\":%u,\"state\":\"%s\"}", now, a.id,
                      what);
        log(buf);
    }

    void schedule(Time t, Event e) {
        e.t = t;
        e.seq = seq++;
        heap.push_back(std::move(e));
        std::push_heap(heap.begin(), heap.end(), EventOrder{});
    }

    void forward(int from, Direction dir, Packet p, Time extra = 0) {
        Event e;
        e.kind = Kind::Arrive;
        e.dir = dir;
        if (dir == Direction::Upstream) {
            e.station = from + 1;
            e.pkt = std::move(p);
            schedule(now + extra + sc.link_delay_us[from], std::move(e));
        } else {
            e.station = from - 1;
            e.pkt = std::move(p);
            schedule(now + extra + sc.link_delay_us[from - 1], std::move(e));
        }
    }

    int origin_station() const { return static_cast<int>(isps.size()) + 1; }

    // ---- client side ----

    uint16_t alloc_local(Addr addr, bool want_opsec_port, Rng& r) {
        auto& hp = hosts[addr];
        auto& reg = sc.registry;
        if (want_opsec_port) {
            std::vector<uint16_t> ps;
            for (auto& [p, s] : reg.bindings)
                if (!hp.used.count(p)) ps.push_back(p);
            if (!ps.empty()) {
                uint16_t p = ps[r.below(ps.size())];
                hp.used.insert(p);
                return p;
            }
        }
        uint32_t span = uint32_t(reg.ephemeral_hi) - reg.ephemeral_lo + 1;
        if (hp.cursor == 0) hp.cursor = static_cast<uint16_t>(reg.ephemeral_lo + r.below(span));
        for (uint32_t i = 0; i < span; ++i) {
            uint16_t p = hp.cursor;
            hp.cursor = p == reg.ephemeral_hi ? reg.ephemeral_lo : p + 1;
            if (hp.used.insert(p).second) return p;
        }
        throw OpsecError(Errc::NatTableFull, "client ports exhausted");
    }

    uint32_t client_clock() const { return static_cast<uint32_t>(1 + now / 1000) & 0x0FFFFFFF; }

    Packet client_packet(Actor& a, uint8_t flags, Bytes payload, Leg leg) {
        Packet p;
        auto& c = *a.conn;
        p.h.src_addr = a.addr;
        p.h.dst_addr = ORIGIN_ADDR;
        p.h.src_port = c.local_port;
        p.h.dst_port = c.remote_port;
        p.h.direction = Direction::Upstream;
        p.h.flags = flags;
        p.h.ts_val = c.opsec ? portplan::pack_ts(c.remote_port, c.local_port) : client_clock();
        p.h.payload = std::move(payload);
        p.m.conn = c.uid;
        p.m.session = a.id;
        p.m.hs = !a.handshake_done;
        p.m.leg = leg;
        p.m.sent = now;
        p.m.opsec_target = c.opsec;
        p.m.target_port = c.remote_port;
        p.m.orig_ts_val = p.h.ts_val;
        p.m.payload_hash = p.h.payload.empty() ? 0 : fnv1a(p.h.payload);
        return p;
    }

    void client_send(Actor& a, Packet p) {
        log_pkt("send", "client", p);
        if (sc.nat) {
            auto key = std::make_pair(p.h.src_addr, p.h.src_port);
            auto it = nat_out.find(key);
            if (it == nat_out.end()) {
                if (nat_out.size() >= sc.nat_capacity) {
                    ++metrics.nat_drops;
                    log_pkt("drop", "nat", p, "NatTableFull");
                    return;
                }
                auto& reg = sc.registry;
                uint32_t span = uint32_t(reg.ephemeral_hi) - reg.ephemeral_lo + 1;
                if (nat_cursor == 0) nat_cursor = reg.ephemeral_lo;
                uint16_t chosen = 0;
                for (uint32_t i = 0; i < span; ++i) {
                    uint16_t c = nat_cursor;
                    nat_cursor = c == reg.ephemeral_hi ? reg.ephemeral_lo : c + 1;
                    if (!nat_in.count(c)) {
                        chosen = c;
                        break;
                    }
                }
                if (!chosen) {
                    ++metrics.nat_drops;
                    log_pkt("drop", "nat", p, "NatTableFull");
                    return;
                }
                it = nat_out.emplace(key, chosen).first;
                nat_in[chosen] = key;
            }
            if (p.h.flags & (tcp::FIN | tcp::RST)) {
                Event e;
                e.kind = Kind::NatRelease;
                e.a = it->second;
                e.b = (uint64_t(p.h.src_addr) << 16) | p.h.src_port;
                schedule(now + linger, std::move(e));
            }
            p.h.src_addr = NAT_ADDR;
            p.h.src_port = it->second;
        }
        (void)a;
        forward(0, Direction::Upstream, std::move(p));
    }

    void release_socket(Actor& a) {
        if (!a.conn) return;
        Event e;
        e.kind = Kind::LocalRelease;
        e.a = a.addr;
        e.b = a.conn->local_port;
        schedule(now + linger, std::move(e));
    }

    void connect(Actor& a) {
        if (a.conn && a.conn->st != Conn::St::Closed) release_socket(a);
        bool opsec = !a.cs.legacy;
        Conn c;
        c.uid = next_conn++;
        c.opsec = opsec;
        c.remote_port = opsec ? a.cs.ports.p_star : a.cs.target.p_s;
        c.local_port = alloc_local(a.addr, a.legacy_flow && sc.traffic.legacy_on_opsec_ports, a.rng);
        if (opsec) client::rebind_port(a.cs, c.local_port);
        a.conn = c;
        sockets[{a.addr, c.local_port}] = {a.id, c.uid};
        client_send(a, client_packet(a, tcp::SYN, {}, Leg::Syn));
        Event e;
        e.kind = Kind::ConnectTimeout;
        e.a = a.id;
        e.b = ++a.timer_token;
        schedule(now + sc.connect_timeout_us, std::move(e));
    }

    void arm_response_timer(Actor& a) {
        Event e;
        e.kind = Kind::ResponseTimeout;
        e.a = a.id;
        e.b = ++a.timer_token;
        schedule(now + sc.response_timeout_us, std::move(e));
    }

    void send_get(Actor& a, const client::HttpGet& g) {
        a.await = a.cs.state == client::SessionState::AwaitResponse1 ? Await::Resp1 : Await::Resp2;
        if (!a.conn || a.conn->st == Conn::St::Closed) {
            a.queued_get = g;
            connect(a);
            return;
        }
        if (a.conn->st == Conn::St::SynSent) {
            a.queued_get = g;
            return;
        }
        auto p = client_packet(a, tcp::ACK | tcp::PSH, http::request_bytes(g.path, a.cs.target.host), Leg::Get);
        p.h.ts_val = g.ts_val;
        p.m.orig_ts_val = g.ts_val;
        client_send(a, std::move(p));
        arm_response_timer(a);
    }

    void send_app(Actor& a, Bytes plaintext, bool stream) {
        if (!a.conn || a.conn->st != Conn::St::Established) {
            a.queued.push_back({std::move(plaintext), stream});
            if (!a.conn || a.conn->st == Conn::St::Closed) connect(a);
            return;
        }
        uint64_t h = fnv1a(plaintext);
        auto hdr = client::send_app_data(a.cs, plaintext);
        a.m.bytes_sent += plaintext.size();
        auto p = client_packet(a, tcp::ACK | tcp::PSH, std::move(hdr.payload), stream ? Leg::Data : Leg::Get);
        p.m.payload_hash = h;
        p.m.stream = stream;
        p.m.app = true;
        if (stream) ++a.m.stream_sent;
        else a.await = Await::Data;
        client_send(a, std::move(p));
    }

    void finish(Actor& a, const std::string& outcome) {
        if (a.done) return;
        a.done = true;
        a.m.outcome = outcome;
        if (a.cs.abort_reason) a.m.abort_reason = errc_name(*a.cs.abort_reason);
        a.m.rounds = a.cs.rounds;
        a.m.assignments = a.cs.assignments.size();
        a.m.alerts = a.cs.notifications.size();
        a.m.spoofed_alerts = a.cs.spoofed_alerts;
        ++a.timer_token;
        log_state(a, outcome.c_str());
        if (a.conn && a.conn->st == Conn::St::Established) {
            a.closing = true;
            client_send(a, client_packet(a, tcp::FIN | tcp::ACK, {}, Leg::Fin));
            a.conn->st = Conn::St::Closed;
            release_socket(a);
        } else if (a.conn && a.conn->st == Conn::St::SynSent) {
            a.conn->st = Conn::St::Closed;
            release_socket(a);
        }
    }

    void enter_data(Actor& a) {
        a.handshake_done = true;
        log_state(a, "Ready");
        if (a.cs.target.tls_like && !a.cs.content_key.empty()) {
            keys::SymKey k{};
            std::copy(a.cs.content_key.begin(), a.cs.content_key.end(), k.begin());
            tls_keys[a.cs.tag] = k;
        }
        next_request(a);
    }

    void next_request(Actor& a) {
        if (a.done) return;
        if (a.cs.state == client::SessionState::Terminated) {
            finish(a, "Terminated");
            return;
        }
        a.await = Await::None;
        if (a.next_request < sc.traffic.requests.size()) {
            auto& path = sc.traffic.requests[a.next_request++];
            send_app(a, http::request_bytes(path, a.cs.target.host), false);
            return;
        }
        if (a.stream_left > 0) {
            schedule_stream(a);
            return;
        }
        finish(a, client::state_name(a.cs.state));
    }

    void schedule_stream(Actor& a) {
        Event e;
        e.kind = Kind::Stream;
        e.a = a.id;
        Time gap = static_cast<Time>(std::llround(a.rng.exponential(1e6 / sc.traffic.rate_pps)));
        schedule(now + std::max<Time>(1, gap), std::move(e));
    }

    void fallback(Actor& a) {
        client::on_opsec_unreachable(a.cs);
        if (a.cs.state == client::SessionState::Aborted) {
            finish(a, "Aborted");
            return;
        }
        a.m.fell_back = true;
        a.queued_get.reset();
        if (a.handshake_done) {
            connect(a);
            return;
        }
        a.ready_on_connect = true;
        a.await = Await::None;
        connect(a);
    }

    void after_round(Actor& a, std::optional<client::HttpGet> next, bool closed) {
        ++a.timer_token;
        if (closed && a.conn) {
            a.conn->st = Conn::St::Closed;
            release_socket(a);
        }
        if (next) {
            send_get(a, *next);
            return;
        }
        if (a.cs.state == client::SessionState::Ready) {
            if (a.cs.legacy) {
                a.ready_on_connect = true;
                connect(a);
                return;
            }
            enter_data(a);
            return;
        }
        finish(a, client::state_name(a.cs.state));
    }

    void client_payload(Actor& a, const Packet& p, bool closed) {
        const Bytes& bytes = p.h.payload;
        if (protocol::is_alert_record(bytes)) {
            client::on_alert(a.cs, bytes);
            if (a.cs.state == client::SessionState::Terminated) finish(a, "Terminated");
            return;
        }
        switch (a.await) {
        case Await::Resp1:
        case Await::Resp2: {
            auto resp = http::parse_response(bytes);
            if (!resp) return;
            std::string text = origin::reflected_text(*resp);
            bool close = closed || resp->close;
            if (a.await == Await::Resp1) after_round(a, client::on_response_1(a.cs, text, close, a.rng), close);
            else after_round(a, client::on_response_2(a.cs, text, a.rng), close);
            return;
        }
        case Await::Data:
        case Await::None: {
            Bytes pt;
            try {
                pt = client::receive_app_data(a.cs, bytes);
            } catch (const OpsecError&) {
                ++a.m.payload_mismatches;
                return;
            }
            if (auto resp = http::parse_response(pt)) {
                if (auto rec = client::reflected_alert(origin::reflected_text(*resp))) {
                    client::on_alert(a.cs, *rec);
                    if (a.cs.state == client::SessionState::Terminated) finish(a, "Terminated");
                    return;
                }
            }
            if (a.await != Await::Data) return;
            if (p.m.payload_hash && fnv1a(pt) != p.m.payload_hash) ++a.m.payload_mismatches;
            else ++a.m.responses_ok;
            if (closed && a.conn) {
                a.conn->st = Conn::St::Closed;
                release_socket(a);
            }
            next_request(a);
            return;
        }
        }
    }

    void at_client(Packet p) {
        if (sc.nat) {
            auto it = nat_in.find(p.h.dst_port);
            if (p.h.dst_addr != NAT_ADDR || it == nat_in.end()) {
                ++metrics.nat_unmapped;
                log_pkt("drop", "nat", p, "unmapped");
                return;
            }
            p.h.dst_addr = it->second.first;
            p.h.dst_port = it->second.second;
        }
        auto sk = sockets.find({p.h.dst_addr, p.h.dst_port});
        log_pkt("recv", "client", p);
        if (sk == sockets.end()) return;
        Actor& a = actors[sk->second.first];
        if (p.m.hs) a.m.handshake_us += now - p.m.sent;
        if (!a.conn || a.conn->uid != sk->second.second || p.m.conn != a.conn->uid) {
            // late packet for an earlier connection of this session
            if (!p.h.payload.empty() && protocol::is_alert_record(p.h.payload)) client::on_alert(a.cs, p.h.payload);
            return;
        }
        ++metrics.inv.client_ports_checked;
        if (p.h.src_port != a.conn->remote_port || p.h.dst_port != a.conn->local_port) {
            ++metrics.inv.client_ports_violations;
            log_pkt("violation", "client", p, "ports");
        }
        if (a.done) return;
        auto& c = *a.conn;
        if (p.h.flags & tcp::RST) {
            if (c.st != Conn::St::SynSent) return;
            ++a.timer_token;
            c.st = Conn::St::Closed;
            release_socket(a);
            ++a.m.refused_probes;
            if (c.opsec) fallback(a);
            else finish(a, "Failed");
            return;
        }
        if ((p.h.flags & tcp::SYN) && (p.h.flags & tcp::ACK)) {
            if (c.st != Conn::St::SynSent) return;
            ++a.timer_token;
            c.st = Conn::St::Established;
            client_send(a, client_packet(a, tcp::ACK, {}, Leg::Ack));
            if (a.ready_on_connect) {
                a.ready_on_connect = false;
                enter_data(a);
            } else if (a.queued_get) {
                auto g = *a.queued_get;
                a.queued_get.reset();
                g.ts_val = portplan::pack_ts(a.cs.ports.p_star, a.cs.ports.p_c);
                send_get(a, g);
            }
            auto q = std::move(a.queued);
            a.queued.clear();
            for (auto& item : q) send_app(a, std::move(item.bytes), item.stream);
            return;
        }
        bool closed = p.h.flags & tcp::FIN;
        if (!p.h.payload.empty()) client_payload(a, p, closed);
        else if (closed && a.conn) {
            a.conn->st = Conn::St::Closed;
            release_socket(a);
        }
    }

    void on_start(Actor& a) {
        client::Target t;
        t.addr = ORIGIN_ADDR;
        t.p_s = profile.listen_port;
        t.host = profile.host;
        t.tls_like = profile.tls_like;
        client::SfcSpec sfc;
        client::SessionPolicy pol;
        pol.fail_mode = sc.client.fail_mode;
        pol.path_budget = sc.client.path_budget;
        if (!a.legacy_flow) {
            for (auto& n : sc.client.sfc_up) sfc.sfc_up.push_back(protocol::sf_id_from_name(n));
            for (auto& n : sc.client.sfc_down) sfc.sfc_down.push_back(protocol::sf_id_from_name(n));
        } else {
            pol.fail_mode = client::FailMode::FailOpen;
        }
        uint16_t provisional = sc.registry.ephemeral_lo;
        auto [cs, get] = client::begin_session(t, sfc, pol, a.rng, sc.registry, provisional, authority.public_part());
        a.cs = std::move(cs);
        a.m.opsec_attempted = get.has_value();
        log_state(a, "Start");
        if (a.cs.state == client::SessionState::Aborted) {
            finish(a, "Aborted");
            return;
        }
        if (!get) {
            a.ready_on_connect = true;
            connect(a);
            return;
        }
        a.queued_get = *get;
        a.await = Await::Resp1;
        connect(a);
    }

    // ---- ISP side ----

    std::optional<protocol::SessionTag> tag_of(const Bytes& payload, Direction dir, bool& hello) {
        hello = false;
        if (auto rec = protocol::DataRecord::decode(payload)) return rec->tag;
        std::vector<wire::OpsecMessage> msgs;
        if (dir == Direction::Upstream) {
            auto path = http::request_path(payload);
            if (path) msgs = wire::extract_from_path(*path);
        } else if (auto resp = http::parse_response(payload)) {
            msgs = wire::extract_from_path(origin::reflected_text(*resp));
        }
        if (auto* m = protocol::find_message(msgs, wire::MessageType::ServReq)) {
            if (auto req = protocol::ServReq::decode(m->payload)) return req->tag;
        }
        if (auto* m = protocol::find_message(msgs, wire::MessageType::OpsecHello)) {
            if (auto h = protocol::OpsecHello::decode(m->payload)) {
                hello = true;
                return protocol::session_tag_for(h->client_nonce);
            }
        }
        return std::nullopt;
    }

    void record_instances(Isp& isp) {
        size_t live = 0;
        for (auto& i : isp.inst) live += !i.retired;
        if (isp.m.instance_timeline.empty() || isp.m.instance_timeline.back().second != live)
            isp.m.instance_timeline.emplace_back(now, live);
        isp.m.max_instances = std::max(isp.m.max_instances, live);
    }

    size_t assign_instance(Isp& isp) {
        size_t want = target_instances(isp.active + 1, isp.spec.theta);
        size_t live = 0;
        for (auto& i : isp.inst) live += !i.retired;
        while (live < want) {
            Instance in;
            std::vector<obox::SecurityFunction> cat;
            for (auto& s : isp.spec.catalog) cat.push_back(make_sf(s));
            in.box = std::make_unique<obox::BoxState>(isp.spec.isp_id, isp.kp, isp.quote, isp.spec.coverage,
                                                      std::move(cat), isp.rng.next_u64(), wire::DEFAULT_PATH_BUDGET);
            isp.inst.push_back(std::move(in));
            ++live;
        }
        std::vector<size_t> loads;
        std::vector<bool> retired;
        for (auto& i : isp.inst) {
            loads.push_back(i.load);
            retired.push_back(i.retired);
        }
        size_t idx = pick_instance(loads, retired);
        ++isp.inst[idx].load;
        ++isp.inst[idx].ever;
        ++isp.active;
        record_instances(isp);
        return idx;
    }

    void unpin(Isp& isp, const protocol::SessionTag& tag) {
        auto it = isp.directory.find(tag);
        if (it == isp.directory.end()) return;
        auto& in = isp.inst[it->second];
        in.box->drop_session(tag);
        --in.load;
        --isp.active;
        isp.directory.erase(it);
        std::erase_if(isp.conn_tag, [&](auto& kv) { return kv.second == tag; });
        size_t want = target_instances(isp.active, isp.spec.theta);
        size_t live = 0;
        for (auto& i : isp.inst) live += !i.retired;
        for (size_t k = isp.inst.size(); k-- > 0 && live > want;) {
            if (!isp.inst[k].retired && isp.inst[k].load == 0) {
                isp.inst[k].retired = true;
                --live;
            }
        }
        record_instances(isp);
    }

    // Returns latency added by the box, or -1 when the packet is dropped.
    Time through_pool(Isp& isp, ConnEntry& ce, Packet& p, Direction dir, std::vector<Packet>& to_client,
                      std::vector<Packet>& to_server) {
        Bytes& payload = p.h.payload;
        if (protocol::is_alert_record(payload)) return 0;
        bool hello = false;
        auto tag = tag_of(payload, dir, hello);
        if (!tag) {
            auto ct = isp.conn_tag.find(ce.id);
            if (ct != isp.conn_tag.end()) tag = ct->second;
        }
        if (!tag) {
            ++isp.m.passthrough;
            return 0;
        }
        auto d = isp.directory.find(*tag);
        size_t idx;
        if (d == isp.directory.end()) {
            if (!hello) {
                ++isp.m.passthrough;
                return 0;
            }
            idx = assign_instance(isp);
            isp.directory[*tag] = idx;
        } else {
            idx = d->second;
        }
        auto& in = isp.inst[idx];
        auto& box = *in.box;
        uint64_t opened = box.metrics().records_opened;
        uint64_t alerts = box.metrics().alerts_emitted;
        uint64_t auth = box.metrics().auth_failures;
        uint64_t abst = box.metrics().abstained;
        obox::BoxOutput out;
        if (dir == Direction::Upstream) {
            auto path = http::request_path(payload);
            bool control = path && !wire::extract_from_path(*path).empty();
            out = control ? box.on_transit_request(payload, ce.id) : box.on_data_packet(payload, ce.id, dir);
        } else {
            out = obox::is_control_response(payload) ? box.on_transit_response(payload, ce.id)
                                                     : box.on_data_packet(payload, ce.id, dir);
        }
        isp.m.alerts += box.metrics().alerts_emitted - alerts;
        isp.m.auth_failures += box.metrics().auth_failures - auth;
        isp.m.abstained += box.metrics().abstained - abst;
        if (box.has_flow(*tag)) isp.conn_tag[ce.id] = *tag;
        else unpin(isp, *tag);

        Time latency = 0;
        if (box.metrics().records_opened > opened) {
            Time start = std::max(now, in.busy_until);
            in.busy_until = start + sc.queue.service_us;
            latency = in.busy_until - now;
        }
        for (auto& inj : out.to_client) {
            Packet q;
            q.h.src_addr = ce.server_addr;
            q.h.dst_addr = ce.client_addr;
            q.h.src_port = ce.st.p_star;
            q.h.dst_port = ce.st.p_c;
            q.h.ts_ecr = portplan::pack_ts(ce.st.p_star, ce.st.p_c);
            q.h.flags = tcp::ACK | tcp::PSH;
            q.h.direction = Direction::Downstream;
            q.h.payload = inj;
            q.m = p.m;
            q.m.hs = false;
            q.m.leg = Leg::Alert;
            q.m.sent = now;
            q.m.payload_hash = 0;
            q.m.stream = false;
            to_client.push_back(std::move(q));
        }
        for (auto& inj : out.to_server) {
            Packet q = p;
            q.h.payload = inj;
            q.m.hs = false;
            q.m.leg = Leg::Alert;
            q.m.payload_hash = 0;
            q.m.stream = false;
            to_server.push_back(std::move(q));
        }
        if (out.drop) return -1;
        payload = std::move(out.payload);
        return latency;
    }

    // Packets of one connection leave a router in arrival order.
    Time in_order(Time& depart, Time extra) {
        Time t = std::max(now + extra, depart);
        depart = t;
        return t - now;
    }

    void schedule_release(Isp& isp, ConnEntry& ce) {
        if (ce.closing) return;
        ce.closing = true;
        Event e;
        e.kind = Kind::IspRelease;
        e.a = static_cast<uint64_t>(isp.station);
        e.b = ce.id;
        schedule(now + linger, std::move(e));
    }

    ConnEntry* new_entry(Isp& isp) {
        uint64_t id = isp.next_entry++;
        auto& ce = isp.entries[id];
        ce.id = id;
        ++isp.m.conns_seen;
        return &ce;
    }

    void isp_upstream(Isp& isp, Packet p) {
        auto& reg = sc.registry;
        auto cls = portplan::classify(p.h, reg);
        if (p.m.first_isp >= 1 && p.m.first_isp < isp.station) {
            ++metrics.inv.transit_src_checked;
            if (!reg.contains(p.h.src_port)) {
                ++metrics.inv.transit_src_violations;
                log_pkt("violation", "isp", p, "transit src");
            }
        }
        if (isp.spec.adversary == Adversary::DropsOpsec && cls != portplan::Class::Legacy) {
            ++isp.m.dropped;
            log_pkt("drop", "isp", p, "adversary");
            return;
        }
        if (isp.spec.adversary == Adversary::TampersServDisc && !p.h.payload.empty()) {
            if (mutate_envelope(p.h.payload, wire::MessageType::ServDisc, adv_rng)) ++isp.m.mutations;
        }
        if (isp.spec.adversary == Adversary::TampersServReq && !p.h.payload.empty()) {
            if (mutate_envelope(p.h.payload, wire::MessageType::ServReq, adv_rng)) ++isp.m.mutations;
        }
        bool willing = isp.spec.willing && obox::covers_up(isp.spec.coverage);
        if (!willing) {
            forward(isp.station, Direction::Upstream, std::move(p));
            return;
        }

        Key4 key{p.h.src_addr, p.h.dst_addr, p.h.src_port, p.h.dst_port};
        ConnEntry* ce = nullptr;
        if (auto it = isp.up_index.find(key); it != isp.up_index.end()) ce = &isp.entries.at(it->second);
        bool syn = (p.h.flags & tcp::SYN) && !(p.h.flags & tcp::ACK);
        if (!ce && syn && reg.contains(p.h.dst_port)) {
            uint16_t p_hash = 0;
            try {
                p_hash = portplan::allocate_hash_port(p.h.src_addr, p.h.dst_addr, p.h.dst_port, reg, isp.in_use);
            } catch (const OpsecError&) {
                ++isp.m.port_exhausted;
                log_pkt("hop", "isp", p, "exhausted");
                forward(isp.station, Direction::Upstream, std::move(p));
                return;
            }
            ce = new_entry(isp);
            ++isp.m.conns_first;
            ce->first = true;
            ce->holds_port = true;
            ce->st.p_c = p.h.src_port;
            ce->st.p_star = p.h.dst_port;
            ce->st.p_hash = p_hash;
            ce->st.p_s = *reg.listen_port(p.h.dst_port);
            ce->client_addr = p.h.src_addr;
            ce->server_addr = p.h.dst_addr;
            ce->keys_up = {key};
            ce->keys_down = {Key4{p.h.dst_addr, p.h.src_addr, ce->st.p_s, p_hash},
                             Key4{p.h.dst_addr, p.h.src_addr, ce->st.p_star, ce->st.p_c}};
        } else if (!ce && syn && reg.contains(p.h.src_port)) {
            auto [p_star, p_c] = portplan::unpack_ts(p.h.ts_val);
            auto p_s = reg.listen_port(p_star);
            if (p_s && *p_s == p.h.dst_port && reg.is_ephemeral(p_c)) {
                ce = new_entry(isp);
                ce->st.p_c = p_c;
                ce->st.p_star = p_star;
                ce->st.p_hash = p.h.src_port;
                ce->st.p_s = *p_s;
                ce->client_addr = p.h.src_addr;
                ce->server_addr = p.h.dst_addr;
                ce->keys_up = {key};
                ce->keys_down = {Key4{p.h.dst_addr, p.h.src_addr, *p_s, p.h.src_port},
                                 Key4{p.h.dst_addr, p.h.src_addr, p_star, p_c}};
            }
            // sources in P are reserved so a later allocation for this pair avoids them
            bool reserved = isp.in_use.insert({p.h.src_addr, p.h.dst_addr, p.h.src_port}).second;
            if (!ce) {
                ce = new_entry(isp);
                ce->st.p_c = p.h.src_port;
                ce->client_addr = p.h.src_addr;
                ce->server_addr = p.h.dst_addr;
                ce->keys_up = {key};
                ce->keys_down = {Key4{p.h.dst_addr, p.h.src_addr, p.h.dst_port, p.h.src_port}};
            }
            ce->holds_port = reserved;
        }
        if (ce && ce->keys_up.size() == 1 && isp.up_index.count(key) == 0) {
            for (auto& k : ce->keys_up) isp.up_index[k] = ce->id;
            for (auto& k : ce->keys_down) isp.down_index[k] = ce->id;
        }
        if (!ce || ce->st.p_star == 0) {
            if (ce && (p.h.flags & (tcp::FIN | tcp::RST))) schedule_release(isp, *ce);
            ++isp.m.passthrough;
            forward(isp.station, Direction::Upstream, std::move(p), ce ? in_order(ce->depart_up, 0) : 0);
            return;
        }

        try {
            p.h = portplan::rewrite_upstream(p.h, ce->st, ce->first);
        } catch (const OpsecError&) {
            ++isp.m.passthrough;
            forward(isp.station, Direction::Upstream, std::move(p));
            return;
        }
        if (ce->first) {
            p.h.ts_val = portplan::pack_ts(ce->st.p_star, ce->st.p_c);
            p.m.first_isp = isp.station;
        }
        if (p.h.flags & (tcp::FIN | tcp::RST)) schedule_release(isp, *ce);

        std::vector<Packet> to_client, to_server;
        Time extra = 0;
        if (!p.h.payload.empty()) {
            extra = through_pool(isp, *ce, p, Direction::Upstream, to_client, to_server);
        } else if ((p.h.flags & tcp::FIN) && !(p.h.flags & tcp::PSH)) {
            auto ct = isp.conn_tag.find(ce->id);
            if (ct != isp.conn_tag.end()) unpin(isp, ct->second);
        }
        for (auto& q : to_client) {
            log_pkt("inject", "isp", q, "alert");
            forward(isp.station, Direction::Downstream, std::move(q));
        }
        for (auto& q : to_server) {
            log_pkt("inject", "isp", q, "alert");
            forward(isp.station, Direction::Upstream, std::move(q));
        }
        if (extra < 0) {
            log_pkt("drop", "isp", p, "box");
            return;
        }
        extra = in_order(ce->depart_up, extra);
        p.m.box_latency += extra;
        if (p.m.hs && !p.h.payload.empty()) log_pkt("hop", isp.label.c_str(), p);
        forward(isp.station, Direction::Upstream, std::move(p), extra);
    }

    void isp_downstream(Isp& isp, Packet p) {
        auto& reg = sc.registry;
        auto cls = portplan::classify(p.h, reg);
        Key4 key{p.h.src_addr, p.h.dst_addr, p.h.src_port, p.h.dst_port};
        bool known = isp.down_index.count(key) > 0;
        if (isp.spec.adversary == Adversary::DropsOpsec && (cls != portplan::Class::Legacy || known)) {
            ++isp.m.dropped;
            log_pkt("drop", "isp", p, "adversary");
            return;
        }
        bool willing = isp.spec.willing && obox::covers_down(isp.spec.coverage);
        if (!willing) {
            forward(isp.station, Direction::Downstream, std::move(p));
            return;
        }
        ConnEntry* ce = nullptr;
        if (auto it = isp.down_index.find(key); it != isp.down_index.end()) ce = &isp.entries.at(it->second);
        if (!ce && !(p.h.flags & tcp::RST) && p.h.ts_ecr != 0) {
            if (auto st = portplan::decode_ts(p.h, reg)) {
                ce = new_entry(isp);
                ce->st = *st;
                ce->client_addr = p.h.dst_addr;
                ce->server_addr = p.h.src_addr;
                ce->keys_down = {key, Key4{p.h.src_addr, p.h.dst_addr, st->p_star, st->p_c}};
            } else {
                auto [p_star, p_c] = portplan::unpack_ts(p.h.ts_ecr);
                if (p_star == p.h.src_port && p_c == p.h.dst_port && reg.contains(p_star) && reg.is_ephemeral(p_c)) {
                    ce = new_entry(isp);
                    ce->st.p_star = p_star;
                    ce->st.p_c = p_c;
                    ce->st.p_s = *reg.listen_port(p_star);
                    ce->client_addr = p.h.dst_addr;
                    ce->server_addr = p.h.src_addr;
                    ce->keys_down = {key};
                }
            }
            if (ce)
                for (auto& k : ce->keys_down) isp.down_index[k] = ce->id;
        }
        if (!ce || ce->st.p_star == 0) {
            if (ce && (p.h.flags & (tcp::FIN | tcp::RST))) schedule_release(isp, *ce);
            forward(isp.station, Direction::Downstream, std::move(p), ce ? in_order(ce->depart_down, 0) : 0);
            return;
        }
        if (p.h.src_port != ce->st.p_star || p.h.dst_port != ce->st.p_c) {
            p.h = portplan::rewrite_downstream(p.h, &ce->st, reg);
        }
        if (p.h.flags & (tcp::FIN | tcp::RST)) schedule_release(isp, *ce);

        std::vector<Packet> to_client, to_server;
        Time extra = 0;
        if (!p.h.payload.empty()) {
            extra = through_pool(isp, *ce, p, Direction::Downstream, to_client, to_server);
        } else if ((p.h.flags & tcp::FIN) && (p.h.flags & tcp::ACK) && !(p.h.flags & tcp::PSH)) {
            auto ct = isp.conn_tag.find(ce->id);
            if (ct != isp.conn_tag.end()) unpin(isp, ct->second);
        }
        for (auto& q : to_client) {
            log_pkt("inject", "isp", q, "alert");
            forward(isp.station, Direction::Downstream, std::move(q));
        }
        for (auto& q : to_server) {
            log_pkt("inject", "isp", q, "alert");
            forward(isp.station, Direction::Upstream, std::move(q));
        }
        if (extra < 0) {
            log_pkt("drop", "isp", p, "box");
            return;
        }
        extra = in_order(ce->depart_down, extra);
        p.m.box_latency += extra;
        if (p.m.hs && !p.h.payload.empty()) log_pkt("hop", isp.label.c_str(), p);
        forward(isp.station, Direction::Downstream, std::move(p), extra);
    }

    void release_entry(Isp& isp, uint64_t id) {
        auto it = isp.entries.find(id);
        if (it == isp.entries.end()) return;
        auto& ce = it->second;
        for (auto& k : ce.keys_up)
            if (auto u = isp.up_index.find(k); u != isp.up_index.end() && u->second == id) isp.up_index.erase(u);
        for (auto& k : ce.keys_down)
            if (auto u = isp.down_index.find(k); u != isp.down_index.end() && u->second == id)
                isp.down_index.erase(u);
        if (ce.holds_port) {
            uint16_t port = ce.st.p_hash ? *ce.st.p_hash : ce.st.p_c;
            portplan::release_hash_port(ce.client_addr, ce.server_addr, port, isp.in_use);
        }
        for (auto& in : isp.inst) in.box->forget_conn(id);
        isp.conn_tag.erase(id);
        isp.entries.erase(it);
    }

    // ---- origin ----

    Packet origin_reply(const Packet& req, uint8_t flags, Bytes payload, Leg leg) {
        Packet p;
        p.h.src_addr = req.h.dst_addr;
        p.h.dst_addr = req.h.src_addr;
        p.h.src_port = req.h.dst_port;
        p.h.dst_port = req.h.src_port;
        p.h.ts_val = static_cast<uint32_t>(1 + now / 1000);
        p.h.ts_ecr = req.h.ts_val;
        p.h.flags = flags;
        p.h.direction = Direction::Downstream;
        p.h.payload = std::move(payload);
        p.m = req.m;
        p.m.leg = leg;
        p.m.sent = now;
        p.m.box_latency = 0;
        p.m.stream = false;
        p.m.payload_hash = 0;
        return p;
    }

    void origin_send(Packet p) {
        log_pkt("send", "origin", p);
        forward(origin_station(), Direction::Downstream, std::move(p));
    }

    void at_origin(Packet p) {
        log_pkt("recv", "origin", p);
        Actor* a = p.m.session < actors.size() ? &actors[p.m.session] : nullptr;
        if (a && p.m.hs) a->m.handshake_us += now - p.m.sent;
        bool syn = (p.h.flags & tcp::SYN) && !(p.h.flags & tcp::ACK);

        if (!p.m.opsec_target) {
            ++metrics.inv.ts_checked;
            if (p.h.ts_val != p.m.orig_ts_val) {
                ++metrics.inv.ts_violations;
                log_pkt("violation", "origin", p, "timestamp");
            }
        }
        if (p.m.opsec_target) {
            if (p.m.first_isp >= 1) {
                ++metrics.inv.server_dst_checked;
                if (p.h.dst_port != profile.listen_port) {
                    ++metrics.inv.server_dst_violations;
                    log_pkt("violation", "origin", p, "dst");
                }
            } else if (!syn || !sc.registry.contains(p.h.dst_port)) {
                ++metrics.inv.server_dst_checked;
                ++metrics.inv.server_dst_violations;
                log_pkt("violation", "origin", p, "unrewritten");
            }
        }

        auto key = std::make_pair(p.h.src_addr, p.h.src_port);
        if (syn) {
            if (p.h.dst_port != profile.listen_port) {
                ++metrics.refused_probes;
                origin_send(origin_reply(p, tcp::RST | tcp::ACK, {}, Leg::Rst));
                return;
            }
            auto& oc = oconns[key];
            ++metrics.inv.server_conns;
            if (oc.open) {
                ++metrics.inv.server_collisions;
                log_pkt("violation", "origin", p, "collision");
            }
            oc.open = true;
            origin_send(origin_reply(p, tcp::SYN | tcp::ACK, {}, Leg::SynAck));
            return;
        }
        auto it = oconns.find(key);
        if (it == oconns.end() || !it->second.open) return;
        if (p.h.payload.empty()) {
            if (p.h.flags & tcp::FIN) {
                it->second.open = false;
                origin_send(origin_reply(p, tcp::FIN | tcp::ACK, {}, Leg::FinAck));
            }
            return;
        }

        Bytes request = p.h.payload;
        std::optional<protocol::SessionTag> sealed_tag;
        if (auto rec = protocol::DataRecord::decode(request)) {
            auto k = tls_keys.find(rec->tag);
            if (k == tls_keys.end()) return;
            try {
                request = keys::open(k->second, rec->counter, rec->ciphertext);
            } catch (const OpsecError&) {
                return;
            }
            sealed_tag = rec->tag;
        }
        if (a && p.m.app) {
            if (p.m.payload_hash && fnv1a(request) != p.m.payload_hash) ++a->m.payload_mismatches;
            a->m.bytes_delivered += request.size();
            if (p.m.stream) {
                ++a->m.stream_measured;
                a->latency_sum += p.m.box_latency;
            }
        }
        auto path = http::request_path(request);
        if (!path) return;
        auto resp = origin::handle_get(profile, *path, p.h.ts_val);
        Bytes out = http::response_bytes(resp);
        uint64_t h = fnv1a(out);
        if (sealed_tag) {
            protocol::DataRecord rec;
            rec.tag = *sealed_tag;
            rec.counter = CONTENT_DOWN_BASE + ++tls_counters[*sealed_tag];
            rec.ciphertext = keys::seal(tls_keys[*sealed_tag], rec.counter, out);
            out = rec.encode();
        }
        uint8_t flags = tcp::ACK | tcp::PSH;
        if (resp.close) {
            flags |= tcp::FIN;
            it->second.open = false;
        }
        auto reply = origin_reply(p, flags, std::move(out), Leg::Resp);
        reply.m.payload_hash = p.m.leg == Leg::Alert ? 0 : h;
        origin_send(std::move(reply));
    }

    // ---- loop ----

    void dispatch(Event& e) {
        switch (e.kind) {
        case Kind::Arrive:
            if (e.station == 0) at_client(std::move(e.pkt));
            else if (e.station == origin_station()) at_origin(std::move(e.pkt));
            else if (e.dir == Direction::Upstream) isp_upstream(isps[e.station - 1], std::move(e.pkt));
            else isp_downstream(isps[e.station - 1], std::move(e.pkt));
            break;
        case Kind::Start: on_start(actors[e.a]); break;
        case Kind::ConnectTimeout: {
            Actor& a = actors[e.a];
            if (a.done || e.b != a.timer_token || !a.conn || a.conn->st != Conn::St::SynSent) break;
            ++a.m.timeouts;
            log_state(a, "ConnectTimeout");
            a.conn->st = Conn::St::Closed;
            release_socket(a);
            if (a.conn->opsec) fallback(a);
            else finish(a, "Failed");
            break;
        }
        case Kind::ResponseTimeout: {
            Actor& a = actors[e.a];
            if (a.done || e.b != a.timer_token) break;
            if (a.await != Await::Resp1 && a.await != Await::Resp2) break;
            ++a.m.timeouts;
            log_state(a, "ResponseTimeout");
            if (a.conn && a.conn->st == Conn::St::Established) {
                client_send(a, client_packet(a, tcp::FIN | tcp::ACK, {}, Leg::Fin));
                a.conn->st = Conn::St::Closed;
                release_socket(a);
            }
            fallback(a);
            break;
        }
        case Kind::Stream: {
            Actor& a = actors[e.a];
            if (a.done || a.stream_left == 0) break;
            if (a.cs.state != client::SessionState::Ready) {
                finish(a, client::state_name(a.cs.state));
                break;
            }
            --a.stream_left;
            std::string body = "DATA session=" + std::to_string(a.id) + " seq=" + std::to_string(a.stream_seq++);
            body.resize(64, '.');
            send_app(a, to_bytes(body), true);
            if (a.stream_left > 0) schedule_stream(a);
            else finish(a, client::state_name(a.cs.state));
            break;
        }
        case Kind::IspRelease: release_entry(isps[e.a - 1], e.b); break;
        case Kind::NatRelease: {
            auto it = nat_in.find(static_cast<uint16_t>(e.a));
            if (it != nat_in.end()) {
                nat_out.erase(it->second);
                nat_in.erase(it);
            }
            break;
        }
        case Kind::LocalRelease: {
            auto addr = static_cast<Addr>(e.a);
            auto port = static_cast<uint16_t>(e.b);
            auto sk = sockets.find({addr, port});
            if (sk != sockets.end()) {
                Actor& a = actors[sk->second.first];
                if (a.conn && a.conn->uid == sk->second.second && a.conn->st != Conn::St::Closed) break;
                sockets.erase(sk);
            }
            hosts[addr].used.erase(port);
            break;
        }
        }
    }

    Metrics run(std::optional<Time> until) {
        while (!heap.empty()) {
            if (until && heap.front().t > *until) break;
            std::pop_heap(heap.begin(), heap.end(), EventOrder{});
            Event e = std::move(heap.back());
            heap.pop_back();
            now = e.t;
            ++metrics.events;
            dispatch(e);
        }
        metrics.duration_us = now;
        metrics.sessions.clear();
        for (auto& a : actors) {
            SessionMetrics m = a.m;
            if (!a.done) {
                m.outcome = a.handshake_done ? client::state_name(a.cs.state) : "Incomplete";
                m.rounds = a.cs.rounds;
                m.assignments = a.cs.assignments.size();
                m.alerts = a.cs.notifications.size();
                m.spoofed_alerts = a.cs.spoofed_alerts;
            }
            if (a.handshake_done) m.rtt_equivalents = double(m.handshake_us) / double(2 * sc.one_way_us());
            if (m.stream_measured) m.mean_box_latency_us = double(a.latency_sum) / double(m.stream_measured);
            metrics.sessions.push_back(std::move(m));
        }
        metrics.isps.clear();
        for (auto& isp : isps) {
            IspMetrics m = isp.m;
            m.flows_per_instance.clear();
            for (auto& in : isp.inst) m.flows_per_instance.push_back(in.ever);
            metrics.isps.push_back(std::move(m));
        }
        crypto_hash_sha256_state copy = digest;
        uint8_t d[32];
        crypto_hash_sha256_final(&copy, d);
        metrics.event_digest = hex_digest(d);
        return metrics;
    }
};

Simulation::Simulation(const Scenario& scenario) : impl_(std::make_unique<Impl>(scenario)) {}
Simulation::~Simulation() = default;
Simulation::Simulation(Simulation&&) noexcept = default;
Simulation& Simulation::operator=(Simulation&&) noexcept = default;

Metrics Simulation::run(std::optional<Time> until) { return impl_->run(until); }
const std::vector<std::string>& Simulation::event_lines() const { return impl_->lines; }
const Scenario& Simulation::scenario() const { return impl_->sc; }

Simulation build(const Scenario& scenario) { return Simulation(scenario); }

} // namespace opsec::netsim
