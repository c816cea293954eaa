#include "opsec/protocol.hpp"

#include <cstring>

#include "opsec/error.hpp"

namespace opsec::protocol {

namespace {

template <size_t N>
void read_array(Reader& r, std::array<uint8_t, N>& out) {
    Bytes b = r.take(N);
    std::memcpy(out.data(), b.data(), N);
}

template <typename T, typename F>
std::optional<T> guarded(F&& f) {
    try {
        return f();
    } catch (const OpsecError&) {
        return std::nullopt;
    }
}

} // namespace

SfId sf_id_from_name(std::string_view name) {
    Bytes label = to_bytes("opsec sf id");
    return keys::sha256_concat({label, to_bytes(name)});
}

keys::Digest announce_hash(const SfId& id) {
    Bytes label = to_bytes("opsec sf announce");
    return keys::sha256_concat({label, id});
}

SessionTag session_tag_for(const keys::Nonce& client_nonce) {
    Bytes label = to_bytes("opsec session");
    auto d = keys::sha256_concat({label, client_nonce});
    SessionTag t{};
    std::memcpy(t.data(), d.data(), t.size());
    return t;
}

Bytes OpsecHello::encode() const {
    Bytes out;
    put_field(out, client_public);
    append(out, client_nonce);
    return out;
}

std::optional<OpsecHello> OpsecHello::decode(ByteView p) {
    return guarded<OpsecHello>([&] {
        Reader r(p);
        OpsecHello h;
        h.client_public = r.field();
        read_array(r, h.client_nonce);
        if (!r.done()) throw OpsecError(Errc::InvalidArgument, "trailing");
        return h;
    });
}

Bytes ServDisc::encode() const {
    Bytes out;
    put_u16(out, static_cast<uint16_t>(entries.size()));
    for (auto& e : entries) {
        out.push_back(static_cast<uint8_t>(e.dir));
        append(out, e.sf);
    }
    return out;
}

std::optional<ServDisc> ServDisc::decode(ByteView p) {
    return guarded<ServDisc>([&] {
        Reader r(p);
        ServDisc d;
        uint16_t n = r.u16();
        for (uint16_t i = 0; i < n; ++i) {
            DiscEntry e;
            uint8_t dir = r.u8();
            if (dir > 1) throw OpsecError(Errc::InvalidArgument, "dir");
            e.dir = static_cast<Dir>(dir);
            read_array(r, e.sf);
            d.entries.push_back(e);
        }
        if (!r.done()) throw OpsecError(Errc::InvalidArgument, "trailing");
        return d;
    });
}

Bytes ObHello::encode() const {
    Bytes out;
    put_field(out, box_public);
    append(out, box_nonce);
    put_field(out, quote);
    return out;
}

std::optional<ObHello> ObHello::decode(ByteView p) {
    return guarded<ObHello>([&] {
        Reader r(p);
        ObHello h;
        h.box_public = r.field();
        read_array(r, h.box_nonce);
        h.quote = r.field();
        if (!r.done()) throw OpsecError(Errc::InvalidArgument, "trailing");
        return h;
    });
}

Bytes ServAnn::signed_body(uint32_t box_id) const {
    Bytes out = to_bytes("opsec servann");
    put_u32(out, box_id);
    out.push_back(static_cast<uint8_t>(phase));
    append(out, servdisc_digest);
    put_u16(out, static_cast<uint16_t>(hashes.size()));
    for (auto& h : hashes) append(out, h);
    return out;
}

Bytes ServAnn::encode() const {
    Bytes out;
    out.push_back(static_cast<uint8_t>(phase));
    append(out, servdisc_digest);
    put_u16(out, static_cast<uint16_t>(hashes.size()));
    for (auto& h : hashes) append(out, h);
    put_field(out, signature);
    return out;
}

std::optional<ServAnn> ServAnn::decode(ByteView p) {
    return guarded<ServAnn>([&] {
        Reader r(p);
        ServAnn a;
        uint8_t ph = r.u8();
        if (ph > 1) throw OpsecError(Errc::InvalidArgument, "phase");
        a.phase = static_cast<Phase>(ph);
        read_array(r, a.servdisc_digest);
        uint16_t n = r.u16();
        for (uint16_t i = 0; i < n; ++i) {
            keys::Digest h{};
            read_array(r, h);
            a.hashes.push_back(h);
        }
        a.signature = r.field();
        if (!r.done()) throw OpsecError(Errc::InvalidArgument, "trailing");
        return a;
    });
}

Bytes ServReq::encode() const {
    Bytes out;
    append(out, tag);
    put_u16(out, static_cast<uint16_t>(assignments.size()));
    for (auto& a : assignments) {
        out.push_back(static_cast<uint8_t>(a.dir));
        append(out, a.sf);
        put_u32(out, a.box_id);
    }
    put_u16(out, static_cast<uint16_t>(grants.size()));
    for (auto& g : grants) {
        put_u32(out, g.box_id);
        put_field(out, g.sealed);
    }
    return out;
}

std::optional<ServReq> ServReq::decode(ByteView p) {
    return guarded<ServReq>([&] {
        Reader r(p);
        ServReq q;
        read_array(r, q.tag);
        uint16_t n = r.u16();
        for (uint16_t i = 0; i < n; ++i) {
            Assignment a;
            uint8_t dir = r.u8();
            if (dir > 1) throw OpsecError(Errc::InvalidArgument, "dir");
            a.dir = static_cast<Dir>(dir);
            read_array(r, a.sf);
            a.box_id = r.u32();
            q.assignments.push_back(a);
        }
        uint16_t g = r.u16();
        for (uint16_t i = 0; i < g; ++i) {
            Grant gr;
            gr.box_id = r.u32();
            gr.sealed = r.field();
            q.grants.push_back(std::move(gr));
        }
        if (!r.done()) throw OpsecError(Errc::InvalidArgument, "trailing");
        return q;
    });
}

Bytes GrantBody::encode() const {
    Bytes out;
    put_field(out, master_secret);
    out.push_back(flags);
    put_field(out, up_egress_key);
    put_field(out, down_ingress_key);
    put_field(out, content_key);
    return out;
}

std::optional<GrantBody> GrantBody::decode(ByteView p) {
    return guarded<GrantBody>([&] {
        Reader r(p);
        GrantBody g;
        g.master_secret = r.field();
        g.flags = r.u8();
        g.up_egress_key = r.field();
        g.down_ingress_key = r.field();
        g.content_key = r.field();
        if (!r.done()) throw OpsecError(Errc::InvalidArgument, "trailing");
        return g;
    });
}

Bytes ObReady::encode() const {
    Bytes out;
    put_field(out, signature);
    return out;
}

std::optional<ObReady> ObReady::decode(ByteView p) {
    return guarded<ObReady>([&] {
        Reader r(p);
        ObReady o;
        o.signature = r.field();
        if (!r.done()) throw OpsecError(Errc::InvalidArgument, "trailing");
        return o;
    });
}

Bytes DataRecord::encode() const {
    Bytes out(DATA_MAGIC.begin(), DATA_MAGIC.end());
    append(out, tag);
    put_u64(out, counter);
    put_u32(out, static_cast<uint32_t>(ciphertext.size()));
    append(out, ciphertext);
    return out;
}

std::optional<DataRecord> DataRecord::decode(ByteView p) {
    if (!is_data_record(p)) return std::nullopt;
    return guarded<DataRecord>([&] {
        Reader r(p.subspan(4));
        DataRecord d;
        read_array(r, d.tag);
        d.counter = r.u64();
        d.ciphertext = r.take(r.u32());
        if (!r.done()) throw OpsecError(Errc::InvalidArgument, "trailing");
        return d;
    });
}

bool is_data_record(ByteView p) {
    return p.size() >= 4 && std::memcmp(p.data(), DATA_MAGIC.data(), 4) == 0;
}

Bytes AlertBody::encode() const {
    Bytes out;
    out.push_back(static_cast<uint8_t>(kind));
    append(out, sf);
    put_field(out, to_bytes(reason));
    return out;
}

std::optional<AlertBody> AlertBody::decode(ByteView p) {
    return guarded<AlertBody>([&] {
        Reader r(p);
        AlertBody a;
        uint8_t k = r.u8();
        if (k > 2) throw OpsecError(Errc::InvalidArgument, "kind");
        a.kind = static_cast<VerdictKind>(k);
        read_array(r, a.sf);
        Bytes reason = r.field();
        a.reason.assign(reason.begin(), reason.end());
        if (!r.done()) throw OpsecError(Errc::InvalidArgument, "trailing");
        return a;
    });
}

Bytes AlertRecord::encode() const {
    Bytes out(ALERT_MAGIC.begin(), ALERT_MAGIC.end());
    append(out, tag);
    put_u32(out, box_id);
    put_u64(out, counter);
    put_u32(out, static_cast<uint32_t>(ciphertext.size()));
    append(out, ciphertext);
    return out;
}

std::optional<AlertRecord> AlertRecord::decode(ByteView p) {
    if (!is_alert_record(p)) return std::nullopt;
    return guarded<AlertRecord>([&] {
        Reader r(p.subspan(4));
        AlertRecord a;
        read_array(r, a.tag);
        a.box_id = r.u32();
        a.counter = r.u64();
        a.ciphertext = r.take(r.u32());
        if (!r.done()) throw OpsecError(Errc::InvalidArgument, "trailing");
        return a;
    });
}

bool is_alert_record(ByteView p) {
    return p.size() >= 4 && std::memcmp(p.data(), ALERT_MAGIC.data(), 4) == 0;
}

const wire::OpsecMessage* find_message(const std::vector<wire::OpsecMessage>& ms, wire::MessageType t,
                                       std::optional<uint32_t> box_id) {
    for (auto& m : ms)
        if (m.msg_type == t && (!box_id || m.box_id == *box_id)) return &m;
    return nullptr;
}

} // namespace opsec::protocol
