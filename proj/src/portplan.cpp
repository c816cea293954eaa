#include "opsec/portplan.hpp"

#include "opsec/error.hpp"

namespace opsec::portplan {

PortRegistry PortRegistry::defaults() {
    PortRegistry r;
    r.bindings = {{7443, 443}, {8443, 443}, {7080, 80}, {8080, 80}};
    return r;
}

void PortRegistry::validate() const {
    if (bindings.empty()) throw OpsecError(Errc::ConfigInvalid, "ports: empty Opsec port set");
    if (ephemeral_lo == 0 || ephemeral_lo > ephemeral_hi)
        throw OpsecError(Errc::ConfigInvalid, "ports: bad ephemeral range");
    for (auto [p, p_s] : bindings) {
        if (p == 0 || p_s == 0) throw OpsecError(Errc::ConfigInvalid, "ports: port 0");
        if (is_ephemeral(p))
            throw OpsecError(Errc::ConfigInvalid, "ports: " + std::to_string(p) + " inside ephemeral range");
        if (contains(p_s))
            throw OpsecError(Errc::ConfigInvalid, "ports: listen port " + std::to_string(p_s) + " is in P");
        if (is_ephemeral(p_s))
            throw OpsecError(Errc::ConfigInvalid, "ports: listen port " + std::to_string(p_s) + " is ephemeral");
    }
}

std::optional<uint16_t> PortRegistry::listen_port(uint16_t p_star) const {
    auto it = bindings.find(p_star);
    if (it == bindings.end()) return std::nullopt;
    return it->second;
}

std::vector<uint16_t> PortRegistry::opsec_ports_for(uint16_t p_s) const {
    std::vector<uint16_t> out;
    for (auto [p, s] : bindings)
        if (s == p_s) out.push_back(p);
    return out;
}

Class classify(const PacketHeader& hdr, const PortRegistry& reg) {
    if (reg.contains(hdr.dst_port)) return Class::OpsecByDst;
    if (reg.contains(hdr.src_port)) return Class::OpsecBySrc;
    return Class::Legacy;
}

uint16_t allocate_hash_port(Addr src_addr, Addr dst_addr, uint16_t p_star, const PortRegistry& reg,
                            InUse& in_use) {
    auto p_s = reg.listen_port(p_star);
    if (!p_s) throw OpsecError(Errc::InconsistentState, "p* not in P");
    for (uint16_t p : reg.opsec_ports_for(*p_s)) {
        if (in_use.insert({src_addr, dst_addr, p}).second) return p;
    }
    throw OpsecError(Errc::PortSetExhausted, "no free port for pair");
}

void release_hash_port(Addr src_addr, Addr dst_addr, uint16_t p_hash, InUse& in_use) {
    in_use.erase({src_addr, dst_addr, p_hash});
}

PacketHeader rewrite_upstream(const PacketHeader& hdr, const FlowPortState& st, bool is_first_opsec_isp) {
    PacketHeader out = hdr;
    if (is_first_opsec_isp) {
        if (hdr.dst_port != st.p_star || hdr.src_port != st.p_c || !st.p_hash)
            throw OpsecError(Errc::InconsistentState, "upstream ports do not match flow");
        out.src_port = *st.p_hash;
        out.dst_port = st.p_s;
        return out;
    }
    if (st.p_hash && hdr.src_port == *st.p_hash && hdr.dst_port == st.p_s) return out;
    throw OpsecError(Errc::InconsistentState, "upstream ports do not match flow");
}

std::optional<FlowPortState> decode_ts(const PacketHeader& hdr, const PortRegistry& reg) {
    if (hdr.ts_ecr == 0) return std::nullopt;
    auto [p_star, p_c] = unpack_ts(hdr.ts_ecr);
    auto p_s = reg.listen_port(p_star);
    if (!p_s || *p_s != hdr.src_port || !reg.is_ephemeral(p_c)) return std::nullopt;
    FlowPortState st;
    st.p_star = p_star;
    st.p_c = p_c;
    st.p_s = *p_s;
    st.p_hash = hdr.dst_port;
    return st;
}

PacketHeader rewrite_downstream(const PacketHeader& hdr, const FlowPortState* state, const PortRegistry& reg) {
    FlowPortState st;
    if (state) {
        st = *state;
    } else {
        auto d = decode_ts(hdr, reg);
        if (!d) throw OpsecError(Errc::UnknownFlow, "no state and no decodable timestamp");
        st = *d;
    }
    PacketHeader out = hdr;
    out.src_port = st.p_star;
    out.dst_port = st.p_c;
    return out;
}

uint32_t pack_ts(uint16_t p_star, uint16_t p_c) {
    if (p_star == 0 || p_c == 0) throw OpsecError(Errc::InvalidArgument, "port 0");
    return (uint32_t(p_star) << 16) | p_c;
}

std::pair<uint16_t, uint16_t> unpack_ts(uint32_t value) {
    return {static_cast<uint16_t>(value >> 16), static_cast<uint16_t>(value & 0xFFFF)};
}

} // namespace opsec::portplan
