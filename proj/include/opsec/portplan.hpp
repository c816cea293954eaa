#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <tuple>
#include <vector>

#include "opsec/bytes.hpp"

namespace opsec::portplan {

using Addr = uint32_t;

struct PortRegistry {
    std::map<uint16_t, uint16_t> bindings;  // p -> p_s
    uint16_t ephemeral_lo = 49152;
    uint16_t ephemeral_hi = 65535;

    static PortRegistry defaults();

    // Throws ConfigInvalid on overlap with listen ports or the ephemeral range.
    void validate() const;

    bool contains(uint16_t port) const { return bindings.count(port) > 0; }
    std::optional<uint16_t> listen_port(uint16_t p_star) const;
    std::vector<uint16_t> opsec_ports_for(uint16_t p_s) const;
    bool is_ephemeral(uint16_t port) const { return port >= ephemeral_lo && port <= ephemeral_hi; }
};

enum class Direction : uint8_t { Upstream, Downstream };

namespace tcp {
inline constexpr uint8_t SYN = 0x01;
inline constexpr uint8_t ACK = 0x02;
inline constexpr uint8_t FIN = 0x04;
inline constexpr uint8_t RST = 0x08;
inline constexpr uint8_t PSH = 0x10;
} // namespace tcp

struct PacketHeader {
    Addr src_addr = 0;
    Addr dst_addr = 0;
    uint16_t src_port = 0;
    uint16_t dst_port = 0;
    uint32_t ts_val = 0;
    uint32_t ts_ecr = 0;
    Direction direction = Direction::Upstream;
    uint8_t flags = 0;
    Bytes payload;

    bool operator==(const PacketHeader&) const = default;
};

struct FlowPortState {
    uint16_t p_c = 0;
    uint16_t p_star = 0;
    std::optional<uint16_t> p_hash;
    uint16_t p_s = 0;
};

enum class Class { OpsecByDst, OpsecBySrc, Legacy };

Class classify(const PacketHeader& hdr, const PortRegistry& reg);

using InUse = std::set<std::tuple<Addr, Addr, uint16_t>>;

// Picks the smallest free port in P bound to the same listen port as p_star.
uint16_t allocate_hash_port(Addr src_addr, Addr dst_addr, uint16_t p_star, const PortRegistry& reg,
                            InUse& in_use);
void release_hash_port(Addr src_addr, Addr dst_addr, uint16_t p_hash, InUse& in_use);

PacketHeader rewrite_upstream(const PacketHeader& hdr, const FlowPortState& state, bool is_first_opsec_isp);

// With no state, (p_star, p_c) is recovered from ts_ecr.
PacketHeader rewrite_downstream(const PacketHeader& hdr, const FlowPortState* state, const PortRegistry& reg);

uint32_t pack_ts(uint16_t p_star, uint16_t p_c);
std::pair<uint16_t, uint16_t> unpack_ts(uint32_t value);

// Recovers flow ports from a reflected timestamp; nullopt unless p_star is in P,
// binds to hdr.src_port and p_c is an ephemeral port.
std::optional<FlowPortState> decode_ts(const PacketHeader& hdr, const PortRegistry& reg);

} // namespace opsec::portplan
