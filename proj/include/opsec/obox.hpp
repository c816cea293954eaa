#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "opsec/keys.hpp"
#include "opsec/portplan.hpp"
#include "opsec/protocol.hpp"
#include "opsec/rng.hpp"

namespace opsec::obox {

using protocol::SfId;
using protocol::VerdictKind;

enum class Coverage { Up, Down, Both };
const char* coverage_name(Coverage c);
inline bool covers_up(Coverage c) { return c != Coverage::Down; }
inline bool covers_down(Coverage c) { return c != Coverage::Up; }

struct Verdict {
    VerdictKind kind = VerdictKind::Pass;
    std::string reason;
};

enum class SfDirection { Up, Down, Both };

struct FlowContext {
    portplan::Direction direction = portplan::Direction::Upstream;
    protocol::SessionTag tag{};
};

struct SecurityFunction {
    SfId id{};
    std::string name;
    SfDirection direction = SfDirection::Both;
    std::function<Verdict(ByteView, const FlowContext&)> inspect;
};

// Keyword-match IDS: each signature carries its own verdict.
SecurityFunction keyword_ids(const std::string& name, std::vector<std::pair<std::string, VerdictKind>> signatures,
                             SfDirection dir = SfDirection::Both);
// Matches request lines against blocked path prefixes.
SecurityFunction url_blocklist(const std::string& name, std::vector<std::string> blocked, VerdictKind kind);
SecurityFunction byte_counter(const std::string& name);

using ConnId = uint64_t;

struct BoxOutput {
    bool drop = false;
    Bytes payload;                  // forwarded payload when not dropped
    std::vector<Bytes> to_client;   // injected downstream payloads
    std::vector<Bytes> to_server;   // injected upstream payloads
};

struct BoxMetrics {
    uint64_t hellos_appended = 0;
    uint64_t abstained = 0;
    uint64_t grants_opened = 0;
    uint64_t grant_open_failures = 0;
    uint64_t records_opened = 0;
    uint64_t auth_failures = 0;
    uint64_t passthrough = 0;
    uint64_t alerts_emitted = 0;
    uint64_t terminated_flows = 0;
    uint64_t chain_gaps = 0;
    std::map<std::string, uint64_t> inspected;  // per SF name
};

struct OpenAttempt {
    protocol::SessionTag tag{};
    bool selected = false;
};

class BoxState {
public:
    struct Flow {
        protocol::SessionTag tag{};
        keys::Nonce client_nonce{};
        keys::Nonce box_nonce{};
        Bytes servdisc_seen;
        std::vector<protocol::DiscEntry> requested;
        bool ready = false;
        bool terminated = false;
        uint8_t flags = 0;
        keys::HopChannel channel;
        std::optional<keys::SymKey> up_egress;
        std::optional<keys::SymKey> down_ingress;
        std::optional<keys::SymKey> content_key;
        std::vector<SfId> up_sfs;
        std::vector<SfId> down_sfs;
        keys::ReplayGuard up_guard;
        keys::ReplayGuard down_guard;
        uint64_t up_egress_counter = 0;
        uint64_t down_counter = 0;
        uint64_t alert_counter = 0;
    };

    BoxState(uint32_t box_id, keys::KeyPair keypair, Bytes quote, Coverage coverage,
             std::vector<SecurityFunction> catalog, uint64_t seed,
             size_t path_budget = wire::DEFAULT_PATH_BUDGET);

    uint32_t box_id() const { return box_id_; }
    const Bytes& public_part() const { return keypair_.public_part; }
    Coverage coverage() const { return coverage_; }
    const std::vector<SecurityFunction>& catalog() const { return catalog_; }
    const BoxMetrics& metrics() const { return metrics_; }
    const std::vector<OpenAttempt>& open_audit() const { return open_audit_; }
    const std::vector<std::string>& inspect_trace() const { return inspect_trace_; }

    bool has_flow(const protocol::SessionTag& tag) const { return flows_.count(tag) > 0; }
    bool flow_ready(const protocol::SessionTag& tag) const;
    size_t flow_count() const { return flows_.size(); }
    std::optional<protocol::SessionTag> bound_session(ConnId conn) const;
    void forget_conn(ConnId conn) { bindings_.erase(conn); }
    void drop_session(const protocol::SessionTag& tag);

    BoxOutput on_transit_request(ByteView payload, ConnId conn);
    BoxOutput on_transit_response(ByteView payload, ConnId conn);
    BoxOutput on_data_packet(ByteView payload, ConnId conn, portplan::Direction dir);

    std::vector<keys::Digest> catalog_lookup(const std::vector<SfId>& requested) const;

    // Test-only view of enclave-held material.
    friend struct EnclaveAudit;

private:
    std::vector<keys::Digest> announce(const std::vector<protocol::DiscEntry>& req, protocol::Dir dir) const;
    std::optional<wire::OpsecMessage> hello_message(Flow& f);
    wire::OpsecMessage servann_message(const Flow& f, protocol::Phase phase) const;
    std::optional<wire::OpsecMessage> process_servreq(const wire::OpsecMessage& req_msg);
    Flow* start_flow(const std::vector<wire::OpsecMessage>& msgs);
    const SecurityFunction* find_sf(const SfId& id) const;
    Verdict run_chain(Flow& f, const std::vector<SfId>& chain, ByteView pt, portplan::Direction dir,
                      BoxOutput& out);
    Bytes alert_record(Flow& f, VerdictKind kind, const SfId& sf, const std::string& reason);
    void deliver_alert(Flow& f, Bytes record, BoxOutput& out);

    uint32_t box_id_;
    keys::KeyPair keypair_;
    Bytes quote_;
    Coverage coverage_;
    std::vector<SecurityFunction> catalog_;
    Rng rng_;
    size_t path_budget_;
    std::map<protocol::SessionTag, Flow> flows_;
    std::map<ConnId, protocol::SessionTag> bindings_;
    BoxMetrics metrics_;
    std::vector<OpenAttempt> open_audit_;
    std::vector<std::string> inspect_trace_;
};

struct EnclaveAudit {
    static const keys::KeyPair& keypair(const BoxState& b) { return b.keypair_; }
    static const BoxState::Flow* flow(const BoxState& b, const protocol::SessionTag& t) {
        auto it = b.flows_.find(t);
        return it == b.flows_.end() ? nullptr : &it->second;
    }
};

// True when a downstream payload is a reflected handshake response.
bool is_control_response(ByteView payload);

} // namespace opsec::obox
