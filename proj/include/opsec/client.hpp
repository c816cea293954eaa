#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "opsec/error.hpp"
#include "opsec/keys.hpp"
#include "opsec/portplan.hpp"
#include "opsec/protocol.hpp"
#include "opsec/rng.hpp"

namespace opsec::client {

using protocol::SfId;

struct SfcSpec {
    std::vector<SfId> sfc_up;
    std::vector<SfId> sfc_down;
    bool empty() const { return sfc_up.empty() && sfc_down.empty(); }
};

enum class AssignmentRule { FirstWillingInPathOrder };
enum class FailMode { FailOpen, FailClosed };

struct SessionPolicy {
    AssignmentRule assignment_rule = AssignmentRule::FirstWillingInPathOrder;
    FailMode fail_mode = FailMode::FailOpen;
    size_t path_budget = wire::DEFAULT_PATH_BUDGET;
};

enum class SessionState { Idle, AwaitResponse1, AwaitResponse2, Ready, Aborted, Terminated };
const char* state_name(SessionState s);

struct Target {
    portplan::Addr addr = 0;
    uint16_t p_s = 443;
    std::string host = "origin.example";
    bool tls_like = false;
};

struct DiscoveredBox {
    uint32_t box_id = 0;
    Bytes public_part;
    keys::Nonce box_nonce{};
    std::optional<keys::AttestationQuote> quote;
    bool verified = false;
    std::optional<size_t> up_pos;    // index among request-phase announcements
    std::optional<size_t> down_pos;  // index among response-phase announcements
    std::vector<keys::Digest> up_hashes;
    std::vector<keys::Digest> down_hashes;
};

struct HttpGet {
    uint16_t dst_port = 0;
    uint32_t ts_val = 0;
    std::string path;
};

struct Transcript {
    Bytes opsec_hello;  // encoded messages as emitted
    Bytes servdisc;
    Bytes servreq;
};

struct Notification {
    uint32_t box_id = 0;
    protocol::VerdictKind kind = protocol::VerdictKind::Alert;
    SfId sf{};
    std::string reason;
};

struct ClientSession {
    SessionState state = SessionState::Idle;
    Target target;
    portplan::FlowPortState ports;
    SfcSpec sfc;
    SessionPolicy policy;
    Bytes authority_public;

    keys::KeyPair keypair;
    keys::Nonce client_nonce{};
    protocol::SessionTag tag{};

    std::vector<DiscoveredBox> discovered;
    std::vector<protocol::Assignment> assignments;
    std::map<uint32_t, keys::HopChannel> channels;
    std::vector<uint32_t> up_chain;    // client-nearest first
    std::vector<uint32_t> down_chain;  // server-nearest first
    Transcript transcript;
    Bytes content_key;

    bool legacy = false;          // connected straight to p_s
    bool origin_closes = false;
    bool repaired = false;
    int rounds = 0;
    std::optional<Errc> abort_reason;
    std::string diagnostic;

    uint64_t send_counter = 0;
    keys::ReplayGuard down_guard;
    std::map<uint32_t, keys::ReplayGuard> alert_guards;
    std::vector<Notification> notifications;
    int spoofed_alerts = 0;

    const DiscoveredBox* box(uint32_t id) const;
    bool protected_session() const { return !assignments.empty(); }
};

std::pair<ClientSession, std::optional<HttpGet>> begin_session(const Target& target, const SfcSpec& sfc,
                                                               const SessionPolicy& policy, Rng& rng,
                                                               const portplan::PortRegistry& reg,
                                                               uint16_t p_c, const Bytes& authority_public);

// Called when the client's connection moves to a new source port.
void rebind_port(ClientSession& s, uint16_t p_c);
HttpGet make_get(const ClientSession& s, std::string path);

std::optional<HttpGet> on_response_1(ClientSession& s, std::string_view reflected, bool origin_closes, Rng& rng);
std::optional<HttpGet> on_response_2(ClientSession& s, std::string_view reflected, Rng& rng);

// Opsec port unreachable (refused or timed out).
void on_opsec_unreachable(ClientSession& s);

portplan::PacketHeader send_app_data(ClientSession& s, ByteView plaintext);
Bytes receive_app_data(ClientSession& s, ByteView payload);

enum class AlertOutcome { Notified, Terminated, Dropped };
AlertOutcome on_alert(ClientSession& s, ByteView alert_record);

// Client-side decoding of alert records reflected inside a response.
std::optional<Bytes> reflected_alert(std::string_view text);

} // namespace opsec::client
