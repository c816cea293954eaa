#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "opsec/client.hpp"
#include "opsec/keys.hpp"
#include "opsec/obox.hpp"
#include "opsec/origin.hpp"
#include "opsec/portplan.hpp"
#include "opsec/rng.hpp"

namespace opsec::netsim {

using Time = int64_t;  // simulated microseconds

enum class Adversary { Honest, DropsOpsec, TampersServDisc, TampersServReq, FakeQuote };
const char* adversary_name(Adversary a);

struct SignatureSpec {
    std::string pattern;
    protocol::VerdictKind verdict = protocol::VerdictKind::Alert;
};

struct SfSpec {
    std::string name;
    std::string kind = "byte_counter";  // keyword_ids | url_blocklist | byte_counter
    std::vector<SignatureSpec> signatures;
    std::vector<std::string> blocked;
    protocol::VerdictKind verdict = protocol::VerdictKind::Alert;
    obox::SfDirection direction = obox::SfDirection::Both;
};

obox::SecurityFunction make_sf(const SfSpec& spec);

inline constexpr uint32_t STATIC_POOL = 0;  // theta value meaning one fixed instance

struct IspSpec {
    uint32_t isp_id = 1;
    bool willing = true;
    obox::Coverage coverage = obox::Coverage::Both;
    std::vector<SfSpec> catalog;
    uint32_t theta = STATIC_POOL;
    Adversary adversary = Adversary::Honest;
};

struct ClientSpec {
    std::vector<std::string> sfc_up;
    std::vector<std::string> sfc_down;
    client::FailMode fail_mode = client::FailMode::FailOpen;
    size_t path_budget = wire::DEFAULT_PATH_BUDGET;
};

struct TrafficSpec {
    uint32_t sessions = 1;              // Opsec-capable sessions
    uint32_t legacy_sessions = 0;       // plain sessions
    bool legacy_on_opsec_ports = false; // legacy sessions pick a source port in P
    uint32_t clients = 1;               // distinct client hosts, sessions spread round-robin
    std::vector<std::string> requests{"/index.html"};
    uint32_t stream_packets = 0;        // one-way packets after the requests
    double rate_pps = 100.0;            // Poisson rate of stream packets
    Time start_spread_us = 0;           // session start times uniform in [0, spread]
};

struct QueueSpec {
    Time service_us = 50;  // c_p
};

struct Scenario {
    uint64_t seed = 1;
    portplan::PortRegistry registry = portplan::PortRegistry::defaults();
    bool nat = false;
    uint32_t nat_capacity = 16384;
    std::vector<IspSpec> isps;
    std::vector<Time> link_delay_us;  // isps.size() + 1 links, client side first
    ClientSpec client;
    origin::ServerProfile origin;
    std::optional<origin::ReflectionMix> origin_mix;
    TrafficSpec traffic;
    QueueSpec queue;
    Time connect_timeout_us = 1'000'000;
    Time response_timeout_us = 2'000'000;
    bool keep_event_lines = true;

    void validate() const;  // throws ConfigInvalid
    Time one_way_us() const;
};

// Instance count under threshold scaling.
size_t target_instances(size_t active_flows, uint32_t theta);
// Least-loaded instance, ties to the lowest index; skips retired slots.
size_t pick_instance(const std::vector<size_t>& loads, const std::vector<bool>& retired);

struct SessionMetrics {
    uint32_t session = 0;
    portplan::Addr client_addr = 0;
    bool legacy_flow = false;     // generated as a plain session
    std::string outcome;          // Ready | Aborted | Terminated | Failed
    std::string abort_reason;
    bool opsec_attempted = false;
    bool fell_back = false;       // used a legacy connection after an Opsec attempt
    int refused_probes = 0;
    int timeouts = 0;
    int rounds = 0;
    size_t assignments = 0;
    double rtt_equivalents = 0.0;
    Time handshake_us = 0;        // summed handshake leg time
    uint64_t bytes_sent = 0;      // upstream application bytes
    uint64_t bytes_delivered = 0; // application bytes that reached the origin
    uint64_t responses_ok = 0;
    uint64_t payload_mismatches = 0;
    size_t alerts = 0;
    int spoofed_alerts = 0;
    uint64_t stream_sent = 0;
    uint64_t stream_measured = 0;
    double mean_box_latency_us = 0.0;
};

struct IspMetrics {
    uint32_t isp_id = 0;
    size_t max_instances = 0;
    std::vector<std::pair<Time, size_t>> instance_timeline;
    std::vector<size_t> flows_per_instance;  // sessions ever pinned per instance
    uint64_t conns_first = 0;
    uint64_t conns_seen = 0;
    uint64_t port_exhausted = 0;
    uint64_t passthrough = 0;
    uint64_t dropped = 0;
    uint64_t mutations = 0;
    uint64_t alerts = 0;
    uint64_t auth_failures = 0;
    uint64_t abstained = 0;
};

struct InvariantCounters {
    uint64_t server_dst_checked = 0;
    uint64_t server_dst_violations = 0;     // (a)
    uint64_t client_ports_checked = 0;
    uint64_t client_ports_violations = 0;   // (b)
    uint64_t transit_src_checked = 0;
    uint64_t transit_src_violations = 0;    // (c)
    uint64_t server_conns = 0;
    uint64_t server_collisions = 0;         // (d)
    uint64_t ts_checked = 0;
    uint64_t ts_violations = 0;             // legacy timestamps modified
};

struct Metrics {
    std::vector<SessionMetrics> sessions;
    std::vector<IspMetrics> isps;
    InvariantCounters inv;
    uint64_t refused_probes = 0;
    uint64_t nat_drops = 0;
    uint64_t nat_unmapped = 0;
    uint64_t events = 0;
    Time duration_us = 0;
    Time one_way_us = 0;
    std::string event_digest;  // hex SHA-256 over the event log lines
};

class Simulation;

Simulation build(const Scenario& scenario);

class Simulation {
public:
    explicit Simulation(const Scenario& scenario);
    ~Simulation();
    Simulation(Simulation&&) noexcept;
    Simulation& operator=(Simulation&&) noexcept;

    // Runs until the event queue drains or `until` is reached.
    Metrics run(std::optional<Time> until = std::nullopt);

    const std::vector<std::string>& event_lines() const;
    const Scenario& scenario() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// RTT-equivalents of handshake legs recorded in an event log.
std::map<uint32_t, double> rtt_from_event_log(const std::vector<std::string>& lines);

struct LoadPoint {
    uint32_t flows = 0;
    std::string mode;  // dynamic | static
    uint32_t theta = 0;
    double p95_us = 0.0;
    double mean_us = 0.0;
    size_t max_instances = 0;
    uint64_t packets = 0;
};

struct LoadSpec {
    std::vector<uint32_t> flows;
    uint32_t theta = 30;
    double rate_pps = 400.0 / 3.0;
    uint32_t stream_packets = 133;
    bool include_static = true;
};

// Load sweep: one run per flow count and mode, plus the one-flow baseline.
struct LoadResult {
    double single_flow_us = 0.0;
    std::vector<LoadPoint> points;
};
LoadResult run_load_sweep(const Scenario& base, const LoadSpec& spec);

// Random scenario within the generator envelope used by property checks.
struct RandomScenarioOptions {
    uint32_t max_isps = 3;
    uint32_t min_flows = 1;
    uint32_t max_flows = 1000;
    bool allow_adversaries = false;
};
Scenario random_scenario(Rng& rng, const RandomScenarioOptions& opt);

} // namespace opsec::netsim
