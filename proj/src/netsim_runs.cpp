#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "opsec/error.hpp"
#include "opsec/netsim.hpp"

namespace opsec::netsim {

std::map<uint32_t, double> rtt_from_event_log(const std::vector<std::string>& lines) {
    std::map<uint32_t, int64_t> legs;
    std::map<uint32_t, bool> ready;
    int64_t one_way = 0;
    for (auto& line : lines) {
        auto j = nlohmann::json::parse(line);
        const auto& ev = j.at("ev").get_ref<const std::string&>();
        if (ev == "sim") {
            one_way = j.at("one_way").get<int64_t>();
        } else if (ev == "recv" && j.at("hs").get<int>() == 1) {
            auto s = j.at("s").get<uint32_t>();
            legs[s] += j.at("t").get<int64_t>() - j.at("sent").get<int64_t>();
        } else if (ev == "state" && j.at("state") == "Ready") {
            ready[j.at("s").get<uint32_t>()] = true;
        }
    }
    if (one_way <= 0) throw OpsecError(Errc::ConfigInvalid, "event log: missing sim header");
    std::map<uint32_t, double> out;
    for (auto& [s, us] : legs)
        if (ready[s]) out[s] = double(us) / double(2 * one_way);
    return out;
}

namespace {

double p95(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    size_t idx = static_cast<size_t>(std::ceil(0.95 * double(v.size()))) - 1;
    return v[std::min(idx, v.size() - 1)];
}

LoadPoint run_point(const Scenario& base, const LoadSpec& spec, uint32_t flows, bool dynamic) {
    Scenario sc = base;
    sc.keep_event_lines = false;
    sc.traffic.sessions = flows;
    sc.traffic.legacy_sessions = 0;
    sc.traffic.clients = std::max<uint32_t>(1, flows);
    sc.traffic.stream_packets = spec.stream_packets;
    sc.traffic.rate_pps = spec.rate_pps;
    for (auto& isp : sc.isps) isp.theta = dynamic ? spec.theta : STATIC_POOL;
    auto sim = build(sc);
    auto m = sim.run();
    std::vector<double> lat;
    double sum = 0.0;
    LoadPoint pt;
    pt.flows = flows;
    pt.mode = dynamic ? "dynamic" : "static";
    pt.theta = dynamic ? spec.theta : STATIC_POOL;
    for (auto& s : m.sessions) {
        if (!s.stream_measured) continue;
        lat.push_back(s.mean_box_latency_us);
        sum += s.mean_box_latency_us;
        pt.packets += s.stream_measured;
    }
    pt.p95_us = p95(lat);
    pt.mean_us = lat.empty() ? 0.0 : sum / double(lat.size());
    for (auto& i : m.isps) pt.max_instances = std::max(pt.max_instances, i.max_instances);
    return pt;
}

} // namespace

LoadResult run_load_sweep(const Scenario& base, const LoadSpec& spec) {
    LoadResult r;
    r.single_flow_us = run_point(base, spec, 1, true).mean_us;
    for (uint32_t n : spec.flows) {
        r.points.push_back(run_point(base, spec, n, true));
        if (spec.include_static) r.points.push_back(run_point(base, spec, n, false));
    }
    return r;
}

Scenario random_scenario(Rng& rng, const RandomScenarioOptions& opt) {
    Scenario sc;
    sc.seed = rng.next_u64();
    sc.nat = rng.below(2) == 1;
    sc.keep_event_lines = false;
    uint32_t n = static_cast<uint32_t>(rng.below(opt.max_isps + 1));
    const char* names[] = {"ids", "url-filter", "counter"};
    for (uint32_t i = 0; i < n; ++i) {
        IspSpec isp;
        isp.isp_id = 100 + i;
        isp.willing = rng.uniform() < 0.7;
        isp.coverage = static_cast<obox::Coverage>(rng.below(3));
        isp.theta = rng.below(2) ? 30 : STATIC_POOL;
        for (auto* nm : names) {
            if (rng.below(2) == 0) continue;
            SfSpec sf;
            sf.name = nm;
            sf.kind = "byte_counter";
            isp.catalog.push_back(sf);
        }
        if (opt.allow_adversaries && rng.below(4) == 0)
            isp.adversary = static_cast<Adversary>(1 + rng.below(4));
        sc.isps.push_back(std::move(isp));
    }
    bool up = false, down = false;
    for (auto& isp : sc.isps) {
        if (!isp.willing || isp.adversary == Adversary::DropsOpsec) continue;
        up |= obox::covers_up(isp.coverage);
        down |= obox::covers_down(isp.coverage);
    }
    if (up && !down) {
        for (auto& isp : sc.isps)
            if (isp.willing && isp.adversary != Adversary::DropsOpsec && obox::covers_up(isp.coverage)) {
                isp.coverage = obox::Coverage::Both;
                break;
            }
    }
    for (uint32_t i = 0; i <= n; ++i) sc.link_delay_us.push_back(1000 * rng.range(1, 20));

    double lo = std::log(double(opt.min_flows)), hi = std::log(double(opt.max_flows));
    uint32_t flows = static_cast<uint32_t>(std::lround(std::exp(lo + (hi - lo) * rng.uniform())));
    flows = std::clamp(flows, opt.min_flows, opt.max_flows);
    sc.traffic.sessions = flows;
    sc.traffic.clients = static_cast<uint32_t>(rng.range(1, flows));
    sc.traffic.start_spread_us = rng.range(0, 200'000);
    sc.traffic.stream_packets = static_cast<uint32_t>(rng.below(3));

    sc.origin.reflection_mode = static_cast<origin::ReflectionMode>(rng.below(10) < 6 ? 0 : rng.below(10) < 8 ? 1 : 2);
    sc.origin.close_after_response = rng.uniform() < 0.2;
    sc.origin.tls_like = rng.uniform() < 0.2;
    sc.origin.content["/index.html"] = "<html>index</html>";

    for (auto* nm : names)
        if (rng.below(3) == 0) sc.client.sfc_up.push_back(nm);
    if (rng.below(3) == 0) sc.client.sfc_down.push_back("ids");
    sc.client.fail_mode = rng.below(2) ? client::FailMode::FailOpen : client::FailMode::FailClosed;
    return sc;
}

} // namespace opsec::netsim
