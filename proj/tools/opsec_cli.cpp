#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "opsec/config.hpp"
#include "opsec/error.hpp"
#include "opsec/netsim.hpp"
#include "opsec/routing.hpp"

using namespace opsec;
using json = nlohmann::json;

namespace {

enum Exit { Ok = 0, ProtocolFailure = 1, ConfigError = 2, InfeasiblePlan = 3 };

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

void write_out(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw OpsecError(Errc::ConfigInvalid, path + ": cannot write");
    out << text;
}

std::vector<std::string> split_msgs(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string m;
    while (std::getline(ss, m, '+'))
        if (!m.empty()) out.push_back(m);
    return out;
}

// ---- handshake ----

struct HandshakeOpts {
    std::string scenario;
    std::string events;
};

int cmd_handshake(const HandshakeOpts& o) {
    auto file = config::load_scenario(o.scenario);
    auto sc = file.scenario;
    sc.traffic.sessions = 1;
    sc.traffic.legacy_sessions = 0;
    sc.traffic.clients = 1;
    sc.traffic.start_spread_us = 0;
    sc.keep_event_lines = true;
    auto sim = netsim::build(sc);
    auto m = sim.run();
    const auto& lines = sim.event_lines();
    if (!o.events.empty()) {
        std::string all;
        for (auto& l : lines) all += l + "\n";
        write_out(o.events, all);
    }

    std::ostringstream out;
    out << "handshake seed " << sc.seed << ", " << sc.isps.size() << " isp(s), one-way "
        << fmt("%.3f", double(m.one_way_us) / 1000.0) << " ms\n";
    std::map<uint64_t, std::vector<std::string>> last;  // per connection
    std::vector<std::string> order;
    for (auto& line : lines) {
        auto j = json::parse(line);
        if (!j.contains("msgs") || j.value("s", 0u) != 0u) continue;
        std::string ev = j["ev"], at = j["at"], leg = j["leg"];
        auto msgs = split_msgs(j["msgs"]);
        for (auto& name : msgs)
            if (std::find(order.begin(), order.end(), name) == order.end()) order.push_back(name);
        auto key = j["conn"].get<uint64_t>();
        std::vector<std::string> added;
        auto prev = last.find(key);
        if (ev == "send" && at == "client") {
            added = msgs;
        } else if (prev != last.end()) {
            std::multiset<std::string> before(prev->second.begin(), prev->second.end());
            for (auto& name : msgs) {
                auto it = before.find(name);
                if (it != before.end())
                    before.erase(it);
                else
                    added.push_back(name);
            }
        } else {
            added = msgs;
        }
        last[key] = msgs;
        char head[96];
        std::snprintf(head, sizeof head, "  %9.3f ms  %-7s %-5s %-4s ", double(j["t"].get<int64_t>()) / 1000.0,
                      at.c_str(), ev.c_str(), leg.c_str());
        out << head << j["msgs"].get<std::string>();
        if (!added.empty() && !(ev == "send" && at == "client")) {
            out << "  (+";
            for (size_t i = 0; i < added.size(); ++i) out << (i ? " +" : "") << added[i];
            out << ")";
        }
        out << "\n";
    }
    out << "messages:";
    for (size_t i = 0; i < order.size(); ++i) out << (i ? " > " : " ") << order[i];
    out << "\n";

    const auto& s = m.sessions.at(0);
    auto rtt = netsim::rtt_from_event_log(lines);
    double from_log = rtt.count(0) ? rtt.at(0) : 0.0;
    out << "rtt accounting: " << fmt("%.2f", s.rtt_equivalents) << " RTT-equivalents before data (event log "
        << fmt("%.2f", from_log) << "; handshake legs " << fmt("%.3f", double(s.handshake_us) / 1000.0) << " ms, "
        << s.rounds << " protocol round(s), " << s.refused_probes << " refused probe(s))\n";
    out << "assignments: " << s.assignments << "\n";
    out << "outcome: " << s.outcome;
    if (!s.abort_reason.empty()) out << " (" << s.abort_reason << ")";
    out << "\n";
    std::cout << out.str();
    if (s.abort_reason == errc_name(Errc::TranscriptTampered)) std::cerr << "error: transcript tampered\n";
    return s.outcome == "Ready" ? Ok : ProtocolFailure;
}

// ---- simulate ----

struct SimulateOpts {
    std::string scenario;
    std::string out;
    std::string events;
    std::string summary;
    bool load = false;
};

std::string session_csv(const netsim::Metrics& m) {
    std::ostringstream out;
    out << "session,client_addr,legacy,outcome,abort_reason,opsec_attempted,fell_back,refused_probes,timeouts,"
           "rounds,assignments,rtt_equivalents,handshake_us,bytes_sent,bytes_delivered,responses_ok,"
           "payload_mismatches,alerts,spoofed_alerts,stream_sent,stream_measured,mean_box_latency_us\n";
    for (auto& s : m.sessions) {
        out << s.session << ',' << s.client_addr << ',' << int(s.legacy_flow) << ',' << s.outcome << ','
            << s.abort_reason << ',' << int(s.opsec_attempted) << ',' << int(s.fell_back) << ',' << s.refused_probes
            << ',' << s.timeouts << ',' << s.rounds << ',' << s.assignments << ',' << fmt("%.4f", s.rtt_equivalents)
            << ',' << s.handshake_us << ',' << s.bytes_sent << ',' << s.bytes_delivered << ',' << s.responses_ok << ','
            << s.payload_mismatches << ',' << s.alerts << ',' << s.spoofed_alerts << ',' << s.stream_sent << ','
            << s.stream_measured << ',' << fmt("%.3f", s.mean_box_latency_us) << '\n';
    }
    return out.str();
}

json summary_json(const netsim::Scenario& sc, const netsim::Metrics& m) {
    json j;
    j["seed"] = sc.seed;
    std::map<std::string, uint64_t> outcomes;
    uint64_t fell_back = 0, mismatches = 0, delivered = 0, sent = 0;
    for (auto& s : m.sessions) {
        ++outcomes[s.outcome];
        fell_back += s.fell_back;
        mismatches += s.payload_mismatches;
        delivered += s.bytes_delivered;
        sent += s.bytes_sent;
    }
    j["sessions"] = m.sessions.size();
    j["outcomes"] = outcomes;
    j["fell_back"] = fell_back;
    j["payload_mismatches"] = mismatches;
    j["bytes_sent"] = sent;
    j["bytes_delivered"] = delivered;
    j["refused_probes"] = m.refused_probes;
    j["nat_drops"] = m.nat_drops;
    j["events"] = m.events;
    j["duration_us"] = m.duration_us;
    j["one_way_us"] = m.one_way_us;
    j["event_digest"] = m.event_digest;
    auto& inv = m.inv;
    j["invariants"] = {
        {"server_dst", {{"checked", inv.server_dst_checked}, {"violations", inv.server_dst_violations}}},
        {"client_ports", {{"checked", inv.client_ports_checked}, {"violations", inv.client_ports_violations}}},
        {"transit_src", {{"checked", inv.transit_src_checked}, {"violations", inv.transit_src_violations}}},
        {"server_collisions", {{"checked", inv.server_conns}, {"violations", inv.server_collisions}}},
        {"legacy_timestamps", {{"checked", inv.ts_checked}, {"violations", inv.ts_violations}}},
    };
    json isps = json::array();
    for (auto& i : m.isps)
        isps.push_back({{"isp_id", i.isp_id},
                        {"max_instances", i.max_instances},
                        {"conns_seen", i.conns_seen},
                        {"passthrough", i.passthrough},
                        {"dropped", i.dropped},
                        {"alerts", i.alerts},
                        {"auth_failures", i.auth_failures},
                        {"port_exhausted", i.port_exhausted}});
    j["isps"] = isps;
    return j;
}

int cmd_simulate(const SimulateOpts& o) {
    auto file = config::load_scenario(o.scenario);
    if (o.load) {
        if (!file.load) throw OpsecError(Errc::ConfigInvalid, o.scenario + ": load: missing field");
        auto sc = file.scenario;
        sc.keep_event_lines = false;
        auto res = netsim::run_load_sweep(sc, *file.load);
        std::ostringstream csv;
        csv << "flows,mode,theta,p95_us,mean_us,p95_over_single,max_instances,packets\n";
        for (auto& p : res.points)
            csv << p.flows << ',' << p.mode << ',' << p.theta << ',' << fmt("%.3f", p.p95_us) << ','
                << fmt("%.3f", p.mean_us) << ',' << fmt("%.4f", p.p95_us / res.single_flow_us) << ','
                << p.max_instances << ',' << p.packets << '\n';
        write_out(o.out, csv.str());
        json j;
        j["seed"] = sc.seed;
        j["single_flow_us"] = res.single_flow_us;
        j["points"] = res.points.size();
        write_out(o.summary, j.dump(2) + "\n");
        return Ok;
    }
    auto sc = file.scenario;
    sc.keep_event_lines = !o.events.empty();
    auto sim = netsim::build(sc);
    auto m = sim.run();
    write_out(o.out, session_csv(m));
    if (!o.events.empty()) {
        std::string all;
        for (auto& l : sim.event_lines()) all += l + "\n";
        write_out(o.events, all);
    }
    write_out(o.summary, summary_json(sc, m).dump(2) + "\n");
    return Ok;
}

// ---- plan / sweep ----

struct TrafficOpts {
    std::string graph;
    std::string legacy;
    int64_t gravity = 0;
    std::string method = "auto";
};

routing::Method parse_method(const std::string& s) {
    if (s == "auto") return routing::Method::Auto;
    if (s == "node-arc") return routing::Method::NodeArc;
    if (s == "paths") return routing::Method::ColumnGeneration;
    throw OpsecError(Errc::ConfigInvalid, "--method: expected auto|node-arc|paths");
}

routing::TrafficMatrix total_matrix(const TrafficOpts& o, config::GraphFile& gf) {
    if (!o.legacy.empty()) return config::load_demands(o.legacy, gf.graph);
    int64_t vol = o.gravity > 0 ? o.gravity : gf.gravity.value_or(0);
    if (vol <= 0) throw OpsecError(Errc::ConfigInvalid, "no traffic: give --legacy, --gravity or a graph \"gravity\"");
    return routing::gen_gravity_matrix(gf.graph, vol, gf.rng);
}

std::vector<int> parse_box_names(const std::string& list, const routing::Graph& g) {
    std::vector<int> out;
    std::stringstream ss(list);
    std::string name;
    while (std::getline(ss, name, ',')) {
        int v = g.find(name);
        if (v < 0) throw OpsecError(Errc::ConfigInvalid, "--boxes: unknown node " + name);
        if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
    }
    return out;
}

struct PlanOpts {
    TrafficOpts traffic;
    double ratio = 0.0;
    std::string boxes;
    size_t box_count = 0;
    std::string out;
    std::string tunnels;
};

std::vector<int> choose_boxes(const routing::Graph& g, const std::string& names, size_t count) {
    if (!names.empty()) return parse_box_names(names, g);
    auto flagged = g.boxes();
    if (count == 0) return flagged;
    auto ranked = flagged.empty() ? routing::rank_box_sites(g) : flagged;
    if (ranked.size() < count)
        throw OpsecError(Errc::ConfigInvalid, "--box-count: only " + std::to_string(ranked.size()) + " sites");
    ranked.resize(count);
    return ranked;
}

std::string path_text(const routing::Graph& g, const std::vector<int>& nodes) {
    std::string s;
    for (size_t i = 0; i < nodes.size(); ++i) s += (i ? ">" : "") + g.names[nodes[i]];
    return s;
}

int cmd_plan(const PlanOpts& o) {
    auto gf = config::load_graph(o.traffic.graph, config::seed_from_env());
    auto& g = gf.graph;
    auto total = total_matrix(o.traffic, gf);
    auto boxes = choose_boxes(g, o.boxes, o.box_count);
    routing::TrafficMatrix tl, tp;
    routing::split_by_ratio(total, o.ratio, tl, tp);
    auto sol = routing::plan_routing(g, tl, tp, boxes, parse_method(o.traffic.method));
    auto rep = routing::decompose_paths(g, sol);

    std::vector<bool> is_box(g.size(), false);
    for (int b : boxes) is_box[b] = true;
    auto via = [&](const routing::Tunnel& t) -> std::string {
        if (!t.opsec) return "";
        for (int v : t.nodes)
            if (is_box[v]) return g.names[v];
        return "";
    };

    json j;
    json jb = json::array();
    for (int b : boxes) jb.push_back(g.names[b]);
    j["boxes"] = jb;
    j["opsec_ratio"] = o.ratio;
    j["legacy_volume"] = tl.total();
    j["opsec_volume"] = tp.total();
    j["objective"] = sol.objective;
    j["lp_bound"] = sol.lp_bound;
    j["proven_optimal"] = sol.proven_optimal;
    j["branches"] = sol.branches;
    j["tunnels"] = rep.tunnels;
    j["baseline"] = rep.baseline;
    j["relative_increase_pct"] = rep.relative_increase_pct;
    json paths = json::array();
    std::ostringstream csv;
    csv << "s,t,kind,volume,via,path\n";
    for (auto& t : rep.paths) {
        json nodes = json::array();
        for (int v : t.nodes) nodes.push_back(g.names[v]);
        json p = {{"s", g.names[t.s]}, {"t", g.names[t.t]}, {"kind", t.opsec ? "opsec" : "legacy"},
                  {"volume", t.volume}, {"nodes", nodes}};
        if (t.opsec) p["via"] = via(t);
        paths.push_back(p);
        csv << g.names[t.s] << ',' << g.names[t.t] << ',' << (t.opsec ? "opsec" : "legacy") << ',' << t.volume
            << ',' << via(t) << ',' << path_text(g, t.nodes) << '\n';
    }
    j["paths"] = paths;
    write_out(o.out, j.dump(2) + "\n");
    if (!o.tunnels.empty()) write_out(o.tunnels, csv.str());
    return Ok;
}

struct SweepOpts {
    TrafficOpts traffic;
    std::string ratios = "0:0.5:0.05";
    std::string boxes_sweep;
    std::string out;
};

std::pair<size_t, size_t> parse_span(const std::string& s) {
    auto dots = s.find("..");
    auto num = [&](const std::string& x) -> size_t {
        if (x.empty() || x.find_first_not_of("0123456789") != std::string::npos)
            throw OpsecError(Errc::ConfigInvalid, "--boxes-sweep: expected lo..hi");
        return std::stoul(x);
    };
    if (dots == std::string::npos) {
        size_t v = num(s);
        return {v, v};
    }
    size_t lo = num(s.substr(0, dots)), hi = num(s.substr(dots + 2));
    if (lo == 0 || lo > hi) throw OpsecError(Errc::ConfigInvalid, "--boxes-sweep: expected 1 <= lo <= hi");
    return {lo, hi};
}

int cmd_sweep(const SweepOpts& o) {
    std::vector<double> ratios;
    try {
        ratios = routing::parse_ratio_range(o.ratios);
    } catch (const OpsecError& e) {
        throw OpsecError(Errc::ConfigInvalid, std::string("--ratios: ") + e.what());
    }
    auto gf = config::load_graph(o.traffic.graph, config::seed_from_env());
    auto& g = gf.graph;
    auto total = total_matrix(o.traffic, gf);
    routing::SweepOptions opt;
    opt.method = parse_method(o.traffic.method);

    std::string csv = routing::sweep_csv_header(true) + "\n";
    std::vector<routing::SweepResult> results;
    if (!ratios.empty()) {
        if (o.boxes_sweep.empty()) {
            auto boxes = g.boxes();
            if (boxes.empty()) throw OpsecError(Errc::ConfigInvalid, "no boxes: mark nodes or give --boxes-sweep");
            results.push_back(routing::sweep_opsec_ratio(g, total, ratios, boxes, opt));
        } else {
            auto [lo, hi] = parse_span(o.boxes_sweep);
            auto ranked = g.boxes().empty() ? routing::rank_box_sites(g) : g.boxes();
            if (ranked.size() < hi)
                throw OpsecError(Errc::ConfigInvalid, "--boxes-sweep: only " + std::to_string(ranked.size()) + " sites");
            auto all = routing::sweep_box_counts(g, total, ratios, ranked, hi, opt);
            for (size_t k = lo; k <= hi; ++k) results.push_back(std::move(all[k - 1]));
        }
    }
    for (auto& r : results) {
        for (auto& row : r.rows) csv += routing::sweep_csv_row(row, true) + "\n";
        if (!r.monotone && !r.rows.empty())
            std::cerr << "note: box_count " << r.rows.front().box_count << " tunnels not monotone in ratio\n";
    }
    write_out(o.out, csv);
    return Ok;
}

int run(const std::function<int()>& body) {
    try {
        return body();
    } catch (const OpsecError& e) {
        std::cerr << "error: " << e.what() << "\n";
        switch (e.code()) {
        case Errc::ConfigInvalid:
        case Errc::InvalidArgument:
        case Errc::NoBox:
        case Errc::BadDistribution:
            return ConfigError;
        case Errc::Infeasible:
            return InfeasiblePlan;
        default:
            return ProtocolFailure;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return ProtocolFailure;
    }
}

void traffic_flags(CLI::App* c, TrafficOpts& t) {
    c->add_option("graph", t.graph, "graph JSON: nodes and edges, or a preset/waxman generator")->required();
    auto* legacy = c->add_option("--legacy", t.legacy, "demand JSON with the total matrix T");
    auto* gravity = c->add_option("--gravity", t.gravity, "total volume of a gravity matrix")->check(CLI::PositiveNumber);
    legacy->excludes(gravity);
    c->add_option("--method", t.method, "auto | node-arc | paths")->capture_default_str();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"opsec: handshake traces, network simulation and tunnel planning"};
    app.require_subcommand(1);

    HandshakeOpts hs;
    auto* c_hs = app.add_subcommand("handshake", "run one session and print its message trace");
    c_hs->add_option("scenario", hs.scenario, "scenario JSON")->required();
    c_hs->add_option("--events", hs.events, "write the event log here");

    SimulateOpts sim;
    auto* c_sim = app.add_subcommand("simulate", "run a scenario and write per-session metrics");
    c_sim->add_option("scenario", sim.scenario, "scenario JSON")->required();
    c_sim->add_option("--out", sim.out, "metrics CSV (default stdout)");
    c_sim->add_option("--events", sim.events, "event log");
    c_sim->add_option("--summary", sim.summary, "summary JSON (default stdout)");
    c_sim->add_flag("--load", sim.load, "run the scenario's load sweep instead");

    PlanOpts plan;
    auto* c_plan = app.add_subcommand("plan", "route legacy and Opsec traffic and count tunnels");
    traffic_flags(c_plan, plan.traffic);
    c_plan->add_option("--opsec-ratio", plan.ratio, "share of each demand that is Opsec traffic")
        ->check(CLI::Range(0.0, 1.0));
    auto* names = c_plan->add_option("--boxes", plan.boxes, "comma-separated box nodes");
    auto* count = c_plan->add_option("--box-count", plan.box_count, "use the top-ranked k sites");
    names->excludes(count);
    c_plan->add_option("--out", plan.out, "solution JSON (default stdout)");
    c_plan->add_option("--tunnels", plan.tunnels, "tunnel CSV");

    SweepOpts sw;
    auto* c_sw = app.add_subcommand("sweep", "tunnel counts across Opsec ratios and box counts");
    traffic_flags(c_sw, sw.traffic);
    c_sw->add_option("--ratios", sw.ratios, "start:stop:step or a comma list")->capture_default_str();
    c_sw->add_option("--boxes-sweep", sw.boxes_sweep, "box counts lo..hi over ranked sites");
    c_sw->add_option("--out", sw.out, "CSV (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return ConfigError;
    }

    if (*c_hs) return run([&] { return cmd_handshake(hs); });
    if (*c_sim) return run([&] { return cmd_simulate(sim); });
    if (*c_plan) return run([&] { return cmd_plan(plan); });
    return run([&] { return cmd_sweep(sw); });
}
