#include "opsec/config.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "opsec/error.hpp"

namespace opsec::config {

using json = nlohmann::json;

namespace {

// A JSON value plus its location in the document.
struct At {
    const json& j;
    std::string path;

    [[noreturn]] void fail(const std::string& msg) const {
        throw OpsecError(Errc::ConfigInvalid, (path.empty() ? std::string("<root>") : path) + ": " + msg);
    }

    std::string sub(const std::string& key) const { return path.empty() ? key : path + "." + key; }

    At operator[](const std::string& key) const {
        if (!j.is_object() || !j.contains(key))
            throw OpsecError(Errc::ConfigInvalid, sub(key) + ": missing field");
        return {j.at(key), sub(key)};
    }
    At operator[](size_t i) const { return {j.at(i), path + "[" + std::to_string(i) + "]"}; }
    bool has(const std::string& key) const { return j.contains(key); }

    void object(std::initializer_list<const char*> allowed) const {
        if (!j.is_object()) fail("expected object");
        std::set<std::string> ok(allowed.begin(), allowed.end());
        for (auto it = j.begin(); it != j.end(); ++it)
            if (!ok.count(it.key())) At{it.value(), sub(it.key())}.fail("unknown field");
    }

    size_t array() const {
        if (!j.is_array()) fail("expected array");
        return j.size();
    }

    uint64_t u64(uint64_t max = UINT64_MAX) const {
        if (!j.is_number_unsigned()) fail("expected unsigned integer");
        auto v = j.get<uint64_t>();
        if (v > max) fail("exceeds " + std::to_string(max));
        return v;
    }

    double number() const {
        if (!j.is_number()) fail("expected number");
        double v = j.get<double>();
        if (!std::isfinite(v)) fail("expected finite number");
        return v;
    }

    double non_negative() const {
        double v = number();
        if (v < 0) fail("expected non-negative number");
        return v;
    }

    bool boolean() const {
        if (!j.is_boolean()) fail("expected boolean");
        return j.get<bool>();
    }

    std::string str() const {
        if (!j.is_string()) fail("expected string");
        return j.get<std::string>();
    }

    std::vector<std::string> strings() const {
        std::vector<std::string> out;
        for (size_t i = 0, n = array(); i < n; ++i) out.push_back((*this)[i].str());
        return out;
    }

    template <class E>
    E choice(std::initializer_list<std::pair<const char*, E>> names) const {
        std::string s = str();
        std::string opts;
        for (auto& [n, e] : names) {
            if (s == n) return e;
            opts += opts.empty() ? n : std::string("|") + n;
        }
        fail("expected one of " + opts);
    }
};

netsim::Time ms_to_us(const At& a) { return static_cast<netsim::Time>(std::llround(a.non_negative() * 1000.0)); }

json parse_text(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw OpsecError(Errc::ConfigInvalid, std::string("<root>: malformed JSON: ") + e.what());
    }
}

protocol::VerdictKind verdict(const At& a) {
    using V = protocol::VerdictKind;
    return a.choice<V>({{"pass", V::Pass}, {"alert", V::Alert}, {"terminate", V::Terminate}});
}

netsim::SfSpec read_sf(const At& a) {
    a.object({"name", "kind", "signatures", "blocked", "verdict", "direction"});
    netsim::SfSpec sf;
    sf.name = a["name"].str();
    if (sf.name.empty()) a["name"].fail("empty name");
    if (a.has("kind"))
        sf.kind = a["kind"].choice<std::string>(
            {{"keyword_ids", "keyword_ids"}, {"url_blocklist", "url_blocklist"}, {"byte_counter", "byte_counter"}});
    if (a.has("signatures")) {
        At sigs = a["signatures"];
        for (size_t i = 0, n = sigs.array(); i < n; ++i) {
            At s = sigs[i];
            s.object({"pattern", "verdict"});
            netsim::SignatureSpec spec;
            spec.pattern = s["pattern"].str();
            if (spec.pattern.empty()) s["pattern"].fail("empty pattern");
            if (s.has("verdict")) spec.verdict = verdict(s["verdict"]);
            sf.signatures.push_back(spec);
        }
    }
    if (a.has("blocked")) sf.blocked = a["blocked"].strings();
    if (a.has("verdict")) sf.verdict = verdict(a["verdict"]);
    if (a.has("direction")) {
        using D = obox::SfDirection;
        sf.direction = a["direction"].choice<D>({{"up", D::Up}, {"down", D::Down}, {"both", D::Both}});
    }
    return sf;
}

netsim::IspSpec read_isp(const At& a) {
    a.object({"id", "willing", "coverage", "catalog", "theta", "adversary"});
    netsim::IspSpec isp;
    isp.isp_id = static_cast<uint32_t>(a["id"].u64(UINT32_MAX));
    if (a.has("willing")) isp.willing = a["willing"].boolean();
    if (a.has("coverage")) {
        using C = obox::Coverage;
        isp.coverage = a["coverage"].choice<C>({{"up", C::Up}, {"down", C::Down}, {"both", C::Both}});
    }
    if (a.has("catalog")) {
        At cat = a["catalog"];
        for (size_t i = 0, n = cat.array(); i < n; ++i) isp.catalog.push_back(read_sf(cat[i]));
    }
    if (a.has("theta")) {
        At t = a["theta"];
        if (t.j.is_string()) {
            if (t.str() != "static") t.fail("expected unsigned integer or \"static\"");
            isp.theta = netsim::STATIC_POOL;
        } else {
            if (!t.j.is_number_unsigned()) t.fail("expected unsigned integer or \"static\"");
            isp.theta = static_cast<uint32_t>(t.u64(UINT32_MAX));
            if (isp.theta == 0) t.fail("theta must be positive; use \"static\" for a single instance");
        }
    }
    if (a.has("adversary")) {
        using A = netsim::Adversary;
        isp.adversary = a["adversary"].choice<A>({{"honest", A::Honest},
                                                  {"drops_opsec", A::DropsOpsec},
                                                  {"tampers_servdisc", A::TampersServDisc},
                                                  {"tampers_servreq", A::TampersServReq},
                                                  {"fake_quote", A::FakeQuote}});
    }
    return isp;
}

origin::ReflectionMode reflection(const At& a) {
    using R = origin::ReflectionMode;
    return a.choice<R>({{"redirect", R::RedirectReflect}, {"error", R::ErrorReflect}, {"none", R::NoReflect}});
}

void read_ports(const At& a, portplan::PortRegistry& reg) {
    a.object({"bindings", "ephemeral"});
    if (a.has("bindings")) {
        At b = a["bindings"];
        if (!b.j.is_object()) b.fail("expected object of opsec port to listen port");
        reg.bindings.clear();
        for (auto it = b.j.begin(); it != b.j.end(); ++it) {
            At v{it.value(), b.sub(it.key())};
            const std::string& k = it.key();
            char* end = nullptr;
            unsigned long p = std::strtoul(k.c_str(), &end, 10);
            if (k.empty() || *end != '\0' || p == 0 || p > 65535) v.fail("key is not a port number");
            reg.bindings[static_cast<uint16_t>(p)] = static_cast<uint16_t>(v.u64(65535));
        }
    }
    if (a.has("ephemeral")) {
        At e = a["ephemeral"];
        if (e.array() != 2) e.fail("expected [low, high]");
        reg.ephemeral_lo = static_cast<uint16_t>(e[0].u64(65535));
        reg.ephemeral_hi = static_cast<uint16_t>(e[1].u64(65535));
        if (reg.ephemeral_lo > reg.ephemeral_hi) e.fail("low above high");
    }
}

void read_client(const At& a, netsim::ClientSpec& c) {
    a.object({"sfc_up", "sfc_down", "fail_mode", "path_budget"});
    if (a.has("sfc_up")) c.sfc_up = a["sfc_up"].strings();
    if (a.has("sfc_down")) c.sfc_down = a["sfc_down"].strings();
    if (a.has("fail_mode")) {
        using F = client::FailMode;
        c.fail_mode = a["fail_mode"].choice<F>({{"fail_open", F::FailOpen}, {"fail_closed", F::FailClosed}});
    }
    if (a.has("path_budget")) c.path_budget = a["path_budget"].u64(1u << 20);
}

void read_origin(const At& a, origin::ServerProfile& o) {
    a.object({"reflection", "close_after_response", "listen_port", "tls", "host", "content"});
    if (a.has("reflection")) o.reflection_mode = reflection(a["reflection"]);
    if (a.has("close_after_response")) o.close_after_response = a["close_after_response"].boolean();
    if (a.has("listen_port")) o.listen_port = static_cast<uint16_t>(a["listen_port"].u64(65535));
    if (a.has("tls")) o.tls_like = a["tls"].boolean();
    if (a.has("host")) o.host = a["host"].str();
    if (a.has("content")) {
        At c = a["content"];
        if (!c.j.is_object()) c.fail("expected object of path to body");
        for (auto it = c.j.begin(); it != c.j.end(); ++it) {
            if (it.key().empty() || it.key()[0] != '/') At{it.value(), c.sub(it.key())}.fail("path must start with /");
            o.content[it.key()] = At{it.value(), c.sub(it.key())}.str();
        }
    }
}

origin::ReflectionMix read_mix(const At& a) {
    if (a.j.is_string()) {
        if (a.str() != "default") a.fail("expected \"default\" or an object of weights");
        return origin::ReflectionMix::defaults();
    }
    a.object({"redirect", "error", "none"});
    origin::ReflectionMix mix;
    for (auto [key, mode] : {std::pair{"redirect", origin::ReflectionMode::RedirectReflect},
                             std::pair{"error", origin::ReflectionMode::ErrorReflect},
                             std::pair{"none", origin::ReflectionMode::NoReflect}})
        if (a.has(key)) mix.weights.push_back({mode, a[key].non_negative()});
    try {
        mix.validate();
    } catch (const OpsecError& e) {
        a.fail(e.what());
    }
    return mix;
}

void read_traffic(const At& a, netsim::TrafficSpec& t) {
    a.object({"sessions", "legacy_sessions", "legacy_on_opsec_ports", "clients", "requests", "stream_packets",
              "rate_pps", "start_spread_ms"});
    if (a.has("sessions")) t.sessions = static_cast<uint32_t>(a["sessions"].u64(1'000'000));
    if (a.has("legacy_sessions")) t.legacy_sessions = static_cast<uint32_t>(a["legacy_sessions"].u64(1'000'000));
    if (a.has("legacy_on_opsec_ports")) t.legacy_on_opsec_ports = a["legacy_on_opsec_ports"].boolean();
    if (a.has("clients")) {
        t.clients = static_cast<uint32_t>(a["clients"].u64(1'000'000));
        if (t.clients == 0) a["clients"].fail("must be positive");
    }
    if (a.has("requests")) t.requests = a["requests"].strings();
    if (a.has("stream_packets")) t.stream_packets = static_cast<uint32_t>(a["stream_packets"].u64(10'000'000));
    if (a.has("rate_pps")) {
        t.rate_pps = a["rate_pps"].number();
        if (t.rate_pps <= 0) a["rate_pps"].fail("must be positive");
    }
    if (a.has("start_spread_ms")) t.start_spread_us = ms_to_us(a["start_spread_ms"]);
}

netsim::LoadSpec read_load(const At& a) {
    a.object({"flows", "theta", "rate_pps", "stream_packets", "include_static"});
    netsim::LoadSpec ls;
    At f = a["flows"];
    for (size_t i = 0, n = f.array(); i < n; ++i) {
        auto v = static_cast<uint32_t>(f[i].u64(100'000));
        if (v == 0) f[i].fail("must be positive");
        ls.flows.push_back(v);
    }
    if (ls.flows.empty()) f.fail("empty flow list");
    if (a.has("theta")) {
        ls.theta = static_cast<uint32_t>(a["theta"].u64(UINT32_MAX));
        if (ls.theta == 0) a["theta"].fail("must be positive");
    }
    if (a.has("rate_pps")) {
        ls.rate_pps = a["rate_pps"].number();
        if (ls.rate_pps <= 0) a["rate_pps"].fail("must be positive");
    }
    if (a.has("stream_packets")) ls.stream_packets = static_cast<uint32_t>(a["stream_packets"].u64(10'000'000));
    if (a.has("include_static")) ls.include_static = a["include_static"].boolean();
    return ls;
}

} // namespace

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw OpsecError(Errc::ConfigInvalid, path + ": cannot open");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::optional<uint64_t> seed_from_env() {
    const char* s = std::getenv("OPSEC_SEED");
    if (!s) return std::nullopt;
    std::string v(s);
    char* end = nullptr;
    unsigned long long n = std::strtoull(v.c_str(), &end, 10);
    if (v.empty() || *end != '\0' || v[0] == '-') throw OpsecError(Errc::ConfigInvalid, "OPSEC_SEED: expected unsigned integer");
    return n;
}

ScenarioFile parse_scenario(const std::string& text) {
    json doc = parse_text(text);
    At a{doc, ""};
    a.object({"seed", "ports", "nat", "nat_capacity", "isps", "link_delay_ms", "client", "origin", "origin_mix",
              "traffic", "queue", "timeouts_ms", "load"});
    ScenarioFile out;
    auto& sc = out.scenario;
    if (a.has("seed")) sc.seed = a["seed"].u64();
    if (a.has("ports")) read_ports(a["ports"], sc.registry);
    if (a.has("nat")) sc.nat = a["nat"].boolean();
    if (a.has("nat_capacity")) sc.nat_capacity = static_cast<uint32_t>(a["nat_capacity"].u64(UINT32_MAX));
    if (a.has("isps")) {
        At isps = a["isps"];
        for (size_t i = 0, n = isps.array(); i < n; ++i) sc.isps.push_back(read_isp(isps[i]));
    }
    if (a.has("link_delay_ms")) {
        At d = a["link_delay_ms"];
        if (d.j.is_array()) {
            for (size_t i = 0, n = d.array(); i < n; ++i) sc.link_delay_us.push_back(ms_to_us(d[i]));
            if (sc.link_delay_us.size() != sc.isps.size() + 1)
                d.fail("expected " + std::to_string(sc.isps.size() + 1) + " delays, one per link");
        } else {
            sc.link_delay_us.assign(sc.isps.size() + 1, ms_to_us(d));
        }
    } else {
        sc.link_delay_us.assign(sc.isps.size() + 1, 10'000);
    }
    if (a.has("client")) read_client(a["client"], sc.client);
    if (a.has("origin")) read_origin(a["origin"], sc.origin);
    if (a.has("origin_mix")) sc.origin_mix = read_mix(a["origin_mix"]);
    if (a.has("traffic")) read_traffic(a["traffic"], sc.traffic);
    if (a.has("queue")) {
        At q = a["queue"];
        q.object({"service_us"});
        if (q.has("service_us")) sc.queue.service_us = static_cast<netsim::Time>(q["service_us"].u64(1'000'000'000));
    }
    if (a.has("timeouts_ms")) {
        At t = a["timeouts_ms"];
        t.object({"connect", "response"});
        if (t.has("connect")) sc.connect_timeout_us = ms_to_us(t["connect"]);
        if (t.has("response")) sc.response_timeout_us = ms_to_us(t["response"]);
    }
    if (a.has("load")) out.load = read_load(a["load"]);
    if (auto s = seed_from_env()) sc.seed = *s;
    sc.validate();
    return out;
}

ScenarioFile load_scenario(const std::string& path) {
    try {
        return parse_scenario(read_file(path));
    } catch (const OpsecError& e) {
        if (e.code() == Errc::ConfigInvalid) throw OpsecError(Errc::ConfigInvalid, path + ": " + e.what());
        throw;
    }
}

GraphFile parse_graph(const std::string& text, std::optional<uint64_t> seed_override) {
    json doc = parse_text(text);
    At a{doc, ""};
    a.object({"nodes", "edges", "preset", "waxman", "seed", "gravity"});
    GraphFile out;
    if (a.has("seed")) out.seed = a["seed"].u64();
    if (seed_override) out.seed = *seed_override;
    if (a.has("gravity")) {
        out.gravity = static_cast<int64_t>(a["gravity"].u64(INT64_MAX));
        if (*out.gravity == 0) a["gravity"].fail("must be positive");
    }
    int kinds = int(a.has("nodes")) + int(a.has("preset")) + int(a.has("waxman"));
    if (kinds != 1) a.fail("expected exactly one of nodes, preset, waxman");
    if (a.has("edges") && !a.has("nodes")) a["edges"].fail("edges need nodes");

    out.rng = Rng(out.seed);
    if (a.has("nodes")) {
        At nodes = a["nodes"];
        auto& g = out.graph;
        for (size_t i = 0, n = nodes.array(); i < n; ++i) {
            At nd = nodes[i];
            nd.object({"id", "external", "box"});
            std::string id = nd["id"].str();
            if (id.empty()) nd["id"].fail("empty id");
            if (g.find(id) >= 0) nd["id"].fail("duplicate id " + id);
            bool ext = nd.has("external") && nd["external"].boolean();
            bool box = nd.has("box") && nd["box"].boolean();
            g.add_node(id, ext, box);
        }
        if (!a.has("edges")) a.fail("missing edges");
        At edges = a["edges"];
        for (size_t i = 0, n = edges.array(); i < n; ++i) {
            At e = edges[i];
            e.object({"u", "v", "cost", "capacity"});
            int u = g.find(e["u"].str()), v = g.find(e["v"].str());
            if (u < 0) e["u"].fail("unknown node");
            if (v < 0) e["v"].fail("unknown node");
            if (u == v) e.fail("self loop");
            double cost = e.has("cost") ? e["cost"].non_negative() : 1.0;
            double cap = routing::UNLIMITED;
            if (e.has("capacity")) {
                cap = e["capacity"].non_negative();
                if (cap != std::floor(cap)) e["capacity"].fail("expected integral capacity");
            }
            g.add_edge(u, v, cost, cap);
        }
    } else {
        routing::WaxmanSpec ws;
        if (a.has("preset")) {
            try {
                ws = routing::waxman_spec(routing::find_preset(a["preset"].str()));
                if (!out.gravity) out.gravity = routing::find_preset(a["preset"].str()).volume;
            } catch (const OpsecError& e) {
                if (e.code() != Errc::InvalidArgument) throw;
                a["preset"].fail(e.what());
            }
        } else {
            At w = a["waxman"];
            w.object({"nodes", "links", "externals", "alpha", "beta", "cost", "capacity"});
            if (w.has("nodes")) ws.nodes = static_cast<int>(w["nodes"].u64(2000));
            if (w.has("links")) ws.links = static_cast<int>(w["links"].u64(1'000'000));
            if (w.has("externals")) ws.externals = static_cast<int>(w["externals"].u64(2000));
            if (w.has("alpha")) ws.alpha = w["alpha"].non_negative();
            if (w.has("beta")) ws.beta = w["beta"].non_negative();
            if (w.has("cost")) ws.cost = w["cost"].non_negative();
            if (w.has("capacity")) ws.cap = w["capacity"].non_negative();
            if (ws.nodes < 2) w["nodes"].fail("need at least 2 nodes");
            if (ws.externals < 2 || ws.externals > ws.nodes) w.fail("externals must be in [2, nodes]");
        }
        Rng rng(out.seed);
        try {
            out.graph = routing::waxman_graph(ws, rng);
        } catch (const OpsecError& e) {
            a.fail(e.what());
        }
        out.generated = true;
        out.rng = rng;
    }
    out.graph.validate();
    return out;
}

GraphFile load_graph(const std::string& path, std::optional<uint64_t> seed_override) {
    try {
        return parse_graph(read_file(path), seed_override);
    } catch (const OpsecError& e) {
        if (e.code() == Errc::ConfigInvalid) throw OpsecError(Errc::ConfigInvalid, path + ": " + e.what());
        throw;
    }
}

routing::TrafficMatrix parse_demands(const std::string& text, const routing::Graph& g) {
    json doc = parse_text(text);
    At a{doc, ""};
    a.object({"demands"});
    routing::TrafficMatrix tm;
    std::set<std::pair<int, int>> seen;
    At d = a["demands"];
    for (size_t i = 0, n = d.array(); i < n; ++i) {
        At e = d[i];
        e.object({"s", "t", "volume"});
        int s = g.find(e["s"].str()), t = g.find(e["t"].str());
        if (s < 0) e["s"].fail("unknown node");
        if (t < 0) e["t"].fail("unknown node");
        if (!g.external[s]) e["s"].fail("not an external node");
        if (!g.external[t]) e["t"].fail("not an external node");
        if (s == t) e.fail("source equals sink");
        auto vol = static_cast<int64_t>(e["volume"].u64(INT64_MAX / 4));
        if (!seen.insert({s, t}).second) e.fail("duplicate pair");
        if (vol > 0) tm.demands[{s, t}] = vol;
    }
    return tm;
}

routing::TrafficMatrix load_demands(const std::string& path, const routing::Graph& g) {
    try {
        return parse_demands(read_file(path), g);
    } catch (const OpsecError& e) {
        if (e.code() == Errc::ConfigInvalid) throw OpsecError(Errc::ConfigInvalid, path + ": " + e.what());
        throw;
    }
}

} // namespace opsec::config
