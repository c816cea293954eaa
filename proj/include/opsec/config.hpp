#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "opsec/netsim.hpp"
#include "opsec/routing.hpp"

namespace opsec::config {

// Scenario documents. Every error is ConfigInvalid and names the offending
// field, e.g. "isps[0].theta: expected unsigned integer or \"static\"".
struct ScenarioFile {
    netsim::Scenario scenario;
    std::optional<netsim::LoadSpec> load;
};

ScenarioFile parse_scenario(const std::string& text);
ScenarioFile load_scenario(const std::string& path);

// Graph documents: explicit nodes and edges, or a generator ("preset" or
// "waxman") drawn with "seed". "gravity" is the default matrix volume; rng
// continues the seeded stream after generation, for the gravity draw.
struct GraphFile {
    routing::Graph graph;
    uint64_t seed = 1;
    Rng rng{1};
    std::optional<int64_t> gravity;
    bool generated = false;
};

GraphFile parse_graph(const std::string& text, std::optional<uint64_t> seed_override = std::nullopt);
GraphFile load_graph(const std::string& path, std::optional<uint64_t> seed_override = std::nullopt);

// {"demands": [{"s": "a", "t": "b", "volume": 3}, ...]} over the graph's node names.
routing::TrafficMatrix parse_demands(const std::string& text, const routing::Graph& g);
routing::TrafficMatrix load_demands(const std::string& path, const routing::Graph& g);

// OPSEC_SEED, if set; ConfigInvalid if it is not an unsigned integer.
std::optional<uint64_t> seed_from_env();

std::string read_file(const std::string& path);  // ConfigInvalid if unreadable

} // namespace opsec::config
