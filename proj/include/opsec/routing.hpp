#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "opsec/lp.hpp"
#include "opsec/rng.hpp"

namespace opsec::routing {

inline constexpr double UNLIMITED = std::numeric_limits<double>::infinity();

struct Arc {
    int u = 0;
    int v = 0;
    double cost = 1.0;
    double cap = UNLIMITED;
};

struct Graph {
    std::vector<std::string> names;
    std::vector<bool> external;
    std::vector<bool> box;
    std::vector<Arc> arcs;

    int size() const { return static_cast<int>(names.size()); }
    int add_node(std::string name, bool is_external = false, bool is_box = false);
    // One topology edge, two directed arcs with independent capacity.
    void add_edge(int u, int v, double cost = 1.0, double cap = UNLIMITED);
    std::vector<int> externals() const;
    std::vector<int> boxes() const;
    int find(const std::string& name) const;  // -1 if absent
    // Throws ConfigInvalid: box on an external node, negative cost, bad capacity,
    // or V_x and the boxes not connected.
    void validate() const;
};

enum class TrafficKind { Legacy, Opsec };

struct TrafficMatrix {
    TrafficKind kind = TrafficKind::Legacy;
    std::map<std::pair<int, int>, int64_t> demands;
    int64_t total() const;
    int64_t at(int s, int t) const;
};

// Gravity matrix with exponential masses; equal_masses forces w_v = 1.
TrafficMatrix gen_gravity_matrix(const Graph& g, int64_t total_volume, Rng& rng, bool equal_masses = false);

struct DemandFlow {
    int s = 0;
    int t = 0;
    int64_t volume = 0;
    std::vector<int64_t> flow;  // per arc
};

struct OpsecFlow {
    int s = 0;
    int t = 0;
    int64_t volume = 0;
    std::vector<int64_t> to_box;    // s -> m-bar half, per arc
    std::vector<int64_t> from_box;  // m-bar -> t half, per arc
};

struct SolveLimits {
    size_t iterations = 5'000'000;
    size_t bb_nodes = 200'000;
};

// One routed path with its volume; Opsec paths switch halves at arcs[split].
struct PathFlow {
    int s = 0;
    int t = 0;
    bool opsec = false;
    std::vector<int> arcs;
    size_t split = 0;
    int64_t volume = 0;
};

struct FlowSolution {
    std::vector<DemandFlow> legacy;
    std::vector<OpsecFlow> opsec;
    std::vector<int> boxes;
    double objective = 0.0;   // total cost on the graph's arc costs
    double lp_bound = 0.0;    // root relaxation
    bool proven_optimal = true;
    size_t branches = 0;
    size_t lp_pivots = 0;
    size_t columns = 0;       // path columns (column generation only)
    std::vector<PathFlow> routes;  // path form, filled by the path solvers
};

// Node-arc ILP: variables per demand (legacy) or per half (Opsec) per arc.
struct Model {
    const Graph* g = nullptr;
    std::vector<std::pair<std::pair<int, int>, int64_t>> legacy;
    std::vector<std::pair<std::pair<int, int>, int64_t>> opsec;
    std::vector<int> boxes;
    bool single_box = false;
    lp::Problem problem;
    // variable index = commodity * arcs + arc; commodities are legacy demands,
    // then (to_box, from_box) per Opsec demand
    size_t arcs = 0;
};

Model build_single_box_model(const Graph& g, const TrafficMatrix& tl, const TrafficMatrix& tp, int m);
Model build_multi_box_model(const Graph& g, const TrafficMatrix& tl, const TrafficMatrix& tp, const std::vector<int>& boxes);

// Branch-and-bound over the tableau relaxation. Throws Infeasible or IterationLimit.
FlowSolution solve(const Model& model, const SolveLimits& limits = {});

FlowSolution plan_single_box(const Graph& g, const TrafficMatrix& tl, const TrafficMatrix& tp, int m,
                             const SolveLimits& limits = {});
FlowSolution plan_multi_box(const Graph& g, const TrafficMatrix& tl, const TrafficMatrix& tp,
                            const std::vector<int>& boxes, const SolveLimits& limits = {});

// Path formulation with column generation, then an integer fixing dive over the
// generated columns. proven_optimal is set when the result meets the LP bound.
FlowSolution plan_multi_box_paths(const Graph& g, const TrafficMatrix& tl, const TrafficMatrix& tp,
                                  const std::vector<int>& boxes, const SolveLimits& limits = {});

double objective_of(const Graph& g, const FlowSolution& sol);

// Node sequences per ordered pair.
using PathSet = std::map<std::pair<int, int>, std::set<std::vector<int>>>;

// Among routings that cost no more than `optimal`, minimizes the volume put on
// paths outside `preferred`. Returns `optimal` unchanged if no integral
// re-routing is found.
FlowSolution refine_path_reuse(const Graph& g, const TrafficMatrix& tl, const TrafficMatrix& tp,
                               const std::vector<int>& boxes, const FlowSolution& optimal, const PathSet& preferred,
                               const SolveLimits& limits = {});

struct Tunnel {
    int s = 0;
    int t = 0;
    std::vector<int> nodes;
    int64_t volume = 0;
    bool opsec = false;
};

struct TunnelReport {
    std::vector<Tunnel> paths;                         // decomposition, every unit covered once
    std::map<std::pair<int, int>, size_t> per_pair;    // distinct paths per ordered pair
    size_t tunnels = 0;
    size_t baseline = 0;                               // one per active ordered pair
    double relative_increase_pct = 0.0;                // vs baseline
};

// Uses sol.routes when present (checked against the arc flows), otherwise
// decomposes each demand. Throws NonConservative if a demand's flow does not
// decompose or the routes disagree with the flows.
TunnelReport decompose_paths(const Graph& g, const FlowSolution& sol);
PathSet path_set(const TunnelReport& rep);

std::vector<double> shortest_distances(const Graph& g, int src);

enum class Method { Auto, NodeArc, ColumnGeneration };

struct SweepRow {
    double ratio = 0.0;
    size_t box_count = 0;
    double objective = 0.0;
    size_t tunnels = 0;
    size_t baseline = 0;
    double relative_increase_pct = 0.0;  // vs the same matrix with no Opsec traffic
    std::string status;                  // optimal | feasible | infeasible
    PathSet paths;                       // distinct paths routed in this row
};

struct SweepOptions {
    Method method = Method::Auto;
    // Among equal-cost routings, rows keep the candidate with the fewest
    // tunnels: the solver's own, one re-routed onto paths used at lower
    // ratios, and one re-routed onto row_hints[i] when given.
    bool reuse_paths = true;
    std::vector<PathSet> row_hints;  // empty, or one per ratio
    SolveLimits limits;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    size_t reference_tunnels = 0;
    bool monotone = true;  // tunnels non-decreasing in ratio (among feasible rows)
};

// Node-arc branch and bound while commodities x arcs <= 2000, else column generation.
FlowSolution plan_routing(const Graph& g, const TrafficMatrix& tl, const TrafficMatrix& tp,
                          const std::vector<int>& boxes, Method method = Method::Auto, const SolveLimits& limits = {});

// Per pair: round(ratio * v) goes to tp, the rest to tl; zero entries dropped.
void split_by_ratio(const TrafficMatrix& total, double ratio, TrafficMatrix& tl, TrafficMatrix& tp);

SweepResult sweep_opsec_ratio(const Graph& g, const TrafficMatrix& total, const std::vector<double>& ratios,
                              const std::vector<int>& boxes, const SweepOptions& opt = {});

// One sweep per box count 1..max_boxes using prefixes of `ranked`; each
// count's rows are hinted with the previous count's paths.
std::vector<SweepResult> sweep_box_counts(const Graph& g, const TrafficMatrix& total,
                                          const std::vector<double>& ratios, const std::vector<int>& ranked,
                                          size_t max_boxes, const SweepOptions& opt = {});

std::vector<double> parse_ratio_range(const std::string& spec);  // "0:0.5:0.05" or "0,0.1"
std::string sweep_csv_header(bool with_box_count);
std::string sweep_csv_row(const SweepRow& r, bool with_box_count);

// Waxman random topology. With links > 0 exactly that many edges are drawn
// with Waxman weights, connectivity guaranteed; otherwise each pair is linked
// with probability alpha * exp(-d / (beta * L)) and components are joined
// through their nearest pair.
struct WaxmanSpec {
    int nodes = 60;
    int links = 160;
    int externals = 12;
    double alpha = 0.7;
    double beta = 0.14;
    double cost = 1.0;
    double cap = UNLIMITED;
};
Graph waxman_graph(const WaxmanSpec& spec, Rng& rng);

// Node/link/capacity/volume presets for synthetic stand-ins of real ISP maps.
struct TopologyPreset {
    std::string name;
    int nodes;
    int links;
    double link_cap;
    int64_t volume;  // total traffic matrix volume
};
const std::vector<TopologyPreset>& topology_presets();
const TopologyPreset& find_preset(const std::string& name);  // throws InvalidArgument
WaxmanSpec waxman_spec(const TopologyPreset& p);             // externals = nodes / 5

// Internal nodes ordered by how many external-pair shortest paths cross them,
// ties to lower index. Prefixes give nested box sets.
std::vector<int> rank_box_sites(const Graph& g);

} // namespace opsec::routing
