#include "opsec/routing.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <optional>
#include <queue>
#include <set>
#include <sstream>

#include "opsec/error.hpp"

namespace opsec::routing {

// ---- graph ----

int Graph::add_node(std::string name, bool is_external, bool is_box) {
    names.push_back(std::move(name));
    external.push_back(is_external);
    box.push_back(is_box);
    return size() - 1;
}

void Graph::add_edge(int u, int v, double cost, double cap) {
    arcs.push_back({u, v, cost, cap});
    arcs.push_back({v, u, cost, cap});
}

std::vector<int> Graph::externals() const {
    std::vector<int> out;
    for (int v = 0; v < size(); ++v)
        if (external[v]) out.push_back(v);
    return out;
}

std::vector<int> Graph::boxes() const {
    std::vector<int> out;
    for (int v = 0; v < size(); ++v)
        if (box[v]) out.push_back(v);
    return out;
}

int Graph::find(const std::string& name) const {
    for (int v = 0; v < size(); ++v)
        if (names[v] == name) return v;
    return -1;
}

void Graph::validate() const {
    int n = size();
    for (int v = 0; v < n; ++v)
        if (external[v] && box[v])
            throw OpsecError(Errc::ConfigInvalid, "nodes[" + names[v] + "]: a box node must be internal");
    for (size_t i = 0; i < arcs.size(); ++i) {
        auto& a = arcs[i];
        std::string where = "edges[" + std::to_string(i / 2) + "]";
        if (a.u < 0 || a.u >= n || a.v < 0 || a.v >= n || a.u == a.v)
            throw OpsecError(Errc::ConfigInvalid, where + ": bad endpoints");
        if (!(a.cost >= 0) || !std::isfinite(a.cost))
            throw OpsecError(Errc::ConfigInvalid, where + ".cost: must be finite and nonnegative");
        if (!(a.cap > 0)) throw OpsecError(Errc::ConfigInvalid, where + ".capacity: must be positive");
    }
    std::vector<int> need;
    for (int v = 0; v < n; ++v)
        if (external[v] || box[v]) need.push_back(v);
    if (need.empty()) return;
    std::vector<std::vector<int>> adj(n);
    for (auto& a : arcs) adj[a.u].push_back(a.v);
    std::vector<bool> seen(n, false);
    std::vector<int> stack{need[0]};
    seen[need[0]] = true;
    while (!stack.empty()) {
        int u = stack.back();
        stack.pop_back();
        for (int v : adj[u])
            if (!seen[v]) {
                seen[v] = true;
                stack.push_back(v);
            }
    }
    for (int v : need)
        if (!seen[v]) throw OpsecError(Errc::ConfigInvalid, "graph: node " + names[v] + " is disconnected");
}

int64_t TrafficMatrix::total() const {
    int64_t t = 0;
    for (auto& [k, v] : demands) t += v;
    return t;
}

int64_t TrafficMatrix::at(int s, int t) const {
    auto it = demands.find({s, t});
    return it == demands.end() ? 0 : it->second;
}

TrafficMatrix gen_gravity_matrix(const Graph& g, int64_t total_volume, Rng& rng, bool equal_masses) {
    auto ext = g.externals();
    if (ext.size() < 2) throw OpsecError(Errc::InvalidArgument, "gravity: need at least two external nodes");
    if (total_volume <= 0) throw OpsecError(Errc::InvalidArgument, "gravity: total volume must be positive");
    std::vector<double> w;
    for (size_t i = 0; i < ext.size(); ++i) w.push_back(equal_masses ? 1.0 : rng.exponential(1.0));
    std::vector<std::pair<int, int>> pairs;
    std::vector<double> share;
    double sum = 0.0;
    for (size_t i = 0; i < ext.size(); ++i)
        for (size_t j = 0; j < ext.size(); ++j) {
            if (i == j) continue;
            pairs.emplace_back(ext[i], ext[j]);
            share.push_back(w[i] * w[j]);
            sum += w[i] * w[j];
        }
    std::vector<int64_t> vol(pairs.size());
    std::vector<double> frac(pairs.size());
    int64_t assigned = 0;
    for (size_t k = 0; k < pairs.size(); ++k) {
        double x = double(total_volume) * share[k] / sum;
        vol[k] = static_cast<int64_t>(std::floor(x));
        frac[k] = x - double(vol[k]);
        assigned += vol[k];
    }
    std::vector<size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return frac[a] > frac[b]; });
    for (int64_t k = 0; k < total_volume - assigned; ++k) ++vol[order[static_cast<size_t>(k) % order.size()]];
    TrafficMatrix tm;
    for (size_t k = 0; k < pairs.size(); ++k)
        if (vol[k] > 0) tm.demands[pairs[k]] = vol[k];
    return tm;
}

// ---- shortest paths ----

namespace {

struct Adjacency {
    std::vector<std::vector<int>> out;  // arc indices
    explicit Adjacency(const Graph& g) : out(g.size()) {
        for (size_t i = 0; i < g.arcs.size(); ++i) out[g.arcs[i].u].push_back(static_cast<int>(i));
    }
};

void dijkstra(const Graph& g, const Adjacency& adj, const std::vector<double>& w, int src, std::vector<double>& dist,
              std::vector<int>& pred) {
    int n = g.size();
    dist.assign(n, std::numeric_limits<double>::infinity());
    pred.assign(n, -1);
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[src] = 0.0;
    pq.push({0.0, src});
    while (!pq.empty()) {
        auto [d, u] = pq.top();
        pq.pop();
        if (d > dist[u]) continue;
        for (int a : adj.out[u]) {
            int v = g.arcs[a].v;
            double nd = d + w[a];
            if (nd < dist[v]) {
                dist[v] = nd;
                pred[v] = a;
                pq.push({nd, v});
            }
        }
    }
}

std::vector<int> trace(const Graph& g, const std::vector<int>& pred, int src, int dst) {
    std::vector<int> arcs;
    for (int v = dst; v != src; v = g.arcs[pred[v]].u) arcs.push_back(pred[v]);
    std::reverse(arcs.begin(), arcs.end());
    return arcs;
}

bool integral_costs(const Graph& g) {
    for (auto& a : g.arcs)
        if (a.cost != std::floor(a.cost)) return false;
    return true;
}

void check_demands(const Graph& g, const TrafficMatrix& tm, const char* what) {
    for (auto& [k, v] : tm.demands) {
        auto [s, t] = k;
        if (s < 0 || t < 0 || s >= g.size() || t >= g.size() || s == t)
            throw OpsecError(Errc::InvalidArgument, std::string(what) + ": bad demand endpoints");
        if (!g.external[s] || !g.external[t])
            throw OpsecError(Errc::InvalidArgument, std::string(what) + ": demands run between external nodes");
        if (v < 0) throw OpsecError(Errc::InvalidArgument, std::string(what) + ": negative volume");
    }
}

void check_boxes(const Graph& g, const std::vector<int>& boxes) {
    if (boxes.empty()) throw OpsecError(Errc::NoBox, "no Opsec-box node given");
    for (int m : boxes) {
        if (m < 0 || m >= g.size()) throw OpsecError(Errc::NoBox, "box index out of range");
        if (g.external[m]) throw OpsecError(Errc::ConfigInvalid, "box " + g.names[m] + " is an external node");
    }
}

} // namespace

std::vector<double> shortest_distances(const Graph& g, int src) {
    Adjacency adj(g);
    std::vector<double> w;
    for (auto& a : g.arcs) w.push_back(a.cost);
    std::vector<double> dist;
    std::vector<int> pred;
    dijkstra(g, adj, w, src, dist, pred);
    return dist;
}

// ---- node-arc model ----

namespace {

Model build_model(const Graph& g, const TrafficMatrix& tl, const TrafficMatrix& tp, const std::vector<int>& boxes,
                  bool single) {
    g.validate();
    check_demands(g, tl, "legacy matrix");
    check_demands(g, tp, "opsec matrix");
    check_boxes(g, boxes);
    Model md;
    md.g = &g;
    md.boxes = boxes;
    md.single_box = single;
    md.arcs = g.arcs.size();
    for (auto& [k, v] : tl.demands)
        if (v > 0) md.legacy.push_back({k, v});
    for (auto& [k, v] : tp.demands)
        if (v > 0) md.opsec.push_back({k, v});

    int n = g.size();
    auto& P = md.problem;
    std::vector<bool> in_m(n, false);
    for (int m : boxes) in_m[m] = true;
    size_t commodities = md.legacy.size() + 2 * md.opsec.size();
    // node_row[k][v]: row holding node v's balance for commodity k, -1 if none
    std::vector<std::vector<int>> node_row(commodities, std::vector<int>(n, -1));
    std::vector<int> agg_row(commodities, -1);
    std::vector<std::vector<int>> eq5_row(md.opsec.size(), std::vector<int>(n, -1));

    size_t k = 0;
    for (auto& [st, vol] : md.legacy) {
        for (int v = 0; v < n; ++v) {
            double b = v == st.first ? double(vol) : v == st.second ? -double(vol) : 0.0;
            node_row[k][v] = P.add_row(lp::Sense::Eq, b);
        }
        ++k;
    }
    for (size_t d = 0; d < md.opsec.size(); ++d) {
        auto [st, vol] = md.opsec[d];
        size_t ka = k + 2 * d, kb = ka + 1;
        if (single) {
            int m = boxes[0];
            for (int v = 0; v < n; ++v) {
                double b = v == st.first ? double(vol) : v == m ? -double(vol) : 0.0;
                node_row[ka][v] = P.add_row(lp::Sense::Eq, b);
            }
            for (int v = 0; v < n; ++v) {
                double b = v == m ? double(vol) : v == st.second ? -double(vol) : 0.0;
                node_row[kb][v] = P.add_row(lp::Sense::Eq, b);
            }
        } else {
            for (int v = 0; v < n; ++v) {
                if (in_m[v]) continue;
                node_row[ka][v] = P.add_row(lp::Sense::Eq, v == st.first ? double(vol) : 0.0);
            }
            agg_row[ka] = P.add_row(lp::Sense::Eq, -double(vol));
            for (int v = 0; v < n; ++v) {
                if (in_m[v]) continue;
                node_row[kb][v] = P.add_row(lp::Sense::Eq, v == st.second ? -double(vol) : 0.0);
            }
            agg_row[kb] = P.add_row(lp::Sense::Eq, double(vol));
            for (int m : boxes) eq5_row[d][m] = P.add_row(lp::Sense::Eq, 0.0);
        }
    }
    std::vector<int> cap_row(g.arcs.size(), -1);
    for (size_t a = 0; a < g.arcs.size(); ++a)
        if (std::isfinite(g.arcs[a].cap)) cap_row[a] = P.add_row(lp::Sense::Le, g.arcs[a].cap);

    for (size_t c = 0; c < commodities; ++c) {
        bool is_opsec = c >= md.legacy.size();
        size_t d = is_opsec ? (c - md.legacy.size()) / 2 : 0;
        for (size_t a = 0; a < g.arcs.size(); ++a) {
            auto& arc = g.arcs[a];
            lp::Column col;
            col.cost = arc.cost;
            auto put = [&](int row, double v) {
                if (row >= 0) col.entries.push_back({row, v});
            };
            if (node_row[c][arc.u] >= 0) put(node_row[c][arc.u], 1.0);
            else if (is_opsec && !single) put(agg_row[c], 1.0);
            if (node_row[c][arc.v] >= 0) put(node_row[c][arc.v], -1.0);
            else if (is_opsec && !single) put(agg_row[c], -1.0);
            if (is_opsec && !single) {
                if (in_m[arc.v]) put(eq5_row[d][arc.v], 1.0);
                if (in_m[arc.u]) put(eq5_row[d][arc.u], -1.0);
            }
            put(cap_row[a], 1.0);
            P.add_col(std::move(col));
        }
    }
    return md;
}

FlowSolution extract(const Model& md, const std::vector<int64_t>& x) {
    FlowSolution sol;
    sol.boxes = md.boxes;
    size_t A = md.arcs, k = 0;
    for (auto& [st, vol] : md.legacy) {
        DemandFlow f{st.first, st.second, vol, std::vector<int64_t>(x.begin() + k * A, x.begin() + (k + 1) * A)};
        sol.legacy.push_back(std::move(f));
        ++k;
    }
    for (auto& [st, vol] : md.opsec) {
        OpsecFlow f;
        f.s = st.first;
        f.t = st.second;
        f.volume = vol;
        f.to_box.assign(x.begin() + k * A, x.begin() + (k + 1) * A);
        f.from_box.assign(x.begin() + (k + 1) * A, x.begin() + (k + 2) * A);
        sol.opsec.push_back(std::move(f));
        k += 2;
    }
    return sol;
}

} // namespace

Model build_single_box_model(const Graph& g, const TrafficMatrix& tl, const TrafficMatrix& tp, int m) {
    return build_model(g, tl, tp, {m}, true);
}

Model build_multi_box_model(const Graph& g, const TrafficMatrix& tl, const TrafficMatrix& tp,
                            const std::vector<int>& boxes) {
    return build_model(g, tl, tp, boxes, false);
}

double objective_of(const Graph& g, const FlowSolution& sol) {
    double z = 0.0;
    for (auto& f : sol.legacy)
        for (size_t a = 0; a < f.flow.size(); ++a) z += double(f.flow[a]) * g.arcs[a].cost;
    for (auto& f : sol.opsec)
        for (size_t a = 0; a < f.to_box.size(); ++a)
            z += double(f.to_box[a] + f.from_box[a]) * g.arcs[a].cost;
    return z;
}

FlowSolution solve(const Model& md, const SolveLimits& limits) {
    const Graph& g = *md.g;
    size_t nvars = md.problem.cols.size();
    FlowSolution empty;
    if (nvars == 0) {
        empty.boxes = md.boxes;
        return empty;
    }
    lp::Tableau root(md.problem, limits.iterations);
    auto st = root.solve();
    if (st == lp::Status::Infeasible) throw OpsecError(Errc::Infeasible, "capacities cannot carry the demands");
    if (st != lp::Status::Optimal) throw OpsecError(Errc::IterationLimit, std::string("relaxation: ") + lp::status_name(st));
    bool int_obj = integral_costs(g);
    double best = std::numeric_limits<double>::infinity();
    std::vector<int64_t> incumbent;
    size_t branches = 0, pivots = 0;
    std::vector<lp::Tableau> stack;
    double bound = root.objective();
    stack.push_back(std::move(root));
    while (!stack.empty()) {
        lp::Tableau t = std::move(stack.back());
        stack.pop_back();
        pivots += t.pivots();
        double cut = int_obj ? best - 1.0 + 1e-6 : best - 1e-9;
        if (t.objective() > cut) continue;
        int j = -1;
        double most = 1e-6;
        for (size_t v = 0; v < nvars; ++v) {
            double x = t.value(static_cast<int>(v));
            double f = std::abs(x - std::round(x));
            if (f > most) {
                most = f;
                j = static_cast<int>(v);
            }
        }
        if (j < 0) {
            best = t.objective();
            incumbent.resize(nvars);
            for (size_t v = 0; v < nvars; ++v) incumbent[v] = std::llround(t.value(static_cast<int>(v)));
            continue;
        }
        if (++branches > limits.bb_nodes) throw OpsecError(Errc::IterationLimit, "branch-and-bound node limit");
        double x = t.value(j);
        lp::Tableau down = t;
        auto sd = down.add_bound(j, lp::Sense::Le, std::floor(x));
        auto su = t.add_bound(j, lp::Sense::Ge, std::ceil(x));
        bool up_first = x - std::floor(x) > 0.5;
        auto push = [&](lp::Tableau&& tb, lp::Status s) {
            if (s == lp::Status::Optimal) stack.push_back(std::move(tb));
            else if (s == lp::Status::IterationLimit) throw OpsecError(Errc::IterationLimit, "simplex iteration limit");
        };
        if (up_first) {
            push(std::move(down), sd);
            push(std::move(t), su);
        } else {
            push(std::move(t), su);
            push(std::move(down), sd);
        }
    }
    if (incumbent.empty()) throw OpsecError(Errc::Infeasible, "no integral routing fits the capacities");
    FlowSolution sol = extract(md, incumbent);
    sol.lp_bound = bound;
    sol.branches = branches;
    sol.lp_pivots = pivots;
    sol.objective = objective_of(g, sol);
    return sol;
}

FlowSolution plan_single_box(const Graph& g, const TrafficMatrix& tl, const TrafficMatrix& tp, int m,
                             const SolveLimits& limits) {
    auto md = build_single_box_model(g, tl, tp, m);
    return solve(md, limits);
}

FlowSolution plan_multi_box(const Graph& g, const TrafficMatrix& tl, const TrafficMatrix& tp,
                            const std::vector<int>& boxes, const SolveLimits& limits) {
    auto md = build_multi_box_model(g, tl, tp, boxes);
    return solve(md, limits);
}

// ---- path formulation ----

namespace {

struct PathCol {
    int demand = 0;
    std::vector<int> arcs;
    size_t split = 0;  // arcs[0, split) reach the box
    bool overflow = false;
};

std::vector<int> node_seq(const Graph& g, int s, const std::vector<int>& arcs) {
    std::vector<int> nodes{s};
    for (int a : arcs) nodes.push_back(g.arcs[a].v);
    return nodes;
}

struct Reuse {
    double budget;
    const PathSet* preferred;
};

struct ColumnGen {
    const Graph& g;
    Adjacency adj;
    std::vector<int> boxes;
    std::vector<bool> in_m;
    struct Demand {
        int s, t;
        int64_t vol;
        bool opsec;
        int row;
        std::vector<PathCol> fixed;  // preferred candidates
    };
    std::vector<Demand> demands;
    std::vector<int> cap_row;
    int budget_row = -1;
    const Reuse* reuse;
    lp::Problem problem;
    std::vector<PathCol> cols;
    std::vector<std::set<std::vector<int>>> known;

    ColumnGen(const Graph& graph, const TrafficMatrix& tl, const TrafficMatrix& tp, const std::vector<int>& bx,
              const Reuse* r)
        : g(graph), adj(graph), boxes(bx), in_m(graph.size(), false), reuse(r) {
        for (int m : boxes) in_m[m] = true;
        double sum = 0.0;
        for (auto& a : g.arcs) sum += a.cost;
        double big = reuse ? 1000.0 : 100.0 * (2.0 * sum + 1.0);
        for (auto& [k, v] : tl.demands)
            if (v > 0) demands.push_back({k.first, k.second, v, false, problem.add_row(lp::Sense::Eq, double(v)), {}});
        for (auto& [k, v] : tp.demands)
            if (v > 0) demands.push_back({k.first, k.second, v, true, problem.add_row(lp::Sense::Eq, double(v)), {}});
        cap_row.assign(g.arcs.size(), -1);
        for (size_t a = 0; a < g.arcs.size(); ++a)
            if (std::isfinite(g.arcs[a].cap)) cap_row[a] = problem.add_row(lp::Sense::Le, g.arcs[a].cap);
        if (reuse) {
            budget_row = problem.add_row(lp::Sense::Le, reuse->budget);
            collect_fixed();
        }
        known.resize(demands.size());
        for (size_t d = 0; d < demands.size(); ++d) {
            problem.add_col(lp::Column{big, {{demands[d].row, 1.0}}});
            PathCol pc;
            pc.demand = static_cast<int>(d);
            pc.overflow = true;
            cols.push_back(pc);
        }
    }

    void collect_fixed() {
        std::map<std::pair<int, int>, int> arc_of;
        for (size_t a = 0; a < g.arcs.size(); ++a) arc_of.emplace(std::make_pair(g.arcs[a].u, g.arcs[a].v), int(a));
        for (size_t d = 0; d < demands.size(); ++d) {
            auto& dm = demands[d];
            auto it = reuse->preferred->find({dm.s, dm.t});
            if (it == reuse->preferred->end()) continue;
            for (auto& seq : it->second) {
                if (seq.size() < 2 || seq.front() != dm.s || seq.back() != dm.t) continue;
                std::vector<int> arcs;
                for (size_t i = 0; i + 1 < seq.size(); ++i) {
                    auto f = arc_of.find({seq[i], seq[i + 1]});
                    if (f == arc_of.end()) {
                        arcs.clear();
                        break;
                    }
                    arcs.push_back(f->second);
                }
                if (arcs.empty()) continue;
                if (!dm.opsec) {
                    dm.fixed.push_back({int(d), arcs, arcs.size(), false});
                } else {
                    for (size_t i = 1; i + 1 < seq.size(); ++i)
                        if (in_m[seq[i]]) dm.fixed.push_back({int(d), arcs, i, false});
                }
            }
        }
    }

    bool preferred(const PathCol& pc) const {
        auto& dm = demands[pc.demand];
        auto it = reuse->preferred->find({dm.s, dm.t});
        return it != reuse->preferred->end() && it->second.count(node_seq(g, dm.s, pc.arcs));
    }

    double primary_cost(const PathCol& pc) const {
        double c = 0.0;
        for (int a : pc.arcs) c += g.arcs[a].cost;
        return c;
    }

    double secondary_cost(const PathCol& pc) const { return preferred(pc) ? 0.0 : 1.0; }

    lp::Column column_of(const PathCol& pc) const {
        lp::Column c;
        std::map<int, double> mult;
        for (int a : pc.arcs) mult[a] += 1.0;
        double primary = primary_cost(pc);
        c.cost = reuse ? secondary_cost(pc) : primary;
        c.entries.push_back({demands[pc.demand].row, 1.0});
        for (auto [a, k] : mult)
            if (cap_row[a] >= 0) c.entries.push_back({cap_row[a], k});
        if (reuse) c.entries.push_back({budget_row, primary});
        return c;
    }

    // Adds improving columns; returns how many.
    size_t price(lp::Tableau& tab) {
        double mu = reuse ? std::min(0.0, tab.dual(budget_row)) : 0.0;
        std::vector<double> w(g.arcs.size());
        for (size_t a = 0; a < g.arcs.size(); ++a) {
            double pi = cap_row[a] >= 0 ? std::min(0.0, tab.dual(cap_row[a])) : 0.0;
            w[a] = (reuse ? -mu : 1.0) * g.arcs[a].cost - pi;
        }
        std::map<int, std::pair<std::vector<double>, std::vector<int>>> from;
        auto tree = [&](int src) -> std::pair<std::vector<double>, std::vector<int>>& {
            auto it = from.find(src);
            if (it == from.end()) {
                std::vector<double> dist;
                std::vector<int> pred;
                dijkstra(g, adj, w, src, dist, pred);
                it = from.emplace(src, std::make_pair(std::move(dist), std::move(pred))).first;
            }
            return it->second;
        };
        auto weight = [&](const PathCol& pc) {
            double x = 0.0;
            for (int a : pc.arcs) x += w[a];
            return x;
        };
        size_t added = 0;
        auto offer = [&](PathCol&& pc, double rc) {
            if (rc >= -1e-7) return;
            std::vector<int> key = pc.arcs;
            key.push_back(-1 - static_cast<int>(pc.split));
            if (!known[pc.demand].insert(key).second) return;
            tab.add_column(column_of(pc));
            cols.push_back(std::move(pc));
            ++added;
        };
        for (size_t d = 0; d < demands.size(); ++d) {
            auto& dm = demands[d];
            double sigma = tab.dual(dm.row);
            PathCol pc;
            pc.demand = static_cast<int>(d);
            double cost;
            auto& ts = tree(dm.s);
            if (!dm.opsec) {
                cost = ts.first[dm.t];
                if (!std::isfinite(cost)) continue;
                pc.arcs = trace(g, ts.second, dm.s, dm.t);
                pc.split = pc.arcs.size();
            } else {
                int bm = -1;
                cost = std::numeric_limits<double>::infinity();
                for (int m : boxes) {
                    double c = ts.first[m] + tree(m).first[dm.t];
                    if (c < cost - 1e-12) {
                        cost = c;
                        bm = m;
                    }
                }
                if (bm < 0 || !std::isfinite(cost)) continue;
                pc.arcs = trace(g, ts.second, dm.s, bm);
                pc.split = pc.arcs.size();
                auto tail = trace(g, tree(bm).second, bm, dm.t);
                pc.arcs.insert(pc.arcs.end(), tail.begin(), tail.end());
            }
            if (reuse) cost += secondary_cost(pc);
            offer(std::move(pc), cost - sigma);
            for (auto& f : dm.fixed) {
                PathCol copy = f;
                offer(std::move(copy), weight(f) - sigma);
            }
        }
        return added;
    }

    lp::Status optimize(lp::Tableau& tab, bool first) {
        auto st = first ? tab.solve() : tab.reoptimize();
        for (;;) {
            if (st != lp::Status::Optimal) return st;
            if (price(tab) == 0) return st;
            st = tab.reoptimize();
        }
    }

    // Integer dive over the generated columns: round the most fractional
    // column up, re-price, and fall back to rounding down if that fails.
    lp::Status dive(lp::Tableau& tab, size_t& steps, size_t max_steps) {
        for (;;) {
            int pick = -1;
            double best = 1e-6;
            for (size_t j = 0; j < cols.size(); ++j) {
                double x = tab.value(static_cast<int>(j));
                double f = x - std::floor(x);
                if (f > 1e-6 && f < 1 - 1e-6 && f > best) {
                    best = f;
                    pick = static_cast<int>(j);
                }
            }
            if (pick < 0) return lp::Status::Optimal;
            if (++steps > max_steps) return lp::Status::IterationLimit;
            double x = tab.value(pick);
            lp::Tableau keep = tab;
            auto s1 = tab.add_bound(pick, lp::Sense::Ge, std::ceil(x));
            if (s1 == lp::Status::Optimal) s1 = optimize(tab, false);
            if (s1 == lp::Status::IterationLimit) return s1;
            if (s1 != lp::Status::Optimal) {
                tab = std::move(keep);
                auto s2 = tab.add_bound(pick, lp::Sense::Le, std::floor(x));
                if (s2 == lp::Status::Optimal) s2 = optimize(tab, false);
                if (s2 != lp::Status::Optimal) return s2;
            }
        }
    }

    bool overflowing(const lp::Tableau& tab) const {
        for (size_t j = 0; j < demands.size(); ++j)
            if (tab.value(static_cast<int>(j)) > 1e-6) return true;
        return false;
    }

    FlowSolution extract(const lp::Tableau& tab) const {
        FlowSolution sol;
        sol.boxes = boxes;
        std::vector<int> slot(demands.size());
        for (size_t d = 0; d < demands.size(); ++d) {
            auto& dm = demands[d];
            if (!dm.opsec) {
                slot[d] = static_cast<int>(sol.legacy.size());
                sol.legacy.push_back({dm.s, dm.t, dm.vol, std::vector<int64_t>(g.arcs.size(), 0)});
            } else {
                slot[d] = static_cast<int>(sol.opsec.size());
                OpsecFlow f;
                f.s = dm.s;
                f.t = dm.t;
                f.volume = dm.vol;
                f.to_box.assign(g.arcs.size(), 0);
                f.from_box.assign(g.arcs.size(), 0);
                sol.opsec.push_back(std::move(f));
            }
        }
        for (size_t j = demands.size(); j < cols.size(); ++j) {
            int64_t x = std::llround(tab.value(static_cast<int>(j)));
            if (x == 0) continue;
            auto& pc = cols[j];
            auto& dm = demands[pc.demand];
            if (!dm.opsec) {
                for (int a : pc.arcs) sol.legacy[slot[pc.demand]].flow[a] += x;
            } else {
                auto& f = sol.opsec[slot[pc.demand]];
                for (size_t i = 0; i < pc.arcs.size(); ++i) (i < pc.split ? f.to_box : f.from_box)[pc.arcs[i]] += x;
            }
            sol.routes.push_back({dm.s, dm.t, dm.opsec, pc.arcs, pc.split, x});
        }
        sol.columns = cols.size() - demands.size();
        sol.lp_pivots = tab.pivots();
        return sol;
    }
};

void check_inputs(const Graph& g, const TrafficMatrix& tl, const TrafficMatrix& tp, const std::vector<int>& boxes) {
    g.validate();
    check_demands(g, tl, "legacy matrix");
    check_demands(g, tp, "opsec matrix");
    check_boxes(g, boxes);
}

} // namespace

FlowSolution plan_multi_box_paths(const Graph& g, const TrafficMatrix& tl, const TrafficMatrix& tp,
                                  const std::vector<int>& boxes, const SolveLimits& limits) {
    check_inputs(g, tl, tp, boxes);
    ColumnGen cg(g, tl, tp, boxes, nullptr);
    if (cg.demands.empty()) {
        FlowSolution sol;
        sol.boxes = boxes;
        return sol;
    }
    lp::Tableau tab(cg.problem, limits.iterations);
    auto st = cg.optimize(tab, true);
    if (st != lp::Status::Optimal)
        throw OpsecError(Errc::IterationLimit, std::string("column generation: ") + lp::status_name(st));
    double bound = tab.objective();
    if (cg.overflowing(tab)) throw OpsecError(Errc::Infeasible, "capacities cannot carry the demands");
    size_t steps = 0;
    st = cg.dive(tab, steps, limits.bb_nodes);
    if (st == lp::Status::IterationLimit) throw OpsecError(Errc::IterationLimit, "integer dive limit");
    if (st != lp::Status::Optimal || cg.overflowing(tab))
        throw OpsecError(Errc::Infeasible, "no integral routing fits the capacities");
    FlowSolution sol = cg.extract(tab);
    sol.lp_bound = bound;
    sol.branches = steps;
    sol.proven_optimal = tab.objective() <= bound + 1e-6 * (1.0 + std::abs(bound));
    sol.objective = objective_of(g, sol);
    return sol;
}

FlowSolution refine_path_reuse(const Graph& g, const TrafficMatrix& tl, const TrafficMatrix& tp,
                               const std::vector<int>& boxes, const FlowSolution& optimal, const PathSet& preferred,
                               const SolveLimits& limits) {
    check_inputs(g, tl, tp, boxes);
    double budget = optimal.objective + 1e-7 * (1.0 + std::abs(optimal.objective));
    Reuse reuse{budget, &preferred};
    ColumnGen cg(g, tl, tp, boxes, &reuse);
    if (cg.demands.empty()) return optimal;
    lp::Tableau tab(cg.problem, limits.iterations);
    auto st = cg.optimize(tab, true);
    if (st != lp::Status::Optimal || cg.overflowing(tab)) return optimal;
    size_t steps = 0;
    st = cg.dive(tab, steps, limits.bb_nodes);
    if (st != lp::Status::Optimal || cg.overflowing(tab)) return optimal;
    FlowSolution sol = cg.extract(tab);
    sol.objective = objective_of(g, sol);
    if (sol.objective > optimal.objective + 1e-6) return optimal;
    sol.lp_bound = optimal.lp_bound;
    sol.proven_optimal = optimal.proven_optimal;
    sol.branches = optimal.branches + steps;
    return sol;
}

// ---- decomposition ----

namespace {

struct FlowArc {
    int u, v;
    int64_t f;
};

std::vector<std::pair<std::vector<int>, int64_t>> decompose(int nodes, std::vector<FlowArc> arcs, int src, int dst,
                                                            int64_t volume) {
    std::vector<int64_t> net(nodes, 0);
    for (auto& a : arcs) {
        if (a.f < 0) throw OpsecError(Errc::NonConservative, "negative flow");
        net[a.u] += a.f;
        net[a.v] -= a.f;
    }
    for (int v = 0; v < nodes; ++v) {
        int64_t want = v == src ? volume : v == dst ? -volume : 0;
        if (net[v] != want) throw OpsecError(Errc::NonConservative, "flow is not conserved");
    }
    std::vector<std::vector<int>> out(nodes);
    for (size_t i = 0; i < arcs.size(); ++i) out[arcs[i].u].push_back(static_cast<int>(i));

    // cancel cycles
    for (;;) {
        std::vector<int> state(nodes, 0), via(nodes, -1);
        std::vector<int> cycle;
        std::function<bool(int)> dfs = [&](int u) -> bool {
            state[u] = 1;
            for (int i : out[u]) {
                if (arcs[i].f <= 0) continue;
                int v = arcs[i].v;
                if (state[v] == 1) {
                    cycle.push_back(i);
                    for (int w = u; w != v; w = arcs[via[w]].u) cycle.push_back(via[w]);
                    return true;
                }
                if (state[v] == 0) {
                    via[v] = i;
                    if (dfs(v)) return true;
                }
            }
            state[u] = 2;
            return false;
        };
        bool found = false;
        for (int s = 0; s < nodes && !found; ++s)
            if (state[s] == 0) found = dfs(s);
        if (!found) break;
        int64_t mn = std::numeric_limits<int64_t>::max();
        for (int i : cycle) mn = std::min(mn, arcs[i].f);
        for (int i : cycle) arcs[i].f -= mn;
    }

    std::vector<std::pair<std::vector<int>, int64_t>> paths;
    int64_t left = volume;
    while (left > 0) {
        std::vector<int> used;
        int u = src;
        while (u != dst) {
            int next = -1;
            for (int i : out[u])
                if (arcs[i].f > 0) {
                    next = i;
                    break;
                }
            if (next < 0 || used.size() > arcs.size()) throw OpsecError(Errc::NonConservative, "dead end");
            used.push_back(next);
            u = arcs[next].v;
        }
        int64_t mn = left;
        for (int i : used) mn = std::min(mn, arcs[i].f);
        std::vector<int> nodes_seq{src};
        for (int i : used) {
            arcs[i].f -= mn;
            nodes_seq.push_back(arcs[i].v);
        }
        paths.push_back({std::move(nodes_seq), mn});
        left -= mn;
    }
    for (auto& a : arcs)
        if (a.f != 0) throw OpsecError(Errc::NonConservative, "flow left after decomposition");
    return paths;
}

} // namespace

namespace {

void finish_report(TunnelReport& rep, const std::set<std::pair<int, int>>& active) {
    std::map<std::pair<int, int>, std::set<std::vector<int>>> distinct;
    for (auto& p : rep.paths) distinct[{p.s, p.t}].insert(p.nodes);
    for (auto& [k, set] : distinct) {
        rep.per_pair[k] = set.size();
        rep.tunnels += set.size();
    }
    rep.baseline = active.size();
    rep.relative_increase_pct =
        rep.baseline ? 100.0 * (double(rep.tunnels) - double(rep.baseline)) / double(rep.baseline) : 0.0;
}

TunnelReport report_from_routes(const Graph& g, const FlowSolution& sol, std::set<std::pair<int, int>>& active) {
    std::vector<bool> in_m(g.size(), false);
    for (int m : sol.boxes) in_m[m] = true;
    std::map<std::pair<int, int>, std::vector<int64_t>> leg, up, down;
    std::map<std::pair<int, int>, int64_t> leg_vol, op_vol;
    TunnelReport rep;
    for (auto& r : sol.routes) {
        if (r.volume <= 0 || r.arcs.empty()) throw OpsecError(Errc::NonConservative, "empty route");
        int at = r.s;
        for (int a : r.arcs) {
            if (g.arcs[a].u != at) throw OpsecError(Errc::NonConservative, "route is not a walk");
            at = g.arcs[a].v;
        }
        if (at != r.t) throw OpsecError(Errc::NonConservative, "route ends away from its target");
        std::pair<int, int> k{r.s, r.t};
        if (!r.opsec) {
            auto& f = leg[k];
            f.resize(g.arcs.size(), 0);
            for (int a : r.arcs) f[a] += r.volume;
            leg_vol[k] += r.volume;
        } else {
            if (r.split == 0 || r.split >= r.arcs.size() || !in_m[g.arcs[r.arcs[r.split]].u])
                throw OpsecError(Errc::NonConservative, "opsec route misses every box");
            auto& fu = up[k];
            auto& fd = down[k];
            fu.resize(g.arcs.size(), 0);
            fd.resize(g.arcs.size(), 0);
            for (size_t i = 0; i < r.arcs.size(); ++i) (i < r.split ? fu : fd)[r.arcs[i]] += r.volume;
            op_vol[k] += r.volume;
        }
        rep.paths.push_back({r.s, r.t, node_seq(g, r.s, r.arcs), r.volume, r.opsec});
    }
    for (auto& f : sol.legacy) {
        if (f.volume <= 0) continue;
        active.insert({f.s, f.t});
        if (leg_vol[{f.s, f.t}] != f.volume || leg[{f.s, f.t}] != f.flow)
            throw OpsecError(Errc::NonConservative, "routes disagree with legacy flows");
    }
    for (auto& f : sol.opsec) {
        if (f.volume <= 0) continue;
        active.insert({f.s, f.t});
        if (op_vol[{f.s, f.t}] != f.volume || up[{f.s, f.t}] != f.to_box || down[{f.s, f.t}] != f.from_box)
            throw OpsecError(Errc::NonConservative, "routes disagree with opsec flows");
    }
    return rep;
}

} // namespace

TunnelReport decompose_paths(const Graph& g, const FlowSolution& sol) {
    std::set<std::pair<int, int>> active;
    if (!sol.routes.empty()) {
        TunnelReport rep = report_from_routes(g, sol, active);
        finish_report(rep, active);
        return rep;
    }
    TunnelReport rep;
    int n = g.size();
    std::vector<bool> in_m(n, false);
    for (int m : sol.boxes) in_m[m] = true;

    for (auto& f : sol.legacy) {
        if (f.volume <= 0) continue;
        active.insert({f.s, f.t});
        std::vector<FlowArc> arcs;
        for (size_t a = 0; a < f.flow.size(); ++a)
            if (f.flow[a]) arcs.push_back({g.arcs[a].u, g.arcs[a].v, f.flow[a]});
        for (auto& [nodes, vol] : decompose(n, std::move(arcs), f.s, f.t, f.volume))
            rep.paths.push_back({f.s, f.t, std::move(nodes), vol, false});
    }
    for (auto& f : sol.opsec) {
        if (f.volume <= 0) continue;
        active.insert({f.s, f.t});
        // layer A = nodes [0, n), layer B = [n, 2n); boxes link the layers
        std::vector<FlowArc> arcs;
        std::vector<int64_t> absorbed(n, 0);
        for (size_t a = 0; a < f.to_box.size(); ++a) {
            auto& arc = g.arcs[a];
            if (f.to_box[a]) {
                arcs.push_back({arc.u, arc.v, f.to_box[a]});
                absorbed[arc.v] += f.to_box[a];
                absorbed[arc.u] -= f.to_box[a];
            }
            if (f.from_box[a]) arcs.push_back({n + arc.u, n + arc.v, f.from_box[a]});
        }
        absorbed[f.s] += f.volume;
        for (int v = 0; v < n; ++v) {
            if (!absorbed[v]) continue;
            if (!in_m[v]) throw OpsecError(Errc::NonConservative, "opsec flow leaves its half away from a box");
            if (absorbed[v] > 0) arcs.push_back({v, n + v, absorbed[v]});
            else arcs.push_back({n + v, v, -absorbed[v]});
        }
        for (auto& [layered, vol] : decompose(2 * n, std::move(arcs), f.s, n + f.t, f.volume)) {
            std::vector<int> nodes;
            bool crossed = false;
            for (int x : layered) {
                if (x >= n) crossed = true;
                int v = x % n;
                if (nodes.empty() || nodes.back() != v) nodes.push_back(v);
            }
            if (!crossed) throw OpsecError(Errc::NonConservative, "opsec path misses every box");
            rep.paths.push_back({f.s, f.t, std::move(nodes), vol, true});
        }
    }
    finish_report(rep, active);
    return rep;
}

PathSet path_set(const TunnelReport& rep) {
    PathSet out;
    for (auto& p : rep.paths) out[{p.s, p.t}].insert(p.nodes);
    return out;
}

// ---- sweep ----

FlowSolution plan_routing(const Graph& g, const TrafficMatrix& tl, const TrafficMatrix& tp,
                          const std::vector<int>& boxes, Method method, const SolveLimits& limits) {
    size_t commodities = tl.demands.size() + 2 * tp.demands.size();
    bool node_arc = method == Method::NodeArc || (method == Method::Auto && commodities * g.arcs.size() <= 2000);
    return node_arc ? plan_multi_box(g, tl, tp, boxes, limits) : plan_multi_box_paths(g, tl, tp, boxes, limits);
}

void split_by_ratio(const TrafficMatrix& total, double ratio, TrafficMatrix& tl, TrafficMatrix& tp) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw OpsecError(Errc::InvalidArgument, "opsec ratio outside [0, 1]");
    tl = TrafficMatrix{TrafficKind::Legacy, {}};
    tp = TrafficMatrix{TrafficKind::Opsec, {}};
    for (auto& [k, v] : total.demands) {
        int64_t p = std::llround(ratio * double(v));
        if (v - p > 0) tl.demands[k] = v - p;
        if (p > 0) tp.demands[k] = p;
    }
}

SweepResult sweep_opsec_ratio(const Graph& g, const TrafficMatrix& total, const std::vector<double>& ratios,
                              const std::vector<int>& boxes, const SweepOptions& opt) {
    for (double r : ratios)
        if (!(r >= 0.0 && r <= 1.0)) throw OpsecError(Errc::InvalidArgument, "ratio outside [0, 1]");
    if (!opt.row_hints.empty() && opt.row_hints.size() != ratios.size())
        throw OpsecError(Errc::InvalidArgument, "row hints must match the ratios");
    PathSet history;
    auto merge = [&](const PathSet& ps) {
        for (auto& [k, set] : ps) history[k].insert(set.begin(), set.end());
    };
    struct Planned {
        FlowSolution sol;
        TunnelReport rep;
    };
    auto plan = [&](const TrafficMatrix& tl, const TrafficMatrix& tp, const PathSet* hint) {
        FlowSolution sol = plan_routing(g, tl, tp, boxes, opt.method, opt.limits);
        Planned best{sol, decompose_paths(g, sol)};
        if (!opt.reuse_paths) return best;
        auto consider = [&](const PathSet& preferred) {
            if (preferred.empty()) return;
            auto alt = refine_path_reuse(g, tl, tp, boxes, sol, preferred, opt.limits);
            auto rep = decompose_paths(g, alt);
            if (rep.tunnels < best.rep.tunnels) best = {std::move(alt), std::move(rep)};
        };
        consider(history);
        if (hint) consider(*hint);
        return best;
    };
    auto split = [&](double r, TrafficMatrix& tl, TrafficMatrix& tp) { split_by_ratio(total, r, tl, tp); };
    SweepResult res;
    std::optional<Planned> reference;
    try {
        TrafficMatrix tl, tp;
        split(0.0, tl, tp);
        reference = plan(tl, tp, nullptr);
        res.reference_tunnels = reference->rep.tunnels;
        merge(path_set(reference->rep));
    } catch (const OpsecError& e) {
        if (e.code() != Errc::Infeasible) throw;
    }
    size_t last = 0;
    bool have_last = false;
    for (size_t i = 0; i < ratios.size(); ++i) {
        SweepRow row;
        row.ratio = ratios[i];
        row.box_count = boxes.size();
        TrafficMatrix tl, tp;
        split(ratios[i], tl, tp);
        try {
            if (tp.demands.empty() && !reference) throw OpsecError(Errc::Infeasible, "reference is infeasible");
            Planned pl = tp.demands.empty() ? *reference
                                            : plan(tl, tp, opt.row_hints.empty() ? nullptr : &opt.row_hints[i]);
            row.paths = path_set(pl.rep);
            merge(row.paths);
            row.objective = pl.sol.objective;
            row.tunnels = pl.rep.tunnels;
            row.baseline = pl.rep.baseline;
            double ref = res.reference_tunnels ? double(res.reference_tunnels) : double(pl.rep.baseline);
            row.relative_increase_pct = ref > 0 ? 100.0 * (double(pl.rep.tunnels) - ref) / ref : 0.0;
            row.status = pl.sol.proven_optimal ? "optimal" : "feasible";
            if (have_last && row.tunnels < last) res.monotone = false;
            last = row.tunnels;
            have_last = true;
        } catch (const OpsecError& e) {
            if (e.code() != Errc::Infeasible) throw;
            row.status = "infeasible";
        }
        res.rows.push_back(std::move(row));
    }
    return res;
}

std::vector<SweepResult> sweep_box_counts(const Graph& g, const TrafficMatrix& total,
                                          const std::vector<double>& ratios, const std::vector<int>& ranked,
                                          size_t max_boxes, const SweepOptions& opt) {
    if (max_boxes == 0 || max_boxes > ranked.size())
        throw OpsecError(Errc::InvalidArgument, "box count exceeds the candidate sites");
    std::vector<SweepResult> out;
    SweepOptions o = opt;
    for (size_t k = 1; k <= max_boxes; ++k) {
        std::vector<int> boxes(ranked.begin(), ranked.begin() + static_cast<long>(k));
        out.push_back(sweep_opsec_ratio(g, total, ratios, boxes, o));
        o.row_hints.clear();
        for (auto& r : out.back().rows) o.row_hints.push_back(r.paths);
    }
    return out;
}

std::vector<double> parse_ratio_range(const std::string& spec) {
    std::vector<double> out;
    if (spec.empty()) return out;
    auto num = [&](const std::string& s) {
        size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(s, &used);
        } catch (...) {
            used = 0;
        }
        if (used != s.size() || s.empty()) throw OpsecError(Errc::InvalidArgument, "ratios: bad number '" + s + "'");
        return v;
    };
    if (spec.find(':') != std::string::npos) {
        std::vector<std::string> parts;
        std::stringstream ss(spec);
        std::string p;
        while (std::getline(ss, p, ':')) parts.push_back(p);
        if (parts.size() != 3) throw OpsecError(Errc::InvalidArgument, "ratios: expected start:stop:step");
        double a = num(parts[0]), b = num(parts[1]), step = num(parts[2]);
        if (!(step > 0)) throw OpsecError(Errc::InvalidArgument, "ratios: step must be positive");
        for (int i = 0;; ++i) {
            double v = std::round((a + i * step) * 1e9) / 1e9;
            if (v > b + 1e-9) break;
            out.push_back(v);
        }
    } else {
        std::stringstream ss(spec);
        std::string p;
        while (std::getline(ss, p, ',')) out.push_back(num(p));
    }
    for (double r : out)
        if (r < 0.0 || r > 1.0) throw OpsecError(Errc::InvalidArgument, "ratios: values must lie in [0, 1]");
    return out;
}

std::string sweep_csv_header(bool with_box_count) {
    return std::string("ratio,objective,tunnels,baseline,relative_increase_pct,status") +
           (with_box_count ? ",box_count" : "");
}

std::string sweep_csv_row(const SweepRow& r, bool with_box_count) {
    char buf[256];
    if (r.status == "infeasible")
        std::snprintf(buf, sizeof buf, "%.4f,,,,,%s", r.ratio, r.status.c_str());
    else
        std::snprintf(buf, sizeof buf, "%.4f,%.6f,%zu,%zu,%.4f,%s", r.ratio, r.objective, r.tunnels, r.baseline,
                      r.relative_increase_pct, r.status.c_str());
    std::string s = buf;
    if (with_box_count) s += "," + std::to_string(r.box_count);
    return s;
}

// ---- synthetic topologies ----

Graph waxman_graph(const WaxmanSpec& spec, Rng& rng) {
    if (spec.nodes < 2 || spec.externals < 2 || spec.externals > spec.nodes)
        throw OpsecError(Errc::InvalidArgument, "waxman: bad node counts");
    int n = spec.nodes;
    std::vector<double> x(n), y(n);
    for (int v = 0; v < n; ++v) {
        x[v] = rng.uniform();
        y[v] = rng.uniform();
    }
    auto dist = [&](int a, int b) { return std::hypot(x[a] - x[b], y[a] - y[b]); };
    Graph g;
    for (int v = 0; v < n; ++v) g.add_node("n" + std::to_string(v));
    std::vector<int> comp(n);
    std::iota(comp.begin(), comp.end(), 0);
    std::function<int(int)> root = [&](int v) { return comp[v] == v ? v : comp[v] = root(comp[v]); };
    double L = std::sqrt(2.0);
    auto weight = [&](int u, int v) { return std::exp(-dist(u, v) / (spec.beta * L)); };
    int components = n;
    auto join = [&](int u, int v) {
        g.add_edge(u, v, spec.cost, spec.cap);
        if (root(u) != root(v)) {
            comp[root(u)] = root(v);
            --components;
        }
    };
    if (spec.links > 0) {
        if (spec.links < n - 1 || spec.links > n * (n - 1) / 2)
            throw OpsecError(Errc::InvalidArgument, "waxman: link count cannot give a connected simple graph");
        // weighted sampling without replacement, keys u^(1/w)
        std::vector<std::tuple<double, int, int>> keyed;
        for (int u = 0; u < n; ++u)
            for (int v = u + 1; v < n; ++v)
                keyed.emplace_back(std::log(std::max(rng.uniform(), 1e-300)) / weight(u, v), u, v);
        std::sort(keyed.begin(), keyed.end(), [](auto& a, auto& b) { return std::get<0>(a) > std::get<0>(b); });
        std::vector<bool> taken(keyed.size(), false);
        int need = spec.links;
        for (int pass = 0; pass < 2 && need > 0; ++pass)
            for (size_t i = 0; i < keyed.size() && need > 0; ++i) {
                if (taken[i]) continue;
                auto [k, u, v] = keyed[i];
                bool merges = root(u) != root(v);
                if (!merges && components - 1 > need - 1) continue;
                taken[i] = true;
                join(u, v);
                --need;
            }
    } else {
        for (int u = 0; u < n; ++u)
            for (int v = u + 1; v < n; ++v)
                if (rng.uniform() < spec.alpha * weight(u, v)) join(u, v);
        while (components > 1) {
            int r0 = root(0);
            int bu = -1, bv = -1;
            double bd = 1e18;
            for (int u = 0; u < n; ++u) {
                if (root(u) != r0) continue;
                for (int v = 0; v < n; ++v) {
                    if (root(v) == r0) continue;
                    if (dist(u, v) < bd) {
                        bd = dist(u, v);
                        bu = u;
                        bv = v;
                    }
                }
            }
            join(bu, bv);
        }
    }
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(static_cast<uint64_t>(i) + 1)]);
    for (int i = 0; i < spec.externals; ++i) g.external[idx[i]] = true;
    return g;
}

const std::vector<TopologyPreset>& topology_presets() {
    static const std::vector<TopologyPreset> presets = {
        {"gts-ce", 148, 386, 2000, 1500},
        {"telcove", 70, 140, 13200, 1040},
        {"columbus", 69, 170, 10000, 1008},
        {"missouri", 66, 166, 10000, 915},
        {"forthnet", 61, 124, 6000, 770},
        {"synthetic60", 60, 160, 2000, 20000},
    };
    return presets;
}

const TopologyPreset& find_preset(const std::string& name) {
    for (auto& p : topology_presets())
        if (p.name == name) return p;
    throw OpsecError(Errc::InvalidArgument, "unknown topology preset '" + name + "'");
}

WaxmanSpec waxman_spec(const TopologyPreset& p) {
    WaxmanSpec w;
    w.nodes = p.nodes;
    w.links = p.links;
    w.externals = std::max(2, static_cast<int>(std::lround(p.nodes / 5.0)));
    w.cap = p.link_cap;
    return w;
}

std::vector<int> rank_box_sites(const Graph& g) {
    auto ext = g.externals();
    int n = g.size();
    std::vector<std::vector<double>> d(n);
    for (int v = 0; v < n; ++v) d[v] = shortest_distances(g, v);
    std::vector<std::pair<long, int>> score;
    for (int v = 0; v < n; ++v) {
        if (g.external[v]) continue;
        long c = 0;
        for (int s : ext)
            for (int t : ext)
                if (s != t && std::isfinite(d[s][t]) && std::abs(d[s][v] + d[v][t] - d[s][t]) < 1e-9) ++c;
        score.push_back({-c, v});
    }
    std::sort(score.begin(), score.end());
    std::vector<int> out;
    for (auto& [c, v] : score) out.push_back(v);
    return out;
}

} // namespace opsec::routing
