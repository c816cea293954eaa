#include "oracles.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <limits>

namespace oracle {

std::string b64url(const std::vector<uint8_t>& in) {
    static const char* alpha = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";
    std::string out;
    size_t bits = 0;
    uint32_t acc = 0;
    for (uint8_t b : in) {
        acc = (acc << 8) | b;
        bits += 8;
        while (bits >= 6) {
            bits -= 6;
            out.push_back(alpha[(acc >> bits) & 63]);
        }
    }
    if (bits > 0) out.push_back(alpha[(acc << (6 - bits)) & 63]);
    return out;
}

int hamming(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
    int d = 0;
    for (size_t i = 0; i < a.size() && i < b.size(); ++i) d += std::popcount(static_cast<unsigned>(a[i] ^ b[i]));
    return d;
}

namespace {

void simple_paths(int nodes, const std::vector<Link>& links, int from, int to,
                  std::vector<std::vector<int>>& out) {
    std::vector<bool> on(nodes, false);
    std::vector<int> path;
    std::function<void(int)> walk = [&](int u) {
        if (u == to) {
            out.push_back(path);
            return;
        }
        on[u] = true;
        for (int i = 0; i < static_cast<int>(links.size()); ++i) {
            if (links[i].u != u || on[links[i].v]) continue;
            path.push_back(i);
            walk(links[i].v);
            path.pop_back();
        }
        on[u] = false;
    };
    walk(from);
}

struct Route {
    double cost = 0.0;
    std::vector<int> uses;  // link indices, repeated if used twice
};

} // namespace

std::optional<double> route_by_enumeration(int nodes, const std::vector<Link>& links, const std::vector<Want>& wants,
                                           const std::vector<int>& boxes) {
    std::vector<std::vector<Route>> routes;
    for (auto& w : wants) {
        std::vector<Route> rs;
        auto add = [&](const std::vector<int>& a, const std::vector<int>& b) {
            Route r;
            for (int i : a) r.uses.push_back(i);
            for (int i : b) r.uses.push_back(i);
            for (int i : r.uses) r.cost += links[i].cost;
            rs.push_back(std::move(r));
        };
        if (!w.opsec) {
            std::vector<std::vector<int>> ps;
            simple_paths(nodes, links, w.s, w.t, ps);
            for (auto& p : ps) add(p, {});
        } else {
            for (int m : boxes) {
                std::vector<std::vector<int>> a, b;
                simple_paths(nodes, links, w.s, m, a);
                simple_paths(nodes, links, m, w.t, b);
                for (auto& x : a)
                    for (auto& y : b) add(x, y);
            }
        }
        std::stable_sort(rs.begin(), rs.end(), [](const Route& x, const Route& y) { return x.cost < y.cost; });
        routes.push_back(std::move(rs));
    }
    // one entry per unit
    std::vector<int> unit_of;
    for (size_t d = 0; d < wants.size(); ++d)
        for (int k = 0; k < wants[d].volume; ++k) unit_of.push_back(static_cast<int>(d));
    for (int d : unit_of)
        if (routes[d].empty()) return std::nullopt;
    std::vector<double> tail(unit_of.size() + 1, 0.0);
    for (size_t i = unit_of.size(); i-- > 0;) tail[i] = tail[i + 1] + routes[unit_of[i]].front().cost;

    std::vector<double> left(links.size());
    for (size_t i = 0; i < links.size(); ++i) left[i] = links[i].cap;
    double best = std::numeric_limits<double>::infinity();
    std::vector<size_t> choice(unit_of.size(), 0);
    std::function<void(size_t, double)> go = [&](size_t i, double cost) {
        if (cost + tail[i] >= best - 1e-9) return;
        if (i == unit_of.size()) {
            best = cost;
            return;
        }
        int d = unit_of[i];
        size_t start = i > 0 && unit_of[i - 1] == d ? choice[i - 1] : 0;
        for (size_t r = start; r < routes[d].size(); ++r) {
            auto& rt = routes[d][r];
            if (cost + rt.cost + tail[i + 1] >= best - 1e-9) break;
            bool fits = true;
            for (int l : rt.uses) left[l] -= 1.0;
            for (int l : rt.uses)
                if (left[l] < -1e-9) fits = false;
            if (fits) {
                choice[i] = r;
                go(i + 1, cost + rt.cost);
            }
            for (int l : rt.uses) left[l] += 1.0;
        }
    };
    go(0, 0.0);
    if (!std::isfinite(best)) return std::nullopt;
    return best;
}

std::vector<std::vector<double>> all_pairs(int nodes, const std::vector<Link>& links) {
    const double inf = 1e18;
    std::vector<std::vector<double>> d(nodes, std::vector<double>(nodes, inf));
    for (int v = 0; v < nodes; ++v) d[v][v] = 0.0;
    for (auto& l : links) d[l.u][l.v] = std::min(d[l.u][l.v], l.cost);
    for (int k = 0; k < nodes; ++k)
        for (int i = 0; i < nodes; ++i)
            for (int j = 0; j < nodes; ++j)
                if (d[i][k] + d[k][j] < d[i][j]) d[i][j] = d[i][k] + d[k][j];
    return d;
}

} // namespace oracle
