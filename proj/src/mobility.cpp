#include "manetpay/mobility.hpp"

#include <algorithm>
#include <queue>
#include <sstream>

#include "manetpay/crypto.hpp"

namespace mpay {

uint64_t Rng::splitmix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

Rng::Rng(uint64_t seed, const std::string& stream) {
    Digest d = sha256(str_bytes(stream));
    uint64_t h = 0;
    for (int i = 0; i < 8; ++i) h = h << 8 | d[i];
    state_ = splitmix(seed ^ h);
}

uint64_t Rng::next_u64() {
    // xorshift* over a splitmix-initialized state
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545f4914f6cdd1dull;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

uint64_t Rng::uniform_int(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

double Rng::exponential(double mean) {
    double u = uniform();
    return -mean * std::log1p(-u);
}

int RoadGraph::add_vertex(double x, double y) {
    verts_.push_back({x, y});
    adj_.emplace_back();
    return static_cast<int>(verts_.size()) - 1;
}

void RoadGraph::add_edge(int a, int b) {
    double len = dist(verts_[a], verts_[b]);
    adj_[a].push_back({b, len});
    adj_[b].push_back({a, len});
}

bool RoadGraph::connected() const {
    if (verts_.empty()) return false;
    std::vector<bool> seen(verts_.size(), false);
    std::vector<int> stack{0};
    seen[0] = true;
    size_t visited = 1;
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        for (auto [u, w] : adj_[v]) {
            (void)w;
            if (!seen[u]) {
                seen[u] = true;
                ++visited;
                stack.push_back(u);
            }
        }
    }
    return visited == verts_.size();
}

RoadGraph RoadGraph::grid(int n, double area_m) {
    RoadGraph g;
    double cell = area_m / n;
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c)
            g.add_vertex((c + 0.5) * cell, (r + 0.5) * cell);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
            int id = r * n + c;
            if (c + 1 < n) g.add_edge(id, id + 1);
            if (r + 1 < n) g.add_edge(id, id + n);
        }
    return g;
}

RoadGraph RoadGraph::default_scenario(double area_m, std::vector<int>* market_vertices) {
    const int n = 7;
    RoadGraph g = grid(n, area_m);
    int centre = (n / 2) * n + n / 2;
    Vec2 c = g.vertex(centre);
    std::vector<int> market{centre};
    const int stalls = 8;
    constexpr double kPi = 3.14159265358979323846;
    for (int i = 0; i < stalls; ++i) {
        double ang = 2.0 * kPi * i / stalls;
        // 45 m ring: every stall pair stays inside one radio range
        int v = g.add_vertex(c.x + 45.0 * std::cos(ang), c.y + 45.0 * std::sin(ang));
        g.add_edge(centre, v);
        market.push_back(v);
    }
    for (int i = 0; i < stalls; ++i)
        g.add_edge(market[1 + i], market[1 + (i + 1) % stalls]);
    if (market_vertices) *market_vertices = market;
    return g;
}

RoadGraph RoadGraph::parse(const std::string& text, std::vector<int>* market_vertices) {
    RoadGraph g;
    std::vector<int> market;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag)) continue;
        if (tag == "v") {
            int id;
            double x, y;
            std::string flag;
            if (!(ls >> id >> x >> y)) throw std::runtime_error("bad vertex line: " + line);
            int got = g.add_vertex(x, y);
            if (got != id) throw std::runtime_error("vertex ids must be dense from 0");
            if (ls >> flag && flag == "market") market.push_back(id);
        } else if (tag == "e") {
            int a, b;
            if (!(ls >> a >> b)) throw std::runtime_error("bad edge line: " + line);
            g.add_edge(a, b);
        } else {
            throw std::runtime_error("bad road line: " + line);
        }
    }
    if (g.vertex_count() == 0) throw std::runtime_error("road graph has no vertices");
    if (market.empty()) market.push_back(0);
    if (market_vertices) *market_vertices = market;
    return g;
}

std::vector<int> plan_route(const RoadGraph& graph, int from, int to) {
    size_t n = graph.vertex_count();
    if (from < 0 || to < 0 || static_cast<size_t>(from) >= n || static_cast<size_t>(to) >= n)
        throw std::out_of_range("vertex id");
    if (from == to) return {from};

    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> best(n, kInf);
    std::vector<std::vector<int>> path(n);
    best[from] = 0.0;
    path[from] = {from};

    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    pq.push({0.0, from});
    while (!pq.empty()) {
        auto [d, v] = pq.top();
        pq.pop();
        if (d > best[v] + 1e-9) continue;
        for (auto [u, w] : graph.neighbors(v)) {
            double cand = best[v] + w;
            if (cand < best[u] - 1e-9) {
                best[u] = cand;
                path[u] = path[v];
                path[u].push_back(u);
                pq.push({cand, u});
            } else if (cand < best[u] + 1e-9) {
                // equal length: keep the lexicographically smaller sequence
                std::vector<int> alt = path[v];
                alt.push_back(u);
                if (alt < path[u]) {
                    path[u] = std::move(alt);
                    pq.push({cand, u});
                }
            }
        }
    }
    if (best[to] == kInf) throw UnreachableError();
    return path[to];
}

MobilityState init_mobility(const RoadGraph& graph, int start_vertex,
                            const MobilityParams& params, Rng& rng) {
    MobilityState st;
    st.position = graph.vertex(start_vertex);
    st.current_vertex = start_vertex;
    st.waypoint = start_vertex;
    st.speed = rng.uniform(params.speed_min, params.speed_max);
    st.pause_remaining = params.pause_s;
    return st;
}

}  // namespace mpay
