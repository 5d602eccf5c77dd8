#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "manetpay/bytes.hpp"

namespace mpay {

// Deterministic RNG with hand-rolled distributions so transcripts are
// reproducible independent of the standard library's distribution choices.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(splitmix(seed)) {}
    Rng(uint64_t seed, const std::string& stream);

    uint64_t next_u64();
    double uniform();  // [0, 1)
    double uniform(double lo, double hi);
    uint64_t uniform_int(uint64_t n);  // [0, n)
    double exponential(double mean);

private:
    static uint64_t splitmix(uint64_t x);
    uint64_t state_;
};

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline double dist(const Vec2& a, const Vec2& b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

class UnreachableError : public std::runtime_error {
public:
    UnreachableError() : std::runtime_error("no route between vertices") {}
};

// Road network: vertices in meters, undirected weighted edges.
class RoadGraph {
public:
    int add_vertex(double x, double y);
    void add_edge(int a, int b);

    size_t vertex_count() const { return verts_.size(); }
    Vec2 vertex(int id) const { return verts_[id]; }
    const std::vector<std::pair<int, double>>& neighbors(int id) const { return adj_[id]; }
    bool connected() const;

    // Uniform n x n grid over a square area, vertices inset by half a cell.
    static RoadGraph grid(int n, double area_m);

    // Default scenario graph: 7x7 grid over the area plus a ring of market
    // stalls around the centre vertex, all within radio range of each other.
    static RoadGraph default_scenario(double area_m, std::vector<int>* market_vertices);

    // Plain-text format: "v <id> <x> <y> [market]" and "e <a> <b>" lines.
    static RoadGraph parse(const std::string& text, std::vector<int>* market_vertices);

private:
    std::vector<Vec2> verts_;
    std::vector<std::vector<std::pair<int, double>>> adj_;
};

// Shortest path by edge length; equal-length alternatives resolve to the
// lexicographically smallest vertex-id sequence.
std::vector<int> plan_route(const RoadGraph& graph, int from, int to);

// Random-waypoint state machine walking the road graph.
struct MobilityState {
    Vec2 position;
    int current_vertex = 0;       // last vertex reached
    int waypoint = 0;             // destination vertex
    std::vector<int> path;        // vertices still to visit, front first
    double speed = 1.0;           // m/s
    double pause_remaining = 0.0; // s
};

struct MobilityParams {
    double speed_min = 1.0;
    double speed_max = 1.4;
    double pause_s = 10.0;
};

MobilityState init_mobility(const RoadGraph& graph, int start_vertex,
                            const MobilityParams& params, Rng& rng);

// Advances by dt seconds: travel along the path at the drawn speed, pause
// exactly params.pause_s on arrival, then draw a new waypoint via choose.
template <typename Chooser>
void step_mobility(MobilityState& st, double dt, const RoadGraph& graph,
                   const MobilityParams& params, Rng& rng, Chooser&& choose) {
    while (dt > 1e-12) {
        if (st.pause_remaining > 0.0) {
            double take = std::min(dt, st.pause_remaining);
            st.pause_remaining -= take;
            dt -= take;
            if (st.pause_remaining > 0.0) return;
            int next = static_cast<int>(choose(rng));
            while (next == st.current_vertex && graph.vertex_count() > 1)
                next = static_cast<int>(choose(rng));
            st.waypoint = next;
            st.speed = rng.uniform(params.speed_min, params.speed_max);
            std::vector<int> route = plan_route(graph, st.current_vertex, st.waypoint);
            st.path.assign(route.begin() + 1, route.end());
            continue;
        }
        if (st.path.empty()) {
            // arrived: pause, next waypoint drawn when the pause drains
            st.pause_remaining = params.pause_s;
            continue;
        }
        Vec2 target = graph.vertex(st.path.front());
        double gap = dist(st.position, target);
        double reach = st.speed * dt;
        if (reach < gap) {
            double f = reach / gap;
            st.position.x += (target.x - st.position.x) * f;
            st.position.y += (target.y - st.position.y) * f;
            return;
        }
        dt -= gap / st.speed;
        st.position = target;
        st.current_vertex = st.path.front();
        st.path.erase(st.path.begin());
    }
}

// Transmission latency in seconds for a payload at the given bandwidth.
inline double transmit_latency(size_t size_bytes, double bandwidth_bps) {
    return static_cast<double>(size_bytes) * 8.0 / bandwidth_bps;
}

inline bool in_range(const Vec2& a, const Vec2& b, double range_m) {
    return dist(a, b) <= range_m;
}

}  // namespace mpay
