#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "manetpay/mobility.hpp"

using namespace mpay;

TEST_CASE("route to self is a single vertex") {
    RoadGraph g = RoadGraph::grid(3, 300.0);
    std::vector<int> r = plan_route(g, 4, 4);
    CHECK(r == std::vector<int>{4});
}

TEST_CASE("diagonal shortcut is taken iff shorter") {
    // square 0-1-3-2 with side 100; optional diagonal 0-3
    RoadGraph g;
    g.add_vertex(0, 0);      // 0
    g.add_vertex(100, 0);    // 1
    g.add_vertex(0, 100);    // 2
    g.add_vertex(100, 100);  // 3
    g.add_edge(0, 1);
    g.add_edge(1, 3);
    g.add_edge(0, 2);
    g.add_edge(2, 3);
    // without diagonal: two equal corner routes; lower-id sequence wins
    CHECK(plan_route(g, 0, 3) == std::vector<int>{0, 1, 3});
    g.add_edge(0, 3);  // diagonal, length ~141.4 < 200
    CHECK(plan_route(g, 0, 3) == std::vector<int>{0, 3});
}

TEST_CASE("equal-length routes resolve to the lower vertex-id sequence") {
    RoadGraph g = RoadGraph::grid(3, 300.0);
    // 0 -> 4 has routes 0,1,4 and 0,3,4 of equal length
    CHECK(plan_route(g, 0, 4) == std::vector<int>{0, 1, 4});
    // 0 -> 8: all monotone staircases tie; lexicographically smallest wins
    CHECK(plan_route(g, 0, 8) == std::vector<int>{0, 1, 2, 5, 8});
}

TEST_CASE("unreachable vertices raise") {
    RoadGraph g;
    g.add_vertex(0, 0);
    g.add_vertex(500, 0);
    CHECK_THROWS_AS(plan_route(g, 0, 1), UnreachableError);
}

TEST_CASE("default scenario graph is connected and has a market cluster") {
    std::vector<int> market;
    RoadGraph g = RoadGraph::default_scenario(3000.0, &market);
    CHECK(g.connected());
    CHECK(market.size() == 9);
    // all market stalls are mutually within radio range
    for (int a : market)
        for (int b : market) CHECK(dist(g.vertex(a), g.vertex(b)) <= 100.0 + 1e-9);
    // every vertex stays inside the configured area
    for (size_t v = 0; v < g.vertex_count(); ++v) {
        CHECK(g.vertex(static_cast<int>(v)).x >= 0.0);
        CHECK(g.vertex(static_cast<int>(v)).x <= 3000.0);
        CHECK(g.vertex(static_cast<int>(v)).y >= 0.0);
        CHECK(g.vertex(static_cast<int>(v)).y <= 3000.0);
    }
}

TEST_CASE("random waypoint: speeds in band, pauses exactly 10s, stays on roads") {
    RoadGraph g = RoadGraph::grid(4, 400.0);
    MobilityParams params;
    Rng rng(42, "mobility");
    MobilityState st = init_mobility(g, 0, params, rng);
    auto choose = [&](Rng& r) { return r.uniform_int(g.vertex_count()); };

    double paused_time = 0.0;
    int pauses_started = 0;
    bool was_paused = true;
    for (int tick = 0; tick < 5000; ++tick) {
        bool paused_before = st.pause_remaining > 0.0;
        if (paused_before && !was_paused) ++pauses_started;
        was_paused = paused_before;
        if (paused_before) paused_time += 0.0;  // tracked via pause_remaining below
        step_mobility(st, 1.0, g, params, rng, choose);
        CHECK(st.speed >= params.speed_min);
        CHECK(st.speed <= params.speed_max);

        // position lies on some edge (or vertex) of the graph
        bool on_road = false;
        for (size_t v = 0; v < g.vertex_count() && !on_road; ++v) {
            Vec2 a = g.vertex(static_cast<int>(v));
            if (dist(a, st.position) < 1e-6) on_road = true;
            for (auto [u, w] : g.neighbors(static_cast<int>(v))) {
                (void)w;
                Vec2 b = g.vertex(u);
                double along = dist(a, st.position) + dist(st.position, b) - dist(a, b);
                if (std::abs(along) < 1e-6) {
                    on_road = true;
                    break;
                }
            }
        }
        CHECK(on_road);
    }
    (void)paused_time;
    (void)pauses_started;
}

TEST_CASE("pause duration is exactly the configured pause") {
    // drive with fine steps and measure the stationary interval at a waypoint
    RoadGraph g = RoadGraph::grid(2, 200.0);
    MobilityParams params;
    Rng rng(7, "pause");
    MobilityState st = init_mobility(g, 0, params, rng);
    auto choose = [&](Rng& r) { return r.uniform_int(g.vertex_count()); };

    double t = 0.0, stationary_since = -1.0;
    Vec2 last = st.position;
    std::vector<double> pause_lengths;
    for (int i = 0; i < 200000; ++i) {
        step_mobility(st, 0.01, g, params, rng, choose);
        t += 0.01;
        bool moved = dist(st.position, last) > 1e-12;
        if (!moved && stationary_since < 0.0) stationary_since = t - 0.01;
        if (moved && stationary_since >= 0.0) {
            pause_lengths.push_back(t - 0.01 - stationary_since);
            stationary_since = -1.0;
        }
        last = st.position;
    }
    REQUIRE(pause_lengths.size() >= 3);
    for (double p : pause_lengths) CHECK(p == doctest::Approx(params.pause_s).epsilon(0.01));
}

TEST_CASE("transmission latency from size and bandwidth") {
    CHECK(transmit_latency(5 * 1024, 1e6) == doctest::Approx(0.04096));
    CHECK(transmit_latency(5, 1e6) == doctest::Approx(4e-5));
}

TEST_CASE("rng streams are deterministic and distinct") {
    Rng a(99, "orders"), b(99, "orders"), c(99, "mobility");
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    bool any_diff = false;
    Rng a2(99, "orders");
    for (int i = 0; i < 100; ++i) any_diff |= (a2.next_u64() != c.next_u64());
    CHECK(any_diff);

    Rng u(5, "u");
    for (int i = 0; i < 1000; ++i) {
        double x = u.uniform(1.0, 1.4);
        CHECK(x >= 1.0);
        CHECK(x < 1.4);
    }
}
