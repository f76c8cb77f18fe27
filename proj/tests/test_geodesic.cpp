#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "stenoviz/geodesic.hpp"
#include "stenoviz/phantom.hpp"
#include "stenoviz/segment.hpp"

using namespace stenoviz;
using namespace stenoviz::geodesic;

namespace {

BinaryVolume straight_tube(int n) {
    BinaryVolume b({n, 3, 3});
    for (int x = 0; x < n; ++x)
        b(x, 1, 1) = 1;
    return b;
}

// Random walk blob: connected under 6-neighbour steps by construction.
BinaryVolume random_blob(std::mt19937_64& rng, Dims3 d, Vec3 spacing, VoxelIndex& start) {
    BinaryVolume b(d, spacing);
    std::uniform_int_distribution<int> dir(0, 5), ux(0, d.x - 1), uy(0, d.y - 1), uz(0, d.z - 1);
    start = {ux(rng), uy(rng), uz(rng)};
    VoxelIndex p = start;
    const int steps = static_cast<int>(d.count() / 2);
    const int moves[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (int s = 0; s < steps; ++s) {
        b[p] = 1;
        const auto& m = moves[dir(rng)];
        const VoxelIndex q{p.x + m[0], p.y + m[1], p.z + m[2]};
        if (b.contains(q))
            p = q;
    }
    return b;
}

double dist(VoxelIndex v, Vec3 mm) {
    return std::sqrt((v.x - mm.x) * (v.x - mm.x) + (v.y - mm.y) * (v.y - mm.y) + (v.z - mm.z) * (v.z - mm.z));
}

}  // namespace

TEST_CASE("trivial distance fields") {
    BinaryVolume one({3, 3, 3});
    one(1, 1, 1) = 1;
    const auto d = constrained_distance(one, {1, 1, 1});
    CHECK(d(1, 1, 1) == 0.0);
    CHECK(std::isinf(d(0, 0, 0)));
    CHECK_THROWS_AS(constrained_distance(one, {0, 0, 0}), ParameterError);

    const auto tube = straight_tube(100);
    CHECK(constrained_distance(tube, {0, 1, 1}, Neighborhood::Six)(99, 1, 1) == 99.0);
    CHECK(constrained_distance(tube, {0, 1, 1}, Neighborhood::TwentySix)(99, 1, 1) == 99.0);
}

TEST_CASE("distance fields equal the graph oracle exactly") {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> ext(4, 24);
    std::uniform_real_distribution<double> sp(0.5, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
        const Dims3 d{ext(rng), ext(rng), ext(rng)};
        const Vec3 spacing = trial % 2 ? Vec3{1, 1, 1} : Vec3{sp(rng), sp(rng), sp(rng)};
        VoxelIndex seed;
        const auto mask = random_blob(rng, d, spacing, seed);
        for (auto [nb, k] : {std::pair{Neighborhood::Six, 6}, std::pair{Neighborhood::TwentySix, 26}}) {
            const auto got = constrained_distance(mask, seed, nb);
            const auto want = oracle::graph_shortest_paths(mask, seed, k);
            bool same = true;
            for (std::size_t i = 0; i < want.size(); ++i)
                same = same && got.data()[i] == want[i];
            CHECK(same);
            for (std::size_t i = 0; i < want.size(); ++i)
                if (mask.data()[i])
                    REQUIRE(std::isfinite(got.data()[i]));
        }
        if (spacing == Vec3{1, 1, 1}) {
            const auto got = constrained_distance(mask, seed, Neighborhood::Six);
            const auto hops = oracle::bfs_hops(mask, seed);
            bool same = true;
            for (std::size_t i = 0; i < hops.size(); ++i)
                same = same && got.data()[i] == hops[i];
            CHECK(same);
        }
    }
}

TEST_CASE("neighbouring voxels differ by at most their step length") {
    std::mt19937_64 rng(8);
    VoxelIndex seed;
    const auto mask = random_blob(rng, {16, 14, 12}, {0.7, 0.7, 1.3}, seed);
    const auto d = constrained_distance(mask, seed);
    const auto sp = mask.spacing();
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask.data()[i])
            continue;
        const auto u = mask.voxel(i);
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const VoxelIndex v{u.x + dx, u.y + dy, u.z + dz};
                    if (!mask.contains(v) || !mask[v])
                        continue;
                    const double w = std::sqrt((dx * sp.x) * (dx * sp.x) + (dy * sp.y) * (dy * sp.y) +
                                               (dz * sp.z) * (dz * sp.z));
                    REQUIRE(std::abs(d[u] - d[v]) <= w + 1e-12);
                }
    }
}

TEST_CASE("endpoints of a straight tube") {
    const auto tube = straight_tube(100);
    const auto e = find_endpoints(tube, {50, 1, 1});
    CHECK(e.endpoint_a == VoxelIndex{0, 1, 1});
    CHECK(e.endpoint_b == VoxelIndex{99, 1, 1});
    CHECK(e.span_mm == 99.0);
    CHECK_FALSE(e.is_cyclic_suspect);

    const auto c = color_segment(tube, e);
    for (int x = 0; x < 100; ++x)
        CHECK(c(x, 1, 1) == doctest::Approx(x / 99.0).epsilon(1e-6));
    CHECK(c(0, 1, 1) == 0.0f);
    CHECK(c(0, 0, 0) == kOutsideMask);

    BinaryVolume one({3, 3, 3});
    one(2, 1, 0) = 1;
    const auto s = find_endpoints(one, {2, 1, 0});
    CHECK(s.endpoint_a == s.endpoint_b);
    CHECK(s.span_mm == 0.0);
    CHECK(color_segment(one, s)(2, 1, 0) == 0.0f);
}

TEST_CASE("U-shaped tube span tracks the centerline length") {
    phantom::PhantomSpec spec;
    spec.dims = {80, 60, 24};
    spec.control_points = {{15, 10, 12}, {15, 40, 12}, {25, 50, 12}, {40, 52, 12}, {55, 50, 12}, {65, 40, 12},
                           {65, 10, 12}};
    spec.radius_start = spec.radius_end = 2.5;
    spec.noise_sigma = 0;
    std::mt19937_64 rng(1);
    const auto p = phantom::generate(spec, rng);
    REQUIRE(segment::connected_components(p.truth).count() == 1);
    const auto e = find_endpoints(p.truth, phantom::nearest_voxel({40, 52, 12}, spec.spacing));
    const double L = p.meta.centerline_length_mm;
    CHECK(std::abs(e.span_mm - L) / L < 0.10);
    const auto& piece = p.meta.pieces.at(0);
    CHECK(std::min(dist(e.endpoint_a, piece.end_a_mm), dist(e.endpoint_a, piece.end_b_mm)) <= 3.0);
    CHECK(std::min(dist(e.endpoint_b, piece.end_a_mm), dist(e.endpoint_b, piece.end_b_mm)) <= 3.0);
    CHECK_FALSE(e.is_cyclic_suspect);
}

TEST_CASE("coloring does not depend on the click, up to swapping the ends") {
    phantom::PhantomSpec spec;
    spec.radius_start = spec.radius_end = 2.5;
    spec.noise_sigma = 0;
    for (int seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(200 + seed);
        const auto p = phantom::generate(spec, rng);
        const auto& c = p.meta.centerline;
        const auto e1 = find_endpoints(p.truth, phantom::nearest_voxel(c[c.size() / 5], spec.spacing));
        const auto e2 = find_endpoints(p.truth, phantom::nearest_voxel(c[c.size() * 3 / 4], spec.spacing));
        const bool same = e1.endpoint_a == e2.endpoint_a && e1.endpoint_b == e2.endpoint_b;
        const bool swapped = e1.endpoint_a == e2.endpoint_b && e1.endpoint_b == e2.endpoint_a;
        REQUIRE((same || swapped));
        const auto f1 = color_segment(p.truth, e1);
        const auto f2 = color_segment(p.truth, e2);
        if (same) {
            CHECK(f1 == f2);
        } else {
            // Swapped: the second run colours from the first run's red end.
            const auto reversed = color_segment(p.truth, {e1.endpoint_b, e1.endpoint_a, e1.span_mm});
            CHECK(std::abs(e1.span_mm - e2.span_mm) < 1e-9);
            double worst = 0;
            for (std::size_t i = 0; i < f2.size(); ++i)
                worst = std::max(worst, static_cast<double>(std::abs(f2.data()[i] - reversed.data()[i])));
            CHECK(worst < 1e-6);
        }

        // Two-sweep fixed point: restarting from either end finds the other.
        const auto from_a = find_endpoints(p.truth, e1.endpoint_a);
        CHECK(from_a.endpoint_a == e1.endpoint_b);
    }
}

TEST_CASE("colormap and summary") {
    CHECK(blue_red(0.0) == std::array<std::uint8_t, 3>{0, 0, 255});
    CHECK(blue_red(1.0) == std::array<std::uint8_t, 3>{255, 0, 0});
    const auto j = summary({{1, 2, 3}, {4, 5, 6}, 12.5, false});
    CHECK(j["endpoint_a"] == nlohmann::json({1, 2, 3}));
    CHECK(j["span_mm"] == 12.5);
}
