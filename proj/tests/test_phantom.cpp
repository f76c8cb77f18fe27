#include <doctest.h>

#include <cmath>
#include <set>

#include "stenoviz/geodesic.hpp"
#include "stenoviz/phantom.hpp"
#include "stenoviz/segment.hpp"

using namespace stenoviz;
using namespace stenoviz::phantom;

TEST_CASE("stenoses split the tube into pieces") {
    for (int n = 0; n <= 2; ++n) {
        PhantomSpec spec;
        spec.noise_sigma = 0;
        for (int i = 0; i < n; ++i)
            spec.stenoses.push_back({(i + 1.0) / (n + 1.0), 5.0});
        std::mt19937_64 rng(10 + n);
        const auto p = generate(spec, rng);
        CHECK(p.meta.pieces.size() == static_cast<std::size_t>(n + 1));
        CHECK(segment::connected_components(p.truth).count() == n + 1);
    }
}

TEST_CASE("noise-free binary phantom is recovered by thresholding") {
    PhantomSpec spec;
    spec.noise_sigma = 0;
    spec.lumen = spec.wall = 1.0;
    spec.background = 0.0;
    spec.stenoses = {{0.4, 4.0}};
    std::mt19937_64 rng(3);
    const auto p = generate(spec, rng);
    CHECK(segment::threshold(p.image, 0.5) == p.truth);
}

TEST_CASE("recorded arc length agrees with the geodesic span of each piece") {
    PhantomSpec spec;
    spec.noise_sigma = 0;
    spec.radius_start = spec.radius_end = 2.5;
    spec.stenoses = {{0.5, 4.0}};
    for (int seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(40 + seed);
        const auto p = generate(spec, rng);
        const auto l = segment::connected_components(p.truth);
        REQUIRE(l.count() == 2);
        for (const auto& piece : p.meta.pieces) {
            const auto mid = (piece.arc_start_mm + piece.arc_end_mm) / 2;
            const auto click = nearest_voxel(
                p.meta.centerline[static_cast<std::size_t>(mid / p.meta.sample_step_mm)], spec.spacing);
            const auto seg = segment::select_segment(l, click, 3);
            const auto e = geodesic::find_endpoints(seg.mask, seg.snapped);
            CHECK(std::abs(e.span_mm - piece.length_mm) / piece.length_mm < 0.10);
        }
    }
}

TEST_CASE("generation is deterministic") {
    PhantomSpec spec;
    spec.stenoses = {{0.3, 4.0}};
    std::mt19937_64 a(5), b(5);
    const auto p = generate(spec, a);
    const auto q = generate(spec, b);
    CHECK(p.image == q.image);
    CHECK(p.truth == q.truth);
    CHECK(nlohmann::json(p.meta) == nlohmann::json(q.meta));
}

TEST_CASE("spec errors") {
    PhantomSpec spec;
    spec.control_points = {{2, 2, 2}, {90, 90, 60}};
    std::mt19937_64 rng(1);
    CHECK_THROWS_AS(generate(spec, rng), SpecError);

    PhantomSpec bad;
    bad.radius_start = 0;
    CHECK_THROWS_AS(generate(bad, rng), SpecError);

    PhantomSpec overlapping;
    overlapping.stenoses = {{0.5, 10}, {0.52, 10}};
    CHECK_THROWS_AS(generate(overlapping, rng), SpecError);
}

TEST_CASE("spec JSON round-trips") {
    PhantomSpec spec;
    spec.dims = {64, 48, 32};
    spec.spacing = {0.7, 0.7, 1.0};
    spec.control_points = {{10, 10, 10}, {40, 30, 20}};
    spec.stenoses = {{0.5, 3}};
    spec.noise_sigma = 0.05;
    const nlohmann::json j = spec;
    const auto back = j.get<PhantomSpec>();
    CHECK(nlohmann::json(back) == j);
    CHECK_THROWS_AS(nlohmann::json({{"dims", "big"}}).get<PhantomSpec>(), SpecError);
}

TEST_CASE("weak labels") {
    PhantomSpec spec;
    std::mt19937_64 rng(9);
    const auto p = generate(spec, rng);

    const auto seven = make_weak_labels(p.truth, 7, rng);
    REQUIRE(seven.size() == 7);
    std::set<int> zs;
    for (const auto& wl : seven) {
        zs.insert(wl.z);
        CHECK(wl.label.dims() == Dims3{spec.dims.x, spec.dims.y, 1});
        bool exact = true;
        for (int y = 0; y < spec.dims.y; ++y)
            for (int x = 0; x < spec.dims.x; ++x)
                exact = exact && wl.label(x, y, 0) == p.truth(x, y, wl.z);
        CHECK(exact);
    }
    CHECK(zs.size() == 7);

    int bearing = 0;
    for (int z = 0; z < spec.dims.z; ++z) {
        bool any = false;
        for (int y = 0; y < spec.dims.y && !any; ++y)
            for (int x = 0; x < spec.dims.x && !any; ++x)
                any = p.truth(x, y, z) != 0;
        bearing += any;
    }
    const auto all = make_weak_labels(p.truth, bearing, rng);
    std::set<int> all_z;
    for (const auto& wl : all)
        all_z.insert(wl.z);
    CHECK(static_cast<int>(all_z.size()) == bearing);
    CHECK_THROWS_AS(make_weak_labels(p.truth, bearing + 1, rng), ParameterError);
    CHECK_THROWS_AS(make_weak_labels(BinaryVolume({4, 4, 4}), 1, rng), SpecError);
}

TEST_CASE("random centerlines never bend tighter than the tube radius") {
    phantom::PhantomSpec spec;
    for (int seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(900 + static_cast<std::uint64_t>(seed));
        const auto p = phantom::generate(spec, rng);
        const auto& c = p.meta.centerline;
        // Circumradius of three samples 2 mm apart along the arc; the generator
        // measures bends over a shorter window, hence a little slack.
        const std::size_t w = static_cast<std::size_t>(std::round(2.0 / p.meta.sample_step_mm));
        double tightest = INFINITY;
        for (std::size_t k = w; k + w < c.size(); ++k) {
            const Vec3 a = c[k - w], b = c[k], d = c[k + w];
            const double ab = std::hypot(b.x - a.x, b.y - a.y, b.z - a.z);
            const double bd = std::hypot(d.x - b.x, d.y - b.y, d.z - b.z);
            const double ad = std::hypot(d.x - a.x, d.y - a.y, d.z - a.z);
            const double s = (ab + bd + ad) / 2;
            const double area = std::sqrt(std::max(0.0, s * (s - ab) * (s - bd) * (s - ad)));
            if (area > 1e-9)
                tightest = std::min(tightest, ab * bd * ad / (4 * area));
        }
        CHECK(tightest >= 0.9 * spec.radius_start);
    }
}
