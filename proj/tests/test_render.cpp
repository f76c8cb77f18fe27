#include <doctest.h>

#include <map>
#include <random>

#include "stenoviz/render.hpp"

using namespace stenoviz;
using namespace stenoviz::render;

namespace {

using P = std::array<double, 3>;

P sub(P a, P b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
P cross(P a, P b) { return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]}; }
double dot(P a, P b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

// Each undirected edge must appear twice, once in each direction.
bool closed_and_oriented(const Mesh& m) {
    std::map<std::pair<int, int>, int> directed;
    for (const auto& q : m.quads)
        for (int k = 0; k < 4; ++k)
            ++directed[{q[k], q[(k + 1) % 4]}];
    for (const auto& [e, n] : directed) {
        if (n != 1)
            return false;
        auto it = directed.find({e.second, e.first});
        if (it == directed.end() || it->second != 1)
            return false;
    }
    return true;
}

}  // namespace

TEST_CASE("png round trip") {
    RgbImage img(7, 5);
    std::mt19937 rng(1);
    for (auto& p : img.pixels)
        p = static_cast<std::uint8_t>(rng());
    const auto png = encode_png(img);
    CHECK(png.substr(1, 3) == "PNG");
    const auto back = decode_png(png);
    CHECK(back.width == 7);
    CHECK(back.height == 5);
    CHECK(back.pixels == img.pixels);
    CHECK_THROWS_AS(decode_png("nonsense"), ParseError);
}

TEST_CASE("slice layers") {
    ImageVolume v({4, 3, 2});
    v(1, 2, 1) = 2.0f;
    const auto g = gray_slice(v, 1, full_range(v));
    CHECK(g.at(1, 2)[0] == 255);
    CHECK(g.at(0, 0)[0] == 0);
    CHECK_THROWS_AS(gray_slice(v, 2, {}), ParameterError);

    LabelVolume l({4, 3, 2});
    l(3, 0, 0) = 2;
    const auto li = label_slice(l, 0);
    CHECK(li.at(0, 0)[0] == 0);
    CHECK((li.at(3, 0)[0] | li.at(3, 0)[1] | li.at(3, 0)[2]) != 0);

    Volume<float> field({4, 3, 2}, {1, 1, 1}, {}, -1.0f);
    field(0, 0, 0) = 0.0f;
    field(1, 0, 0) = 1.0f;
    RgbImage base(4, 3);
    blend_coloring(base, field, 0, 1.0);
    CHECK(base.at(0, 0)[2] == 255);  // blue end
    CHECK(base.at(1, 0)[0] == 255);  // red end
    CHECK(base.at(2, 0)[0] == 0);
}

TEST_CASE("surface nets of a single voxel is a closed outward box") {
    BinaryVolume b({3, 3, 3});
    b(1, 1, 1) = 1;
    const auto m = surface_nets(b);
    CHECK(m.quads.size() == 6);
    CHECK(m.vertices.size() == 8);
    CHECK(closed_and_oriented(m));
    for (const auto& q : m.quads) {
        const auto& v = m.vertices;
        const P n = cross(sub(v[q[1]], v[q[0]]), sub(v[q[2]], v[q[0]]));
        P c{0, 0, 0};
        for (int k = 0; k < 4; ++k)
            for (int a = 0; a < 3; ++a)
                c[a] += v[q[k]][a] / 4;
        CHECK(dot(n, sub(c, {1, 1, 1})) > 0);
    }
}

TEST_CASE("surface nets of random blobs are closed 2-manifolds in edge count") {
    std::mt19937 rng(3);
    std::bernoulli_distribution on(0.5);
    for (int trial = 0; trial < 10; ++trial) {
        BinaryVolume b({6, 5, 4}, {0.5, 1, 2});
        for (auto& v : b.data())
            v = on(rng);
        Volume<float> f({6, 5, 4}, {0.5, 1, 2}, {}, 0.25f);
        const auto m = surface_nets(b, &f);
        CHECK(m.values.size() == m.vertices.size());
        for (float x : m.values)
            CHECK(x == 0.25f);
        // Non-manifold edges can appear in surface nets; the boundary still
        // cancels, so every directed edge has a reverse partner count.
        std::map<std::pair<int, int>, int> net;
        for (const auto& q : m.quads)
            for (int k = 0; k < 4; ++k) {
                const int a = q[k], c = q[(k + 1) % 4];
                net[{std::min(a, c), std::max(a, c)}] += a < c ? 1 : -1;
            }
        bool balanced = true;
        for (const auto& [e, n] : net)
            balanced = balanced && n == 0;
        CHECK(balanced);
    }
    const auto j = to_json(surface_nets(BinaryVolume({2, 2, 2}, {1, 1, 1}, {}, 1)));
    CHECK(j["quads"].size() == 6 * 4);
}
