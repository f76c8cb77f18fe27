#include "stenoviz/geodesic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace stenoviz::geodesic {

namespace {

struct Step {
    int dx, dy, dz;
    double w;
};

std::vector<Step> steps(Neighborhood nb, const Vec3& sp) {
    std::vector<Step> out;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int taxicab = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (taxicab == 0 || (nb == Neighborhood::Six && taxicab != 1))
                    continue;
                out.push_back({dx, dy, dz,
                               std::sqrt((dx * sp.x) * (dx * sp.x) + (dy * sp.y) * (dy * sp.y) +
                                         (dz * sp.z) * (dz * sp.z))});
            }
    return out;
}

}  // namespace

DistanceField constrained_distance(const BinaryVolume& mask, VoxelIndex seed, Neighborhood nb) {
    if (!mask.contains(seed) || !mask[seed])
        throw ParameterError("seed voxel lies outside the mask");
    const double inf = std::numeric_limits<double>::infinity();
    DistanceField dist(mask.dims(), mask.spacing(), mask.origin(), inf);
    dist.set_kind(ElementKind::Intensity);
    const auto st = steps(nb, mask.spacing());
    auto m = mask.data();
    auto d = dist.data();

    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    const auto s = mask.index(seed);
    d[s] = 0.0;
    heap.push({0.0, s});
    while (!heap.empty()) {
        const auto [du, u] = heap.top();
        heap.pop();
        if (du > d[u])
            continue;
        const auto v = mask.voxel(u);
        for (const auto& step : st) {
            const int x = v.x + step.dx, y = v.y + step.dy, z = v.z + step.dz;
            if (!mask.contains(x, y, z))
                continue;
            const auto j = mask.index(x, y, z);
            if (!m[j])
                continue;
            const double cand = du + step.w;
            if (cand < d[j]) {
                d[j] = cand;
                heap.push({cand, j});
            }
        }
    }
    return dist;
}

VoxelIndex argmax_finite(const DistanceField& d) {
    auto data = d.data();
    std::size_t best = data.size();
    for (std::size_t i = 0; i < data.size(); ++i)
        if (std::isfinite(data[i]) && (best == data.size() || data[i] > data[best]))
            best = i;
    if (best == data.size())
        throw ParameterError("distance field has no finite value");
    return d.voxel(best);
}

EndpointPair find_endpoints(const BinaryVolume& mask, VoxelIndex selected, Neighborhood nb) {
    const auto a = argmax_finite(constrained_distance(mask, selected, nb));
    const auto from_a = constrained_distance(mask, a, nb);
    const auto b = argmax_finite(from_a);

    EndpointPair pair{a, b, from_a[b], false};
    // Longest bounding-box side of the reachable part, in mm.
    VoxelIndex lo = a, hi = a;
    auto d = from_a.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (!std::isfinite(d[i]))
            continue;
        const auto v = from_a.voxel(i);
        lo = {std::min(lo.x, v.x), std::min(lo.y, v.y), std::min(lo.z, v.z)};
        hi = {std::max(hi.x, v.x), std::max(hi.y, v.y), std::max(hi.z, v.z)};
    }
    const auto& sp = mask.spacing();
    const double extent = std::max({(hi.x - lo.x) * sp.x, (hi.y - lo.y) * sp.y, (hi.z - lo.z) * sp.z});
    pair.is_cyclic_suspect = pair.span_mm < 0.5 * extent;
    return pair;
}

Volume<float> color_segment(const BinaryVolume& mask, const EndpointPair& pair, Neighborhood nb) {
    const auto dist = constrained_distance(mask, pair.endpoint_a, nb);
    Volume<float> out(mask.dims(), mask.spacing(), mask.origin(), kOutsideMask);
    out.set_kind(ElementKind::Intensity);
    auto src = dist.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (!std::isfinite(src[i]))
            continue;
        dst[i] = pair.span_mm > 0 ? static_cast<float>(std::clamp(src[i] / pair.span_mm, 0.0, 1.0)) : 0.0f;
    }
    return out;
}

std::array<std::uint8_t, 3> blue_red(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return {static_cast<std::uint8_t>(std::lround(255 * t)), 0, static_cast<std::uint8_t>(std::lround(255 * (1 - t)))};
}

nlohmann::json summary(const EndpointPair& pair) {
    const auto& a = pair.endpoint_a;
    const auto& b = pair.endpoint_b;
    return {{"endpoint_a", {a.x, a.y, a.z}},
            {"endpoint_b", {b.x, b.y, b.z}},
            {"span_mm", pair.span_mm},
            {"is_cyclic_suspect", pair.is_cyclic_suspect}};
}

}  // namespace stenoviz::geodesic
