#include "stenoviz/segment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stenoviz::segment {

BinaryVolume threshold(const ImageVolume& prob, double t) {
    if (!(t > 0.0 && t < 1.0))
        throw ParameterError("threshold must lie in (0, 1)");
    BinaryVolume out(prob.dims(), prob.spacing(), prob.origin(), 0);
    out.set_kind(ElementKind::Binary);
    auto src = prob.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i)
        dst[i] = src[i] >= t ? 1 : 0;
    return out;
}

std::vector<VoxelIndex> ball_offsets(int radius) {
    if (radius < 0)
        throw ParameterError("structuring element radius must be >= 0");
    std::vector<VoxelIndex> out;
    const int lim = (radius + 1) * (radius + 1);
    for (int z = -radius; z <= radius; ++z)
        for (int y = -radius; y <= radius; ++y)
            for (int x = -radius; x <= radius; ++x)
                if (x * x + y * y + z * z < lim)
                    out.push_back({x, y, z});
    return out;
}

BinaryVolume erode(const BinaryVolume& b, int radius) {
    const auto offsets = ball_offsets(radius);
    BinaryVolume out(b.dims(), b.spacing(), b.origin(), 0);
    out.set_kind(ElementKind::Binary);
    const auto d = b.dims();
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                if (!b(x, y, z))
                    continue;
                bool keep = true;
                for (const auto& o : offsets) {
                    const int nx = x + o.x, ny = y + o.y, nz = z + o.z;
                    if (b.contains(nx, ny, nz) && !b(nx, ny, nz)) {
                        keep = false;
                        break;
                    }
                }
                out(x, y, z) = keep ? 1 : 0;
            }
    return out;
}

BinaryVolume dilate(const BinaryVolume& b, int radius) {
    const auto offsets = ball_offsets(radius);
    BinaryVolume out(b.dims(), b.spacing(), b.origin(), 0);
    out.set_kind(ElementKind::Binary);
    const auto d = b.dims();
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                if (!b(x, y, z))
                    continue;
                for (const auto& o : offsets) {
                    const int nx = x + o.x, ny = y + o.y, nz = z + o.z;
                    if (b.contains(nx, ny, nz))
                        out(nx, ny, nz) = 1;
                }
            }
    return out;
}

BinaryVolume opening(const BinaryVolume& b, int radius) { return dilate(erode(b, radius), radius); }

namespace {

struct DisjointSet {
    std::vector<std::uint32_t> parent;

    std::uint32_t find(std::uint32_t a) {
        while (parent[a] != a) {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        return a;
    }
    void unite(std::uint32_t a, std::uint32_t b) {
        a = find(a);
        b = find(b);
        if (a != b)
            parent[std::max(a, b)] = std::min(a, b);
    }
};

}  // namespace

ComponentLabeling connected_components(const BinaryVolume& b) {
    const auto d = b.dims();
    const auto n = b.size();
    DisjointSet ds;
    ds.parent.resize(n);
    std::iota(ds.parent.begin(), ds.parent.end(), 0u);
    const std::size_t sy = static_cast<std::size_t>(d.x), sz = static_cast<std::size_t>(d.x) * d.y;
    auto data = b.data();
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                const auto i = b.index(x, y, z);
                if (!data[i])
                    continue;
                if (x > 0 && data[i - 1])
                    ds.unite(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i - 1));
                if (y > 0 && data[i - sy])
                    ds.unite(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i - sy));
                if (z > 0 && data[i - sz])
                    ds.unite(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i - sz));
            }

    ComponentLabeling out{LabelVolume(d, b.spacing(), b.origin(), 0), {}};
    out.labels.set_kind(ElementKind::ComponentId);
    std::vector<int> id_of_root(n, 0);
    auto labels = out.labels.data();
    for (std::size_t i = 0; i < n; ++i) {
        if (!data[i])
            continue;
        const auto r = ds.find(static_cast<std::uint32_t>(i));
        if (!id_of_root[r]) {
            id_of_root[r] = static_cast<int>(out.components.size()) + 1;
            const auto v = b.voxel(i);
            out.components.push_back({id_of_root[r], 0, v, v});
        }
        const int id = id_of_root[r];
        labels[i] = id;
        auto& c = out.components[static_cast<std::size_t>(id - 1)];
        ++c.voxels;
        const auto v = b.voxel(i);
        c.bbox_min = {std::min(c.bbox_min.x, v.x), std::min(c.bbox_min.y, v.y), std::min(c.bbox_min.z, v.z)};
        c.bbox_max = {std::max(c.bbox_max.x, v.x), std::max(c.bbox_max.y, v.y), std::max(c.bbox_max.z, v.z)};
    }
    return out;
}

BinaryVolume component_mask(const ComponentLabeling& l, int id) {
    if (id < 1 || id > l.count())
        throw ParameterError("no component with id " + std::to_string(id));
    BinaryVolume m(l.labels.dims(), l.labels.spacing(), l.labels.origin(), 0);
    m.set_kind(ElementKind::Binary);
    auto src = l.labels.data();
    auto dst = m.data();
    for (std::size_t i = 0; i < src.size(); ++i)
        dst[i] = src[i] == id ? 1 : 0;
    return m;
}

SegmentMask select_segment(const ComponentLabeling& l, VoxelIndex click, double snap_radius) {
    if (!l.labels.contains(click))
        throw ParameterError("click outside the volume");
    VoxelIndex hit = click;
    if (!l.labels[click]) {
        const int r = static_cast<int>(std::floor(std::max(0.0, snap_radius)));
        double best = snap_radius * snap_radius;
        bool found = false;
        for (int z = click.z - r; z <= click.z + r; ++z)
            for (int y = click.y - r; y <= click.y + r; ++y)
                for (int x = click.x - r; x <= click.x + r; ++x) {
                    if (!l.labels.contains(x, y, z) || !l.labels(x, y, z))
                        continue;
                    const double dx = x - click.x, dy = y - click.y, dz = z - click.z;
                    const double d2 = dx * dx + dy * dy + dz * dz;
                    // Scan order visits lower indices first, so strict < keeps the earliest tie.
                    if (d2 < best || (!found && d2 <= best)) {
                        best = d2;
                        hit = {x, y, z};
                        found = true;
                    }
                }
        if (!found)
            throw SelectionMiss("no segment within " + std::to_string(snap_radius) + " voxels of the click");
    }
    const int id = l.labels[hit];
    return {id, component_mask(l, id), click, hit};
}

ComponentLabeling postprocess(const ImageVolume& prob, double t, int open_radius) {
    auto b = threshold(prob, t);
    if (open_radius > 0)
        b = opening(b, open_radius);
    return connected_components(b);
}

nlohmann::json component_table(const ComponentLabeling& l) {
    auto arr = nlohmann::json::array();
    for (const auto& c : l.components)
        arr.push_back({{"id", c.id},
                       {"voxels", c.voxels},
                       {"bbox_min", {c.bbox_min.x, c.bbox_min.y, c.bbox_min.z}},
                       {"bbox_max", {c.bbox_max.x, c.bbox_max.y, c.bbox_max.z}}});
    return arr;
}

}  // namespace stenoviz::segment
