#pragma once

// Reference implementations used only by tests. Each one is written in the
// most direct way possible and shares no code with the library path it
// checks.

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <queue>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "stenoviz/nn/tensor.hpp"
#include "stenoviz/volume.hpp"

namespace oracle {

/// Seven nested loops (n, o, x, y, z, c, kernel) over a valid convolution.
inline stenoviz::nn::Tensor conv3d(const stenoviz::nn::Tensor& in, const stenoviz::nn::Tensor& w,
                                   const stenoviz::nn::Tensor& b) {
    const auto s = in.shape();
    const auto ws = w.shape();
    const int k = ws.x;
    stenoviz::nn::Tensor out({s.n, ws.n, s.x - k + 1, s.y - k + 1, s.z - k + 1});
    for (int n = 0; n < s.n; ++n)
        for (int o = 0; o < ws.n; ++o)
            for (int z = 0; z < out.shape().z; ++z)
                for (int y = 0; y < out.shape().y; ++y)
                    for (int x = 0; x < out.shape().x; ++x) {
                        double acc = b.values()[o];
                        for (int c = 0; c < s.c; ++c)
                            for (int kz = 0; kz < k; ++kz)
                                for (int ky = 0; ky < k; ++ky)
                                    for (int kx = 0; kx < k; ++kx)
                                        acc += w.at(o, c, kx, ky, kz) * in.at(n, c, x + kx, y + ky, z + kz);
                        out.at(n, o, x, y, z) = acc;
                    }
    return out;
}

/// Direct loop over every voxel of a masked binary cross-entropy.
inline double masked_bce(const std::vector<double>& p, const std::vector<double>& y, const std::vector<double>& m) {
    long double sum = 0;
    long count = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (m[i] != 1.0)
            continue;
        double q = p[i];
        if (q < 1e-7) q = 1e-7;
        if (q > 1 - 1e-7) q = 1 - 1e-7;
        sum += -(y[i] * std::log(q) + (1 - y[i]) * std::log(1 - q));
        ++count;
    }
    return static_cast<double>(sum / count);
}

/// Breadth-first flood fill with 6-connectivity; ids assigned in scan order.
inline std::vector<int> flood_fill_labels(const stenoviz::BinaryVolume& b, int& count) {
    const auto d = b.dims();
    std::vector<int> label(b.size(), 0);
    count = 0;
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                if (!b(x, y, z) || label[b.index(x, y, z)])
                    continue;
                ++count;
                std::deque<std::array<int, 3>> q{{x, y, z}};
                label[b.index(x, y, z)] = count;
                while (!q.empty()) {
                    auto [cx, cy, cz] = q.front();
                    q.pop_front();
                    const int nb[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
                    for (auto& o : nb) {
                        const int nx = cx + o[0], ny = cy + o[1], nz = cz + o[2];
                        if (!b.contains(nx, ny, nz) || !b(nx, ny, nz) || label[b.index(nx, ny, nz)])
                            continue;
                        label[b.index(nx, ny, nz)] = count;
                        q.push_back({nx, ny, nz});
                    }
                }
            }
    return label;
}

/// Textbook Dijkstra over an explicit adjacency list built from the mask.
/// neighborhood 6 or 26; edge weight = Euclidean step length in mm.
inline std::vector<double> graph_shortest_paths(const stenoviz::BinaryVolume& mask, stenoviz::VoxelIndex seed,
                                                int neighborhood) {
    const auto d = mask.dims();
    const auto sp = mask.spacing();
    std::map<std::size_t, int> node_of;
    std::vector<std::size_t> voxel_of;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask.data()[i]) {
            node_of[i] = static_cast<int>(voxel_of.size());
            voxel_of.push_back(i);
        }
    std::vector<std::vector<std::pair<int, double>>> adj(voxel_of.size());
    for (std::size_t n = 0; n < voxel_of.size(); ++n) {
        const auto v = mask.voxel(voxel_of[n]);
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int taxicab = std::abs(dx) + std::abs(dy) + std::abs(dz);
                    if (taxicab == 0 || (neighborhood == 6 && taxicab != 1))
                        continue;
                    const int x = v.x + dx, y = v.y + dy, z = v.z + dz;
                    if (x < 0 || y < 0 || z < 0 || x >= d.x || y >= d.y || z >= d.z)
                        continue;
                    const auto j = mask.index(x, y, z);
                    if (!mask.data()[j])
                        continue;
                    const double w = std::sqrt((dx * sp.x) * (dx * sp.x) + (dy * sp.y) * (dy * sp.y) +
                                               (dz * sp.z) * (dz * sp.z));
                    adj[n].push_back({node_of[j], w});
                }
    }
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(voxel_of.size(), inf);
    std::set<std::pair<double, int>> frontier;
    const int s = node_of.at(mask.index(seed));
    dist[s] = 0.0;
    frontier.insert({0.0, s});
    while (!frontier.empty()) {
        auto [du, u] = *frontier.begin();
        frontier.erase(frontier.begin());
        for (auto [v, w] : adj[u]) {
            const double cand = du + w;
            if (cand < dist[v]) {
                frontier.erase({dist[v], v});
                dist[v] = cand;
                frontier.insert({cand, v});
            }
        }
    }
    std::vector<double> out(mask.size(), inf);
    for (std::size_t n = 0; n < voxel_of.size(); ++n)
        out[voxel_of[n]] = dist[n];
    return out;
}

/// Plain breadth-first hop counts (unit spacing, 6-neighborhood).
inline std::vector<double> bfs_hops(const stenoviz::BinaryVolume& mask, stenoviz::VoxelIndex seed) {
    std::vector<double> out(mask.size(), std::numeric_limits<double>::infinity());
    std::queue<stenoviz::VoxelIndex> q;
    out[mask.index(seed)] = 0;
    q.push(seed);
    while (!q.empty()) {
        auto v = q.front();
        q.pop();
        const int nb[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
        for (auto& o : nb) {
            stenoviz::VoxelIndex w{v.x + o[0], v.y + o[1], v.z + o[2]};
            if (!mask.contains(w) || !mask[w] || std::isfinite(out[mask.index(w)]))
                continue;
            out[mask.index(w)] = out[mask.index(v)] + 1;
            q.push(w);
        }
    }
    return out;
}

/// Erosion straight from the definition: keep x when every in-volume voxel
/// closer than radius+1 is set.
inline stenoviz::BinaryVolume erode(const stenoviz::BinaryVolume& b, int radius) {
    auto out = b.like<std::uint8_t>(0);
    const auto d = b.dims();
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                bool all = b(x, y, z) != 0;
                for (int k = 0; k < d.z && all; ++k)
                    for (int j = 0; j < d.y && all; ++j)
                        for (int i = 0; i < d.x && all; ++i) {
                            const double dist = std::hypot(i - x, j - y, k - z);
                            if (dist < radius + 1 && !b(i, j, k))
                                all = false;
                        }
                out(x, y, z) = all ? 1 : 0;
            }
    return out;
}

/// Dilation straight from the definition: set x when any voxel closer than
/// radius+1 is set.
inline stenoviz::BinaryVolume dilate(const stenoviz::BinaryVolume& b, int radius) {
    auto out = b.like<std::uint8_t>(0);
    const auto d = b.dims();
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                bool any = false;
                for (int k = 0; k < d.z && !any; ++k)
                    for (int j = 0; j < d.y && !any; ++j)
                        for (int i = 0; i < d.x && !any; ++i)
                            any = b(i, j, k) && std::hypot(i - x, j - y, k - z) < radius + 1;
                out(x, y, z) = any ? 1 : 0;
            }
    return out;
}

}  // namespace oracle
