#include "stenoviz/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>

#include <png.h>

#include "stenoviz/geodesic.hpp"

namespace stenoviz::render {

std::string encode_png(const RgbImage& img) {
    if (img.width < 1 || img.height < 1)
        throw ParameterError("empty image");
    png_image pi{};
    pi.version = PNG_IMAGE_VERSION;
    pi.width = static_cast<png_uint_32>(img.width);
    pi.height = static_cast<png_uint_32>(img.height);
    pi.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&pi, nullptr, &size, 0, img.pixels.data(), 0, nullptr))
        throw ResourceError(std::string("png encoding failed: ") + pi.message);
    std::string out(size, '\0');
    if (!png_image_write_to_memory(&pi, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
        throw ResourceError(std::string("png encoding failed: ") + pi.message);
    out.resize(size);
    return out;
}

RgbImage decode_png(const std::string& bytes) {
    png_image pi{};
    pi.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&pi, bytes.data(), bytes.size()))
        throw ParseError(std::string("bad png: ") + pi.message, 0);
    pi.format = PNG_FORMAT_RGB;
    RgbImage img(static_cast<int>(pi.width), static_cast<int>(pi.height));
    if (!png_image_finish_read(&pi, nullptr, img.pixels.data(), 0, nullptr)) {
        png_image_free(&pi);
        throw ParseError(std::string("bad png: ") + pi.message, 0);
    }
    return img;
}

Window full_range(const ImageVolume& v) {
    const auto [lo, hi] = std::minmax_element(v.data().begin(), v.data().end());
    return {*lo, *hi > *lo ? *hi : *lo + 1.0f};
}

RgbImage gray_slice(const ImageVolume& v, int z, Window w) {
    if (z < 0 || z >= v.dims().z)
        throw ParameterError("slice " + std::to_string(z) + " outside the volume");
    RgbImage img(v.dims().x, v.dims().y);
    for (int y = 0; y < v.dims().y; ++y)
        for (int x = 0; x < v.dims().x; ++x) {
            const double t = std::clamp((v(x, y, z) - w.lo) / (w.hi - w.lo), 0.0f, 1.0f);
            const auto g = static_cast<std::uint8_t>(std::lround(255 * t));
            std::fill_n(img.at(x, y), 3, g);
        }
    return img;
}

RgbImage label_slice(const LabelVolume& l, int z) {
    if (z < 0 || z >= l.dims().z)
        throw ParameterError("slice " + std::to_string(z) + " outside the volume");
    static const std::uint8_t palette[8][3] = {{230, 25, 75},  {60, 180, 75},  {255, 225, 25}, {0, 130, 200},
                                               {245, 130, 48}, {145, 30, 180}, {70, 240, 240}, {240, 50, 230}};
    RgbImage img(l.dims().x, l.dims().y);
    for (int y = 0; y < l.dims().y; ++y)
        for (int x = 0; x < l.dims().x; ++x)
            if (const int id = l(x, y, z); id > 0)
                std::memcpy(img.at(x, y), palette[(id - 1) % 8], 3);
    return img;
}

void blend_coloring(RgbImage& base, const Volume<float>& field, int z, double alpha) {
    if (field.dims().x != base.width || field.dims().y != base.height)
        throw ShapeError("coloring does not match the slice size");
    for (int y = 0; y < base.height; ++y)
        for (int x = 0; x < base.width; ++x) {
            const float t = field(x, y, z);
            if (t < 0)
                continue;
            const auto c = geodesic::blue_red(t);
            auto* p = base.at(x, y);
            for (int k = 0; k < 3; ++k)
                p[k] = static_cast<std::uint8_t>(std::lround((1 - alpha) * p[k] + alpha * c[k]));
        }
}

Mesh surface_nets(const BinaryVolume& mask, const Volume<float>* field) {
    const auto d = mask.dims();
    if (field && field->dims() != d)
        throw ShapeError("field does not match the mask");
    auto inside = [&](int x, int y, int z) { return mask.contains(x, y, z) && mask(x, y, z) != 0; };
    const auto sp = mask.spacing();
    const auto og = mask.origin();

    // Cell (i,j,k) spans voxel centres i..i+1 etc; cells run from -1 so the
    // border is closed.
    std::map<std::array<int, 3>, int> cell_vertex;
    Mesh m;
    auto vertex = [&](int i, int j, int k) {
        const std::array<int, 3> key{i, j, k};
        if (auto it = cell_vertex.find(key); it != cell_vertex.end())
            return it->second;
        double sx = 0, sy = 0, sz = 0, fsum = 0;
        int crossings = 0, nin = 0;
        // Each of the 12 cell edges with a sign change contributes its
        // midpoint (iso 0.5 on a 0/1 field).
        for (int a = 0; a < 8; ++a) {
            const int ax = a & 1, ay = (a >> 1) & 1, az = (a >> 2) & 1;
            const bool ia = inside(i + ax, j + ay, k + az);
            if (ia) {
                ++nin;
                if (field)
                    fsum += (*field)(i + ax, j + ay, k + az);
            }
            for (int axis = 0; axis < 3; ++axis) {
                if ((a >> axis) & 1)
                    continue;
                const int b = a | (1 << axis);
                const int bx = b & 1, by = (b >> 1) & 1, bz = (b >> 2) & 1;
                if (ia != inside(i + bx, j + by, k + bz)) {
                    sx += (ax + bx) * 0.5;
                    sy += (ay + by) * 0.5;
                    sz += (az + bz) * 0.5;
                    ++crossings;
                }
            }
        }
        const int id = static_cast<int>(m.vertices.size());
        m.vertices.push_back({og.x + (i + sx / crossings) * sp.x, og.y + (j + sy / crossings) * sp.y,
                              og.z + (k + sz / crossings) * sp.z});
        if (field)
            m.values.push_back(static_cast<float>(fsum / nin));
        cell_vertex.emplace(key, id);
        return id;
    };

    // Every voxel pair differing along an axis gets the quad of the four
    // cells around that edge.
    for (int z = -1; z < d.z; ++z)
        for (int y = -1; y < d.y; ++y)
            for (int x = -1; x < d.x; ++x) {
                const bool here = inside(x, y, z);
                for (int axis = 0; axis < 3; ++axis) {
                    const int nx = x + (axis == 0), ny = y + (axis == 1), nz = z + (axis == 2);
                    const bool there = inside(nx, ny, nz);
                    if (here == there)
                        continue;
                    // Cells sharing the edge from (x,y,z) to its neighbour.
                    std::array<std::array<int, 3>, 4> c;
                    const int u = (axis + 1) % 3, w = (axis + 2) % 3;
                    const std::array<int, 3> p{x, y, z};
                    const int du[4] = {0, -1, -1, 0}, dw[4] = {0, 0, -1, -1};
                    for (int q = 0; q < 4; ++q) {
                        auto cc = p;
                        cc[u] += du[q];
                        cc[w] += dw[q];
                        c[q] = cc;
                    }
                    std::array<int, 4> quad;
                    for (int q = 0; q < 4; ++q)
                        quad[q] = vertex(c[q][0], c[q][1], c[q][2]);
                    // Outward normal points from inside to outside.
                    if (there)
                        std::swap(quad[1], quad[3]);
                    m.quads.push_back(quad);
                }
            }
    return m;
}

nlohmann::json to_json(const Mesh& m) {
    nlohmann::json j;
    j["vertices"] = m.vertices;
    j["quads"] = m.quads;
    if (!m.values.empty())
        j["values"] = m.values;
    return j;
}

}  // namespace stenoviz::render
