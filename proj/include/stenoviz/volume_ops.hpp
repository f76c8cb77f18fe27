#pragma once

#include <algorithm>
#include <cmath>

#include "stenoviz/volume.hpp"

namespace stenoviz {

/// Trilinear sample at continuous voxel coordinates. Coordinates are clamped
/// to the grid; integer coordinates return the stored value exactly.
template <typename T>
double sample_trilinear(const Volume<T>& v, double x, double y, double z) {
    const auto& d = v.dims();
    auto split = [](double c, int n, int& i0, int& i1, double& f) {
        c = std::clamp(c, 0.0, static_cast<double>(n - 1));
        const double fl = std::floor(c);
        i0 = static_cast<int>(fl);
        i1 = std::min(i0 + 1, n - 1);
        f = c - fl;
    };
    int x0, x1, y0, y1, z0, z1;
    double fx, fy, fz;
    split(x, d.x, x0, x1, fx);
    split(y, d.y, y0, y1, fy);
    split(z, d.z, z0, z1, fz);

    auto lerp = [](double a, double b, double f) { return f == 0.0 ? a : a + (b - a) * f; };
    auto at = [&](int i, int j, int k) { return static_cast<double>(v(i, j, k)); };

    const double c00 = lerp(at(x0, y0, z0), at(x1, y0, z0), fx);
    const double c10 = lerp(at(x0, y1, z0), at(x1, y1, z0), fx);
    const double c01 = lerp(at(x0, y0, z1), at(x1, y0, z1), fx);
    const double c11 = lerp(at(x0, y1, z1), at(x1, y1, z1), fx);
    return lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz);
}

/// Number of samples at spacing `target` that fit in the sampled extent
/// (n-1)*s without extrapolating past the last input voxel.
inline int resampled_count(int n, double s, double target) {
    const double steps = (static_cast<double>(n - 1) * s) / target;
    return static_cast<int>(std::floor(steps + 1e-6)) + 1;
}

/// Trilinear resampling onto an isotropic grid with spacing `target`.
template <typename T>
Volume<T> resample_isotropic(const Volume<T>& v, double target) {
    if (!(target > 0.0))
        throw ParameterError("target spacing must be > 0");
    const auto& s = v.spacing();
    const Dims3 out_dims{resampled_count(v.dims().x, s.x, target), resampled_count(v.dims().y, s.y, target),
                         resampled_count(v.dims().z, s.z, target)};
    Volume<T> out(out_dims, {target, target, target}, v.origin());
    out.set_kind(v.kind());

    const double rx = target / s.x;
    const double ry = target / s.y;
    const double rz = target / s.z;
    for (int k = 0; k < out_dims.z; ++k)
        for (int j = 0; j < out_dims.y; ++j)
            for (int i = 0; i < out_dims.x; ++i) {
                const double value = sample_trilinear(v, i * rx, j * ry, k * rz);
                if constexpr (std::is_integral_v<T>)
                    out(i, j, k) = static_cast<T>(std::lround(value));
                else
                    out(i, j, k) = static_cast<T>(value);
            }
    return out;
}

/// Default isotropic target: the finest input spacing.
template <typename T>
double default_isotropic_spacing(const Volume<T>& v) {
    const auto& s = v.spacing();
    return std::min({s.x, s.y, s.z});
}

struct PaddingRecord {
    int before_x = 0;
    int after_x = 0;
    int before_y = 0;
    int after_y = 0;

    friend bool operator==(const PaddingRecord&, const PaddingRecord&) = default;
};

inline int next_multiple_of(int n, int m) { return ((n + m - 1) / m) * m; }

/// Reflect-pad x and y by explicit amounts; z untouched. Origin shifts so
/// the original voxels keep their physical positions.
template <typename T>
Volume<T> reflect_pad_xy(const Volume<T>& v, const PaddingRecord& pad) {
    const auto& d = v.dims();
    const Dims3 out_dims{d.x + pad.before_x + pad.after_x, d.y + pad.before_y + pad.after_y, d.z};
    const Vec3 origin{v.origin().x - pad.before_x * v.spacing().x, v.origin().y - pad.before_y * v.spacing().y,
                      v.origin().z};
    Volume<T> out(out_dims, v.spacing(), origin);
    out.set_kind(v.kind());
    for (int k = 0; k < out_dims.z; ++k)
        for (int j = 0; j < out_dims.y; ++j) {
            const int sj = reflect_index(j - pad.before_y, d.y);
            for (int i = 0; i < out_dims.x; ++i)
                out(i, j, k) = v(reflect_index(i - pad.before_x, d.x), sj, k);
        }
    return out;
}

/// Pad x/y up to the next multiple of 32 by reflection, split evenly
/// before/after (extra voxel after).
template <typename T>
std::pair<Volume<T>, PaddingRecord> pad_xy_to_multiple_of_32(const Volume<T>& v) {
    const auto& d = v.dims();
    const int px = next_multiple_of(d.x, 32) - d.x;
    const int py = next_multiple_of(d.y, 32) - d.y;
    const PaddingRecord rec{px / 2, px - px / 2, py / 2, py - py / 2};
    return {reflect_pad_xy(v, rec), rec};
}

template <typename T>
Volume<T> crop_back(const Volume<T>& padded, const PaddingRecord& rec) {
    const auto& d = padded.dims();
    const Dims3 out_dims{d.x - rec.before_x - rec.after_x, d.y - rec.before_y - rec.after_y, d.z};
    if (out_dims.x < 1 || out_dims.y < 1)
        throw ParameterError("padding record larger than volume");
    const Vec3 origin{padded.origin().x + rec.before_x * padded.spacing().x,
                      padded.origin().y + rec.before_y * padded.spacing().y, padded.origin().z};
    Volume<T> out(out_dims, padded.spacing(), origin);
    out.set_kind(padded.kind());
    for (int k = 0; k < out_dims.z; ++k)
        for (int j = 0; j < out_dims.y; ++j)
            for (int i = 0; i < out_dims.x; ++i)
                out(i, j, k) = padded(i + rec.before_x, j + rec.before_y, k);
    return out;
}

/// Extract the axial slice z as a single-slice volume.
template <typename T>
Volume<T> axial_slice(const Volume<T>& v, int z) {
    if (z < 0 || z >= v.dims().z)
        throw ParameterError("slice index out of range");
    Volume<T> out({v.dims().x, v.dims().y, 1}, v.spacing(),
                  {v.origin().x, v.origin().y, v.origin().z + z * v.spacing().z});
    out.set_kind(v.kind());
    const std::size_t plane = static_cast<std::size_t>(v.dims().x) * v.dims().y;
    std::copy_n(v.data().begin() + static_cast<std::ptrdiff_t>(plane * z), plane, out.data().begin());
    return out;
}

}  // namespace stenoviz
