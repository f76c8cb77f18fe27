#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "stenoviz/error.hpp"

namespace stenoviz {

struct Dims3 {
    int x = 1;
    int y = 1;
    int z = 1;

    std::size_t count() const noexcept {
        return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
    }
    friend bool operator==(const Dims3&, const Dims3&) = default;
};

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    friend bool operator==(const Vec3&, const Vec3&) = default;
};

struct VoxelIndex {
    int x = 0;
    int y = 0;
    int z = 0;

    friend bool operator==(const VoxelIndex&, const VoxelIndex&) = default;
};

/// What the scalars of a volume mean. Stored in file metadata where the
/// format allows it.
enum class ElementKind { Intensity, Probability, Binary, ComponentId };

std::string to_string(ElementKind kind);
ElementKind element_kind_from_string(const std::string& name);

template <typename T>
constexpr ElementKind default_kind() {
    if constexpr (std::is_same_v<T, std::uint8_t>)
        return ElementKind::Binary;
    else if constexpr (std::is_same_v<T, std::int32_t>)
        return ElementKind::ComponentId;
    else
        return ElementKind::Intensity;
}

/// Dense 3D grid, x fastest. Physical position of voxel (i,j,k) is
/// origin + (i*sx, j*sy, k*sz).
template <typename T>
class Volume {
public:
    using value_type = T;

    Volume() = default;

    explicit Volume(Dims3 dims, Vec3 spacing = {1.0, 1.0, 1.0}, Vec3 origin = {}, T fill = T{})
        : dims_(dims), spacing_(spacing), origin_(origin), kind_(default_kind<T>()) {
        validate_geometry(dims_, spacing_);
        data_.assign(dims_.count(), fill);
    }

    Volume(Dims3 dims, Vec3 spacing, Vec3 origin, std::vector<T> data)
        : dims_(dims), spacing_(spacing), origin_(origin), kind_(default_kind<T>()), data_(std::move(data)) {
        validate_geometry(dims_, spacing_);
        if (data_.size() != dims_.count())
            throw IntegrityError("volume data length " + std::to_string(data_.size()) +
                                 " does not match dims " + std::to_string(dims_.count()));
    }

    const Dims3& dims() const noexcept { return dims_; }
    const Vec3& spacing() const noexcept { return spacing_; }
    const Vec3& origin() const noexcept { return origin_; }
    ElementKind kind() const noexcept { return kind_; }
    void set_kind(ElementKind kind) noexcept { kind_ = kind; }
    void set_origin(Vec3 origin) noexcept { origin_ = origin; }
    void set_spacing(Vec3 spacing) {
        validate_geometry(dims_, spacing);
        spacing_ = spacing;
    }

    std::size_t size() const noexcept { return data_.size(); }
    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    std::size_t index(int x, int y, int z) const noexcept {
        return (static_cast<std::size_t>(z) * dims_.y + static_cast<std::size_t>(y)) * dims_.x +
               static_cast<std::size_t>(x);
    }
    std::size_t index(VoxelIndex v) const noexcept { return index(v.x, v.y, v.z); }

    VoxelIndex voxel(std::size_t linear) const noexcept {
        const auto plane = static_cast<std::size_t>(dims_.x) * dims_.y;
        const auto z = linear / plane;
        const auto rem = linear % plane;
        return {static_cast<int>(rem % dims_.x), static_cast<int>(rem / dims_.x), static_cast<int>(z)};
    }

    bool contains(int x, int y, int z) const noexcept {
        return x >= 0 && y >= 0 && z >= 0 && x < dims_.x && y < dims_.y && z < dims_.z;
    }
    bool contains(VoxelIndex v) const noexcept { return contains(v.x, v.y, v.z); }

    T& operator()(int x, int y, int z) noexcept { return data_[index(x, y, z)]; }
    const T& operator()(int x, int y, int z) const noexcept { return data_[index(x, y, z)]; }
    T& operator[](VoxelIndex v) noexcept { return data_[index(v)]; }
    const T& operator[](VoxelIndex v) const noexcept { return data_[index(v)]; }

    /// Same geometry, new element type, filled with `fill`.
    template <typename U>
    Volume<U> like(U fill = U{}) const {
        return Volume<U>(dims_, spacing_, origin_, fill);
    }

    bool same_geometry(const auto& other) const noexcept {
        return dims_ == other.dims() && spacing_ == other.spacing() && origin_ == other.origin();
    }

    friend bool operator==(const Volume& a, const Volume& b) {
        return a.dims_ == b.dims_ && a.spacing_ == b.spacing_ && a.origin_ == b.origin_ && a.data_ == b.data_;
    }

private:
    static void validate_geometry(const Dims3& d, const Vec3& s) {
        if (d.x < 1 || d.y < 1 || d.z < 1)
            throw ParameterError("volume dims must be >= 1");
        if (!(s.x > 0.0) || !(s.y > 0.0) || !(s.z > 0.0))
            throw ParameterError("volume spacing must be > 0");
    }

    Dims3 dims_{};
    Vec3 spacing_{1.0, 1.0, 1.0};
    Vec3 origin_{};
    ElementKind kind_ = default_kind<T>();
    std::vector<T> data_;
};

using ImageVolume = Volume<float>;
using BinaryVolume = Volume<std::uint8_t>;
using LabelVolume = Volume<std::int32_t>;

/// Reflect an index into [0, n) without repeating the edge sample
/// (… 2 1 | 0 1 2 … n-1 | n-2 …). Folds repeatedly for large offsets.
inline int reflect_index(int i, int n) noexcept {
    if (n == 1)
        return 0;
    const int period = 2 * (n - 1);
    int m = i % period;
    if (m < 0)
        m += period;
    return m < n ? m : period - m;
}

}  // namespace stenoviz
