#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "stenoviz/error.hpp"

namespace stenoviz::nn {

/// (batch, channels, x, y, z); x is the fastest-varying axis in memory.
struct Shape {
    int n = 1;
    int c = 1;
    int x = 1;
    int y = 1;
    int z = 1;

    std::size_t count() const noexcept {
        return static_cast<std::size_t>(n) * c * spatial();
    }
    std::size_t spatial() const noexcept { return static_cast<std::size_t>(x) * y * z; }
    std::string str() const;

    friend bool operator==(const Shape&, const Shape&) = default;
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.count(), fill) {
        if (shape.n < 1 || shape.c < 1 || shape.x < 1 || shape.y < 1 || shape.z < 1)
            throw ShapeError("tensor extents must be >= 1, got " + shape.str());
    }
    Tensor(Shape shape, std::vector<double> values) : shape_(shape), data_(std::move(values)) {
        if (data_.size() != shape_.count())
            throw ShapeError("value count " + std::to_string(data_.size()) + " does not match shape " + shape_.str());
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    std::size_t offset(int n, int c, int x, int y, int z) const noexcept {
        return ((((static_cast<std::size_t>(n) * shape_.c + c) * shape_.z + z) * shape_.y + y) * shape_.x) + x;
    }
    double& at(int n, int c, int x, int y, int z) noexcept { return data_[offset(n, c, x, y, z)]; }
    double at(int n, int c, int x, int y, int z) const noexcept { return data_[offset(n, c, x, y, z)]; }

    /// Contiguous block of one (batch, channel) pair.
    std::span<double> channel(int n, int c) noexcept {
        return {data_.data() + offset(n, c, 0, 0, 0), shape_.spatial()};
    }
    std::span<const double> channel(int n, int c) const noexcept {
        return {data_.data() + offset(n, c, 0, 0, 0), shape_.spatial()};
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_{};
    std::vector<double> data_;
};

}  // namespace stenoviz::nn
