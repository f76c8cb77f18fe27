#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stenoviz/volume.hpp"

namespace stenoviz::render {

/// 8-bit RGB image, row-major, top row first.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // width*height*3

    RgbImage() = default;
    RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}
    std::uint8_t* at(int x, int y) { return &pixels[(static_cast<std::size_t>(y) * width + x) * 3]; }
    const std::uint8_t* at(int x, int y) const { return &pixels[(static_cast<std::size_t>(y) * width + x) * 3]; }
};

std::string encode_png(const RgbImage& img);
/// Inverse of encode_png for the images it writes (8-bit RGB, any filter).
RgbImage decode_png(const std::string& bytes);

/// Linear window [lo, hi] -> gray.
struct Window {
    float lo = 0;
    float hi = 1;
};
Window full_range(const ImageVolume& v);

RgbImage gray_slice(const ImageVolume& v, int z, Window w);
/// Component ids through a fixed palette, background black.
RgbImage label_slice(const LabelVolume& l, int z);
/// Blend blue->red over `base` where the field is inside its mask.
void blend_coloring(RgbImage& base, const Volume<float>& field, int z, double alpha);

struct Mesh {
    std::vector<std::array<double, 3>> vertices;  // mm
    std::vector<std::array<int, 4>> quads;         // outward by right-hand rule
    std::vector<float> values;                     // per vertex, optional
};

/// Surface nets at iso 0.5 around the mask; voxels outside the volume count
/// as background so the surface is closed. With a field, each vertex takes
/// the mean field value of the inside voxels of its cell.
Mesh surface_nets(const BinaryVolume& mask, const Volume<float>* field = nullptr);

nlohmann::json to_json(const Mesh& m);

}  // namespace stenoviz::render
