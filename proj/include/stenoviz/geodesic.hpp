#pragma once

#include <array>
#include <cstdint>

#include <nlohmann/json.hpp>

#include "stenoviz/volume.hpp"

namespace stenoviz::geodesic {

/// Face neighbours only, or all 26 with step lengths scaled by spacing.
enum class Neighborhood { Six, TwentySix };

using DistanceField = Volume<double>;

/// Shortest in-mask path length (mm) from seed to every voxel. Voxels
/// outside the mask or unreachable stay +inf.
DistanceField constrained_distance(const BinaryVolume& mask, VoxelIndex seed,
                                   Neighborhood nb = Neighborhood::TwentySix);

/// Finite maximum of a field, lowest linear index on ties.
VoxelIndex argmax_finite(const DistanceField& d);

struct EndpointPair {
    VoxelIndex endpoint_a{};  ///< blue
    VoxelIndex endpoint_b{};  ///< red
    double span_mm = 0.0;
    /// Set when the span is short relative to the segment's extent, which
    /// is what a loop looks like to the two-sweep search.
    bool is_cyclic_suspect = false;
};

/// Two farthest-point sweeps starting from the selected voxel.
EndpointPair find_endpoints(const BinaryVolume& mask, VoxelIndex selected,
                            Neighborhood nb = Neighborhood::TwentySix);

constexpr float kOutsideMask = -1.0f;

/// Normalised distance from endpoint_a in [0, 1] on the reachable mask,
/// kOutsideMask elsewhere.
Volume<float> color_segment(const BinaryVolume& mask, const EndpointPair& pair,
                            Neighborhood nb = Neighborhood::TwentySix);

/// Blue at 0, red at 1, linear in between.
std::array<std::uint8_t, 3> blue_red(double t);

nlohmann::json summary(const EndpointPair& pair);

}  // namespace stenoviz::geodesic
