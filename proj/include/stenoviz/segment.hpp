#pragma once

#include <vector>

#include <nlohmann/json.hpp>

#include "stenoviz/volume.hpp"

namespace stenoviz::segment {

/// 1 where prob >= t. t must lie in (0, 1).
BinaryVolume threshold(const ImageVolume& prob, double t);

/// Offsets o with |o| < radius + 1 (voxel units). Radius 1 gives the full
/// 3x3x3 neighbourhood, radius 0 the single centre voxel.
std::vector<VoxelIndex> ball_offsets(int radius);

/// Voxels outside the volume never veto an erosion and are never written by
/// a dilation, which keeps the pair adjoint and the opening idempotent.
BinaryVolume erode(const BinaryVolume& b, int radius);
BinaryVolume dilate(const BinaryVolume& b, int radius);
BinaryVolume opening(const BinaryVolume& b, int radius);

struct ComponentInfo {
    int id = 0;
    std::size_t voxels = 0;
    VoxelIndex bbox_min{};
    VoxelIndex bbox_max{};
};

struct ComponentLabeling {
    LabelVolume labels;  ///< 0 background, 1..K components
    std::vector<ComponentInfo> components;

    int count() const { return static_cast<int>(components.size()); }
};

/// 6-connected labeling; ids follow the scan order of each component's
/// first voxel.
ComponentLabeling connected_components(const BinaryVolume& b);

struct SegmentMask {
    int component_id = 0;
    BinaryVolume mask;
    VoxelIndex click{};
    VoxelIndex snapped{};  ///< the foreground voxel actually used
};

/// Component under the click, or the nearest foreground voxel within
/// snap_radius voxels (ties by scan order). Throws SelectionMiss.
SegmentMask select_segment(const ComponentLabeling& l, VoxelIndex click, double snap_radius);

/// Binary mask of one component.
BinaryVolume component_mask(const ComponentLabeling& l, int id);

/// threshold -> opening -> labeling.
ComponentLabeling postprocess(const ImageVolume& prob, double t, int open_radius);

nlohmann::json component_table(const ComponentLabeling& l);

}  // namespace stenoviz::segment
