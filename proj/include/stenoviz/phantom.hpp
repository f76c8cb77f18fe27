#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "stenoviz/train.hpp"
#include "stenoviz/volume.hpp"

namespace stenoviz::phantom {

struct Stenosis {
    double arc_fraction = 0.5;  ///< gap centre as a fraction of the centerline length
    double gap_mm = 4.0;
};

struct PhantomSpec {
    Dims3 dims{96, 96, 64};
    Vec3 spacing{1.0, 1.0, 1.0};

    /// Explicit control points in mm (relative to the origin). When empty a
    /// random winding path is drawn.
    std::vector<Vec3> control_points;
    int random_control_points = 6;
    double step_mm = 28.0;         ///< distance between random control points
    double max_turn_deg = 60.0;    ///< max heading change between random legs

    double radius_start = 4.0;     ///< tube radius at arc 0, mm
    double radius_end = 4.0;       ///< tube radius at the far end, linear in between
    double wall_thickness = 1.5;   ///< outer shell rendered with wall intensity
    double margin_mm = 2.0;        ///< extra clearance from the volume boundary

    double background = 0.0;
    double wall = 0.8;
    double lumen = 0.6;
    double noise_sigma = 0.1;

    std::vector<Stenosis> stenoses;
    int max_attempts = 200;

    /// Throws SpecError on inconsistent values.
    void validate() const;
};

void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);

/// One connected stretch of tube between the path ends and/or gaps.
struct Piece {
    double arc_start_mm = 0.0;
    double arc_end_mm = 0.0;
    double length_mm = 0.0;
    Vec3 end_a_mm{};
    Vec3 end_b_mm{};
};

struct PhantomTruth {
    double centerline_length_mm = 0.0;
    std::vector<Vec3> centerline;  ///< uniform-arc samples, mm
    double sample_step_mm = 0.0;
    std::vector<Piece> pieces;
    std::vector<std::pair<double, double>> gaps;  ///< arc intervals removed, mm
    int attempts = 1;
};

void to_json(nlohmann::json& j, const PhantomTruth& t);

struct Phantom {
    ImageVolume image;
    BinaryVolume truth;
    PhantomTruth meta;
};

/// Rasterize a tube phantom. Random paths that leave the volume or come
/// back close to themselves are redrawn up to spec.max_attempts times.
Phantom generate(const PhantomSpec& spec, std::mt19937_64& rng);

/// Distinct z indices drawn from the slices that intersect the mask, sorted
/// ascending; each label is the mask restricted to that slice.
std::vector<train::WeakLabel> make_weak_labels(const BinaryVolume& truth, int n_slices, std::mt19937_64& rng,
                                               const std::string& case_id = "case");

/// Voxel index closest to a point in mm.
VoxelIndex nearest_voxel(const Vec3& mm, const Vec3& spacing, const Vec3& origin = {});

/// Writes image.nrrd, truth.nrrd and truth.json into dir.
void write_phantom(const Phantom& p, const std::filesystem::path& dir);

}  // namespace stenoviz::phantom
