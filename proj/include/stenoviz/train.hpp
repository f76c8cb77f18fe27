#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stenoviz/unet.hpp"
#include "stenoviz/volume.hpp"

namespace stenoviz::train {

using unet::PatchSize;

/// One manually traced axial slice.
struct WeakLabel {
    std::string case_id;
    int z = 0;
    BinaryVolume label;  ///< nx x ny x 1
};

struct TrainCase {
    std::string id;
    ImageVolume image;
    std::vector<WeakLabel> labels;
};

/// Index of the supervised slice inside a patch of depth `depth` (7 for 16).
constexpr int middle_slice(int depth) { return (depth - 1) / 2; }

/// Patch, labels and loss mask, each shaped (1, 1, px, py, pz).
struct PatchSample {
    nn::Tensor patch;
    nn::Tensor label;
    nn::Tensor mask;
};

/// Crop with the window's low x/y corner at (x0, y0). Anything outside the
/// volume, in any axis, is filled by reflection.
PatchSample crop_patch_at(const ImageVolume& v, const WeakLabel& label, PatchSize size, int x0, int y0);

/// Same, with the x/y window placed uniformly at random inside the volume.
PatchSample crop_patch(const ImageVolume& v, const WeakLabel& label, PatchSize size, std::mt19937_64& rng);

struct AugmentConfig {
    int g = 5;        ///< control grid side
    double d = 10.0;  ///< max control point displacement, pixels
    double r = 20.0;  ///< max rotation, degrees

    void validate() const;
};

/// In-plane transform shared by every slice of a patch. A destination pixel
/// p samples the source at  c + R(p + D(p) - c),  D bilinear over the grid.
class Warp2D {
public:
    Warp2D(const AugmentConfig& cfg, int nx, int ny, std::mt19937_64& rng);

    /// Source coordinate for destination pixel (x, y).
    std::pair<double, double> source(double x, double y) const;
    /// Rotation only, without the grid displacement.
    std::pair<double, double> rotated(double x, double y) const;

    double angle_radians() const { return angle_; }

private:
    std::pair<double, double> displacement(double x, double y) const;

    int g_ = 2;
    int nx_ = 1;
    int ny_ = 1;
    double angle_ = 0.0;
    std::vector<double> dx_;
    std::vector<double> dy_;
};

/// Warp intensities bilinearly and labels by nearest neighbour, in place.
void augment(PatchSample& s, const AugmentConfig& cfg, std::mt19937_64& rng);
void apply_warp(PatchSample& s, const Warp2D& w);

/// Stack samples along the batch axis.
PatchSample stack(const std::vector<PatchSample>& samples);

/// Masked BCE of the model on a batch (no gradient).
double batch_loss(const unet::UNet& model, const PatchSample& batch);

struct TrainConfig {
    long iterations = 200;
    int batch = 4;
    PatchSize patch{32, 32, 16};
    bool augment = true;
    AugmentConfig aug{};
    nn::AdamConfig adam{};
    std::uint64_t seed = 1;
    int log_every = 10;
    /// 0 disables periodic checkpoints.
    int checkpoint_every = 0;
    std::filesystem::path checkpoint_dir;
};

struct LossPoint {
    long iteration = 0;
    double loss = 0.0;
    double running_mean = 0.0;
};

struct TrainResult {
    std::vector<double> losses;  ///< one per iteration run in this call
    unet::TrainerState state;
};

using LossCallback = std::function<void(const LossPoint&)>;

/// Deterministic generator for sample `sample` of iteration `iteration`.
std::mt19937_64 sample_rng(std::uint64_t seed, long iteration, int sample);

/// The mini-batch drawn at `iteration`; depends only on (seed, iteration).
PatchSample draw_batch(const std::vector<TrainCase>& data, const TrainConfig& cfg, long iteration);

/// Runs iterations [resume.iteration, cfg.iterations). Throws
/// DivergenceError when the loss stops being finite.
TrainResult train(unet::UNet& model, const std::vector<TrainCase>& data, const TrainConfig& cfg,
                  std::optional<unet::TrainerState> resume = std::nullopt, const LossCallback& on_log = {});

/// Partition case indices into groups of the given sizes after a seeded
/// shuffle. Sizes must sum to n_cases.
std::vector<std::vector<int>> split_folds(int n_cases, const std::vector<int>& sizes, std::uint64_t seed);

/// Manifest: {"cases": [{"id", "volume", "labels": [{"z", "label"}]}]};
/// relative paths resolve against the manifest's directory.
std::vector<TrainCase> load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const std::vector<TrainCase>& cases);

/// Keys: iterations, batch, patch [x,y,z], augment, g, d, r, learning_rate,
/// seed, log_every, checkpoint_every. Missing keys keep their defaults.
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

}  // namespace stenoviz::train
