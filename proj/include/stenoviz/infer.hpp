#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "stenoviz/unet.hpp"
#include "stenoviz/volume.hpp"

namespace stenoviz::infer {

/// Anything that maps a (n, 1, x, y, depth) patch to same-shaped
/// probabilities.
class PatchModel {
public:
    virtual ~PatchModel() = default;
    virtual nn::Tensor predict(const nn::Tensor& patch) const = 0;
    virtual int depth() const = 0;
    /// Tile offsets must be multiples of this so pooling grids line up.
    virtual int alignment() const = 0;
    /// x/y voxels of context each output depends on.
    virtual int context_radius() const = 0;
    /// Rough peak memory of one predict call.
    virtual std::size_t estimate_bytes(const nn::Shape& s) const = 0;
};

class UNetModel final : public PatchModel {
public:
    explicit UNetModel(unet::UNet net) : net_(std::move(net)) {}

    nn::Tensor predict(const nn::Tensor& patch) const override;
    int depth() const override { return net_.config().patch.z; }
    int alignment() const override { return net_.config().xy_multiple; }
    int context_radius() const override { return net_.receptive_radius_xy(); }
    std::size_t estimate_bytes(const nn::Shape& s) const override;

    const unet::UNet& net() const { return net_; }

private:
    unet::UNet net_;
};

struct TileSize {
    int x = 128;
    int y = 128;
};

struct InferOptions {
    /// Unset: one full-slice patch per placement (x/y padded to 32).
    std::optional<TileSize> tile;
    /// Only these output slices are computed; the rest stay 0. Empty = all.
    std::vector<int> z_subset;
    /// Resource error when one patch would need more than this. 0 = no cap.
    std::size_t memory_limit_bytes = std::size_t{4} << 30;
    /// Sees every raw network output before the middle slice is taken.
    std::function<void(nn::Tensor&)> output_hook;
    std::function<void(int done, int total)> progress;
};

/// One window along an axis of the padded volume and the part of it whose
/// outputs are kept.
struct Window {
    int start = 0;
    int keep_begin = 0;
    int keep_end = 0;
};

/// Windows of size `tile` covering [0, extent) with offsets that are
/// multiples of `align` and kept ranges at least `margin` from interior
/// window edges.
std::vector<Window> plan_windows(int extent, int tile, int margin, int align);

/// Stride-1 sweep along z; slice z of the result is the middle slice of
/// the patch centred on z. Output has the input's geometry.
ImageVolume infer_volume(const PatchModel& model, const ImageVolume& v, const InferOptions& opt = {});

}  // namespace stenoviz::infer
