#include "stenoviz/infer.hpp"

#include <algorithm>

#include "stenoviz/train.hpp"
#include "stenoviz/volume_ops.hpp"

namespace stenoviz::infer {

nn::Tensor UNetModel::predict(const nn::Tensor& patch) const {
    return net_.forward(nullptr, nn::make_var(patch))->value;
}

std::size_t UNetModel::estimate_bytes(const nn::Shape& s) const {
    const auto& cfg = net_.config();
    std::size_t total = 0;
    int x = s.x, y = s.y, z = s.z;
    for (int l = 0; l < cfg.levels; ++l) {
        // Padded input, two conv outputs and the skip stay alive per level,
        // plus the decoder's upsampled copy.
        const std::size_t vox = static_cast<std::size_t>(x + 2) * (y + 2) * (z + 2);
        total += static_cast<std::size_t>(s.n) * cfg.channels_at(l) * vox * sizeof(double) * 6;
        if (l + 1 < cfg.levels) {
            const auto& f = cfg.pool_factors[static_cast<std::size_t>(l)];
            x /= f.x;
            y /= f.y;
            z /= f.z;
        }
    }
    return total + (std::size_t{8} << 20);
}

std::vector<Window> plan_windows(int extent, int tile, int margin, int align) {
    if (tile >= extent)
        return {{0, 0, extent}};
    const int step = tile - 2 * margin;
    if (step < align || step % align != 0)
        throw ParameterError("tile of " + std::to_string(tile) + " leaves no aligned core after a margin of " +
                             std::to_string(margin) + " on each side");
    std::vector<Window> out;
    int covered = 0;
    for (int k = 0; covered < extent; ++k) {
        int start = k * step;
        const bool last = start + tile >= extent;
        if (last)
            start = ((extent - tile) / align) * align;
        if (last && start + tile < extent)
            throw ParameterError("padded extent is not aligned to the model");
        const int keep_end = last ? extent : start + tile - margin;
        out.push_back({start, covered, keep_end});
        covered = keep_end;
    }
    return out;
}

ImageVolume infer_volume(const PatchModel& model, const ImageVolume& v, const InferOptions& opt) {
    const int depth = model.depth();
    const int mid = train::middle_slice(depth);
    const auto [padded, rec] = pad_xy_to_multiple_of_32(v);
    const auto pd = padded.dims();

    int tx = pd.x, ty = pd.y;
    if (opt.tile) {
        if (opt.tile->x < 32 || opt.tile->y < 32 || opt.tile->x % 32 || opt.tile->y % 32)
            throw ParameterError("tile sizes must be positive multiples of 32");
        tx = std::min(opt.tile->x, pd.x);
        ty = std::min(opt.tile->y, pd.y);
    }
    const int align = std::max(1, model.alignment());
    const int margin = next_multiple_of(std::max(0, model.context_radius()), align);
    const auto wx = plan_windows(pd.x, tx, margin, align);
    const auto wy = plan_windows(pd.y, ty, margin, align);

    const nn::Shape shape{1, 1, tx, ty, depth};
    const std::size_t need = model.estimate_bytes(shape);
    if (opt.memory_limit_bytes && need > opt.memory_limit_bytes)
        throw ResourceError("a " + std::to_string(tx) + "x" + std::to_string(ty) + "x" + std::to_string(depth) +
                            " patch needs about " + std::to_string(need >> 20) + " MiB, over the " +
                            std::to_string(opt.memory_limit_bytes >> 20) + " MiB limit; use a smaller tile");

    std::vector<int> zs = opt.z_subset;
    if (zs.empty()) {
        zs.resize(static_cast<std::size_t>(pd.z));
        for (int z = 0; z < pd.z; ++z)
            zs[static_cast<std::size_t>(z)] = z;
    }
    for (int z : zs)
        if (z < 0 || z >= pd.z)
            throw ParameterError("slice " + std::to_string(z) + " outside the volume");

    ImageVolume out_padded(pd, padded.spacing(), padded.origin(), 0.0f);
    nn::Tensor patch(shape);
    const int total = static_cast<int>(zs.size());
    int done = 0;
    for (int z : zs) {
        for (const auto& wyy : wy)
            for (const auto& wxx : wx) {
                for (int k = 0; k < depth; ++k) {
                    const int sz = reflect_index(z - mid + k, pd.z);
                    for (int j = 0; j < ty; ++j)
                        for (int i = 0; i < tx; ++i)
                            patch.at(0, 0, i, j, k) = padded(wxx.start + i, wyy.start + j, sz);
                }
                auto pred = model.predict(patch);
                if (pred.shape() != shape)
                    throw ShapeError("model returned " + pred.shape().str() + " for a " + shape.str() + " patch");
                if (opt.output_hook)
                    opt.output_hook(pred);
                for (int y = wyy.keep_begin; y < wyy.keep_end; ++y)
                    for (int x = wxx.keep_begin; x < wxx.keep_end; ++x)
                        out_padded(x, y, z) = static_cast<float>(pred.at(0, 0, x - wxx.start, y - wyy.start, mid));
            }
        if (opt.progress)
            opt.progress(++done, total);
    }
    auto out = crop_back(out_padded, rec);
    out.set_origin(v.origin());
    out.set_kind(ElementKind::Probability);
    return out;
}

}  // namespace stenoviz::infer
