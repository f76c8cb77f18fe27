#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "stenoviz/phantom.hpp"
#include "stenoviz/train.hpp"

using namespace stenoviz;
using namespace stenoviz::train;
namespace fs = std::filesystem;

namespace {

// Voxel value encodes its own z so crops can be traced back.
ImageVolume z_coded(Dims3 d) {
    ImageVolume v(d);
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x)
                v(x, y, z) = static_cast<float>(1000 * z + (x + y) % 7);
    return v;
}

WeakLabel full_label(Dims3 d, int z) {
    WeakLabel wl{"c", z, BinaryVolume({d.x, d.y, 1})};
    for (int y = 0; y < d.y; ++y)
        for (int x = 0; x < d.x; ++x)
            wl.label(x, y, 0) = (x / 4 + y / 4) % 2;
    return wl;
}

unet::UNetConfig tiny_config() {
    unet::UNetConfig c;
    c.levels = 2;
    c.base_channels = 2;
    c.pool_factors = {{2, 2, 2}};
    c.patch = {32, 32, 16};
    return c;
}

std::vector<TrainCase> phantom_cases(int n, std::uint64_t seed) {
    std::vector<TrainCase> out;
    phantom::PhantomSpec spec;
    spec.dims = {64, 64, 48};
    spec.step_mm = 20;
    spec.random_control_points = 5;
    for (int i = 0; i < n; ++i) {
        std::mt19937_64 rng(seed + i);
        auto p = phantom::generate(spec, rng);
        const std::string id = "p" + std::to_string(i);
        out.push_back({id, std::move(p.image), phantom::make_weak_labels(p.truth, 7, rng, id)});
    }
    return out;
}

}  // namespace

TEST_CASE("crop places the labeled slice at index 7") {
    const Dims3 d{70, 64, 80};
    const auto v = z_coded(d);
    const auto s = crop_patch_at(v, full_label(d, 50), {32, 32, 16}, 5, 9);
    CHECK(s.patch.shape() == nn::Shape{1, 1, 32, 32, 16});
    for (int k = 0; k < 16; ++k)
        CHECK(std::floor(s.patch.at(0, 0, 3, 4, k) / 1000) == 43 + k);
    CHECK(s.patch.at(0, 0, 3, 4, 7) == v(8, 13, 50));
    CHECK(std::accumulate(s.mask.values().begin(), s.mask.values().end(), 0.0) == 32 * 32);
    for (int k = 0; k < 16; ++k)
        CHECK(s.mask.at(0, 0, 0, 0, k) == (k == 7 ? 1.0 : 0.0));
    CHECK(s.label.at(0, 0, 3, 4, 7) == full_label(d, 50).label(8, 13, 0));

    // Near the bottom the missing slices come from reflection.
    const auto low = crop_patch_at(v, full_label(d, 3), {32, 32, 16}, 0, 0);
    const int expect[16] = {4, 3, 2, 1, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
    for (int k = 0; k < 16; ++k)
        CHECK(std::floor(low.patch.at(0, 0, 0, 0, k) / 1000) == expect[k]);

    // A volume narrower than the patch is reflected in x/y as well.
    const auto small = z_coded({20, 40, 30});
    CHECK_NOTHROW(crop_patch_at(small, full_label({20, 40, 30}, 10), {32, 32, 16}, 0, 0));

    std::mt19937_64 rng(1);
    CHECK_THROWS_AS(crop_patch(v, full_label(d, 50), {48, 32, 16}, rng), ParameterError);
    CHECK_THROWS_AS(crop_patch(v, full_label(d, 80), {32, 32, 16}, rng), ParameterError);
}

TEST_CASE("zero-magnitude augmentation is the identity") {
    const Dims3 d{64, 64, 40};
    std::mt19937_64 rng(2);
    const auto s = crop_patch(z_coded(d), full_label(d, 20), {64, 32, 16}, rng);
    auto t = s;
    augment(t, {5, 0.0, 0.0}, rng);
    CHECK(t.patch == s.patch);
    CHECK(t.label == s.label);
}

TEST_CASE("grid displacement stays within d*sqrt(2) of the rotated position") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Warp2D w({5, 10.0, 20.0}, 64, 32, rng);
        CHECK(std::abs(w.angle_radians()) <= 20.0 * M_PI / 180.0);
        double worst = 0;
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 64; ++x) {
                const auto [sx, sy] = w.source(x, y);
                const auto [rx, ry] = w.rotated(x, y);
                worst = std::max(worst, std::hypot(sx - rx, sy - ry));
            }
        CHECK(worst <= 10.0 * std::sqrt(2.0) + 1e-9);
        CHECK(worst > 0.0);
    }
    CHECK_THROWS_AS(AugmentConfig({1, 1, 1}).validate(), ParameterError);
    CHECK_THROWS_AS(AugmentConfig({5, -1, 1}).validate(), ParameterError);
    CHECK_THROWS_AS(AugmentConfig({5, 1, 180}).validate(), ParameterError);
}

TEST_CASE("augmentation keeps labels binary and the patch shape") {
    const Dims3 d{64, 64, 40};
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        auto s = crop_patch(z_coded(d), full_label(d, 20), {32, 64, 16}, rng);
        const auto mask = s.mask;
        augment(s, {5, 10, 20}, rng);
        CHECK(s.patch.shape() == nn::Shape{1, 1, 32, 64, 16});
        CHECK(s.mask == mask);
        for (double v : s.label.values())
            REQUIRE((v == 0.0 || v == 1.0));
    }
}

TEST_CASE("a pointwise network gets no gradient off the labeled slice") {
    const Dims3 d{40, 40, 30};
    std::mt19937_64 rng(5);
    const auto s = crop_patch(z_coded(d), full_label(d, 12), {32, 32, 16}, rng);
    auto x = nn::make_var(s.patch, true);
    for (double& v : x->value.values())
        v = v / 30000.0;
    auto conv = nn::make_conv_params(1, 1, 1);
    conv.weight->value.fill(0.7);
    conv.bias->value.fill(-0.1);
    nn::Tape tape;
    auto loss = nn::masked_bce(&tape, nn::sigmoid(&tape, nn::conv3d(&tape, x, conv)), s.label, s.mask);
    tape.backward(loss);
    for (int k = 0; k < 16; ++k) {
        bool zero = true;
        for (int y = 0; y < 32; ++y)
            for (int xx = 0; xx < 32; ++xx)
                zero = zero && x->grad.at(0, 0, xx, y, k) == 0.0;
        CHECK(zero == (k != 7));
    }
}

TEST_CASE("labels off the middle slice never reach the loss") {
    unet::UNet model(tiny_config());
    model.initialize(6);
    const Dims3 d{48, 48, 30};
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 20; ++trial) {
        auto batch = stack({crop_patch(z_coded(d), full_label(d, 15), {32, 32, 16}, rng),
                            crop_patch(z_coded(d), full_label(d, 4), {32, 32, 16}, rng)});
        for (double& v : batch.patch.values())
            v /= 30000.0;
        const double before = batch_loss(model, batch);
        for (int n = 0; n < 2; ++n)
            for (int k = 0; k < 16; ++k)
                if (k != 7)
                    for (int y = 0; y < 32; ++y)
                        for (int x = 0; x < 32; ++x)
                            batch.label.at(n, 0, x, y, k) = u(rng) < 0.5 ? 1.0 : 0.0;
        CHECK(batch_loss(model, batch) == before);
    }
}

TEST_CASE("cross-validation folds partition the cases") {
    const auto folds = split_folds(7, {2, 2, 3}, 11);
    REQUIRE(folds.size() == 3);
    CHECK(folds[0].size() == 2);
    CHECK(folds[1].size() == 2);
    CHECK(folds[2].size() == 3);
    std::set<int> seen;
    for (const auto& f : folds)
        for (int c : f)
            CHECK(seen.insert(c).second);
    CHECK(seen.size() == 7);
    CHECK(split_folds(7, {2, 2, 3}, 11) == folds);
    CHECK_THROWS_AS(split_folds(7, {2, 2, 2}, 1), ParameterError);
}

TEST_CASE("training is deterministic and resumable") {
    const auto data = phantom_cases(2, 100);
    TrainConfig cfg;
    cfg.iterations = 6;
    cfg.batch = 2;
    cfg.seed = 21;
    cfg.checkpoint_every = 3;
    cfg.checkpoint_dir = fs::temp_directory_path() / "stenoviz_train_ckpt";
    fs::remove_all(cfg.checkpoint_dir);

    unet::UNet a(tiny_config()), b(tiny_config());
    a.initialize(1);
    b.initialize(1);
    const auto ra = train::train(a, data, cfg);
    const auto rb = train::train(b, data, cfg);
    REQUIRE(ra.losses.size() == 6);
    CHECK(ra.losses == rb.losses);

    const auto ckpt = unet::load_checkpoint(cfg.checkpoint_dir / "iter_3.ckpt");
    REQUIRE(ckpt.trainer);
    CHECK(ckpt.trainer->iteration == 3);
    auto resumed = unet::model_from_checkpoint(ckpt);
    const auto rc = train::train(resumed, data, cfg, ckpt.trainer);
    REQUIRE(rc.losses.size() == 3);
    for (int i = 0; i < 3; ++i)
        CHECK(rc.losses[i] == ra.losses[3 + i]);
}

TEST_CASE("a non-finite loss aborts with the iteration index") {
    const auto data = phantom_cases(1, 300);
    unet::UNet m(tiny_config());
    m.initialize(2);
    m.head().bias->value.fill(std::nan(""));
    TrainConfig cfg;
    cfg.iterations = 3;
    cfg.batch = 1;
    try {
        train::train(m, data, cfg);
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        CHECK(e.iteration() == 0);
    }
    CHECK_THROWS_AS(train::train(m, {}, cfg), ParameterError);
}

TEST_CASE("manifest round-trip") {
    const auto data = phantom_cases(2, 400);
    const auto dir = fs::temp_directory_path() / "stenoviz_manifest";
    fs::remove_all(dir);
    save_manifest(dir / "manifest.json", data);
    const auto back = load_manifest(dir / "manifest.json");
    REQUIRE(back.size() == 2);
    CHECK(back[1].id == data[1].id);
    CHECK(back[1].image == data[1].image);
    REQUIRE(back[1].labels.size() == 7);
    CHECK(back[1].labels[3].z == data[1].labels[3].z);
    CHECK(back[1].labels[3].label.data()[100] == data[1].labels[3].label.data()[100]);
}

TEST_CASE("desk training on one phantom lowers the loss") {
    auto data = phantom_cases(1, 500);
    unet::UNet m(unet::UNetConfig::desk());
    m.initialize(3);
    TrainConfig cfg;
    cfg.iterations = 200;
    cfg.batch = 1;
    cfg.seed = 5;
    const auto r = train::train(m, data, cfg);
    auto mean = [&](std::size_t from, std::size_t to) {
        return std::accumulate(r.losses.begin() + from, r.losses.begin() + to, 0.0) / static_cast<double>(to - from);
    };
    MESSAGE("first 20 mean " << mean(0, 20) << ", last 20 mean " << mean(180, 200));
    CHECK(mean(180, 200) < mean(0, 20));
}
