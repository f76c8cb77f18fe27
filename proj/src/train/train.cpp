#include "stenoviz/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "stenoviz/volume_io.hpp"

namespace stenoviz::train {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

void check_patch_size(PatchSize size) {
    if (size.x < 32 || size.y < 32 || size.x % 32 != 0 || size.y % 32 != 0)
        throw ParameterError("patch x/y must be positive multiples of 32, got " + std::to_string(size.x) + "x" +
                             std::to_string(size.y));
    if (size.z < 1)
        throw ParameterError("patch depth must be positive");
}

double bilinear(const double* plane, int nx, int ny, double x, double y) {
    const double fx0 = std::floor(x), fy0 = std::floor(y);
    const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
    const double fx = x - fx0, fy = y - fy0;
    const int xa = reflect_index(x0, nx), xb = reflect_index(x0 + 1, nx);
    const int ya = reflect_index(y0, ny), yb = reflect_index(y0 + 1, ny);
    auto at = [&](int i, int j) { return plane[static_cast<std::size_t>(j) * nx + i]; };
    auto lerp = [](double a, double b, double f) { return f == 0.0 ? a : a + (b - a) * f; };
    return lerp(lerp(at(xa, ya), at(xb, ya), fx), lerp(at(xa, yb), at(xb, yb), fx), fy);
}

}  // namespace

PatchSample crop_patch_at(const ImageVolume& v, const WeakLabel& label, PatchSize size, int x0, int y0) {
    check_patch_size(size);
    const auto d = v.dims();
    if (label.z < 0 || label.z >= d.z)
        throw ParameterError("labeled slice " + std::to_string(label.z) + " outside volume depth " +
                             std::to_string(d.z));
    if (label.label.dims().x != d.x || label.label.dims().y != d.y)
        throw ShapeError("label image does not match the volume's x/y extent");

    const nn::Shape shape{1, 1, size.x, size.y, size.z};
    PatchSample s{nn::Tensor(shape), nn::Tensor(shape), nn::Tensor(shape)};
    const int mid = middle_slice(size.z);
    for (int k = 0; k < size.z; ++k) {
        const int sz = reflect_index(label.z - mid + k, d.z);
        for (int j = 0; j < size.y; ++j) {
            const int sy = reflect_index(y0 + j, d.y);
            for (int i = 0; i < size.x; ++i)
                s.patch.at(0, 0, i, j, k) = v(reflect_index(x0 + i, d.x), sy, sz);
        }
    }
    for (int j = 0; j < size.y; ++j) {
        const int sy = reflect_index(y0 + j, d.y);
        for (int i = 0; i < size.x; ++i) {
            s.label.at(0, 0, i, j, mid) = label.label(reflect_index(x0 + i, d.x), sy, 0) ? 1.0 : 0.0;
            s.mask.at(0, 0, i, j, mid) = 1.0;
        }
    }
    return s;
}

PatchSample crop_patch(const ImageVolume& v, const WeakLabel& label, PatchSize size, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> ux(0, std::max(0, v.dims().x - size.x));
    std::uniform_int_distribution<int> uy(0, std::max(0, v.dims().y - size.y));
    const int x0 = ux(rng);
    const int y0 = uy(rng);
    return crop_patch_at(v, label, size, x0, y0);
}

void AugmentConfig::validate() const {
    if (g < 2)
        throw ParameterError("augmentation grid side g must be >= 2");
    if (!(d >= 0.0))
        throw ParameterError("augmentation displacement d must be >= 0");
    if (!(r >= 0.0 && r < 180.0))
        throw ParameterError("augmentation rotation r must be in [0, 180)");
}

Warp2D::Warp2D(const AugmentConfig& cfg, int nx, int ny, std::mt19937_64& rng) : g_(cfg.g), nx_(nx), ny_(ny) {
    cfg.validate();
    std::uniform_real_distribution<double> disp(-cfg.d, cfg.d);
    const auto n = static_cast<std::size_t>(g_) * g_;
    dx_.resize(n);
    dy_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        dx_[i] = cfg.d > 0 ? disp(rng) : 0.0;
        dy_[i] = cfg.d > 0 ? disp(rng) : 0.0;
    }
    std::uniform_real_distribution<double> rot(-cfg.r, cfg.r);
    angle_ = cfg.r > 0 ? rot(rng) * std::numbers::pi / 180.0 : 0.0;
}

std::pair<double, double> Warp2D::displacement(double x, double y) const {
    auto grid_coord = [this](double p, int n) {
        const double u = n > 1 ? p * (g_ - 1) / (n - 1) : 0.0;
        const double c = std::clamp(u, 0.0, static_cast<double>(g_ - 1));
        const int i = std::min(static_cast<int>(c), g_ - 2);
        return std::pair{i, c - i};
    };
    const auto [i, fx] = grid_coord(x, nx_);
    const auto [j, fy] = grid_coord(y, ny_);
    auto interp = [&](const std::vector<double>& f) {
        auto at = [&](int a, int b) { return f[static_cast<std::size_t>(b) * g_ + a]; };
        const double lo = at(i, j) * (1 - fx) + at(i + 1, j) * fx;
        const double hi = at(i, j + 1) * (1 - fx) + at(i + 1, j + 1) * fx;
        return lo * (1 - fy) + hi * fy;
    };
    return {interp(dx_), interp(dy_)};
}

std::pair<double, double> Warp2D::rotated(double x, double y) const {
    const double cx = (nx_ - 1) / 2.0, cy = (ny_ - 1) / 2.0;
    const double c = std::cos(angle_), s = std::sin(angle_);
    const double px = x - cx, py = y - cy;
    return {cx + c * px - s * py, cy + s * px + c * py};
}

std::pair<double, double> Warp2D::source(double x, double y) const {
    const auto [ddx, ddy] = displacement(x, y);
    return rotated(x + ddx, y + ddy);
}

void apply_warp(PatchSample& s, const Warp2D& w) {
    const auto shape = s.patch.shape();
    const int nx = shape.x, ny = shape.y;
    const std::size_t plane = static_cast<std::size_t>(nx) * ny;
    std::vector<std::pair<double, double>> src(plane);
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i)
            src[static_cast<std::size_t>(j) * nx + i] = w.source(i, j);

    std::vector<double> scratch(plane);
    for (int n = 0; n < shape.n; ++n)
        for (int k = 0; k < shape.z; ++k) {
            double* img = s.patch.data() + s.patch.offset(n, 0, 0, 0, k);
            std::copy(img, img + plane, scratch.begin());
            for (std::size_t p = 0; p < plane; ++p)
                img[p] = bilinear(scratch.data(), nx, ny, src[p].first, src[p].second);

            double* lab = s.label.data() + s.label.offset(n, 0, 0, 0, k);
            std::copy(lab, lab + plane, scratch.begin());
            for (std::size_t p = 0; p < plane; ++p) {
                const int sx = reflect_index(static_cast<int>(std::lround(src[p].first)), nx);
                const int sy = reflect_index(static_cast<int>(std::lround(src[p].second)), ny);
                lab[p] = scratch[static_cast<std::size_t>(sy) * nx + sx];
            }
        }
}

void augment(PatchSample& s, const AugmentConfig& cfg, std::mt19937_64& rng) {
    const Warp2D w(cfg, s.patch.shape().x, s.patch.shape().y, rng);
    apply_warp(s, w);
}

PatchSample stack(const std::vector<PatchSample>& samples) {
    if (samples.empty())
        throw ParameterError("cannot stack an empty batch");
    auto shape = samples.front().patch.shape();
    for (const auto& s : samples)
        if (s.patch.shape() != shape)
            throw ShapeError("batch samples differ in shape");
    const std::size_t per = shape.count();
    shape.n = static_cast<int>(samples.size());
    PatchSample out{nn::Tensor(shape), nn::Tensor(shape), nn::Tensor(shape)};
    for (std::size_t b = 0; b < samples.size(); ++b) {
        std::copy_n(samples[b].patch.data(), per, out.patch.data() + b * per);
        std::copy_n(samples[b].label.data(), per, out.label.data() + b * per);
        std::copy_n(samples[b].mask.data(), per, out.mask.data() + b * per);
    }
    return out;
}

double batch_loss(const unet::UNet& model, const PatchSample& batch) {
    const auto p = model.forward(nullptr, nn::make_var(batch.patch));
    return nn::masked_bce_value(p->value, batch.label, batch.mask);
}

std::mt19937_64 sample_rng(std::uint64_t seed, long iteration, int sample) {
    std::uint64_t h = splitmix(seed);
    h = splitmix(h ^ static_cast<std::uint64_t>(iteration));
    h = splitmix(h ^ static_cast<std::uint64_t>(sample));
    return std::mt19937_64(h);
}

PatchSample draw_batch(const std::vector<TrainCase>& data, const TrainConfig& cfg, long iteration) {
    std::vector<std::pair<std::size_t, std::size_t>> slots;
    for (std::size_t c = 0; c < data.size(); ++c)
        for (std::size_t l = 0; l < data[c].labels.size(); ++l)
            slots.push_back({c, l});
    if (slots.empty())
        throw ParameterError("training data holds no labeled slices");

    std::vector<PatchSample> samples;
    samples.reserve(static_cast<std::size_t>(cfg.batch));
    for (int b = 0; b < cfg.batch; ++b) {
        auto rng = sample_rng(cfg.seed, iteration, b);
        std::uniform_int_distribution<std::size_t> pick(0, slots.size() - 1);
        const auto [c, l] = slots[pick(rng)];
        auto s = crop_patch(data[c].image, data[c].labels[l], cfg.patch, rng);
        if (cfg.augment)
            augment(s, cfg.aug, rng);
        samples.push_back(std::move(s));
    }
    return stack(samples);
}

TrainResult train(unet::UNet& model, const std::vector<TrainCase>& data, const TrainConfig& cfg,
                  std::optional<unet::TrainerState> resume, const LossCallback& on_log) {
    if (data.empty())
        throw ParameterError("training data is empty");
    for (const auto& c : data)
        if (c.labels.empty())
            throw ParameterError("case '" + c.id + "' has no weak labels");
    if (cfg.batch < 1)
        throw ParameterError("batch size must be >= 1");
    check_patch_size(cfg.patch);
    if (cfg.augment)
        cfg.aug.validate();
    model.check_input({cfg.batch, 1, cfg.patch.x, cfg.patch.y, cfg.patch.z});
    if (cfg.checkpoint_every > 0)
        std::filesystem::create_directories(cfg.checkpoint_dir);

    TrainResult result;
    result.state = resume.value_or(unet::TrainerState{});
    result.state.seed = cfg.seed;
    const auto params = model.parameters();
    const std::size_t window = static_cast<std::size_t>(std::max(1, cfg.log_every));

    for (long it = result.state.iteration; it < cfg.iterations; ++it) {
        const auto batch = draw_batch(data, cfg, it);
        model.zero_grad();
        nn::Tape tape;
        auto prob = model.forward(&tape, nn::make_var(batch.patch));
        auto loss = nn::masked_bce(&tape, prob, batch.label, batch.mask);
        const double value = loss->value.values()[0];
        if (!std::isfinite(value))
            throw DivergenceError(it);
        tape.backward(loss);
        nn::adam_step(params, result.state.adam, cfg.adam);
        result.state.iteration = it + 1;
        result.losses.push_back(value);

        if (on_log && cfg.log_every > 0 && (it + 1) % cfg.log_every == 0) {
            const std::size_t n = std::min(window, result.losses.size());
            const double mean =
                std::accumulate(result.losses.end() - static_cast<std::ptrdiff_t>(n), result.losses.end(), 0.0) /
                static_cast<double>(n);
            on_log({it + 1, value, mean});
        }
        if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0) {
            const auto ckpt = unet::make_checkpoint(model, result.state);
            unet::save_checkpoint(cfg.checkpoint_dir / ("iter_" + std::to_string(it + 1) + ".ckpt"), ckpt);
            unet::save_checkpoint(cfg.checkpoint_dir / "latest.ckpt", ckpt);
        }
    }
    return result;
}

std::vector<std::vector<int>> split_folds(int n_cases, const std::vector<int>& sizes, std::uint64_t seed) {
    if (std::accumulate(sizes.begin(), sizes.end(), 0) != n_cases)
        throw ParameterError("fold sizes must add up to the case count");
    for (int s : sizes)
        if (s < 1)
            throw ParameterError("fold sizes must be positive");
    std::vector<int> order(static_cast<std::size_t>(n_cases));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<int>> folds;
    auto it = order.begin();
    for (int s : sizes) {
        folds.emplace_back(it, it + s);
        std::sort(folds.back().begin(), folds.back().end());
        it += s;
    }
    return folds;
}

std::vector<TrainCase> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ParameterError("cannot open manifest " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("manifest: " + std::string(e.what()), e.byte);
    }
    const auto base = path.parent_path();
    auto resolve = [&](const std::string& p) {
        const std::filesystem::path q(p);
        return q.is_absolute() ? q : base / q;
    };
    std::vector<TrainCase> cases;
    for (const auto& c : j.at("cases")) {
        TrainCase tc;
        tc.id = c.at("id").get<std::string>();
        tc.image = read_volume<float>(resolve(c.at("volume").get<std::string>()));
        for (const auto& l : c.value("labels", nlohmann::json::array())) {
            WeakLabel wl;
            wl.case_id = tc.id;
            wl.z = l.at("z").get<int>();
            wl.label = read_volume<std::uint8_t>(resolve(l.at("label").get<std::string>()));
            if (wl.label.dims().x != tc.image.dims().x || wl.label.dims().y != tc.image.dims().y ||
                wl.label.dims().z != 1)
                throw ShapeError("label for case '" + tc.id + "' slice " + std::to_string(wl.z) +
                                 " must be a single slice matching the volume's x/y extent");
            if (wl.z < 0 || wl.z >= tc.image.dims().z)
                throw ParameterError("labeled slice " + std::to_string(wl.z) + " outside case '" + tc.id + "'");
            for (auto v : wl.label.data())
                if (v > 1)
                    throw IntegrityError("label image for case '" + tc.id + "' is not binary");
            wl.label.set_kind(ElementKind::Binary);
            tc.labels.push_back(std::move(wl));
        }
        cases.push_back(std::move(tc));
    }
    return cases;
}

void save_manifest(const std::filesystem::path& path, const std::vector<TrainCase>& cases) {
    const auto base = path.parent_path();
    if (!base.empty())
        std::filesystem::create_directories(base);
    nlohmann::json j;
    j["cases"] = nlohmann::json::array();
    for (const auto& c : cases) {
        const std::string vol = c.id + ".nrrd";
        write_volume(c.image, base / vol);
        nlohmann::json labels = nlohmann::json::array();
        for (const auto& l : c.labels) {
            const std::string name = c.id + "_label_z" + std::to_string(l.z) + ".nrrd";
            write_volume(l.label, base / name);
            labels.push_back({{"z", l.z}, {"label", name}});
        }
        j["cases"].push_back({{"id", c.id}, {"volume", vol}, {"labels", labels}});
    }
    std::ofstream(path) << j.dump(2) << '\n';
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"iterations", c.iterations},
         {"batch", c.batch},
         {"patch", {c.patch.x, c.patch.y, c.patch.z}},
         {"augment", c.augment},
         {"g", c.aug.g},
         {"d", c.aug.d},
         {"r", c.aug.r},
         {"learning_rate", c.adam.learning_rate},
         {"seed", c.seed},
         {"log_every", c.log_every},
         {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.iterations = j.value("iterations", c.iterations);
    c.batch = j.value("batch", c.batch);
    if (j.contains("patch")) {
        const auto p = j.at("patch").get<std::vector<int>>();
        if (p.size() != 3)
            throw ParameterError("patch must be [x, y, z]");
        c.patch = {p[0], p[1], p[2]};
    }
    c.augment = j.value("augment", c.augment);
    c.aug.g = j.value("g", c.aug.g);
    c.aug.d = j.value("d", c.aug.d);
    c.aug.r = j.value("r", c.aug.r);
    c.adam.learning_rate = j.value("learning_rate", c.adam.learning_rate);
    c.seed = j.value("seed", c.seed);
    c.log_every = j.value("log_every", c.log_every);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
}

}  // namespace stenoviz::train
