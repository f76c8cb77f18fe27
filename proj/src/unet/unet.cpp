#include "stenoviz/unet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace stenoviz::unet {

using nn::Shape;
using nn::Tensor;

UNetConfig UNetConfig::paper_default() {
    UNetConfig c;
    c.levels = 6;
    c.base_channels = 32;
    c.pool_factors = {{2, 2, 2}, {2, 2, 2}, {2, 2, 2}, {2, 2, 2}, {2, 2, 1}};
    c.patch = {288, 288, 16};
    c.xy_multiple = 32;
    return c;
}

UNetConfig UNetConfig::desk() {
    UNetConfig c;
    c.levels = 3;
    c.base_channels = 8;
    c.pool_factors = {{2, 2, 2}, {2, 2, 2}};
    c.patch = {32, 32, 16};
    c.xy_multiple = 32;
    return c;
}

Factors3 UNetConfig::cumulative_pooling() const {
    Factors3 f{1, 1, 1};
    for (const auto& p : pool_factors) {
        f.x *= p.x;
        f.y *= p.y;
        f.z *= p.z;
    }
    return f;
}

void UNetConfig::validate() const {
    if (levels < 1)
        throw ParameterError("levels must be >= 1");
    if (base_channels < 1 || in_channels < 1)
        throw ParameterError("channel counts must be >= 1");
    if (static_cast<int>(pool_factors.size()) != levels - 1)
        throw ParameterError("need levels-1 = " + std::to_string(levels - 1) + " pool factors, got " +
                             std::to_string(pool_factors.size()));
    for (const auto& p : pool_factors)
        if (p.x < 1 || p.y < 1 || p.z < 1)
            throw ParameterError("pool factors must be >= 1");
    if (xy_multiple < 1)
        throw ParameterError("xy_multiple must be >= 1");
    const Factors3 cum = cumulative_pooling();
    if (xy_multiple % cum.x || xy_multiple % cum.y)
        throw ParameterError("xy_multiple " + std::to_string(xy_multiple) +
                             " is not divisible by the cumulative x/y pooling");
    if (patch.z < 1 || patch.z % cum.z)
        throw ParameterError("patch depth " + std::to_string(patch.z) +
                             " is not divisible by the cumulative z pooling " + std::to_string(cum.z));
    if (patch.x < 1 || patch.y < 1 || patch.x % xy_multiple || patch.y % xy_multiple)
        throw ParameterError("patch x/y must be positive multiples of " + std::to_string(xy_multiple));
}

void to_json(nlohmann::json& j, const UNetConfig& c) {
    nlohmann::json pools = nlohmann::json::array();
    for (const auto& p : c.pool_factors)
        pools.push_back({p.x, p.y, p.z});
    j = {{"levels", c.levels},
         {"base_channels", c.base_channels},
         {"in_channels", c.in_channels},
         {"pool_factors", pools},
         {"patch", {c.patch.x, c.patch.y, c.patch.z}},
         {"xy_multiple", c.xy_multiple}};
}

void from_json(const nlohmann::json& j, UNetConfig& c) {
    UNetConfig d = j.contains("preset") && j.at("preset") == "paper" ? UNetConfig::paper_default()
                                                                     : UNetConfig::desk();
    d.levels = j.value("levels", d.levels);
    d.base_channels = j.value("base_channels", d.base_channels);
    d.in_channels = j.value("in_channels", d.in_channels);
    if (j.contains("pool_factors")) {
        d.pool_factors.clear();
        for (const auto& p : j.at("pool_factors"))
            d.pool_factors.push_back({p.at(0).get<int>(), p.at(1).get<int>(), p.at(2).get<int>()});
    }
    if (j.contains("patch")) {
        const auto& p = j.at("patch");
        d.patch = {p.at(0).get<int>(), p.at(1).get<int>(), p.at(2).get<int>()};
    }
    d.xy_multiple = j.value("xy_multiple", d.xy_multiple);
    c = d;
}

UNetConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw Error("cannot open config '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("config JSON: ") + e.what(), e.byte);
    }
    UNetConfig c = j.get<UNetConfig>();
    c.validate();
    return c;
}

std::size_t count_parameters(const UNetConfig& cfg, SkipJoin join) {
    auto conv = [](std::size_t in, std::size_t out, std::size_t k) { return out * in * k * k * k + out; };
    std::size_t total = 0;
    std::size_t in = cfg.in_channels;
    for (int i = 0; i < cfg.levels; ++i) {
        const std::size_t ch = cfg.channels_at(i);
        total += conv(in, ch, 3) + conv(ch, ch, 3);
        in = ch;
    }
    for (int i = cfg.levels - 2; i >= 0; --i) {
        const std::size_t ch = cfg.channels_at(i);
        total += conv(cfg.channels_at(i + 1), ch, 3);
        total += conv(join == SkipJoin::Sum ? ch : 2 * ch, ch, 3);
    }
    total += conv(cfg.channels_at(0), 1, 1);
    return total;
}

UNet::UNet(UNetConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    int in = cfg_.in_channels;
    for (int i = 0; i < cfg_.levels; ++i) {
        const int ch = cfg_.channels_at(i);
        encoder_.push_back({nn::make_conv_params(in, ch, 3), nn::make_conv_params(ch, ch, 3)});
        in = ch;
    }
    decoder_.resize(static_cast<std::size_t>(cfg_.levels - 1));
    for (int i = cfg_.levels - 2; i >= 0; --i) {
        const int ch = cfg_.channels_at(i);
        decoder_[i] = {nn::make_conv_params(cfg_.channels_at(i + 1), ch, 3), nn::make_conv_params(ch, ch, 3)};
    }
    head_ = nn::make_conv_params(cfg_.channels_at(0), 1, 1);
}

void UNet::initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto init_conv = [&rng](ConvParams& p) {
        const Shape s = p.weight->value.shape();
        const double fan_in = static_cast<double>(s.c) * s.x * s.y * s.z;
        const double bound = std::sqrt(6.0 / fan_in);
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (double& v : p.weight->value.values())
            v = dist(rng);
        p.bias->value.fill(0.0);
    };
    for (auto& level : encoder_)
        for (auto& c : level)
            init_conv(c);
    for (int i = cfg_.levels - 2; i >= 0; --i)
        for (auto& c : decoder_[i])
            init_conv(c);
    init_conv(head_);
}

void UNet::check_input(const Shape& s) const {
    if (s.c != cfg_.in_channels)
        throw ShapeError("input has " + std::to_string(s.c) + " channels, model expects " +
                         std::to_string(cfg_.in_channels));
    if (s.x % cfg_.xy_multiple != 0)
        throw ShapeError("input x extent " + std::to_string(s.x) + " is not a multiple of " +
                         std::to_string(cfg_.xy_multiple));
    if (s.y % cfg_.xy_multiple != 0)
        throw ShapeError("input y extent " + std::to_string(s.y) + " is not a multiple of " +
                         std::to_string(cfg_.xy_multiple));
    if (s.z != cfg_.patch.z)
        throw ShapeError("input z extent " + std::to_string(s.z) + " must equal the patch depth " +
                         std::to_string(cfg_.patch.z));
}

UNet::Trace UNet::forward_trace(Tape* tape, const Var& input) const {
    check_input(input->value.shape());
    auto block = [tape](Var x, const ConvParams& p) {
        x = nn::reflect_pad3d(tape, x, {1, 1, 1});
        return nn::relu(tape, nn::conv3d(tape, x, p));
    };

    std::vector<Var> skips;
    Var x = input;
    for (int i = 0; i < cfg_.levels; ++i) {
        x = block(x, encoder_[i][0]);
        x = block(x, encoder_[i][1]);
        if (i + 1 < cfg_.levels) {
            skips.push_back(x);
            x = nn::maxpool3d(tape, x, cfg_.pool_factors[i]);
        }
    }
    for (int i = cfg_.levels - 2; i >= 0; --i) {
        x = nn::upsample3d(tape, x, cfg_.pool_factors[i]);
        x = block(x, decoder_[i][0]);
        x = block(x, decoder_[i][1]);
        x = nn::add(tape, x, skips[i]);
    }
    Trace t;
    t.pre_head = x;
    t.probabilities = nn::sigmoid(tape, nn::conv3d(tape, x, head_));
    return t;
}

std::vector<Var> UNet::parameters() const {
    std::vector<Var> out;
    for (const auto& level : encoder_)
        for (const auto& c : level) {
            out.push_back(c.weight);
            out.push_back(c.bias);
        }
    for (int i = cfg_.levels - 2; i >= 0; --i)
        for (const auto& c : decoder_[i]) {
            out.push_back(c.weight);
            out.push_back(c.bias);
        }
    out.push_back(head_.weight);
    out.push_back(head_.bias);
    return out;
}

std::vector<std::string> UNet::parameter_names() const {
    std::vector<std::string> names;
    for (int i = 0; i < cfg_.levels; ++i)
        for (int j = 0; j < 2; ++j) {
            names.push_back("enc" + std::to_string(i) + ".conv" + std::to_string(j) + ".weight");
            names.push_back("enc" + std::to_string(i) + ".conv" + std::to_string(j) + ".bias");
        }
    for (int i = cfg_.levels - 2; i >= 0; --i)
        for (int j = 0; j < 2; ++j) {
            names.push_back("dec" + std::to_string(i) + ".conv" + std::to_string(j) + ".weight");
            names.push_back("dec" + std::to_string(i) + ".conv" + std::to_string(j) + ".bias");
        }
    names.push_back("head.weight");
    names.push_back("head.bias");
    return names;
}

std::size_t UNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters())
        n += p->value.size();
    return n;
}

void UNet::zero_grad() const {
    for (const auto& p : parameters())
        p->zero_grad();
}

int UNet::receptive_radius_xy() const {
    int radius = 0;
    int scale = 1;
    std::vector<int> scales;
    for (int i = 0; i < cfg_.levels; ++i) {
        scales.push_back(scale);
        radius += 2 * scale;
        if (i + 1 < cfg_.levels) {
            const int f = std::max(cfg_.pool_factors[i].x, cfg_.pool_factors[i].y);
            radius += (f - 1) * scale;
            scale *= f;
        }
    }
    for (int i = cfg_.levels - 2; i >= 0; --i)
        radius += 2 * scales[i] + scales[i + 1];
    return radius;
}

UNet UNet::clone() const {
    UNet copy(cfg_);
    const auto src = parameters();
    const auto dst = copy.parameters();
    for (std::size_t i = 0; i < src.size(); ++i)
        dst[i]->value = src[i]->value;
    return copy;
}

Checkpoint make_checkpoint(const UNet& model, std::optional<TrainerState> trainer) {
    Checkpoint c;
    c.config = model.config();
    for (const auto& p : model.parameters())
        c.weights.push_back(p->value);
    c.trainer = std::move(trainer);
    return c;
}

UNet model_from_checkpoint(const Checkpoint& ckpt) {
    UNet model(ckpt.config);
    const auto params = model.parameters();
    if (params.size() != ckpt.weights.size())
        throw IntegrityError("checkpoint holds " + std::to_string(ckpt.weights.size()) + " tensors, model needs " +
                             std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->value.shape() != ckpt.weights[i].shape())
            throw IntegrityError("checkpoint tensor " + std::to_string(i) + " has shape " +
                                 ckpt.weights[i].shape().str() + ", model expects " +
                                 params[i]->value.shape().str());
        params[i]->value = ckpt.weights[i];
    }
    return model;
}

namespace {

constexpr char kMagic[8] = {'S', 'T', 'V', 'Z', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_tensor(std::string& out, const Tensor& t) {
    const Shape s = t.shape();
    for (int v : {s.n, s.c, s.x, s.y, s.z})
        put<std::int32_t>(out, v);
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
}

class Reader {
public:
    explicit Reader(std::string_view b) : bytes_(b) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string_view take(std::size_t n) {
        need(n);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    Tensor tensor() {
        Shape s;
        s.n = get<std::int32_t>();
        s.c = get<std::int32_t>();
        s.x = get<std::int32_t>();
        s.y = get<std::int32_t>();
        s.z = get<std::int32_t>();
        if (s.n < 1 || s.c < 1 || s.x < 1 || s.y < 1 || s.z < 1)
            throw ParseError("invalid tensor shape in checkpoint", pos_);
        const auto raw = take(s.count() * sizeof(double));
        std::vector<double> values(s.count());
        std::memcpy(values.data(), raw.data(), raw.size());
        return Tensor(s, std::move(values));
    }
    std::size_t position() const { return pos_; }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size())
            throw IntegrityError("checkpoint truncated at byte " + std::to_string(pos_));
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    nlohmann::json meta;
    meta["config"] = ckpt.config;
    meta["tensors"] = ckpt.weights.size();
    meta["has_trainer"] = ckpt.trainer.has_value();
    if (ckpt.trainer) {
        meta["iteration"] = ckpt.trainer->iteration;
        meta["seed"] = ckpt.trainer->seed;
        meta["adam_step"] = ckpt.trainer->adam.step;
        meta["adam_tensors"] = ckpt.trainer->adam.m.size();
    }
    const std::string text = meta.dump();

    std::string out(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    put<std::uint64_t>(out, text.size());
    out += text;
    for (const auto& t : ckpt.weights)
        put_tensor(out, t);
    if (ckpt.trainer) {
        for (const auto& t : ckpt.trainer->adam.m)
            put_tensor(out, t);
        for (const auto& t : ckpt.trainer->adam.v)
            put_tensor(out, t);
    }
    return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
    Reader r(bytes);
    const auto magic = r.take(sizeof(kMagic));
    if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0)
        throw ParseError("not a checkpoint (bad magic)", 0);
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(version), 8);
    const auto len = r.get<std::uint64_t>();
    const std::size_t json_at = r.position();
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(r.take(len));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("checkpoint metadata: ") + e.what(), json_at + e.byte);
    }
    Checkpoint c;
    c.config = meta.at("config").get<UNetConfig>();
    c.config.validate();
    const auto n = meta.at("tensors").get<std::size_t>();
    for (std::size_t i = 0; i < n; ++i)
        c.weights.push_back(r.tensor());
    if (meta.value("has_trainer", false)) {
        TrainerState t;
        t.iteration = meta.at("iteration").get<long>();
        t.seed = meta.at("seed").get<std::uint64_t>();
        t.adam.step = meta.at("adam_step").get<long>();
        const auto na = meta.at("adam_tensors").get<std::size_t>();
        for (std::size_t i = 0; i < na; ++i)
            t.adam.m.push_back(r.tensor());
        for (std::size_t i = 0; i < na; ++i)
            t.adam.v.push_back(r.tensor());
        c.trainer = std::move(t);
    }
    if (!r.done())
        throw IntegrityError("trailing bytes after checkpoint payload");
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const std::string bytes = serialize_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("cannot write checkpoint '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open checkpoint '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_checkpoint(ss.str());
}

}  // namespace stenoviz::unet
