#include "stenoviz/nn/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include <Eigen/Core>

#include "stenoviz/volume.hpp"

namespace stenoviz::nn {

std::string Shape::str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(x) + "," + std::to_string(y) +
           "," + std::to_string(z) + ")";
}

void Tape::record(const Var& output, std::function<void()> backward_step) {
    outputs_.insert(output.get());
    steps_.push_back(std::move(backward_step));
}

void Tape::backward(const Var& loss) {
    if (steps_.empty())
        throw StateError("backward called before any forward pass was recorded");
    if (!loss || outputs_.count(loss.get()) == 0)
        throw StateError("loss was not produced by this tape");
    if (loss->value.size() != 1)
        throw ShapeError("backward needs a scalar loss, got shape " + loss->value.shape().str());
    loss->grad_buffer().values()[0] = 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it)
        (*it)();
}

void Tape::clear() {
    steps_.clear();
    outputs_.clear();
    signature_ = 0;
}

void Tape::mix_signature(std::uint64_t value) noexcept {
    // splitmix64 finalizer over the running state
    std::uint64_t z = signature_ ^ (value + 0x9e3779b97f4a7c15ULL + (signature_ << 6) + (signature_ >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    signature_ = z ^ (z >> 31);
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

bool wants_grad(const Var& v) { return v && v->requires_grad; }

Var make_output(Shape shape, bool requires_grad) { return make_var(Tensor(shape, 0.0), requires_grad); }

constexpr std::size_t kColumnBudget = std::size_t{1} << 20;

struct ConvGeometry {
    int channels, k, X, Y, Z, OX, OY, OZ;
    std::size_t plane_out() const { return static_cast<std::size_t>(OX) * OY; }
    int rows() const { return channels * k * k * k; }
    int planes_per_chunk() const {
        const std::size_t per_plane = static_cast<std::size_t>(rows()) * plane_out();
        return static_cast<int>(std::clamp<std::size_t>(kColumnBudget / std::max<std::size_t>(per_plane, 1), 1, OZ));
    }
};

// Fill cols (rows x plane_out*nz) for output planes [z0, z0+nz).
void im2col(const double* in, const ConvGeometry& g, int z0, int nz, double* cols) {
    const std::size_t width = g.plane_out() * nz;
    const std::size_t in_plane = static_cast<std::size_t>(g.X) * g.Y;
    const std::size_t in_vol = in_plane * g.Z;
    int r = 0;
    for (int c = 0; c < g.channels; ++c)
        for (int kz = 0; kz < g.k; ++kz)
            for (int ky = 0; ky < g.k; ++ky)
                for (int kx = 0; kx < g.k; ++kx, ++r) {
                    double* row = cols + r * width;
                    for (int zz = 0; zz < nz; ++zz)
                        for (int oy = 0; oy < g.OY; ++oy) {
                            const double* src = in + c * in_vol + (z0 + zz + kz) * in_plane +
                                                static_cast<std::size_t>(oy + ky) * g.X + kx;
                            std::memcpy(row + (static_cast<std::size_t>(zz) * g.OY + oy) * g.OX, src,
                                        sizeof(double) * g.OX);
                        }
                }
}

void col2im_add(const double* cols, const ConvGeometry& g, int z0, int nz, double* din) {
    const std::size_t width = g.plane_out() * nz;
    const std::size_t in_plane = static_cast<std::size_t>(g.X) * g.Y;
    const std::size_t in_vol = in_plane * g.Z;
    int r = 0;
    for (int c = 0; c < g.channels; ++c)
        for (int kz = 0; kz < g.k; ++kz)
            for (int ky = 0; ky < g.k; ++ky)
                for (int kx = 0; kx < g.k; ++kx, ++r) {
                    const double* row = cols + r * width;
                    for (int zz = 0; zz < nz; ++zz)
                        for (int oy = 0; oy < g.OY; ++oy) {
                            double* dst = din + c * in_vol + (z0 + zz + kz) * in_plane +
                                          static_cast<std::size_t>(oy + ky) * g.X + kx;
                            const double* src = row + (static_cast<std::size_t>(zz) * g.OY + oy) * g.OX;
                            for (int ox = 0; ox < g.OX; ++ox)
                                dst[ox] += src[ox];
                        }
                }
}

}  // namespace

ConvParams make_conv_params(int in_channels, int out_channels, int kernel) {
    if (kernel != 1 && kernel != 3)
        throw ParameterError("conv kernel must be 1 or 3");
    if (in_channels < 1 || out_channels < 1)
        throw ParameterError("conv channel counts must be >= 1");
    return {make_var(Tensor({out_channels, in_channels, kernel, kernel, kernel}, 0.0), true),
            make_var(Tensor({1, out_channels, 1, 1, 1}, 0.0), true)};
}

Var reflect_pad3d(Tape* tape, const Var& x, Pad3 pad) {
    const Shape in = x->value.shape();
    if (pad.x < 0 || pad.y < 0 || pad.z < 0)
        throw ParameterError("padding must be non-negative");
    auto too_wide = [](int p, int n) { return n > 1 && p >= n; };
    if (too_wide(pad.x, in.x) || too_wide(pad.y, in.y) || too_wide(pad.z, in.z))
        throw ParameterError("reflection padding must be smaller than the padded dimension, got pad (" +
                             std::to_string(pad.x) + "," + std::to_string(pad.y) + "," + std::to_string(pad.z) +
                             ") for shape " + in.str());
    const Shape out_shape{in.n, in.c, in.x + 2 * pad.x, in.y + 2 * pad.y, in.z + 2 * pad.z};
    auto out = make_output(out_shape, wants_grad(x));

    auto for_each = [in, out_shape, pad](auto&& fn) {
        for (int n = 0; n < in.n; ++n)
            for (int c = 0; c < in.c; ++c)
                for (int z = 0; z < out_shape.z; ++z) {
                    const int sz = reflect_index(z - pad.z, in.z);
                    for (int y = 0; y < out_shape.y; ++y) {
                        const int sy = reflect_index(y - pad.y, in.y);
                        for (int xx = 0; xx < out_shape.x; ++xx)
                            fn(n, c, xx, y, z, reflect_index(xx - pad.x, in.x), sy, sz);
                    }
                }
    };
    const Tensor& src = x->value;
    Tensor& dst = out->value;
    for_each([&](int n, int c, int ox, int oy, int oz, int sx, int sy, int sz) {
        dst.at(n, c, ox, oy, oz) = src.at(n, c, sx, sy, sz);
    });

    if (tape && out->requires_grad) {
        tape->record(out, [x, out, for_each] {
            if (out->grad.empty())
                return;
            Tensor& dx = x->grad_buffer();
            const Tensor& dout = out->grad;
            for_each([&](int n, int c, int ox, int oy, int oz, int sx, int sy, int sz) {
                dx.at(n, c, sx, sy, sz) += dout.at(n, c, ox, oy, oz);
            });
        });
    }
    return out;
}

Var conv3d(Tape* tape, const Var& x, const ConvParams& p) {
    const Shape in = x->value.shape();
    const Shape ws = p.weight->value.shape();
    const int k = ws.x;
    if (ws.c != in.c)
        throw ShapeError("conv3d expects " + std::to_string(ws.c) + " input channels, got " + std::to_string(in.c));
    if (in.x < k || in.y < k || in.z < k)
        throw ShapeError("conv3d input " + in.str() + " smaller than kernel");
    const ConvGeometry g{in.c, k, in.x, in.y, in.z, in.x - k + 1, in.y - k + 1, in.z - k + 1};
    const int O = ws.n;
    const int K = g.rows();
    const std::size_t N = g.plane_out() * g.OZ;
    const Shape out_shape{in.n, O, g.OX, g.OY, g.OZ};
    auto out = make_output(out_shape, wants_grad(x) || wants_grad(p.weight) || wants_grad(p.bias));

    const ConstRowMap W(p.weight->value.data(), O, K);
    const double* bias = p.bias->value.data();
    const int chunk = g.planes_per_chunk();
    std::vector<double> cols;
    if (k > 1)
        cols.resize(static_cast<std::size_t>(K) * g.plane_out() * chunk);

    for (int b = 0; b < in.n; ++b) {
        const double* xin = x->value.data() + x->value.offset(b, 0, 0, 0, 0);
        RowMap Y(out->value.data() + out->value.offset(b, 0, 0, 0, 0), O, static_cast<Eigen::Index>(N));
        if (k == 1) {
            Y.noalias() = W * ConstRowMap(xin, K, static_cast<Eigen::Index>(N));
        } else {
            for (int z0 = 0; z0 < g.OZ; z0 += chunk) {
                const int nz = std::min(chunk, g.OZ - z0);
                const auto width = static_cast<Eigen::Index>(g.plane_out() * nz);
                im2col(xin, g, z0, nz, cols.data());
                Y.middleCols(static_cast<Eigen::Index>(g.plane_out() * z0), width).noalias() =
                    W * ConstRowMap(cols.data(), K, width);
            }
        }
        for (int o = 0; o < O; ++o)
            Y.row(o).array() += bias[o];
    }

    if (tape && out->requires_grad) {
        tape->record(out, [x, p, out, g, O, K, N, chunk] {
            if (out->grad.empty())
                return;
            const Shape in = x->value.shape();
            const ConstRowMap W(p.weight->value.data(), O, K);
            const bool need_dx = x->requires_grad;
            const bool need_dw = p.weight->requires_grad;
            std::vector<double> cols;
            std::vector<double> dcols;
            if (g.k > 1) {
                cols.resize(static_cast<std::size_t>(K) * g.plane_out() * chunk);
                if (need_dx)
                    dcols.resize(cols.size());
            }
            for (int b = 0; b < in.n; ++b) {
                const ConstRowMap dY(out->grad.data() + out->grad.offset(b, 0, 0, 0, 0), O,
                                     static_cast<Eigen::Index>(N));
                if (p.bias->requires_grad) {
                    double* db = p.bias->grad_buffer().data();
                    for (int o = 0; o < O; ++o)
                        db[o] += dY.row(o).sum();
                }
                const double* xin = x->value.data() + x->value.offset(b, 0, 0, 0, 0);
                if (g.k == 1) {
                    if (need_dw) {
                        RowMap dW(p.weight->grad_buffer().data(), O, K);
                        dW.noalias() += dY * ConstRowMap(xin, K, static_cast<Eigen::Index>(N)).transpose();
                    }
                    if (need_dx) {
                        RowMap dX(x->grad_buffer().data() + x->value.offset(b, 0, 0, 0, 0), K,
                                  static_cast<Eigen::Index>(N));
                        dX.noalias() += W.transpose() * dY;
                    }
                    continue;
                }
                for (int z0 = 0; z0 < g.OZ; z0 += chunk) {
                    const int nz = std::min(chunk, g.OZ - z0);
                    const auto width = static_cast<Eigen::Index>(g.plane_out() * nz);
                    const auto dY_block = dY.middleCols(static_cast<Eigen::Index>(g.plane_out() * z0), width);
                    if (need_dw) {
                        im2col(xin, g, z0, nz, cols.data());
                        RowMap dW(p.weight->grad_buffer().data(), O, K);
                        dW.noalias() += dY_block * ConstRowMap(cols.data(), K, width).transpose();
                    }
                    if (need_dx) {
                        RowMap dC(dcols.data(), K, width);
                        dC.noalias() = W.transpose() * dY_block;
                        col2im_add(dcols.data(), g, z0, nz,
                                   x->grad_buffer().data() + x->value.offset(b, 0, 0, 0, 0));
                    }
                }
            }
        });
    }
    return out;
}

Var maxpool3d(Tape* tape, const Var& x, Factors3 f) {
    const Shape in = x->value.shape();
    if (f.x < 1 || f.y < 1 || f.z < 1)
        throw ParameterError("pool factors must be >= 1");
    if (in.x % f.x || in.y % f.y || in.z % f.z)
        throw ShapeError("maxpool3d input " + in.str() + " not divisible by pool factors");
    const Shape out_shape{in.n, in.c, in.x / f.x, in.y / f.y, in.z / f.z};
    auto out = make_output(out_shape, wants_grad(x));
    auto argmax = std::make_shared<std::vector<std::size_t>>(out_shape.count());

    const Tensor& src = x->value;
    Tensor& dst = out->value;
    std::size_t o = 0;
    for (int n = 0; n < in.n; ++n)
        for (int c = 0; c < in.c; ++c)
            for (int z = 0; z < out_shape.z; ++z)
                for (int y = 0; y < out_shape.y; ++y)
                    for (int xx = 0; xx < out_shape.x; ++xx, ++o) {
                        double best = -std::numeric_limits<double>::infinity();
                        std::size_t best_at = src.offset(n, c, xx * f.x, y * f.y, z * f.z);
                        for (int dz = 0; dz < f.z; ++dz)
                            for (int dy = 0; dy < f.y; ++dy)
                                for (int dx = 0; dx < f.x; ++dx) {
                                    const std::size_t at =
                                        src.offset(n, c, xx * f.x + dx, y * f.y + dy, z * f.z + dz);
                                    if (src.values()[at] > best) {
                                        best = src.values()[at];
                                        best_at = at;
                                    }
                                }
                        dst.values()[o] = best;
                        (*argmax)[o] = best_at;
                    }
    if (tape)
        for (std::size_t a : *argmax)
            tape->mix_signature(a);

    if (tape && out->requires_grad) {
        tape->record(out, [x, out, argmax] {
            if (out->grad.empty())
                return;
            auto dx = x->grad_buffer().values();
            auto dout = out->grad.values();
            for (std::size_t i = 0; i < dout.size(); ++i)
                dx[(*argmax)[i]] += dout[i];
        });
    }
    return out;
}

Var upsample3d(Tape* tape, const Var& x, Factors3 f) {
    const Shape in = x->value.shape();
    if (f.x < 1 || f.y < 1 || f.z < 1)
        throw ParameterError("upsample factors must be >= 1");
    const Shape out_shape{in.n, in.c, in.x * f.x, in.y * f.y, in.z * f.z};
    auto out = make_output(out_shape, wants_grad(x));
    const Tensor& src = x->value;
    Tensor& dst = out->value;
    for (int n = 0; n < in.n; ++n)
        for (int c = 0; c < in.c; ++c)
            for (int z = 0; z < out_shape.z; ++z)
                for (int y = 0; y < out_shape.y; ++y) {
                    double* row = &dst.at(n, c, 0, y, z);
                    const double* srow = src.data() + src.offset(n, c, 0, y / f.y, z / f.z);
                    for (int xx = 0; xx < out_shape.x; ++xx)
                        row[xx] = srow[xx / f.x];
                }

    if (tape && out->requires_grad) {
        tape->record(out, [x, out, f, in, out_shape] {
            if (out->grad.empty())
                return;
            Tensor& dx = x->grad_buffer();
            const Tensor& dout = out->grad;
            for (int n = 0; n < in.n; ++n)
                for (int c = 0; c < in.c; ++c)
                    for (int z = 0; z < out_shape.z; ++z)
                        for (int y = 0; y < out_shape.y; ++y) {
                            const double* row = dout.data() + dout.offset(n, c, 0, y, z);
                            double* srow = &dx.at(n, c, 0, y / f.y, z / f.z);
                            for (int xx = 0; xx < out_shape.x; ++xx)
                                srow[xx / f.x] += row[xx];
                        }
        });
    }
    return out;
}

Var relu(Tape* tape, const Var& x) {
    auto out = make_output(x->value.shape(), wants_grad(x));
    auto src = x->value.values();
    auto dst = out->value.values();
    for (std::size_t i = 0; i < src.size(); ++i)
        dst[i] = src[i] > 0.0 ? src[i] : 0.0;
    if (tape) {
        std::uint64_t word = 0;
        for (std::size_t i = 0; i < src.size(); ++i) {
            word = (word << 1) | (src[i] > 0.0 ? 1u : 0u);
            if (i % 64 == 63 || i + 1 == src.size()) {
                tape->mix_signature(word);
                word = 0;
            }
        }
    }
    if (tape && out->requires_grad) {
        tape->record(out, [x, out] {
            if (out->grad.empty())
                return;
            auto dx = x->grad_buffer().values();
            auto dout = out->grad.values();
            auto v = x->value.values();
            for (std::size_t i = 0; i < dx.size(); ++i)
                if (v[i] > 0.0)
                    dx[i] += dout[i];
        });
    }
    return out;
}

Var sigmoid(Tape* tape, const Var& x) {
    auto out = make_output(x->value.shape(), wants_grad(x));
    auto src = x->value.values();
    auto dst = out->value.values();
    for (std::size_t i = 0; i < src.size(); ++i) {
        const double v = src[i];
        if (v >= 0.0) {
            dst[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            dst[i] = e / (1.0 + e);
        }
    }
    if (tape && out->requires_grad) {
        tape->record(out, [x, out] {
            if (out->grad.empty())
                return;
            auto dx = x->grad_buffer().values();
            auto dout = out->grad.values();
            auto s = out->value.values();
            for (std::size_t i = 0; i < dx.size(); ++i)
                dx[i] += dout[i] * s[i] * (1.0 - s[i]);
        });
    }
    return out;
}

Var add(Tape* tape, const Var& a, const Var& b) {
    if (a->value.shape() != b->value.shape())
        throw ShapeError("add: shape " + a->value.shape().str() + " vs " + b->value.shape().str());
    auto out = make_output(a->value.shape(), wants_grad(a) || wants_grad(b));
    auto va = a->value.values();
    auto vb = b->value.values();
    auto dst = out->value.values();
    for (std::size_t i = 0; i < dst.size(); ++i)
        dst[i] = va[i] + vb[i];
    if (tape && out->requires_grad) {
        tape->record(out, [a, b, out] {
            if (out->grad.empty())
                return;
            auto dout = out->grad.values();
            for (const Var* in : {&a, &b}) {
                if (!(*in)->requires_grad)
                    continue;
                auto d = (*in)->grad_buffer().values();
                for (std::size_t i = 0; i < d.size(); ++i)
                    d[i] += dout[i];
            }
        });
    }
    return out;
}

Var weighted_sum(Tape* tape, const Var& x, const Tensor& weights) {
    if (x->value.shape() != weights.shape())
        throw ShapeError("weighted_sum: shape " + x->value.shape().str() + " vs weights " + weights.shape().str());
    auto out = make_output({1, 1, 1, 1, 1}, wants_grad(x));
    double acc = 0.0;
    auto v = x->value.values();
    auto w = weights.values();
    for (std::size_t i = 0; i < v.size(); ++i)
        acc += v[i] * w[i];
    out->value.values()[0] = acc;
    if (tape && out->requires_grad) {
        tape->record(out, [x, out, weights] {
            if (out->grad.empty())
                return;
            const double g = out->grad.values()[0];
            auto dx = x->grad_buffer().values();
            auto w = weights.values();
            for (std::size_t i = 0; i < dx.size(); ++i)
                dx[i] += g * w[i];
        });
    }
    return out;
}

namespace {

void check_bce_inputs(const Tensor& p, const Tensor& labels, const Tensor& mask) {
    if (p.shape() != labels.shape() || p.shape() != mask.shape())
        throw ShapeError("masked_bce: probabilities " + p.shape().str() + ", labels " + labels.shape().str() +
                         ", mask " + mask.shape().str() + " must match");
}

}  // namespace

double masked_bce_value(const Tensor& probabilities, const Tensor& labels, const Tensor& mask) {
    check_bce_inputs(probabilities, labels, mask);
    auto p = probabilities.values();
    auto y = labels.values();
    auto m = mask.values();
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (m[i] == 0.0)
            continue;
        const double q = std::clamp(p[i], kBceEpsilon, 1.0 - kBceEpsilon);
        sum += -(y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q));
        ++count;
    }
    if (count == 0)
        throw ParameterError("masked_bce: mask selects no voxel");
    return sum / static_cast<double>(count);
}

Var masked_bce(Tape* tape, const Var& probabilities, const Tensor& labels, const Tensor& mask) {
    const double loss = masked_bce_value(probabilities->value, labels, mask);
    auto out = make_output({1, 1, 1, 1, 1}, wants_grad(probabilities));
    out->value.values()[0] = loss;
    if (tape && out->requires_grad) {
        tape->record(out, [probabilities, out, labels, mask] {
            if (out->grad.empty())
                return;
            const double g = out->grad.values()[0];
            auto p = probabilities->value.values();
            auto y = labels.values();
            auto m = mask.values();
            std::size_t count = 0;
            for (double v : m)
                count += v != 0.0;
            const double scale = g / static_cast<double>(count);
            auto dp = probabilities->grad_buffer().values();
            for (std::size_t i = 0; i < p.size(); ++i) {
                if (m[i] == 0.0)
                    continue;
                if (p[i] < kBceEpsilon || p[i] > 1.0 - kBceEpsilon)
                    continue;  // clamped: flat
                dp[i] += scale * (-y[i] / p[i] + (1.0 - y[i]) / (1.0 - p[i]));
            }
        });
    }
    return out;
}

void adam_step(std::span<const Var> params, AdamState& state, const AdamConfig& cfg) {
    if (state.m.size() != params.size()) {
        state.m.clear();
        state.v.clear();
        for (const auto& p : params) {
            state.m.emplace_back(p->value.shape(), 0.0);
            state.v.emplace_back(p->value.shape(), 0.0);
        }
        state.step = 0;
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto w = params[k]->value.values();
        auto m = state.m[k].values();
        auto v = state.v[k].values();
        const bool has_grad = !params[k]->grad.empty();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double g = has_grad ? params[k]->grad.values()[i] : 0.0;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
        }
    }
}

}  // namespace stenoviz::nn
