#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <vector>

#include "stenoviz/nn/tensor.hpp"

namespace stenoviz::nn {

/// A value in the forward graph plus its gradient accumulator.
struct Node {
    Tensor value;
    Tensor grad;  ///< empty until a gradient reaches this node
    bool requires_grad = false;

    Node(Tensor v, bool rg) : value(std::move(v)), requires_grad(rg) {}

    Tensor& grad_buffer() {
        if (grad.empty())
            grad = Tensor(value.shape(), 0.0);
        return grad;
    }
    void zero_grad() {
        if (!grad.empty())
            grad.fill(0.0);
    }
};

using Var = std::shared_ptr<Node>;

inline Var make_var(Tensor value, bool requires_grad = false) {
    return std::make_shared<Node>(std::move(value), requires_grad);
}

/// Records backward closures of the ops run against it. Ops given a null
/// tape run forward only and keep no intermediate state.
class Tape {
public:
    void record(const Var& output, std::function<void()> backward_step);

    /// Seed d(loss)/d(loss) = 1 and run every recorded step in reverse.
    /// Gradients accumulate into Node::grad; zero parameters first.
    void backward(const Var& loss);

    void clear();
    bool empty() const noexcept { return steps_.empty(); }

    /// Hash of every branch taken by non-smooth ops (ReLU gates, max-pool
    /// winners) since the last clear(). Two forward passes with equal
    /// signatures lie in the same smooth piece of the network.
    std::uint64_t branch_signature() const noexcept { return signature_; }
    void mix_signature(std::uint64_t value) noexcept;

private:
    std::vector<std::function<void()>> steps_;
    std::unordered_set<const Node*> outputs_;
    std::uint64_t signature_ = 0;
};

struct Pad3 {
    int x = 0;
    int y = 0;
    int z = 0;
};

struct Factors3 {
    int x = 1;
    int y = 1;
    int z = 1;

    friend bool operator==(const Factors3&, const Factors3&) = default;
};

/// Weights (out_ch, in_ch, k, k, k) with k in {1, 3}; bias (out_ch).
struct ConvParams {
    Var weight;
    Var bias;

    int out_channels() const { return weight->value.shape().n; }
    int in_channels() const { return weight->value.shape().c; }
    int kernel() const { return weight->value.shape().x; }
};

ConvParams make_conv_params(int in_channels, int out_channels, int kernel);

/// Mirror each spatial border without repeating the edge sample. A
/// singleton axis mirrors onto itself (its one sample is repeated).
Var reflect_pad3d(Tape* tape, const Var& x, Pad3 pad);

/// Valid convolution, stride 1. Output spatial dims shrink by kernel-1.
Var conv3d(Tape* tape, const Var& x, const ConvParams& p);

Var maxpool3d(Tape* tape, const Var& x, Factors3 f);
Var upsample3d(Tape* tape, const Var& x, Factors3 f);
Var relu(Tape* tape, const Var& x);
Var sigmoid(Tape* tape, const Var& x);
Var add(Tape* tape, const Var& a, const Var& b);

/// Scalar sum of weights * x over all elements.
Var weighted_sum(Tape* tape, const Var& x, const Tensor& weights);

inline constexpr double kBceEpsilon = 1e-7;

/// Mean binary cross-entropy over voxels where mask == 1. Probabilities are
/// clamped to [eps, 1-eps]. Throws ParameterError on an empty mask.
Var masked_bce(Tape* tape, const Var& probabilities, const Tensor& labels, const Tensor& mask);

/// Same reduction as masked_bce without graph bookkeeping.
double masked_bce_value(const Tensor& probabilities, const Tensor& labels, const Tensor& mask);

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    long step = 0;
};

/// One bias-corrected Adam update using each parameter's accumulated grad.
/// Parameters without a gradient are treated as having zero gradient.
void adam_step(std::span<const Var> params, AdamState& state, const AdamConfig& cfg);

}  // namespace stenoviz::nn
