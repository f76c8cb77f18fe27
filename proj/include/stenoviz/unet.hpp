#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stenoviz/nn/autograd.hpp"

namespace stenoviz::unet {

using nn::ConvParams;
using nn::Factors3;
using nn::Tape;
using nn::Var;

struct PatchSize {
    int x = 288;
    int y = 288;
    int z = 16;

    friend bool operator==(const PatchSize&, const PatchSize&) = default;
};

/// Encoder/decoder layout. Level i runs at base_channels * 2^i channels;
/// pool_factors[i] downsamples from level i to level i+1.
struct UNetConfig {
    int levels = 6;
    int base_channels = 32;
    int in_channels = 1;
    std::vector<Factors3> pool_factors;
    PatchSize patch{};
    /// x/y extents a patch must be a multiple of.
    int xy_multiple = 32;

    /// Six levels, (2,2,2) x4 then (2,2,1): x32 in x/y, x16 in z.
    static UNetConfig paper_default();
    /// Three levels, 8 base channels; trainable on a CPU in minutes.
    static UNetConfig desk();

    Factors3 cumulative_pooling() const;
    int channels_at(int level) const { return base_channels << level; }

    /// Throws ParameterError when the layout is inconsistent.
    void validate() const;

    friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

void to_json(nlohmann::json& j, const UNetConfig& c);
void from_json(const nlohmann::json& j, UNetConfig& c);

UNetConfig load_config(const std::filesystem::path& path);

enum class SkipJoin { Sum, Concat };

/// Trainable parameter count for a layout; Concat is the variant whose
/// decoder convs see the skip features concatenated instead of summed.
std::size_t count_parameters(const UNetConfig& cfg, SkipJoin join);

class UNet {
public:
    explicit UNet(UNetConfig cfg);

    /// Fan-in scaled uniform weights, zero biases.
    void initialize(std::uint64_t seed);

    const UNetConfig& config() const noexcept { return cfg_; }

    struct Trace {
        Var probabilities;  ///< (n, 1, x, y, z), values in (0, 1)
        Var pre_head;       ///< level-0 decoder output after the skip sum
    };

    Var forward(Tape* tape, const Var& input) const { return forward_trace(tape, input).probabilities; }
    Trace forward_trace(Tape* tape, const Var& input) const;

    /// Throws ShapeError naming the offending axis.
    void check_input(const nn::Shape& shape) const;

    /// Fixed order: encoder levels, decoder levels (bottom up), head.
    std::vector<Var> parameters() const;
    std::vector<std::string> parameter_names() const;
    std::size_t parameter_count() const;
    void zero_grad() const;

    /// Voxels of context on each side a level-0 output depends on (x/y).
    int receptive_radius_xy() const;

    std::vector<std::array<ConvParams, 2>>& encoder() noexcept { return encoder_; }
    std::vector<std::array<ConvParams, 2>>& decoder() noexcept { return decoder_; }
    ConvParams& head() noexcept { return head_; }

    /// Deep copy (fresh parameter nodes).
    UNet clone() const;

private:
    UNetConfig cfg_;
    std::vector<std::array<ConvParams, 2>> encoder_;
    std::vector<std::array<ConvParams, 2>> decoder_;  ///< decoder_[i] returns to level i
    ConvParams head_;
};

/// Optimizer bookkeeping stored alongside weights for exact resumption.
struct TrainerState {
    nn::AdamState adam;
    long iteration = 0;
    std::uint64_t seed = 0;
};

struct Checkpoint {
    UNetConfig config;
    std::vector<nn::Tensor> weights;
    std::optional<TrainerState> trainer;
};

Checkpoint make_checkpoint(const UNet& model, std::optional<TrainerState> trainer = std::nullopt);
UNet model_from_checkpoint(const Checkpoint& ckpt);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace stenoviz::unet
