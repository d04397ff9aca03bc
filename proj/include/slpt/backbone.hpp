#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "slpt/data_synth.hpp"
#include "slpt/nn.hpp"

namespace slpt {

struct BackboneConfig {
    int num_scales = 3;
    int base_channels = 8;
    int input_channels = 1;
    int num_classes_pretrain = 2;
    ImageSize input_size{};

    void validate() const;
    int num_blocks() const { return 2 * num_scales + 1; }
    int bottleneck_channels() const { return base_channels << num_scales; }
    bool operator==(const BackboneConfig&) const = default;
};

/// Output geometry of block M_i, i.e. the tensor exposed at insertion point i.
struct BlockShape {
    int channels = 0;
    int height = 0;
    int width = 0;
    bool operator==(const BlockShape&) const = default;
};

/// One modular block: two 3x3 conv + ReLU layers. Encoder stages after the
/// first and the bottleneck downsample with a strided first conv; decoder
/// blocks upsample (nearest) and concatenate the matching encoder output.
struct BackboneBlock {
    enum class Kind { encoder, bottleneck, decoder };
    Kind kind = Kind::encoder;
    Conv2d conv1;
    Conv2d conv2;
    int skip_from = -1;  ///< index of the encoder block whose output is concatenated
    BlockShape out;
};

/// U-shaped encoder-decoder with N = 2*num_scales + 1 blocks and one
/// insertion point after every block.
class Backbone {
public:
    /// Called at insertion point i with the block output F_{i-1}^{out};
    /// returns the feature passed on (and used as skip) downstream.
    using InsertionHook = std::function<Var(int block, Var feature)>;

    Backbone(const BackboneConfig& config, std::uint64_t seed);

    const BackboneConfig& config() const noexcept { return config_; }
    int num_blocks() const noexcept { return static_cast<int>(blocks_.size()); }
    std::vector<BlockShape> insertion_shapes() const;
    const std::vector<BackboneBlock>& blocks() const noexcept { return blocks_; }

    /// Runs M_1..M_N; returns F_N. An empty hook is the identity.
    Var run(Graph& g, Var x, const InsertionHook& hook = {}) const;
    /// Runs M_1..M_{num_scales+1} and returns the bottleneck activation.
    Var run_to_bottleneck(Graph& g, Var x) const;
    /// Pretraining head on top of run().
    Var pretrain_logits(Graph& g, Var x) const;

    /// Block parameters (the pretraining head is separate).
    ParamRefs block_parameters();
    ConstParamRefs block_parameters() const;
    ParamRefs all_parameters();
    ConstParamRefs all_parameters() const;

    const Conv2d& pretrain_head() const noexcept { return head_; }

    void freeze();
    void unfreeze();

private:
    Var block_forward(Graph& g, int i, Var x, const std::vector<Var>& outputs) const;

    BackboneConfig config_;
    std::vector<BackboneBlock> blocks_;
    Conv2d head_;
};

struct PretrainOptions {
    int epochs = 30;
    double lr = 2e-3;
    int batch_size = 4;
    double holdout_fraction = 0.2;
    std::uint64_t seed = 0;
};

struct PretrainReport {
    int epochs = 0;
    int train_cases = 0;
    int holdout_cases = 0;
    double final_loss = 0.0;
    double holdout_dice = 0.0;
    std::vector<double> epoch_loss;
};

/// Backbone with every parameter frozen. Only const access to the network.
class FrozenBackbone {
public:
    FrozenBackbone(Backbone net, PretrainReport report);

    const Backbone& net() const noexcept { return net_; }
    const PretrainReport& report() const noexcept { return report_; }
    const BackboneConfig& config() const noexcept { return net_.config(); }
    /// Stable FNV-1a digest over parameter names and values.
    std::uint64_t weights_hash() const;

private:
    Backbone net_;
    PretrainReport report_;
};

/// Supervised organ pretraining with cross-entropy + soft Dice, then freezing.
/// Throws TrainingFailure if the loss becomes non-finite.
FrozenBackbone pretrain(Backbone backbone, std::span<const Case> cases, const PretrainOptions& options);

/// Global-average-pooled bottleneck activation, dimension = bottleneck channels.
Tensor extract_features(const FrozenBackbone& frozen, const Tensor& image);

std::uint64_t hash_parameters(const ConstParamRefs& params);

} // namespace slpt
