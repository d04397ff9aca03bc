#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "slpt/backbone.hpp"
#include "slpt/nn.hpp"

namespace slpt {

struct PromptConfig {
    int num_prompts = 3;               ///< K
    int num_classes = 4;               ///< downstream classes including background
    std::vector<int> dilations{1, 2, 4};
    int fpu_reduction = 8;             ///< context width = max(C / fpu_reduction, 2)
    int se_reduction = 16;             ///< squeeze width = max(C / se_reduction, 2)
    int prompt_groups = 8;             ///< groups of the pointwise half of the prompt conv
    int adapter_groups = 4;            ///< groups of the adapter channel projection
    double fusion_init_gain = 0.1;     ///< scale of the fusion output conv at init
    double generator_noise = 0.01;     ///< amplitude of each generator's fixed noise map

    void validate() const;
};

/// UpConv_k: bilinear x2 upsampling, 3x3 conv, plus a fixed seeded noise map
/// so that generators stay distinct even for a constant meta prompt.
struct PromptGenerator {
    Conv2d conv;
    Tensor noise;  ///< [1, H, W], not trainable

    Var forward(Graph& g, Var meta) const;
};

/// Meta prompt at half input resolution and its K generators.
struct PromptSet {
    Parameter meta;  ///< [1, H/2, W/2]
    std::vector<PromptGenerator> generators;

    int size() const noexcept { return static_cast<int>(generators.size()); }
    /// P_k for every k, without gradient tracking.
    std::vector<Tensor> generate() const;
    void collect(ParamRefs& out);
    void collect(ConstParamRefs& out) const;
};

/// Builds the prompt set from a foreground prior of shape [1, H/2, W/2].
PromptSet init_prompt_set(const Tensor& prior, int num_prompts, std::uint64_t seed, double noise_amplitude = 0.01);

/// Resamples the incoming prompt to the local feature size (bilinear) and
/// projects its channels (1x1 conv).
struct PromptAdapter {
    Conv2d project;
    BlockShape target;

    Var forward(Graph& g, Var prompt) const;
};

/// Feature-aware prompt updater.
///   feature branch: A = SE(fusion(conv1x1([F ; P]))),  F' = F * A + F
///   prompt branch:  P' = pointwise(depthwise([F' ; P]))
/// fusion = parallel dilated depthwise convs + a global-context branch,
/// concatenated and mixed back to C channels.
struct Fpu {
    int channels = 0;
    Conv2d reduce;
    std::vector<Conv2d> context;
    Conv2d mix;
    Conv2d squeeze;
    Conv2d excite;
    Conv2d prompt_depthwise;
    Conv2d prompt_pointwise;

    Fpu() = default;
    Fpu(const std::string& name, int channels, const PromptConfig& config, Rng& rng);

    /// Returns (F_i, P_i). Throws NumericError on non-finite inputs.
    std::pair<Var, Var> forward(Graph& g, Var feature, Var prompt) const;
    void collect(ParamRefs& out);
    void collect(ConstParamRefs& out) const;
};

struct ParamDescriptor {
    std::string name;
    Shape shape;
    std::size_t count = 0;
};

struct ParameterBudget {
    std::size_t tunable = 0;
    std::size_t frozen = 0;
    double ratio() const { return static_cast<double>(tunable) / static_cast<double>(tunable + frozen); }
};

/// Frozen backbone with an FPU after each block, K prompts and K heads.
/// Branch indices are zero-based: branch 0 is the first prompt/head.
class PromptedModel {
public:
    PromptedModel(std::shared_ptr<const FrozenBackbone> backbone, PromptSet prompts, const PromptConfig& config,
                  std::uint64_t seed);

    int num_prompts() const noexcept { return prompts_.size(); }
    int num_classes() const noexcept { return config_.num_classes; }
    const PromptConfig& config() const noexcept { return config_; }
    const FrozenBackbone& backbone() const noexcept { return *backbone_; }
    std::shared_ptr<const FrozenBackbone> backbone_ptr() const noexcept { return backbone_; }

    const PromptSet& prompts() const noexcept { return prompts_; }
    PromptSet& prompts() noexcept { return prompts_; }
    const std::vector<Fpu>& fpus() const noexcept { return fpus_; }
    std::vector<Fpu>& fpus() noexcept { return fpus_; }
    std::vector<Conv2d>& heads() noexcept { return heads_; }
    const std::vector<Conv2d>& heads() const noexcept { return heads_; }

    /// Head logits [C,H,W] for branch k on input x, with prompt P_k already built.
    Var logits_with_prompt(Graph& g, Var x, Var prompt, int branch) const;
    /// Generates P_k and runs the branch; returns logits.
    Var logits(Graph& g, Var x, int branch) const;

    /// Per-pixel class probabilities [C,H,W] of one branch.
    Tensor forward_one(const Tensor& x, int branch) const;
    /// Every branch, no augmentation.
    std::vector<Tensor> forward_all(const Tensor& x) const;

    ParamRefs tunable();
    ConstParamRefs tunable() const;
    std::vector<ParamDescriptor> tunable_parameters() const;
    ParameterBudget budget() const;

private:
    void check_branch(int branch) const;
    void verify_shapes() const;

    std::shared_ptr<const FrozenBackbone> backbone_;
    PromptConfig config_;
    PromptSet prompts_;
    std::vector<PromptAdapter> adapters_;
    std::vector<Fpu> fpus_;
    std::vector<Conv2d> heads_;
};

} // namespace slpt
