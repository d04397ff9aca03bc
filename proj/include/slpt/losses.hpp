#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "slpt/augment.hpp"
#include "slpt/prompt.hpp"

namespace slpt {

/// Per-branch Tversky weights and augmentation tier.
struct BranchConfig {
    double alpha = 0.5;  ///< false-positive weight
    double beta = 0.5;   ///< false-negative weight
    AugStrength aug_strength = AugStrength::light;

    void validate() const;
};

/// (0.5, 0.5, light), (0.7, 0.3, medium), (0.3, 0.7, heavy).
std::vector<BranchConfig> default_branches();

struct LossWeights {
    double lambda1 = 1.0;  ///< Tversky
    double lambda2 = 1.0;  ///< cross-entropy
    double lambda3 = 1.0;  ///< prompt diversity

    void validate() const;
};

inline constexpr double kTverskyEps = 1e-5;

double tversky_index(const Tensor& prob, const Mask& target, double alpha, double beta, double eps = kTverskyEps);
double tversky_loss(const Tensor& prob, const Mask& target, const BranchConfig& branch);
/// Sum of cosine similarities over the K(K-1)/2 unordered prompt pairs.
/// Throws NumericError naming the prompt index on a zero norm.
double diversity_loss(std::span<const Tensor> prompts);

struct Sample {
    Tensor image;
    Mask mask;
};

struct LossBreakdown {
    double total = 0.0;
    std::vector<double> branch;     ///< lambda1*TL_k + lambda2*CE_k, averaged over the batch
    std::vector<double> tversky;    ///< 1 - index, batch mean
    std::vector<double> cross_entropy;
    double diversity = 0.0;         ///< unweighted L_div
};

struct LossGraph {
    Var total;
    LossBreakdown breakdown;
};

/// Builds the full objective on `g`: for each branch k the batch is augmented
/// with the branch's tier (seeded by (seed, k, sample)), run through P_k and
/// Head_k, and scored with weighted Tversky + CE; lambda3 * L_div is added once.
LossGraph total_loss_graph(Graph& g, const PromptedModel& model, std::span<const Sample> batch,
                           const LossWeights& weights, std::span<const BranchConfig> branches, std::uint64_t seed);

LossBreakdown total_loss(const PromptedModel& model, std::span<const Sample> batch, const LossWeights& weights,
                         std::span<const BranchConfig> branches, std::uint64_t seed);

} // namespace slpt
