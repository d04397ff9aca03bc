#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "slpt/losses.hpp"

namespace slpt {

enum class TuneOptimizer { sgd_momentum, adam };

struct TuneOptions {
    TuneOptimizer optimizer = TuneOptimizer::sgd_momentum;
    int epochs = 100;
    double lr = 0.01;
    double momentum = 0.9;       ///< SGD momentum, or Adam beta1
    int batch_size = 2;
    double grad_clip = 5.0;      ///< global L2 clip; <= 0 disables
    double poly_power = 0.9;     ///< lr_t = lr * (1 - t/T)^power
    LossWeights weights{};
    std::vector<BranchConfig> branches = default_branches();
    std::uint64_t seed = 0;
};

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    LossBreakdown loss;          ///< means over the epoch's steps, before each update
    double grad_norm = 0.0;      ///< mean pre-clip gradient norm
    double seconds = 0.0;
};

struct TrainingLog {
    std::vector<EpochLog> epochs;
};

/// Optimizes only the model's tunable parameters (momentum SGD by default)
/// with polynomial learning-rate decay. Frozen backbone weights are never touched.
/// Throws InvalidArgument on an empty labeled set, TrainingFailure on divergence.
TrainingLog prompt_tune(PromptedModel& model, std::span<const Sample> labeled, const TuneOptions& options);

/// CSV with columns epoch, lr, total, diversity, tversky_k, ce_k..., grad_norm, seconds.
void write_training_log_csv(const std::filesystem::path& file, const TrainingLog& log);

} // namespace slpt
