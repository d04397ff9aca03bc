#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slpt/metrics.hpp"
#include "slpt/tesla.hpp"
#include "slpt/tuning.hpp"

namespace slpt {

/// Experiment configuration. Stored as a flat `key = value` text file; list
/// values are comma separated and `#` starts a comment. Keys:
///
///   pool_size, test_size, pretrain_cases, image_size
///   budget_step0, budget_step1, prompts
///   lambda1, lambda2, lambda3
///   branch_alpha, branch_beta, branch_aug      (one entry per prompt)
///   strategies, seeds
///   pretrain_epochs, pretrain_lr, tune_epochs, retune_epochs,
///   tune_optimizer (sgd | adam), tune_lr, tune_momentum, tune_batch, tune_clip
///   run_dir, cache_dir
struct ExperimentConfig {
    int pool_size = 60;
    int test_size = 30;
    int pretrain_cases = 40;
    int image_size = 64;
    int budget_step0 = 8;
    int budget_step1 = 8;
    int prompts = 3;
    LossWeights weights{};
    std::vector<BranchConfig> branches = default_branches();
    std::vector<Strategy> strategies = all_strategies();
    std::vector<std::uint64_t> seeds{0, 1, 2};
    int pretrain_epochs = 20;
    double pretrain_lr = 2e-3;
    int tune_epochs = 100;
    int retune_epochs = 100;
    TuneOptimizer tune_optimizer = TuneOptimizer::sgd_momentum;
    double tune_lr = 0.01;
    double tune_momentum = 0.9;
    int tune_batch = 2;
    double tune_clip = 5.0;
    std::filesystem::path run_dir = "runs/default";
    std::filesystem::path cache_dir = "runs/cache";

    /// Throws InvalidArgument naming the offending key.
    void validate() const;
    /// Applies `key = value` pairs; unknown keys and malformed values throw InvalidArgument.
    void apply(const std::map<std::string, std::string>& values);
    /// Effective configuration in the file format, keys sorted.
    std::string echo() const;
    /// Digest of every field that influences backbone pretraining.
    std::uint64_t pretrain_hash() const;
};

std::map<std::string, std::string> parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& file);

/// Reveals the masks of `indices`; an index that is already labeled is an error.
Pool label_oracle(Pool pool, std::span<const int> indices);

struct StrategyResult {
    Strategy strategy = Strategy::tesla;
    std::vector<int> step1_indices;
    std::vector<std::string> step1_ids;
    MetricsSummary summary;
    std::string note;
};

struct SeedResult {
    std::uint64_t seed = 0;
    bool ok = true;
    std::string error;
    double pretrain_holdout_dice = 0.0;
    std::vector<int> step0_indices;
    std::vector<std::string> step0_ids;
    PoolScores step1_scores;
    std::vector<StrategyResult> strategies;
};

struct RunReport {
    std::string config_echo;
    ParameterBudget budget;
    std::vector<SeedResult> seeds;
    double wall_seconds = 0.0;  ///< kept out of report.json

    bool any_failed() const;
};

nlohmann::json to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& j);
RunReport read_report(const std::filesystem::path& file);

/// Full workflow per seed: pretrain (or cached) -> k-center step 0 -> tune ->
/// score -> per-strategy step 1 -> re-tune from the step-0 checkpoint -> evaluate.
/// A failing seed is recorded in the report and the remaining seeds still run.
RunReport run_pipeline(const ExperimentConfig& config);

/// Pretrains (or loads from the cache) the backbone for one seed.
FrozenBackbone pretrained_backbone(const ExperimentConfig& config, std::uint64_t seed);

/// Synthetic data for one seed. Pool, test set and pretraining cases use independent seed streams.
Pool seed_pool(const ExperimentConfig& config, std::uint64_t seed);
Pool seed_test_set(const ExperimentConfig& config, std::uint64_t seed);
std::vector<Case> seed_pretrain_cases(const ExperimentConfig& config, std::uint64_t seed);

inline constexpr const char* kMetricNames[] = {"dice", "pixel_precision", "pixel_recall", "lesion_precision",
                                               "lesion_recall", "mean"};

struct ComparisonRow {
    std::string strategy;
    int n_seeds = 0;
    std::vector<double> mean;  ///< one per kMetricNames entry
    std::vector<double> std;   ///< sample standard deviation, 0 for a single seed
    bool missing = false;
};

struct ComparisonTable {
    std::vector<ComparisonRow> rows;
};

/// Mean and standard deviation across successful seeds per strategy. Every
/// strategy in `expected` gets a row; strategies without results are flagged missing.
ComparisonTable compare_strategies(const RunReport& report, std::span<const Strategy> expected = {});
void write_comparison_csv(const std::filesystem::path& file, const ComparisonTable& table);
ComparisonTable read_comparison_csv(const std::filesystem::path& file);
/// comparison.csv plus plots/metrics.svg and plots/scores_seed<N>.svg under `dir`.
void write_comparison(const std::filesystem::path& dir, const RunReport& report, const ComparisonTable& table);

} // namespace slpt
