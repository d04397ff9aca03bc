#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "slpt/data_synth.hpp"
#include "slpt/prompt.hpp"

namespace slpt {

inline constexpr double kProbFloor = 1e-12;

enum class Strategy { tesla, tesla_no_sd, tesla_no_sg, random, entropy, coreset };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& s);
std::vector<Strategy> all_strategies();

struct ScoreRecord {
    int case_index = 0;
    double s_d = 0.0;
    double s_g = 0.0;
    double s = 0.0;  ///< ranking score in [0, 1]
};

/// Greedy k-center. Without initial centers the first pick is the point
/// farthest from the centroid; every further pick maximizes the distance to
/// its nearest chosen center. Ties go to the lowest index. Returns only the
/// B newly chosen indices.
std::vector<int> kcenter_greedy(std::span<const Tensor> features, int B, std::uint64_t seed,
                                std::span<const int> initial_centers = {});

/// max over points of the distance to the nearest center.
double covering_radius(std::span<const Tensor> features, std::span<const int> centers);

struct Divergence {
    double s_d = 0.0;
    Tensor map;  ///< [H, W], summed over classes and predictions
};

/// D = sum_k KL(Y_k || Y_mean) per pixel with log arguments floored at 1e-12;
/// s_d is the spatial mean of D.
Divergence divergence_score(std::span<const Tensor> preds);

struct GradientScore {
    double s_g = 0.0;
    std::vector<double> norms;  ///< one per tunable tensor, same order as PromptedModel::tunable()
    double entropy = 0.0;       ///< summed entropy of Y_mean
};

/// Entropy of the mean prediction, backpropagated to the tunable parameters
/// only; s_g is the sum of the per-tensor gradient L2 norms.
GradientScore gradient_score_detail(const PromptedModel& model, const Tensor& x);
double gradient_score(const PromptedModel& model, const Tensor& x);

/// S = (s_d / max s_d) * (s_g / max s_g). Throws DegenerateScores when either column is all zero.
std::vector<ScoreRecord> combined_scores(std::span<const ScoreRecord> pool_scores);

/// Like combined_scores, but a degenerate column is dropped and the other one
/// ranks alone. `note` is set to a description of the fallback, empty otherwise.
std::vector<ScoreRecord> combined_scores_or_fallback(std::span<const ScoreRecord> pool_scores, std::string& note);

/// The B case indices with the largest s; ties keep the lower case index first.
std::vector<int> select_batch(std::span<const ScoreRecord> records, int B);

/// Everything the step-1 strategies need from one pass over the unlabeled pool.
struct PoolScores {
    std::vector<int> indices;
    std::vector<double> s_d;
    std::vector<double> s_g;
    std::vector<double> mean_entropy;  ///< mean per-pixel entropy of Y_mean
};

/// One forward/backward pass per case; each case gets its own graph.
PoolScores score_pool(const PromptedModel& model, const Pool& pool, std::span<const int> indices);

struct Selection {
    std::vector<int> indices;
    std::vector<ScoreRecord> records;  ///< one per scored candidate
    std::string note;                  ///< fallback diagnostics, if any
};

Selection random_select(std::span<const int> candidates, int B, std::uint64_t seed);
Selection entropy_select(const PoolScores& scores, int B);
Selection coreset_select(std::span<const Tensor> features, std::span<const int> labeled, int B, std::uint64_t seed);

/// Dispatches on the strategy. `features` covers the whole pool (coreset only).
Selection select_step1(Strategy strategy, const PoolScores& scores, std::span<const Tensor> features,
                       std::span<const int> labeled, int B, std::uint64_t seed);

struct ScoreCsvRow {
    std::string case_id;
    ScoreRecord record;
    bool selected = false;
    std::string strategy;
    std::uint64_t seed = 0;
};

/// Columns: case_id, s_d, s_g, s, selected, strategy, seed.
void write_scores_csv(const std::filesystem::path& file, std::span<const ScoreCsvRow> rows);

} // namespace slpt
