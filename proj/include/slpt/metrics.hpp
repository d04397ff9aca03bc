#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "slpt/autograd.hpp"

namespace slpt {

/// Per-case evaluation. All rates in [0, 1]. A rate whose denominator is
/// empty is 1 when the other side is empty too (nothing predicted, nothing
/// to find) and 0 otherwise.
struct CaseMetrics {
    double dice = 0.0;
    double pixel_precision = 0.0;
    double pixel_recall = 0.0;
    double lesion_precision = 0.0;
    double lesion_recall = 0.0;
    int n_pred_lesions = 0;
    int n_gt_lesions = 0;
};

/// Binarized-foreground Dice; two empty masks score 1.
double dice_per_case(const Mask& pred, const Mask& gt);

/// 4-connected components of the binarized foreground.
std::vector<std::vector<int>> lesion_instances(const Mask& mask);

struct LesionMatch {
    std::vector<std::vector<double>> dice;   ///< [pred][gt]
    std::vector<bool> pred_is_tp;
    std::vector<bool> gt_detected;
};

struct LesionPR {
    double precision = 0.0;
    double recall = 0.0;
    LesionMatch match;
};

/// A predicted instance is a true positive when its best Dice against any
/// ground-truth instance is strictly greater than `threshold`.
LesionPR lesion_pr(const Mask& pred, const Mask& gt, double threshold = 0.2);

CaseMetrics evaluate_case(const Mask& pred, const Mask& gt, double threshold = 0.2);

/// Per-pixel argmax over channels of a [C,H,W] tensor.
Mask argmax_mask(const Tensor& scores);

struct MetricsSummary {
    double dice = 0.0;
    double pixel_precision = 0.0;
    double pixel_recall = 0.0;
    double lesion_precision = 0.0;
    double lesion_recall = 0.0;
    /// Mean of the five rates above.
    double mean = 0.0;
    int cases = 0;
};

MetricsSummary aggregate(std::span<const CaseMetrics> metrics);

struct PerCaseRow {
    std::string strategy;
    std::uint64_t seed = 0;
    std::string case_id;
    CaseMetrics metrics;
};

void write_percase_csv(const std::filesystem::path& file, std::span<const PerCaseRow> rows);

} // namespace slpt
