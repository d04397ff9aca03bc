#include "slpt/metrics.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>

#include "slpt/components.hpp"
#include "slpt/errors.hpp"

namespace slpt {
namespace {

void check_pair(const Mask& a, const Mask& b) {
    if (a.height != b.height || a.width != b.width)
        throw InvalidArgument("mask shape mismatch: " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                              " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
}

double rate(double num, double den, bool other_empty) {
    if (den > 0) return num / den;
    return other_empty ? 1.0 : 0.0;
}

} // namespace

double dice_per_case(const Mask& pred, const Mask& gt) {
    check_pair(pred, gt);
    std::size_t p = 0, g = 0, both = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool a = pred.labels[i] > 0, b = gt.labels[i] > 0;
        p += a;
        g += b;
        both += a && b;
    }
    if (p + g == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

std::vector<std::vector<int>> lesion_instances(const Mask& mask) {
    std::vector<std::uint8_t> fg(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) fg[i] = mask.labels[i] > 0;
    return connected_components(fg, mask.height, mask.width);
}

LesionPR lesion_pr(const Mask& pred, const Mask& gt, double threshold) {
    check_pair(pred, gt);
    const auto pi = lesion_instances(pred);
    const auto gi = lesion_instances(gt);
    // Instance id per pixel for GT, so overlaps are counted in one pass per prediction.
    std::vector<int> gt_id(gt.size(), -1);
    for (std::size_t j = 0; j < gi.size(); ++j)
        for (int p : gi[j]) gt_id[p] = static_cast<int>(j);

    LesionPR out;
    out.match.dice.assign(pi.size(), std::vector<double>(gi.size(), 0.0));
    out.match.pred_is_tp.assign(pi.size(), false);
    out.match.gt_detected.assign(gi.size(), false);
    for (std::size_t i = 0; i < pi.size(); ++i) {
        std::vector<std::size_t> inter(gi.size(), 0);
        for (int p : pi[i])
            if (gt_id[p] >= 0) ++inter[gt_id[p]];
        for (std::size_t j = 0; j < gi.size(); ++j) {
            const double d = 2.0 * static_cast<double>(inter[j]) / static_cast<double>(pi[i].size() + gi[j].size());
            out.match.dice[i][j] = d;
            if (d > threshold) {
                out.match.pred_is_tp[i] = true;
                out.match.gt_detected[j] = true;
            }
        }
    }
    const double tp = static_cast<double>(std::count(out.match.pred_is_tp.begin(), out.match.pred_is_tp.end(), true));
    const double det = static_cast<double>(std::count(out.match.gt_detected.begin(), out.match.gt_detected.end(), true));
    out.precision = rate(tp, static_cast<double>(pi.size()), gi.empty());
    out.recall = rate(det, static_cast<double>(gi.size()), pi.empty());
    return out;
}

CaseMetrics evaluate_case(const Mask& pred, const Mask& gt, double threshold) {
    check_pair(pred, gt);
    CaseMetrics m;
    m.dice = dice_per_case(pred, gt);
    std::size_t p = 0, g = 0, both = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool a = pred.labels[i] > 0, b = gt.labels[i] > 0;
        p += a;
        g += b;
        both += a && b;
    }
    m.pixel_precision = rate(static_cast<double>(both), static_cast<double>(p), g == 0);
    m.pixel_recall = rate(static_cast<double>(both), static_cast<double>(g), p == 0);
    const LesionPR pr = lesion_pr(pred, gt, threshold);
    m.lesion_precision = pr.precision;
    m.lesion_recall = pr.recall;
    m.n_pred_lesions = static_cast<int>(pr.match.pred_is_tp.size());
    m.n_gt_lesions = static_cast<int>(pr.match.gt_detected.size());
    return m;
}

Mask argmax_mask(const Tensor& scores) {
    if (scores.dim() != 3) throw InvalidArgument("argmax_mask: expected [C,H,W], got " + shape_str(scores.shape()));
    const int C = scores.size(0), H = scores.size(1), W = scores.size(2);
    const std::size_t P = static_cast<std::size_t>(H) * W;
    Mask m(H, W);
    for (std::size_t p = 0; p < P; ++p) {
        int best = 0;
        for (int c = 1; c < C; ++c)
            if (scores[c * P + p] > scores[best * P + p]) best = c;
        m.labels[p] = best;
    }
    return m;
}

MetricsSummary aggregate(std::span<const CaseMetrics> metrics) {
    if (metrics.empty()) throw InvalidArgument("aggregate: no cases");
    MetricsSummary s;
    for (const CaseMetrics& m : metrics) {
        s.dice += m.dice;
        s.pixel_precision += m.pixel_precision;
        s.pixel_recall += m.pixel_recall;
        s.lesion_precision += m.lesion_precision;
        s.lesion_recall += m.lesion_recall;
    }
    const double n = static_cast<double>(metrics.size());
    s.dice /= n;
    s.pixel_precision /= n;
    s.pixel_recall /= n;
    s.lesion_precision /= n;
    s.lesion_recall /= n;
    s.mean = (s.dice + s.pixel_precision + s.pixel_recall + s.lesion_precision + s.lesion_recall) / 5.0;
    s.cases = static_cast<int>(metrics.size());
    return s;
}

void write_percase_csv(const std::filesystem::path& file, std::span<const PerCaseRow> rows) {
    std::ofstream out(file);
    if (!out) throw InvalidArgument("cannot write " + file.string());
    out.precision(17);
    out << "strategy,seed,case_id,dice,pixel_precision,pixel_recall,lesion_precision,lesion_recall,n_pred_lesions,"
           "n_gt_lesions\n";
    for (const PerCaseRow& r : rows) {
        const CaseMetrics& m = r.metrics;
        out << r.strategy << ',' << r.seed << ',' << r.case_id << ',' << m.dice << ',' << m.pixel_precision << ','
            << m.pixel_recall << ',' << m.lesion_precision << ',' << m.lesion_recall << ',' << m.n_pred_lesions << ','
            << m.n_gt_lesions << '\n';
    }
}

} // namespace slpt
