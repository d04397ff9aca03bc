#include "slpt/tesla.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include "slpt/errors.hpp"

namespace slpt {

std::string to_string(Strategy s) {
    switch (s) {
    case Strategy::tesla: return "tesla";
    case Strategy::tesla_no_sd: return "tesla_no_sd";
    case Strategy::tesla_no_sg: return "tesla_no_sg";
    case Strategy::random: return "random";
    case Strategy::entropy: return "entropy";
    case Strategy::coreset: return "coreset";
    }
    return "tesla";
}

Strategy parse_strategy(const std::string& s) {
    for (Strategy v : all_strategies())
        if (to_string(v) == s) return v;
    throw InvalidArgument("unknown strategy '" + s + "'");
}

std::vector<Strategy> all_strategies() {
    return {Strategy::tesla, Strategy::tesla_no_sd, Strategy::tesla_no_sg,
            Strategy::random, Strategy::entropy, Strategy::coreset};
}

namespace {

double sq_distance(const Tensor& a, const Tensor& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double t = a[i] - b[i];
        d += t * t;
    }
    return d;
}

void check_features(std::span<const Tensor> features) {
    for (const Tensor& f : features)
        if (f.numel() != features.front().numel())
            throw InvalidArgument("kcenter: features have different dimensions");
}

} // namespace

std::vector<int> kcenter_greedy(std::span<const Tensor> features, int B, std::uint64_t /*seed*/,
                                std::span<const int> initial_centers) {
    const int n = static_cast<int>(features.size());
    check_features(features);
    std::vector<bool> taken(n, false);
    for (int c : initial_centers) {
        if (c < 0 || c >= n) throw InvalidArgument("kcenter: initial center out of range");
        taken[c] = true;
    }
    const int free = n - static_cast<int>(std::count(taken.begin(), taken.end(), true));
    if (B < 0 || B > free)
        throw InvalidArgument("kcenter: budget " + std::to_string(B) + " exceeds " + std::to_string(free) + " candidates");

    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    auto add_center = [&](int c) {
        taken[c] = true;
        for (int i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], sq_distance(features[i], features[c]));
    };
    for (int c : initial_centers) add_center(c);

    std::vector<int> chosen;
    if (B == 0) return chosen;
    if (initial_centers.empty()) {
        Tensor centroid = Tensor::zeros(features.front().shape());
        for (const Tensor& f : features) centroid += f;
        centroid *= 1.0 / n;
        for (int i = 0; i < n; ++i) nearest[i] = sq_distance(features[i], centroid);
        const int first = static_cast<int>(std::max_element(nearest.begin(), nearest.end()) - nearest.begin());
        std::fill(nearest.begin(), nearest.end(), std::numeric_limits<double>::infinity());
        add_center(first);
        chosen.push_back(first);
    }
    while (static_cast<int>(chosen.size()) < B) {
        int best = -1;
        for (int i = 0; i < n; ++i)
            if (!taken[i] && (best < 0 || nearest[i] > nearest[best])) best = i;
        add_center(best);
        chosen.push_back(best);
    }
    return chosen;
}

double covering_radius(std::span<const Tensor> features, std::span<const int> centers) {
    if (centers.empty()) throw InvalidArgument("covering_radius: no centers");
    double r = 0.0;
    for (const Tensor& f : features) {
        double d = std::numeric_limits<double>::infinity();
        for (int c : centers) d = std::min(d, sq_distance(f, features[c]));
        r = std::max(r, d);
    }
    return std::sqrt(r);
}

Divergence divergence_score(std::span<const Tensor> preds) {
    const int K = static_cast<int>(preds.size());
    if (K < 2) throw InvalidArgument("divergence_score: need at least 2 predictions");
    const Tensor& first = preds.front();
    if (first.dim() != 3) throw InvalidArgument("divergence_score: expected [C,H,W], got " + shape_str(first.shape()));
    for (const Tensor& p : preds) require_same_shape(p, first, "divergence_score");
    const int C = first.size(0), H = first.size(1), W = first.size(2);
    for (int k = 0; k < K; ++k)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double s = 0.0;
                for (int c = 0; c < C; ++c) {
                    const double v = preds[k].at(c, y, x);
                    if (!(v >= -1e-3)) throw InvalidArgument("divergence_score: negative probability in prediction " + std::to_string(k));
                    s += v;
                }
                if (std::abs(s - 1.0) > 1e-3)
                    throw InvalidArgument("divergence_score: prediction " + std::to_string(k) + " is off the simplex (sum " +
                                          std::to_string(s) + ")");
            }

    Divergence out;
    out.map = Tensor({H, W});
    std::vector<double> mean(C);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < C; ++c) {
                double m = 0.0;
                for (int k = 0; k < K; ++k) m += preds[k].at(c, y, x);
                mean[c] = std::log(std::max(m / K, kProbFloor));
            }
            double d = 0.0;
            for (int k = 0; k < K; ++k)
                for (int c = 0; c < C; ++c) {
                    const double p = preds[k].at(c, y, x);
                    d += p * (std::log(std::max(p, kProbFloor)) - mean[c]);
                }
            out.map.at(y, x) = std::max(d, 0.0);
        }
    out.s_d = out.map.sum() / (static_cast<double>(H) * W);
    return out;
}

GradientScore gradient_score_detail(const PromptedModel& model, const Tensor& x) {
    Graph g;
    const Var in = g.constant(x);
    std::vector<Var> probs;
    for (int k = 0; k < model.num_prompts(); ++k) probs.push_back(ops::softmax_channels(model.logits(g, in, k)));
    const Var h = ops::entropy_sum(ops::average(probs), kProbFloor);
    g.backward(h);

    GradientScore out;
    out.entropy = h.value()[0];
    for (const Parameter* p : model.tunable()) {
        const double n = g.grad_of(*p).norm();
        if (!std::isfinite(n)) throw NumericError("gradient_score: non-finite gradient for " + p->name);
        out.norms.push_back(n);
        out.s_g += n;
    }
    return out;
}

double gradient_score(const PromptedModel& model, const Tensor& x) { return gradient_score_detail(model, x).s_g; }

namespace {

double column_max(std::span<const ScoreRecord> r, double ScoreRecord::*field) {
    double m = 0.0;
    for (const ScoreRecord& s : r) {
        if (!(s.*field >= 0.0) || !std::isfinite(s.*field)) throw InvalidArgument("scores must be finite and non-negative");
        m = std::max(m, s.*field);
    }
    return m;
}

} // namespace

std::vector<ScoreRecord> combined_scores(std::span<const ScoreRecord> pool_scores) {
    if (pool_scores.empty()) throw InvalidArgument("combined_scores: no records");
    const double md = column_max(pool_scores, &ScoreRecord::s_d);
    const double mg = column_max(pool_scores, &ScoreRecord::s_g);
    if (md == 0.0 || mg == 0.0)
        throw DegenerateScores(std::string("combined_scores: all-zero ") + (md == 0.0 ? "s_d" : "s_g") + " column",
                               md == 0.0, mg == 0.0);
    std::vector<ScoreRecord> out(pool_scores.begin(), pool_scores.end());
    for (ScoreRecord& r : out) r.s = (r.s_d / md) * (r.s_g / mg);
    return out;
}

std::vector<ScoreRecord> combined_scores_or_fallback(std::span<const ScoreRecord> pool_scores, std::string& note) {
    note.clear();
    try {
        return combined_scores(pool_scores);
    } catch (const DegenerateScores& e) {
        std::vector<ScoreRecord> out(pool_scores.begin(), pool_scores.end());
        if (e.sd_degenerate() && e.sg_degenerate()) {
            note = "s_d and s_g are both all zero; ranking by index";
            for (ScoreRecord& r : out) r.s = 0.0;
        } else if (e.sd_degenerate()) {
            note = "s_d is all zero; ranking by s_g alone";
            const double mg = column_max(pool_scores, &ScoreRecord::s_g);
            for (ScoreRecord& r : out) r.s = r.s_g / mg;
        } else {
            note = "s_g is all zero; ranking by s_d alone";
            const double md = column_max(pool_scores, &ScoreRecord::s_d);
            for (ScoreRecord& r : out) r.s = r.s_d / md;
        }
        return out;
    }
}

std::vector<int> select_batch(std::span<const ScoreRecord> records, int B) {
    if (B < 0 || B > static_cast<int>(records.size()))
        throw InvalidArgument("select_batch: budget " + std::to_string(B) + " with " + std::to_string(records.size()) +
                              " records");
    std::vector<ScoreRecord> sorted(records.begin(), records.end());
    std::stable_sort(sorted.begin(), sorted.end(), [](const ScoreRecord& a, const ScoreRecord& b) {
        if (a.s != b.s) return a.s > b.s;
        return a.case_index < b.case_index;
    });
    std::vector<int> out;
    for (int i = 0; i < B; ++i) out.push_back(sorted[i].case_index);
    return out;
}

PoolScores score_pool(const PromptedModel& model, const Pool& pool, std::span<const int> indices) {
    PoolScores out;
    for (int idx : indices) {
        const Tensor& x = pool.image(idx);
        Graph g;
        const Var in = g.constant(x);
        std::vector<Var> probs;
        std::vector<Tensor> values;
        for (int k = 0; k < model.num_prompts(); ++k) {
            probs.push_back(ops::softmax_channels(model.logits(g, in, k)));
            values.push_back(probs.back().value());
        }
        const Var h = ops::entropy_sum(ops::average(probs), kProbFloor);
        g.backward(h);
        double sg = 0.0;
        for (const Parameter* p : model.tunable()) {
            const double n = g.grad_of(*p).norm();
            if (!std::isfinite(n)) throw NumericError("score_pool: non-finite gradient for " + p->name);
            sg += n;
        }
        out.indices.push_back(idx);
        out.s_d.push_back(divergence_score(values).s_d);
        out.s_g.push_back(sg);
        out.mean_entropy.push_back(h.value()[0] / (static_cast<double>(x.size(1)) * x.size(2)));
    }
    return out;
}

namespace {

std::vector<ScoreRecord> raw_records(const PoolScores& scores) {
    std::vector<ScoreRecord> r;
    for (std::size_t i = 0; i < scores.indices.size(); ++i) r.push_back({scores.indices[i], scores.s_d[i], scores.s_g[i], 0.0});
    return r;
}

Selection single_column(const PoolScores& scores, int B, double ScoreRecord::*field, const char* name) {
    Selection sel;
    sel.records = raw_records(scores);
    const double m = column_max(sel.records, field);
    if (m == 0.0) sel.note = std::string(name) + " is all zero; ranking by index";
    for (ScoreRecord& r : sel.records) r.s = m > 0.0 ? r.*field / m : 0.0;
    sel.indices = select_batch(sel.records, B);
    return sel;
}

} // namespace

Selection random_select(std::span<const int> candidates, int B, std::uint64_t seed) {
    if (B < 0 || B > static_cast<int>(candidates.size())) throw InvalidArgument("random_select: budget exceeds candidates");
    std::vector<int> c(candidates.begin(), candidates.end());
    Rng rng(derive_seed(seed, 0x5A3D));
    std::shuffle(c.begin(), c.end(), rng);
    Selection sel;
    sel.indices.assign(c.begin(), c.begin() + B);
    for (int i : candidates) sel.records.push_back({i, 0.0, 0.0, 0.0});
    return sel;
}

Selection entropy_select(const PoolScores& scores, int B) {
    Selection sel;
    sel.records = raw_records(scores);
    double m = 0.0;
    for (double e : scores.mean_entropy) m = std::max(m, e);
    for (std::size_t i = 0; i < sel.records.size(); ++i) sel.records[i].s = m > 0.0 ? scores.mean_entropy[i] / m : 0.0;
    sel.indices = select_batch(sel.records, B);
    return sel;
}

Selection coreset_select(std::span<const Tensor> features, std::span<const int> labeled, int B, std::uint64_t seed) {
    Selection sel;
    sel.indices = kcenter_greedy(features, B, seed, labeled);
    const std::set<int> lab(labeled.begin(), labeled.end());
    for (int i = 0; i < static_cast<int>(features.size()); ++i)
        if (!lab.contains(i)) sel.records.push_back({i, 0.0, 0.0, 0.0});
    return sel;
}

Selection select_step1(Strategy strategy, const PoolScores& scores, std::span<const Tensor> features,
                       std::span<const int> labeled, int B, std::uint64_t seed) {
    switch (strategy) {
    case Strategy::tesla: {
        Selection sel;
        sel.records = combined_scores_or_fallback(raw_records(scores), sel.note);
        sel.indices = select_batch(sel.records, B);
        return sel;
    }
    case Strategy::tesla_no_sd: return single_column(scores, B, &ScoreRecord::s_g, "s_g");
    case Strategy::tesla_no_sg: return single_column(scores, B, &ScoreRecord::s_d, "s_d");
    case Strategy::random: return random_select(scores.indices, B, seed);
    case Strategy::entropy: return entropy_select(scores, B);
    case Strategy::coreset: return coreset_select(features, labeled, B, seed);
    }
    throw InvalidArgument("select_step1: unknown strategy");
}

void write_scores_csv(const std::filesystem::path& file, std::span<const ScoreCsvRow> rows) {
    std::ofstream out(file);
    if (!out) throw InvalidArgument("cannot write " + file.string());
    out.precision(12);
    out << "case_id,s_d,s_g,s,selected,strategy,seed\n";
    for (const ScoreCsvRow& r : rows)
        out << r.case_id << ',' << r.record.s_d << ',' << r.record.s_g << ',' << r.record.s << ',' << (r.selected ? 1 : 0)
            << ',' << r.strategy << ',' << r.seed << '\n';
}

} // namespace slpt
