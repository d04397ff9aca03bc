#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "slpt/errors.hpp"
#include "slpt/metrics.hpp"
#include "test_support.hpp"

using namespace slpt;

namespace {

void fill_rect(Mask& m, int y0, int x0, int h, int w, int v = 1) {
    for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x) m.at(y, x) = v;
}

// Random blobs: a few filled rectangles per mask.
Mask random_blobs(int H, int W, Rng& rng) {
    Mask m(H, W);
    const int n = uniform_int(rng, 0, 4);
    for (int i = 0; i < n; ++i) {
        const int h = uniform_int(rng, 1, 5), w = uniform_int(rng, 1, 5);
        fill_rect(m, uniform_int(rng, 0, H - h), uniform_int(rng, 0, W - w), h, w, uniform_int(rng, 1, 3));
    }
    return m;
}

// Flood fill from scratch, independent of the library's labelling.
std::vector<std::set<int>> brute_instances(const Mask& m) {
    std::vector<int> seen(m.size(), 0);
    std::vector<std::set<int>> out;
    for (int s = 0; s < static_cast<int>(m.size()); ++s) {
        if (m.labels[s] == 0 || seen[s]) continue;
        std::set<int> comp;
        std::vector<int> stack{s};
        seen[s] = 1;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            comp.insert(p);
            const int y = p / m.width, x = p % m.width;
            const int ny[] = {y - 1, y + 1, y, y}, nx[] = {x, x, x - 1, x + 1};
            for (int k = 0; k < 4; ++k) {
                if (ny[k] < 0 || ny[k] >= m.height || nx[k] < 0 || nx[k] >= m.width) continue;
                const int q = ny[k] * m.width + nx[k];
                if (m.labels[q] > 0 && !seen[q]) {
                    seen[q] = 1;
                    stack.push_back(q);
                }
            }
        }
        out.push_back(comp);
    }
    return out;
}

} // namespace

TEST_CASE("Dice per case") {
    Mask a(8, 8), b(8, 8);
    fill_rect(a, 0, 0, 4, 8);  // 32 px
    CHECK(dice_per_case(a, a) == 1.0);
    fill_rect(b, 4, 0, 4, 8);
    CHECK(dice_per_case(a, b) == 0.0);

    Mask c(8, 8);
    fill_rect(c, 2, 0, 4, 8, 3);  // 32 px, 16 shared with a
    CHECK(dice_per_case(a, c) == 0.5);
    CHECK(dice_per_case(c, a) == 0.5);
    CHECK(dice_per_case(Mask(8, 8), Mask(8, 8)) == 1.0);
    CHECK_THROWS_AS(dice_per_case(Mask(8, 8), Mask(8, 7)), InvalidArgument);

    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        Mask p = random_blobs(10, 10, rng), g = random_blobs(10, 10, rng);
        CHECK(dice_per_case(p, g) == dice_per_case(g, p));
    }
}

TEST_CASE("lesion instances") {
    Mask two(6, 6);
    fill_rect(two, 0, 0, 2, 2);
    fill_rect(two, 4, 4, 2, 2, 2);
    CHECK(lesion_instances(two).size() == 2);

    Mask diag(2, 2);
    diag.at(0, 1) = 1;
    diag.at(1, 0) = 1;
    CHECK(lesion_instances(diag).size() == 2);

    CHECK(lesion_instances(Mask(5, 5, 1)).size() == 1);
    CHECK(lesion_instances(Mask(5, 5)).empty());

    // adjacent pixels of different classes form one binarized instance
    Mask mixed(1, 4);
    mixed.labels = {1, 2, 0, 3};
    CHECK(lesion_instances(mixed).size() == 2);
}

TEST_CASE("lesion matching threshold is strict") {
    Mask gt(20, 20);
    fill_rect(gt, 0, 0, 5, 20);  // 100 px

    Mask low(20, 20);  // 100 px, 19 shared: Dice 0.19
    fill_rect(low, 4, 0, 1, 19);
    fill_rect(low, 5, 0, 4, 20);
    low.at(9, 0) = 1;
    LesionPR pr = lesion_pr(low, gt);
    CHECK(pr.match.dice[0][0] == doctest::Approx(0.19).epsilon(1e-15));
    CHECK(pr.precision == 0.0);
    CHECK(pr.recall == 0.0);

    Mask high(20, 20);  // 100 px, 21 shared: Dice 0.21
    high.at(3, 0) = 1;
    fill_rect(high, 4, 0, 1, 20);
    fill_rect(high, 5, 0, 3, 20);
    fill_rect(high, 8, 0, 1, 19);
    pr = lesion_pr(high, gt);
    CHECK(pr.match.dice[0][0] == doctest::Approx(0.21).epsilon(1e-15));
    CHECK(pr.precision == 1.0);
    CHECK(pr.recall == 1.0);

    // exactly at the threshold is not a match
    Mask a(4, 10), b(4, 10);
    fill_rect(a, 0, 0, 1, 10);
    fill_rect(b, 0, 0, 1, 1);
    fill_rect(b, 1, 0, 3, 10);
    CHECK(lesion_pr(b, a, 2.0 / 41.0).precision == 0.0);
}

TEST_CASE("lesion precision and recall by hand") {
    Mask gt(12, 12);
    fill_rect(gt, 0, 0, 4, 4);   // GT 0
    fill_rect(gt, 8, 8, 4, 4);   // GT 1
    Mask pred(12, 12);
    fill_rect(pred, 0, 0, 4, 2);  // hits GT 0
    fill_rect(pred, 0, 3, 4, 1);  // hits GT 0
    fill_rect(pred, 6, 0, 2, 2);  // misses
    const LesionPR pr = lesion_pr(pred, gt);
    CHECK(pr.precision == doctest::Approx(2.0 / 3.0));
    CHECK(pr.recall == 0.5);

    CHECK(lesion_pr(gt, gt).precision == 1.0);
    CHECK(lesion_pr(gt, gt).recall == 1.0);
    const LesionPR empty = lesion_pr(Mask(4, 4), Mask(4, 4));
    CHECK(empty.precision == 1.0);
    CHECK(empty.recall == 1.0);
    CHECK(lesion_pr(Mask(12, 12), gt).recall == 0.0);
    CHECK(lesion_pr(Mask(12, 12), gt).precision == 0.0);
    CHECK(lesion_pr(gt, Mask(12, 12)).precision == 0.0);
}

TEST_CASE("lesion matching equals the all-pairs oracle") {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        Mask p = random_blobs(12, 12, rng), g = random_blobs(12, 12, rng);
        const auto pi = brute_instances(p), gi = brute_instances(g);
        const LesionPR pr = lesion_pr(p, g);
        REQUIRE(pr.match.dice.size() == pi.size());
        int tp = 0;
        std::vector<bool> det(gi.size(), false);
        for (std::size_t i = 0; i < pi.size(); ++i) {
            bool hit = false;
            for (std::size_t j = 0; j < gi.size(); ++j) {
                int inter = 0;
                for (int q : pi[i]) inter += gi[j].contains(q);
                const double d = 2.0 * inter / static_cast<double>(pi[i].size() + gi[j].size());
                CHECK(pr.match.dice[i][j] == d);
                if (d > 0.2) hit = true, det[j] = true;
            }
            tp += hit;
        }
        const int found = static_cast<int>(std::count(det.begin(), det.end(), true));
        const double prec = pi.empty() ? (gi.empty() ? 1.0 : 0.0) : static_cast<double>(tp) / pi.size();
        const double rec = gi.empty() ? (pi.empty() ? 1.0 : 0.0) : static_cast<double>(found) / gi.size();
        CHECK(pr.precision == prec);
        CHECK(pr.recall == rec);

        double last_p = 2.0, last_r = 2.0;
        for (double t : {0.0, 0.1, 0.2, 0.4, 0.6, 0.9}) {
            const LesionPR q = lesion_pr(p, g, t);
            CHECK(q.precision <= last_p);
            CHECK(q.recall <= last_r);
            last_p = q.precision;
            last_r = q.recall;
        }
    }
}

TEST_CASE("case evaluation and aggregation") {
    Mask gt(8, 8), pred(8, 8);
    fill_rect(gt, 0, 0, 4, 4);
    fill_rect(pred, 0, 0, 4, 2);
    fill_rect(pred, 6, 6, 2, 2);
    const CaseMetrics m = evaluate_case(pred, gt);
    CHECK(m.pixel_precision == doctest::Approx(8.0 / 12.0));
    CHECK(m.pixel_recall == doctest::Approx(0.5));
    CHECK(m.dice == doctest::Approx(16.0 / 28.0));
    CHECK(m.lesion_precision == 0.5);
    CHECK(m.lesion_recall == 1.0);
    CHECK(m.n_pred_lesions == 2);
    CHECK(m.n_gt_lesions == 1);

    const CaseMetrics nothing = evaluate_case(Mask(8, 8), Mask(8, 8));
    CHECK(nothing.pixel_precision == 1.0);
    CHECK(nothing.pixel_recall == 1.0);
    const CaseMetrics missed = evaluate_case(Mask(8, 8), gt);
    CHECK(missed.pixel_precision == 0.0);
    CHECK(missed.pixel_recall == 0.0);

    const CaseMetrics one[] = {m};
    const MetricsSummary s1 = aggregate(one);
    CHECK(s1.dice == m.dice);
    CHECK(s1.lesion_recall == m.lesion_recall);
    CHECK(s1.cases == 1);

    Rng rng(3);
    std::vector<CaseMetrics> many;
    for (int i = 0; i < 9; ++i)
        many.push_back({uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1), 0, 0});
    const MetricsSummary s = aggregate(many);
    double d = 0, pp = 0, prc = 0, lp = 0, lr = 0;
    for (const CaseMetrics& c : many) d += c.dice, pp += c.pixel_precision, prc += c.pixel_recall, lp += c.lesion_precision, lr += c.lesion_recall;
    CHECK(std::abs(s.mean - (d + pp + prc + lp + lr) / 9.0 / 5.0) < 1e-9);
    CHECK_THROWS_AS(aggregate({}), InvalidArgument);
}

TEST_CASE("argmax mask") {
    Tensor s({3, 1, 3});
    s.at(0, 0, 0) = 1.0;
    s.at(2, 0, 1) = 0.5;
    s.at(1, 0, 2) = 0.2;
    s.at(2, 0, 2) = 0.2;
    CHECK(argmax_mask(s).labels == std::vector<int>{0, 2, 1});
}

TEST_CASE("per-case CSV") {
    const auto file = std::filesystem::temp_directory_path() / "slpt_test_percase.csv";
    std::vector<PerCaseRow> rows{{"random", 2, "c_1", {0.5, 0.25, 1.0, 0.0, 1.0, 3, 1}}};
    write_percase_csv(file, rows);
    std::ifstream in(file);
    std::string header, line;
    std::getline(in, header);
    std::getline(in, line);
    CHECK(header == "strategy,seed,case_id,dice,pixel_precision,pixel_recall,lesion_precision,lesion_recall,n_pred_lesions,n_gt_lesions");
    CHECK(line == "random,2,c_1,0.5,0.25,1,0,1,3,1");
    std::filesystem::remove(file);
}
