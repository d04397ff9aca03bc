#include <doctest.h>

#include <set>

#include "slpt/errors.hpp"
#include "slpt/losses.hpp"
#include "test_support.hpp"

using namespace slpt;
using slpt::test::random_mask;
using slpt::test::random_simplex;
using slpt::test::random_tensor;

namespace {

Tensor one_hot(const Mask& m, int C) {
    Tensor t({C, m.height, m.width});
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) t.at(m.at(y, x), y, x) = 1.0;
    return t;
}

// Soft Dice over the foreground channels, written out directly.
double soft_dice(const Tensor& p, const Mask& m, double eps) {
    double inter = 0.0, ps = 0.0, gs = 0.0;
    for (int c = 1; c < p.size(0); ++c)
        for (int y = 0; y < m.height; ++y)
            for (int x = 0; x < m.width; ++x) {
                const double g = m.at(y, x) == c ? 1.0 : 0.0;
                inter += p.at(c, y, x) * g;
                ps += p.at(c, y, x);
                gs += g;
            }
    return (2.0 * inter + 2.0 * eps) / (ps + gs + 2.0 * eps);
}

double brute_cosine_sum(const std::vector<Tensor>& ps) {
    double total = 0.0;
    for (std::size_t a = 0; a < ps.size(); ++a)
        for (std::size_t b = a + 1; b < ps.size(); ++b) {
            double ab = 0.0, aa = 0.0, bb = 0.0;
            for (std::size_t i = 0; i < ps[a].numel(); ++i) {
                ab += ps[a][i] * ps[b][i];
                aa += ps[a][i] * ps[a][i];
                bb += ps[b][i] * ps[b][i];
            }
            total += ab / std::sqrt(aa * bb);
        }
    return total;
}

std::set<int> label_set(const Mask& m) { return {m.labels.begin(), m.labels.end()}; }

} // namespace

TEST_CASE("Tversky index limits") {
    Rng rng(1);
    Mask m = random_mask(8, 8, 3, rng);
    for (auto [a, b] : {std::pair{0.5, 0.5}, {0.7, 0.3}, {0.3, 0.7}, {2.0, 0.1}}) {
        CHECK(tversky_index(one_hot(m, 3), m, a, b) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(tversky_loss(one_hot(m, 3), m, BranchConfig{a, b}) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    }
    Tensor background({3, 8, 8});
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) background.at(0, y, x) = 1.0;
    int fn = 0;
    for (int v : m.labels) fn += v > 0;
    const double idx = tversky_index(background, m, 0.5, 0.7);
    CHECK(idx == doctest::Approx(kTverskyEps / (0.7 * fn + kTverskyEps)));
    CHECK(idx < 1e-5);
}

TEST_CASE("Tversky index at one half equals soft Dice") {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        Mask m = random_mask(7, 9, 4, rng);
        Tensor p = random_simplex(4, 7, 9, rng, 2.0);
        CHECK(std::abs(tversky_index(p, m, 0.5, 0.5) - soft_dice(p, m, kTverskyEps)) < 1e-6);
    }
}

TEST_CASE("Tversky index decreases with beta when false negatives exist") {
    Rng rng(3);
    Mask m = random_mask(6, 6, 3, rng);
    Tensor p = random_simplex(3, 6, 6, rng);
    double prev = 2.0;
    for (double beta : {0.1, 0.3, 0.5, 0.7, 1.0, 2.0}) {
        const double idx = tversky_index(p, m, 0.5, beta);
        CHECK(idx < prev);
        CHECK(idx > 0.0);
        CHECK(idx <= 1.0);
        prev = idx;
    }
}

TEST_CASE("Tversky shape and parameter checks") {
    Mask m(4, 4);
    CHECK_THROWS_AS(tversky_index(Tensor({2, 4, 5}), m, 0.5, 0.5), InvalidArgument);
    CHECK_THROWS_AS(tversky_loss(Tensor({2, 4, 4}), m, BranchConfig{0.0, 0.5}), InvalidArgument);
    const auto defaults = default_branches();
    REQUIRE(defaults.size() == 3);
    CHECK(defaults[0].alpha == 0.5);
    CHECK(defaults[1].alpha == 0.7);
    CHECK(defaults[2].alpha == 0.3);
    CHECK(defaults[0].beta == 0.5);
    CHECK(defaults[1].beta == 0.3);
    CHECK(defaults[2].beta == 0.7);
}

TEST_CASE("diversity loss") {
    Rng rng(4);
    Tensor p = random_tensor({1, 5, 5}, rng);
    std::vector<Tensor> same{p, p, p};
    CHECK(diversity_loss(same) == doctest::Approx(3.0).epsilon(1e-12));

    Tensor a({1, 2, 2}, std::vector<double>{1, 0, 0, 0}), b({1, 2, 2}, std::vector<double>{0, 1, 0, 0});
    std::vector<Tensor> ortho{a, b};
    CHECK(diversity_loss(ortho) == 0.0);

    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Tensor> ps;
        const int K = 2 + trial % 4;
        for (int k = 0; k < K; ++k) ps.push_back(random_tensor({1, 6, 6}, rng));
        const double d = diversity_loss(ps);
        CHECK(std::abs(d - brute_cosine_sum(ps)) < 1e-6);
        CHECK(std::abs(d) <= K * (K - 1) / 2.0);
    }

    std::vector<Tensor> zero{p, Tensor({1, 5, 5}), p};
    try {
        diversity_loss(zero);
        FAIL("expected a numeric error");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("prompt 1") != std::string::npos);
    }
}

TEST_CASE("augmentation") {
    Case c = gen_downstream_case(3, {32, 32}, LesionProfile::default_profile());

    SUBCASE("identity draw") {
        auto [img, msk] = apply_augment(c.image, c.mask, AugmentDraw{});
        CHECK(img == c.image);
        CHECK(msk == c.mask);
    }
    SUBCASE("mirror is an involution") {
        AugmentDraw d;
        d.mirror = true;
        auto [once, m1] = apply_augment(c.image, c.mask, d);
        CHECK_FALSE(once == c.image);
        auto [twice, m2] = apply_augment(once, m1, d);
        for (std::size_t i = 0; i < twice.numel(); ++i) CHECK(twice[i] == doctest::Approx(c.image[i]).epsilon(1e-12));
        CHECK(m2 == c.mask);
    }
    SUBCASE("labels stay a subset and draws are seeded") {
        for (AugStrength s : {AugStrength::light, AugStrength::medium, AugStrength::heavy}) {
            for (std::uint64_t seed = 0; seed < 10; ++seed) {
                auto [img, msk] = augment(c.image, c.mask, s, seed);
                const auto before = label_set(c.mask), after = label_set(msk);
                for (int v : after) CHECK(before.contains(v));
                auto [img2, msk2] = augment(c.image, c.mask, s, seed);
                CHECK(img == img2);
                CHECK(msk == msk2);
            }
        }
    }
    SUBCASE("tier ranges") {
        Rng rng(6);
        for (int i = 0; i < 200; ++i) {
            AugmentDraw l = draw_augment(AugStrength::light, rng);
            CHECK(std::abs(l.scale - 1.0) <= 0.05);
            CHECK(std::abs(l.angle_deg) <= 10.0);
            CHECK_FALSE(l.mirror);
            CHECK(l.elastic_alpha == 0.0);
            AugmentDraw h = draw_augment(AugStrength::heavy, rng);
            CHECK(std::abs(h.scale - 1.0) <= 0.15);
            CHECK(std::abs(h.angle_deg) <= 30.0);
        }
    }
    CHECK(parse_aug_strength(to_string(AugStrength::medium)) == AugStrength::medium);
    CHECK_THROWS_AS(parse_aug_strength("extreme"), InvalidArgument);
}

TEST_CASE("total loss composition") {
    PromptedModel model = slpt::test::toy_model(4, 4, 3, 32);
    std::vector<Sample> batch;
    for (const Case& c : slpt::test::toy_cases(2, 8)) batch.push_back({c.image, c.mask});
    const auto branches = default_branches();

    LossWeights w;
    LossBreakdown a = total_loss(model, batch, w, branches, 5);
    LossBreakdown b = total_loss(model, batch, w, branches, 5);
    CHECK(a.total == b.total);
    CHECK(a.branch == b.branch);
    REQUIRE(a.branch.size() == 3);
    CHECK(a.diversity == doctest::Approx(diversity_loss(model.prompts().generate())));

    w.lambda3 = 0.0;
    LossBreakdown c = total_loss(model, batch, w, branches, 5);
    CHECK(c.total == c.branch[0] + c.branch[1] + c.branch[2]);
    for (int k = 0; k < 3; ++k) CHECK(c.branch[k] == doctest::Approx(c.tversky[k] + c.cross_entropy[k]));

    Graph g;
    LossGraph lg = total_loss_graph(g, model, batch, LossWeights{}, branches, 5);
    CHECK(lg.total.value()[0] == doctest::Approx(a.total).epsilon(1e-12));

    CHECK_THROWS_AS(total_loss(model, batch, LossWeights{}, std::span(branches).first(2), 5), InvalidArgument);
    CHECK_THROWS_AS(total_loss(model, {}, LossWeights{}, branches, 5), InvalidArgument);
    CHECK_THROWS_AS(total_loss(model, batch, LossWeights{-1.0, 1.0, 1.0}, branches, 5), InvalidArgument);
}
