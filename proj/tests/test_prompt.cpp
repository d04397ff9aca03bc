#include <doctest.h>

#include <filesystem>
#include <set>

#include "slpt/checkpoint.hpp"
#include "slpt/errors.hpp"
#include "slpt/tuning.hpp"
#include "test_support.hpp"

using namespace slpt;
using slpt::test::random_tensor;
using slpt::test::rel_err;

namespace {

double cosine(const Tensor& a, const Tensor& b) { return a.dot(b) / (a.norm() * b.norm()); }

void check_simplex(const Tensor& p, double tol = 1e-5) {
    const int C = p.size(0), H = p.size(1), W = p.size(2);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double s = 0.0;
            for (int c = 0; c < C; ++c) {
                REQUIRE(p.at(c, y, x) >= 0.0);
                s += p.at(c, y, x);
            }
            REQUIRE(std::abs(s - 1.0) <= tol);
        }
}

double mean_kl(const Tensor& p, const Tensor& q) {
    double total = 0.0;
    for (std::size_t i = 0; i < p.numel(); ++i) total += p[i] * std::log(std::max(p[i], 1e-12) / std::max(q[i], 1e-12));
    return total / (p.size(1) * p.size(2));
}

} // namespace

TEST_CASE("prompt set generation") {
    Tensor prior({1, 32, 32}, 0.4);
    PromptSet set = init_prompt_set(prior, 3, 1);
    REQUIRE(set.size() == 3);
    const auto prompts = set.generate();
    for (const Tensor& p : prompts) CHECK(p.shape() == Shape{1, 64, 64});
    CHECK(set.meta.value == prior);

    const auto again = init_prompt_set(prior, 3, 1).generate();
    for (int k = 0; k < 3; ++k) CHECK(again[k] == prompts[k]);

    CHECK_THROWS_AS(init_prompt_set(Tensor({2, 32, 32}), 3, 1), InvalidArgument);
    CHECK_THROWS_AS(init_prompt_set(Tensor({32, 32}), 3, 1), InvalidArgument);
    CHECK_THROWS_AS(init_prompt_set(prior, 1, 1), InvalidArgument);
}

TEST_CASE("generated prompts are pairwise distinct") {
    for (double fill : {0.0, 0.5}) {
        const auto prompts = init_prompt_set(Tensor({1, 16, 16}, fill), 4, 9).generate();
        for (std::size_t i = 0; i < prompts.size(); ++i)
            for (std::size_t j = i + 1; j < prompts.size(); ++j) CHECK(cosine(prompts[i], prompts[j]) < 1.0 - 1e-6);
    }
}

TEST_CASE("FPU branches") {
    PromptConfig cfg;
    Rng rng(3);
    Fpu fpu("fpu", 8, cfg, rng);
    Tensor F = random_tensor({8, 6, 6}, rng), P = random_tensor({8, 6, 6}, rng);

    SUBCASE("zero prompt conv gives a zero prompt") {
        fpu.prompt_pointwise.weight.value.fill(0.0);
        fpu.prompt_pointwise.bias.value.fill(0.0);
        Graph g(false);
        auto [f, p] = fpu.forward(g, g.constant(F), g.constant(P));
        for (double v : p.value().storage()) CHECK(v == 0.0);
        CHECK(p.shape() == F.shape());
    }
    SUBCASE("closed gate is the identity residual") {
        fpu.excite.weight.value.fill(0.0);
        fpu.excite.bias.value.fill(-1e4);
        Graph g(false);
        auto [f, p] = fpu.forward(g, g.constant(F), g.constant(P));
        CHECK(f.value() == F);
    }
    SUBCASE("shape and finiteness contracts") {
        Graph g(false);
        CHECK_THROWS_AS(fpu.forward(g, g.constant(F), g.constant(Tensor({8, 5, 6}))), InvalidArgument);
        Tensor bad = F;
        bad[4] = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(fpu.forward(g, g.constant(bad), g.constant(P)), NumericError);
    }
}

TEST_CASE("FPU Jacobian-vector products match finite differences") {
    PromptConfig cfg;
    Rng rng(4);
    Fpu fpu("fpu", 8, cfg, rng);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor F = random_tensor({8, 5, 5}, rng), P = random_tensor({8, 5, 5}, rng);
        Tensor dF = random_tensor(F.shape(), rng), dP = random_tensor(P.shape(), rng);
        Tensor wf = random_tensor(F.shape(), rng), wp = random_tensor(P.shape(), rng);
        auto scalar = [&](const Tensor& f, const Tensor& p, Graph& g, Var* vf = nullptr, Var* vp = nullptr) {
            Var a = g.input(f, true), b = g.input(p, true);
            if (vf) *vf = a;
            if (vp) *vp = b;
            auto [of, op] = fpu.forward(g, a, b);
            return ops::add(ops::sum(ops::mul(of, g.constant(wf))), ops::sum(ops::mul(op, g.constant(wp))));
        };
        Graph g;
        Var vf, vp;
        g.backward(scalar(F, P, g, &vf, &vp));
        const double analytic = g.grad(vf).dot(dF) + g.grad(vp).dot(dP);

        const double h = 1e-6;
        auto shifted = [&](double s) {
            Tensor f = F, p = P;
            for (std::size_t i = 0; i < f.numel(); ++i) f[i] += s * dF[i], p[i] += s * dP[i];
            Graph e(false);
            return scalar(f, p, e).value()[0];
        };
        const double numeric = (shifted(h) - shifted(-h)) / (2 * h);
        CHECK(rel_err(analytic, numeric) < 1e-4);
    }
}

TEST_CASE("forward passes") {
    PromptedModel model = slpt::test::toy_model(2, 4, 3);
    Rng rng(8);
    Tensor x = random_tensor({1, 16, 16}, rng, 0.0, 1.0);
    const auto all = model.forward_all(x);
    REQUIRE(all.size() == 3);
    Tensor mean({4, 16, 16});
    for (int k = 0; k < 3; ++k) {
        CHECK(all[k].shape() == Shape{4, 16, 16});
        check_simplex(all[k]);
        CHECK(all[k] == model.forward_one(x, k));
        mean += all[k];
    }
    CHECK(model.forward_one(x, 1) == model.forward_one(x, 1));
    mean *= 1.0 / 3.0;
    check_simplex(mean);
    CHECK_THROWS_AS(model.forward_one(x, 3), InvalidArgument);
    CHECK_THROWS_AS(model.forward_one(x, -1), InvalidArgument);
}

TEST_CASE("model construction checks") {
    auto bb = slpt::test::toy_backbone(1);
    PromptConfig pc;
    CHECK_THROWS_AS(PromptedModel(bb, init_prompt_set(Tensor({1, 4, 4}), 3, 0), pc, 0), InvalidArgument);
    pc.num_prompts = 2;
    CHECK_THROWS_AS(PromptedModel(bb, init_prompt_set(Tensor({1, 8, 8}), 3, 0), pc, 0), InvalidArgument);
    CHECK_THROWS_AS(PromptedModel(nullptr, init_prompt_set(Tensor({1, 8, 8}), 2, 0), pc, 0), InvalidArgument);
    CHECK_NOTHROW(PromptedModel(bb, init_prompt_set(Tensor({1, 8, 8}), 2, 0), pc, 0));
}

TEST_CASE("tunable parameters exclude the backbone") {
    PromptedModel model = slpt::test::toy_model(3);
    std::set<std::string> frozen_names;
    for (const Parameter* p : model.backbone().net().all_parameters()) frozen_names.insert(p->name);
    std::size_t total = 0;
    for (const ParamDescriptor& d : model.tunable_parameters()) {
        CHECK_FALSE(frozen_names.contains(d.name));
        CHECK(d.count == shape_numel(d.shape));
        total += d.count;
    }
    CHECK(total == model.budget().tunable);
    for (const Parameter* p : std::as_const(model).tunable()) CHECK_FALSE(p->frozen);
}

TEST_CASE("tunable ratio of the default configuration") {
    auto bb = std::make_shared<const FrozenBackbone>(Backbone(BackboneConfig{}, 0), PretrainReport{});
    PromptedModel model(bb, init_prompt_set(Tensor({1, 32, 32}, 0.2), 3, 0), PromptConfig{}, 0);
    const ParameterBudget b = model.budget();
    MESSAGE("tunable " << b.tunable << " of " << b.tunable + b.frozen << " (" << 100 * b.ratio() << "%)");
    CHECK(b.ratio() < 0.15);
}

TEST_CASE("trained branches disagree") {
    PromptedModel model = slpt::test::toy_model(5, 4, 3, 32);
    std::vector<Sample> samples;
    for (const Case& c : slpt::test::toy_cases(2, 5)) samples.push_back({c.image, c.mask});
    TuneOptions opt;
    opt.epochs = 2;
    opt.optimizer = TuneOptimizer::adam;
    opt.lr = 3e-3;
    prompt_tune(model, samples, opt);
    const auto preds = model.forward_all(samples[0].image);
    CHECK(mean_kl(preds[0], preds[1]) > 0.0);
}

TEST_CASE("prompted checkpoints") {
    PromptedModel model = slpt::test::toy_model(6);
    const auto dir = std::filesystem::temp_directory_path() / "slpt_test_prompted";
    std::filesystem::remove_all(dir);
    for (Parameter* p : model.tunable()) p->value *= 1.5;
    save_prompted(dir / "m.ckpt", model);

    PromptedModel fresh = load_prompted_model(dir / "m.ckpt", model.backbone_ptr());
    Rng rng(1);
    Tensor x = random_tensor({1, 16, 16}, rng, 0.0, 1.0);
    for (int k = 0; k < model.num_prompts(); ++k) CHECK(fresh.forward_one(x, k) == model.forward_one(x, k));

    PromptedModel other = slpt::test::toy_model(7);
    CHECK_THROWS_AS(load_prompted(dir / "m.ckpt", other), InvalidArgument);
    std::filesystem::remove_all(dir);
}
