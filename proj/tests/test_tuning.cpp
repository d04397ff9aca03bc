#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "slpt/errors.hpp"
#include "slpt/tuning.hpp"
#include "test_support.hpp"

using namespace slpt;

namespace {

std::vector<Sample> samples(int n, std::uint64_t seed) {
    std::vector<Sample> out;
    for (const Case& c : slpt::test::toy_cases(n, seed)) out.push_back({c.image, c.mask});
    return out;
}

} // namespace

TEST_CASE("one epoch on one case lowers the loss") {
    int improved = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        PromptedModel model = slpt::test::toy_model(seed, 4, 3, 32);
        const auto data = samples(1, 100 + seed);
        TuneOptions opt;
        opt.epochs = 1;
        opt.batch_size = 1;
        opt.seed = seed;
        const double before = total_loss(model, data, opt.weights, opt.branches, 77).total;
        prompt_tune(model, data, opt);
        const double after = total_loss(model, data, opt.weights, opt.branches, 77).total;
        MESSAGE("seed " << seed << ": " << before << " -> " << after);
        improved += after < before;
    }
    CHECK(improved >= 4);
}

TEST_CASE("tuning leaves the backbone bit-identical") {
    PromptedModel model = slpt::test::toy_model(2, 4, 3, 32);
    const std::uint64_t hash = model.backbone().weights_hash();
    std::vector<Tensor> before;
    for (const Parameter* p : model.backbone().net().all_parameters()) before.push_back(p->value);
    std::vector<Tensor> tunable_before;
    for (const Parameter* p : std::as_const(model).tunable()) tunable_before.push_back(p->value);

    TuneOptions opt;
    opt.epochs = 2;
    opt.optimizer = TuneOptimizer::adam;
    opt.lr = 3e-3;
    TrainingLog log = prompt_tune(model, samples(3, 9), opt);

    std::size_t i = 0;
    for (const Parameter* p : model.backbone().net().all_parameters()) CHECK(p->value == before[i++]);
    CHECK(model.backbone().weights_hash() == hash);
    int changed = 0;
    i = 0;
    for (const Parameter* p : std::as_const(model).tunable()) changed += !(p->value == tunable_before[i++]);
    CHECK(changed > 0);

    REQUIRE(log.epochs.size() == 2);
    CHECK(log.epochs[0].lr == doctest::Approx(3e-3));
    CHECK(log.epochs[1].lr < log.epochs[0].lr);
    for (const EpochLog& e : log.epochs) {
        CHECK(e.loss.branch.size() == 3);
        CHECK(std::isfinite(e.loss.total));
        CHECK(e.grad_norm > 0.0);
    }

    const auto file = std::filesystem::temp_directory_path() / "slpt_test_tune.csv";
    write_training_log_csv(file, log);
    std::ifstream in(file);
    std::string header, row;
    std::getline(in, header);
    CHECK(header == "epoch,lr,total,diversity,tversky_0,ce_0,tversky_1,ce_1,tversky_2,ce_2,grad_norm,seconds");
    int rows = 0;
    while (std::getline(in, row)) ++rows;
    CHECK(rows == 2);
    std::filesystem::remove(file);
}

TEST_CASE("tuning is deterministic") {
    TuneOptions opt;
    opt.epochs = 1;
    opt.seed = 4;
    const auto data = samples(2, 3);
    PromptedModel a = slpt::test::toy_model(1, 4, 3, 32), b = slpt::test::toy_model(1, 4, 3, 32);
    prompt_tune(a, data, opt);
    prompt_tune(b, data, opt);
    auto pa = std::as_const(a).tunable(), pb = std::as_const(b).tunable();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
}

TEST_CASE("tuning input checks") {
    PromptedModel model = slpt::test::toy_model(1, 4, 3, 32);
    CHECK_THROWS_AS(prompt_tune(model, {}, TuneOptions{}), InvalidArgument);
    TuneOptions bad;
    bad.lr = 1e300;
    bad.epochs = 3;
    bad.batch_size = 1;
    bad.grad_clip = 0.0;
    CHECK_THROWS_AS(prompt_tune(model, samples(1, 2), bad), TrainingFailure);
}
