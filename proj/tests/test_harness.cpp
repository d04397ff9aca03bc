#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "slpt/errors.hpp"
#include "slpt/harness.hpp"

using namespace slpt;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

ExperimentConfig tiny_config(const fs::path& root) {
    ExperimentConfig c;
    c.pool_size = 12;
    c.test_size = 4;
    c.pretrain_cases = 20;
    c.image_size = 32;
    c.budget_step0 = 3;
    c.budget_step1 = 3;
    c.pretrain_epochs = 1;
    c.tune_epochs = 1;
    c.retune_epochs = 1;
    c.tune_optimizer = TuneOptimizer::adam;
    c.tune_lr = 3e-3;
    c.seeds = {0};
    c.run_dir = root / "run";
    c.cache_dir = root / "cache";
    return c;
}

RunReport fake_report() {
    RunReport r;
    r.config_echo = "pool_size = 60\n";
    r.budget = {100, 900};
    for (std::uint64_t seed : {0, 1, 2}) {
        SeedResult s;
        s.seed = seed;
        s.pretrain_holdout_dice = 0.9 + 0.01 * seed;
        s.step0_indices = {1, 4};
        s.step0_ids = {"a", "b"};
        s.step1_scores = {{0, 2}, {0.5, 0.25}, {1.0, 2.0}, {0.1, 0.2}};
        for (Strategy st : {Strategy::tesla, Strategy::random}) {
            StrategyResult res;
            res.strategy = st;
            res.step1_indices = {2};
            res.step1_ids = {"c"};
            const double base = (st == Strategy::tesla ? 0.6 : 0.5) + 0.05 * seed;
            res.summary = {base, base + 0.1, base - 0.1, base, base, base, 30};
            s.strategies.push_back(res);
        }
        r.seeds.push_back(s);
    }
    return r;
}

} // namespace

TEST_CASE("config parsing") {
    const auto kv = parse_config_text("# comment\npool_size = 40  # trailing\n\n seeds = 3, 4 ,5\nbranch_alpha=0.5,0.6\n"
                                      "branch_beta = 0.5,0.4\nbranch_aug = light,heavy\nprompts = 2\ntune_optimizer = adam\n");
    CHECK(kv.at("pool_size") == "40");
    ExperimentConfig c;
    c.apply(kv);
    CHECK(c.pool_size == 40);
    CHECK(c.seeds == std::vector<std::uint64_t>{3, 4, 5});
    REQUIRE(c.branches.size() == 2);
    CHECK(c.branches[1].alpha == 0.6);
    CHECK(c.branches[1].aug_strength == AugStrength::heavy);
    CHECK(c.tune_optimizer == TuneOptimizer::adam);
    CHECK_NOTHROW(c.validate());

    ExperimentConfig again;
    again.apply(parse_config_text(c.echo()));
    CHECK(again.echo() == c.echo());

    CHECK_THROWS_AS(ExperimentConfig{}.apply({{"pool_sise", "3"}}), InvalidArgument);
    CHECK_THROWS_AS(ExperimentConfig{}.apply({{"pool_size", "3x"}}), InvalidArgument);
    CHECK_THROWS_AS(ExperimentConfig{}.apply({{"branch_alpha", "0.5,0.5"}}), InvalidArgument);
    CHECK_THROWS_AS(parse_config_text("just words\n"), InvalidArgument);

    ExperimentConfig bad;
    bad.budget_step0 = 50;
    bad.budget_step1 = 20;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = ExperimentConfig{};
    bad.seeds = {1, 1};
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = ExperimentConfig{};
    bad.prompts = 4;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("pretrain cache key ignores tuning settings") {
    ExperimentConfig a, b;
    b.tune_lr = 0.5;
    b.seeds = {9};
    CHECK(a.pretrain_hash() == b.pretrain_hash());
    b.pretrain_epochs = 3;
    CHECK(a.pretrain_hash() != b.pretrain_hash());
}

TEST_CASE("label oracle") {
    ExperimentConfig c;
    Pool pool = seed_pool(c, 0);
    CHECK(pool.size() == 60);
    CHECK(pool.labeled().empty());
    std::vector<int> first;
    for (int i = 0; i < 20; ++i) first.push_back(3 * i);
    pool = label_oracle(std::move(pool), first);
    CHECK(pool.labeled().size() == 20);
    CHECK(pool.unlabeled_indices().size() == 40);
    const std::vector<int> overlap{1, 3};
    CHECK_THROWS_AS(label_oracle(pool, overlap), InvalidArgument);
    CHECK_THROWS_AS(pool.mask(1), InvalidArgument);
}

TEST_CASE("seed streams are independent and repeatable") {
    ExperimentConfig c;
    const Pool a = seed_pool(c, 3), b = seed_pool(c, 3), other = seed_pool(c, 4);
    const Pool test = seed_test_set(c, 3);
    CHECK(a.image(0) == b.image(0));
    CHECK_FALSE(a.image(0) == other.image(0));
    CHECK_FALSE(a.image(0) == test.image(0));
    CHECK(test.labeled().size() == test.size());
}

TEST_CASE("strategy comparison") {
    const RunReport r = fake_report();
    const std::vector<Strategy> expected{Strategy::tesla, Strategy::random, Strategy::entropy};
    const ComparisonTable t = compare_strategies(r, expected);
    REQUIRE(t.rows.size() == 3);
    CHECK(t.rows[0].strategy == "tesla");
    CHECK(t.rows[0].n_seeds == 3);
    CHECK(t.rows[0].mean[0] == doctest::Approx(0.65));
    CHECK(t.rows[0].std[0] == doctest::Approx(0.05));
    CHECK(t.rows[1].mean[0] == doctest::Approx(0.55));
    CHECK(t.rows[2].missing);

    RunReport single = r;
    single.seeds.resize(1);
    CHECK(compare_strategies(single).rows[0].std[0] == 0.0);

    RunReport with_failure = r;
    with_failure.seeds[2].ok = false;
    CHECK(compare_strategies(with_failure).rows[0].n_seeds == 2);

    const fs::path file = fs::temp_directory_path() / "slpt_test_comparison.csv";
    write_comparison_csv(file, t);
    const ComparisonTable back = read_comparison_csv(file);
    REQUIRE(back.rows.size() == t.rows.size());
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        CHECK(back.rows[i].strategy == t.rows[i].strategy);
        CHECK(back.rows[i].n_seeds == t.rows[i].n_seeds);
        CHECK(back.rows[i].missing == t.rows[i].missing);
        for (std::size_t m = 0; m < t.rows[i].mean.size() && !t.rows[i].missing; ++m) {
            CHECK(back.rows[i].mean[m] == t.rows[i].mean[m]);
            CHECK(back.rows[i].std[m] == t.rows[i].std[m]);
        }
    }
    fs::remove(file);
}

TEST_CASE("report JSON round trip") {
    const RunReport r = fake_report();
    const nlohmann::json j = to_json(r);
    CHECK_FALSE(j.contains("wall_seconds"));
    const RunReport back = report_from_json(j);
    CHECK(to_json(back) == j);
    CHECK(back.seeds[1].strategies[0].summary.dice == r.seeds[1].strategies[0].summary.dice);
    CHECK_FALSE(back.any_failed());
}

TEST_CASE("tiny end-to-end run") {
    const fs::path root = fs::temp_directory_path() / "slpt_test_pipeline";
    fs::remove_all(root);
    const ExperimentConfig c = tiny_config(root);
    const RunReport report = run_pipeline(c);
    REQUIRE(report.seeds.size() == 1);
    const SeedResult& s = report.seeds[0];
    INFO(s.error);
    REQUIRE(s.ok);
    CHECK(s.step0_indices.size() == 3);
    CHECK(s.step1_scores.indices.size() == 9);
    REQUIRE(s.strategies.size() == all_strategies().size());
    for (const StrategyResult& st : s.strategies) {
        CHECK(st.step1_indices.size() == 3);
        std::set<int> both(s.step0_indices.begin(), s.step0_indices.end());
        both.insert(st.step1_indices.begin(), st.step1_indices.end());
        CHECK(both.size() == 6);
        CHECK(st.summary.cases == 4);
        CHECK(st.summary.mean >= 0.0);
        CHECK(st.summary.mean <= 1.0);
    }
    CHECK(report.budget.ratio() < 0.15);

    for (const char* f : {"config.echo", "report.json", "timing.json", "comparison.csv", "selections/step0.csv",
                          "selections/step1.csv", "scores/step1.csv", "metrics/percase.csv", "plots/metrics.svg",
                          "plots/scores_seed0.svg"})
        CHECK_MESSAGE(fs::exists(c.run_dir / f), f);
    CHECK(to_json(read_report(c.run_dir / "report.json")) == to_json(report));

    // second run reuses the cached backbone and reproduces every artifact
    ExperimentConfig c2 = c;
    c2.run_dir = root / "run2";
    run_pipeline(c2);
    CHECK(slurp(c.run_dir / "selections/step1.csv") == slurp(c2.run_dir / "selections/step1.csv"));
    CHECK(slurp(c.run_dir / "metrics/percase.csv") == slurp(c2.run_dir / "metrics/percase.csv"));
    fs::remove_all(root);
}
