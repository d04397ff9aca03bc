#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "slpt/case_io.hpp"
#include "slpt/checkpoint.hpp"
#include "slpt/errors.hpp"
#include "slpt/harness.hpp"

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kInvalidConfig = 2, kTrainingFailure = 3 };

struct ConfigArgs {
    std::string file;
    std::vector<std::string> sets;
    std::string seeds;
    std::string strategies;
    std::string run_dir;
    std::string cache_dir;

    void add_to(CLI::App* app) {
        app->add_option("-c,--config", file, "key = value config file")->check(CLI::ExistingFile);
        app->add_option("--set", sets, "override a config key (key=value), repeatable");
        app->add_option("--seeds", seeds, "comma-separated seed list");
        app->add_option("--strategies", strategies, "comma-separated strategy list");
        app->add_option("--run-dir", run_dir, "run output directory");
        app->add_option("--cache-dir", cache_dir, "pretrained backbone cache");
    }

    slpt::ExperimentConfig resolve() const {
        slpt::ExperimentConfig c = file.empty() ? slpt::ExperimentConfig{} : slpt::load_config(file);
        std::map<std::string, std::string> overrides;
        for (const std::string& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw slpt::InvalidArgument("--set expects key=value, got '" + s + "'");
            overrides[s.substr(0, eq)] = s.substr(eq + 1);
        }
        if (!seeds.empty()) overrides["seeds"] = seeds;
        if (!strategies.empty()) overrides["strategies"] = strategies;
        if (!run_dir.empty()) overrides["run_dir"] = run_dir;
        if (!cache_dir.empty()) overrides["cache_dir"] = cache_dir;
        c.apply(overrides);
        c.validate();
        return c;
    }
};

int cmd_pretrain(const ConfigArgs& args, std::uint64_t seed, const std::string& out, const std::string& export_pool) {
    const slpt::ExperimentConfig c = args.resolve();
    const slpt::FrozenBackbone fb = slpt::pretrained_backbone(c, seed);
    if (!out.empty()) slpt::save_backbone(out, fb);
    if (!export_pool.empty()) slpt::save_pool(export_pool, slpt::seed_pool(c, seed), slpt::LesionProfile::default_profile());
    std::cout << "seed " << seed << ": holdout dice " << fb.report().holdout_dice << ", weights " << std::hex
              << fb.weights_hash() << std::dec << '\n';
    return kOk;
}

int cmd_run(const ConfigArgs& args) {
    const slpt::ExperimentConfig c = args.resolve();
    const slpt::RunReport report = slpt::run_pipeline(c);
    for (const slpt::SeedResult& s : report.seeds) {
        if (!s.ok) {
            std::cerr << "seed " << s.seed << " failed: " << s.error << '\n';
            continue;
        }
        for (const slpt::StrategyResult& st : s.strategies)
            std::cout << "seed " << s.seed << ' ' << slpt::to_string(st.strategy) << " mean " << st.summary.mean
                      << (st.note.empty() ? "" : " [" + st.note + "]") << '\n';
    }
    std::cout << "tunable " << report.budget.tunable << " / total " << report.budget.tunable + report.budget.frozen << " ("
              << 100.0 * report.budget.ratio() << "%), " << report.wall_seconds << " s\n";
    return report.any_failed() ? kTrainingFailure : kOk;
}

int cmd_compare(const std::string& report_file, const std::string& out_dir, const std::string& strategies) {
    const slpt::RunReport report = slpt::read_report(report_file);
    std::vector<slpt::Strategy> expected;
    std::stringstream ss(strategies);
    for (std::string s; std::getline(ss, s, ',');)
        if (!s.empty()) expected.push_back(slpt::parse_strategy(s));
    const slpt::ComparisonTable table = slpt::compare_strategies(report, expected);
    slpt::write_comparison(out_dir, report, table);
    for (const slpt::ComparisonRow& r : table.rows) {
        std::cout << r.strategy;
        if (r.missing) std::cout << " missing";
        else std::cout << " mean " << r.mean.back() << " +- " << r.std.back() << " over " << r.n_seeds << " seeds";
        std::cout << '\n';
    }
    return kOk;
}

int cmd_score(const std::string& backbone, const std::string& prompted, const std::string& pool_dir, const ConfigArgs& args,
              std::uint64_t seed, const std::string& out) {
    auto fb = std::make_shared<const slpt::FrozenBackbone>(slpt::load_frozen_backbone(backbone));
    const slpt::PromptedModel model = slpt::load_prompted_model(prompted, fb);
    const slpt::Pool pool = pool_dir.empty() ? slpt::seed_pool(args.resolve(), seed) : slpt::load_pool(pool_dir);
    std::vector<int> all(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) all[i] = static_cast<int>(i);
    const slpt::PoolScores scores = slpt::score_pool(model, pool, all);
    std::vector<slpt::ScoreRecord> records;
    for (std::size_t i = 0; i < all.size(); ++i) records.push_back({all[i], scores.s_d[i], scores.s_g[i], 0.0});
    std::string note;
    records = slpt::combined_scores_or_fallback(records, note);
    if (!note.empty()) std::cerr << note << '\n';
    std::vector<slpt::ScoreCsvRow> rows;
    for (const slpt::ScoreRecord& r : records) rows.push_back({pool.case_id(r.case_index), r, false, "tesla", seed});
    slpt::write_scores_csv(out, rows);
    std::cout << "scored " << rows.size() << " cases -> " << out << '\n';
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Prompt-tuned segmentation with tandem selective labeling"};
    app.require_subcommand(1);

    ConfigArgs pre_args, run_args, score_args;
    std::uint64_t pre_seed = 0, score_seed = 0;
    std::string pre_out, pre_export, report_file, compare_out, compare_strategies, score_backbone, score_prompted, score_pool,
        score_out = "scores.csv";

    auto* pre = app.add_subcommand("pretrain", "pretrain and freeze a backbone for one seed");
    pre_args.add_to(pre);
    pre->add_option("--seed", pre_seed, "experiment seed");
    pre->add_option("-o,--out", pre_out, "also write the checkpoint here");
    pre->add_option("--export-pool", pre_export, "write the seed's unlabeled pool to this directory");

    auto* run = app.add_subcommand("run", "full two-step selection pipeline");
    run_args.add_to(run);

    auto* cmp = app.add_subcommand("compare", "per-strategy mean and std table plus plots");
    cmp->add_option("report", report_file, "report.json")->required()->check(CLI::ExistingFile);
    cmp->add_option("-o,--out", compare_out, "output directory")->required();
    cmp->add_option("--strategies", compare_strategies, "strategies expected in the table");

    auto* score = app.add_subcommand("score", "score every case of a pool with a tuned checkpoint");
    score->add_option("--backbone", score_backbone, "frozen backbone checkpoint")->required()->check(CLI::ExistingFile);
    score->add_option("--prompted", score_prompted, "prompted checkpoint")->required()->check(CLI::ExistingFile);
    score->add_option("--pool", score_pool, "pool directory (default: regenerate from config and seed)");
    score_args.add_to(score);
    score->add_option("--seed", score_seed, "seed used to regenerate the pool");
    score->add_option("-o,--out", score_out, "output CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kInvalidConfig;
    }

    try {
        if (*pre) return cmd_pretrain(pre_args, pre_seed, pre_out, pre_export);
        if (*run) return cmd_run(run_args);
        if (*cmp) return cmd_compare(report_file, compare_out, compare_strategies);
        if (*score) return cmd_score(score_backbone, score_prompted, score_pool, score_args, score_seed, score_out);
    } catch (const slpt::InvalidArgument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInvalidConfig;
    } catch (const slpt::TrainingFailure& e) {
        std::cerr << "training failure: " << e.what() << " (" << e.diagnostics() << ")\n";
        return kTrainingFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kOk;
}
