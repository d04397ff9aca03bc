#include "slpt/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "slpt/checkpoint.hpp"
#include "slpt/errors.hpp"

namespace slpt {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    std::istringstream in(v);
    in >> out;
    std::string rest;
    if (in.fail() || (in >> rest)) throw InvalidArgument("config: bad value '" + v + "' for " + key);
    return out;
}

template <class T>
std::string join(const std::vector<T>& xs) {
    std::ostringstream s;
    s.precision(17);
    for (std::size_t i = 0; i < xs.size(); ++i) s << (i ? "," : "") << xs[i];
    return s.str();
}

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
}

std::string hex(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << v;
    return s.str();
}

enum Stream : std::uint64_t { kPoolStream = 0x9001, kTestStream, kPretrainStream, kBackboneInit, kPromptInit, kTuneStep0,
                              kTuneStep1, kRandomPick, kKCenter };

} // namespace

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& key, const std::string& why) { throw InvalidArgument("config: " + key + " " + why); };
    if (pool_size < 2) fail("pool_size", "must be at least 2");
    if (test_size < 1) fail("test_size", "must be at least 1");
    if (pretrain_cases < 20) fail("pretrain_cases", "must be at least 20");
    if (image_size < 32 || image_size % 8 != 0) fail("image_size", "must be a multiple of 8 and at least 32");
    if (budget_step0 < 1) fail("budget_step0", "must be at least 1");
    if (budget_step1 < 1) fail("budget_step1", "must be at least 1");
    if (budget_step0 + budget_step1 > pool_size) fail("budget_step0 + budget_step1", "exceeds pool_size");
    if (prompts < 2) fail("prompts", "must be at least 2");
    if (static_cast<int>(branches.size()) != prompts) fail("branch_alpha/branch_beta/branch_aug", "need one entry per prompt");
    for (const BranchConfig& b : branches) b.validate();
    weights.validate();
    if (strategies.empty()) fail("strategies", "is empty");
    if (seeds.empty()) fail("seeds", "is empty");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) fail("seeds", "has duplicates");
    if (pretrain_epochs < 0 || tune_epochs < 0 || retune_epochs < 0) fail("epochs", "must be non-negative");
    if (!(pretrain_lr > 0.0) || !(tune_lr > 0.0)) fail("learning rates", "must be positive");
    if (!(tune_momentum >= 0.0 && tune_momentum < 1.0)) fail("tune_momentum", "must lie in [0, 1)");
    if (tune_batch < 1) fail("tune_batch", "must be at least 1");
}

void ExperimentConfig::apply(const std::map<std::string, std::string>& values) {
    std::vector<double> alpha, beta;
    std::vector<AugStrength> aug;
    for (const BranchConfig& b : branches) {
        alpha.push_back(b.alpha);
        beta.push_back(b.beta);
        aug.push_back(b.aug_strength);
    }
    for (const auto& [key, v] : values) {
        if (key == "pool_size") pool_size = parse_number<int>(key, v);
        else if (key == "test_size") test_size = parse_number<int>(key, v);
        else if (key == "pretrain_cases") pretrain_cases = parse_number<int>(key, v);
        else if (key == "image_size") image_size = parse_number<int>(key, v);
        else if (key == "budget_step0") budget_step0 = parse_number<int>(key, v);
        else if (key == "budget_step1") budget_step1 = parse_number<int>(key, v);
        else if (key == "prompts") prompts = parse_number<int>(key, v);
        else if (key == "lambda1") weights.lambda1 = parse_number<double>(key, v);
        else if (key == "lambda2") weights.lambda2 = parse_number<double>(key, v);
        else if (key == "lambda3") weights.lambda3 = parse_number<double>(key, v);
        else if (key == "branch_alpha") {
            alpha.clear();
            for (const auto& s : split_list(v)) alpha.push_back(parse_number<double>(key, s));
        } else if (key == "branch_beta") {
            beta.clear();
            for (const auto& s : split_list(v)) beta.push_back(parse_number<double>(key, s));
        } else if (key == "branch_aug") {
            aug.clear();
            for (const auto& s : split_list(v)) aug.push_back(parse_aug_strength(s));
        } else if (key == "strategies") {
            strategies.clear();
            for (const auto& s : split_list(v)) strategies.push_back(parse_strategy(s));
        } else if (key == "seeds") {
            seeds.clear();
            for (const auto& s : split_list(v)) seeds.push_back(parse_number<std::uint64_t>(key, s));
        } else if (key == "pretrain_epochs") pretrain_epochs = parse_number<int>(key, v);
        else if (key == "pretrain_lr") pretrain_lr = parse_number<double>(key, v);
        else if (key == "tune_epochs") tune_epochs = parse_number<int>(key, v);
        else if (key == "retune_epochs") retune_epochs = parse_number<int>(key, v);
        else if (key == "tune_optimizer") {
            if (v == "sgd") tune_optimizer = TuneOptimizer::sgd_momentum;
            else if (v == "adam") tune_optimizer = TuneOptimizer::adam;
            else throw InvalidArgument("config: tune_optimizer must be sgd or adam, got '" + v + "'");
        } else if (key == "tune_lr") tune_lr = parse_number<double>(key, v);
        else if (key == "tune_momentum") tune_momentum = parse_number<double>(key, v);
        else if (key == "tune_batch") tune_batch = parse_number<int>(key, v);
        else if (key == "tune_clip") tune_clip = parse_number<double>(key, v);
        else if (key == "run_dir") run_dir = v;
        else if (key == "cache_dir") cache_dir = v;
        else throw InvalidArgument("config: unknown key '" + key + "'");
    }
    if (alpha.size() != beta.size() || alpha.size() != aug.size())
        throw InvalidArgument("config: branch_alpha, branch_beta and branch_aug differ in length");
    branches.clear();
    for (std::size_t k = 0; k < alpha.size(); ++k) branches.push_back({alpha[k], beta[k], aug[k]});
}

std::string ExperimentConfig::echo() const {
    std::vector<double> alpha, beta;
    std::vector<std::string> aug, strat;
    for (const BranchConfig& b : branches) {
        alpha.push_back(b.alpha);
        beta.push_back(b.beta);
        aug.push_back(to_string(b.aug_strength));
    }
    for (Strategy s : strategies) strat.push_back(to_string(s));
    const std::map<std::string, std::string> kv = {
        {"pool_size", std::to_string(pool_size)},
        {"test_size", std::to_string(test_size)},
        {"pretrain_cases", std::to_string(pretrain_cases)},
        {"image_size", std::to_string(image_size)},
        {"budget_step0", std::to_string(budget_step0)},
        {"budget_step1", std::to_string(budget_step1)},
        {"prompts", std::to_string(prompts)},
        {"lambda1", fmt(weights.lambda1)},
        {"lambda2", fmt(weights.lambda2)},
        {"lambda3", fmt(weights.lambda3)},
        {"branch_alpha", join(alpha)},
        {"branch_beta", join(beta)},
        {"branch_aug", join(aug)},
        {"strategies", join(strat)},
        {"seeds", join(seeds)},
        {"pretrain_epochs", std::to_string(pretrain_epochs)},
        {"pretrain_lr", fmt(pretrain_lr)},
        {"tune_epochs", std::to_string(tune_epochs)},
        {"retune_epochs", std::to_string(retune_epochs)},
        {"tune_optimizer", tune_optimizer == TuneOptimizer::adam ? "adam" : "sgd"},
        {"tune_lr", fmt(tune_lr)},
        {"tune_momentum", fmt(tune_momentum)},
        {"tune_batch", std::to_string(tune_batch)},
        {"tune_clip", fmt(tune_clip)},
        {"run_dir", run_dir.string()},
        {"cache_dir", cache_dir.string()},
    };
    std::ostringstream s;
    for (const auto& [k, v] : kv) s << k << " = " << v << '\n';
    return s.str();
}

std::uint64_t ExperimentConfig::pretrain_hash() const {
    const std::string key = "v1|" + std::to_string(pretrain_cases) + '|' + std::to_string(image_size) + '|' +
                            std::to_string(pretrain_epochs) + '|' + fmt(pretrain_lr);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : key) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw InvalidArgument("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw InvalidArgument("config line " + std::to_string(lineno) + ": empty key");
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

ExperimentConfig load_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw InvalidArgument("cannot read config " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    ExperimentConfig c;
    c.apply(parse_config_text(ss.str()));
    return c;
}

Pool label_oracle(Pool pool, std::span<const int> indices) {
    pool.mark_labeled(indices);
    return pool;
}

bool RunReport::any_failed() const {
    return std::any_of(seeds.begin(), seeds.end(), [](const SeedResult& s) { return !s.ok; });
}

namespace {

json summary_json(const MetricsSummary& m) {
    return {{"dice", m.dice},
            {"pixel_precision", m.pixel_precision},
            {"pixel_recall", m.pixel_recall},
            {"lesion_precision", m.lesion_precision},
            {"lesion_recall", m.lesion_recall},
            {"mean", m.mean},
            {"cases", m.cases}};
}

MetricsSummary summary_from(const json& j) {
    MetricsSummary m;
    m.dice = j.at("dice");
    m.pixel_precision = j.at("pixel_precision");
    m.pixel_recall = j.at("pixel_recall");
    m.lesion_precision = j.at("lesion_precision");
    m.lesion_recall = j.at("lesion_recall");
    m.mean = j.at("mean");
    m.cases = j.at("cases");
    return m;
}

std::vector<double> summary_values(const MetricsSummary& m) {
    return {m.dice, m.pixel_precision, m.pixel_recall, m.lesion_precision, m.lesion_recall, m.mean};
}

} // namespace

json to_json(const RunReport& r) {
    json seeds = json::array();
    for (const SeedResult& s : r.seeds) {
        json strategies = json::array();
        for (const StrategyResult& st : s.strategies)
            strategies.push_back({{"strategy", to_string(st.strategy)},
                                  {"step1_indices", st.step1_indices},
                                  {"step1_ids", st.step1_ids},
                                  {"summary", summary_json(st.summary)},
                                  {"note", st.note}});
        seeds.push_back({{"seed", s.seed},
                         {"ok", s.ok},
                         {"error", s.error},
                         {"pretrain_holdout_dice", s.pretrain_holdout_dice},
                         {"step0_indices", s.step0_indices},
                         {"step0_ids", s.step0_ids},
                         {"step1_scores",
                          {{"indices", s.step1_scores.indices},
                           {"s_d", s.step1_scores.s_d},
                           {"s_g", s.step1_scores.s_g},
                           {"mean_entropy", s.step1_scores.mean_entropy}}},
                         {"strategies", strategies}});
    }
    return {{"config", r.config_echo},
            {"parameters", {{"tunable", r.budget.tunable}, {"frozen", r.budget.frozen}, {"ratio", r.budget.ratio()}}},
            {"seeds", seeds}};
}

RunReport report_from_json(const json& j) {
    RunReport r;
    r.config_echo = j.at("config");
    r.budget.tunable = j.at("parameters").at("tunable");
    r.budget.frozen = j.at("parameters").at("frozen");
    for (const json& s : j.at("seeds")) {
        SeedResult sr;
        sr.seed = s.at("seed");
        sr.ok = s.at("ok");
        sr.error = s.at("error");
        sr.pretrain_holdout_dice = s.at("pretrain_holdout_dice");
        sr.step0_indices = s.at("step0_indices").get<std::vector<int>>();
        sr.step0_ids = s.at("step0_ids").get<std::vector<std::string>>();
        const json& sc = s.at("step1_scores");
        sr.step1_scores.indices = sc.at("indices").get<std::vector<int>>();
        sr.step1_scores.s_d = sc.at("s_d").get<std::vector<double>>();
        sr.step1_scores.s_g = sc.at("s_g").get<std::vector<double>>();
        sr.step1_scores.mean_entropy = sc.at("mean_entropy").get<std::vector<double>>();
        for (const json& st : s.at("strategies")) {
            StrategyResult res;
            res.strategy = parse_strategy(st.at("strategy"));
            res.step1_indices = st.at("step1_indices").get<std::vector<int>>();
            res.step1_ids = st.at("step1_ids").get<std::vector<std::string>>();
            res.summary = summary_from(st.at("summary"));
            res.note = st.at("note");
            sr.strategies.push_back(std::move(res));
        }
        r.seeds.push_back(std::move(sr));
    }
    return r;
}

RunReport read_report(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw InvalidArgument("cannot read " + file.string());
    return report_from_json(json::parse(in));
}

Pool seed_pool(const ExperimentConfig& c, std::uint64_t seed) {
    return build_pool(c.pool_size, derive_seed(seed, kPoolStream), LesionProfile::default_profile(),
                      {c.image_size, c.image_size}, "s" + std::to_string(seed) + "_pool");
}

Pool seed_test_set(const ExperimentConfig& c, std::uint64_t seed) {
    const LesionProfile profile = LesionProfile::default_profile();
    Pool p = build_pool(c.test_size, derive_seed(seed, kTestStream), profile, {c.image_size, c.image_size}, "s" + std::to_string(seed) + "_test");
    return Pool::fully_labeled(p.cases_for_export(), profile.num_classes());
}

std::vector<Case> seed_pretrain_cases(const ExperimentConfig& c, std::uint64_t seed) {
    std::vector<Case> out;
    for (int i = 0; i < c.pretrain_cases; ++i)
        out.push_back(gen_pretrain_case(derive_seed(seed, kPretrainStream, i), {c.image_size, c.image_size}));
    return out;
}

FrozenBackbone pretrained_backbone(const ExperimentConfig& c, std::uint64_t seed) {
    const auto cached = c.cache_dir / ("backbone_" + hex(c.pretrain_hash()) + "_s" + std::to_string(seed) + ".ckpt");
    if (std::filesystem::exists(cached)) return load_frozen_backbone(cached);
    BackboneConfig bc;
    bc.input_size = {c.image_size, c.image_size};
    PretrainOptions po;
    po.epochs = c.pretrain_epochs;
    po.lr = c.pretrain_lr;
    po.seed = derive_seed(seed, kPretrainStream, 1);
    const std::vector<Case> cases = seed_pretrain_cases(c, seed);
    FrozenBackbone fb = pretrain(Backbone(bc, derive_seed(seed, kBackboneInit)), cases, po);
    std::filesystem::create_directories(c.cache_dir);
    const auto tmp = cached.string() + ".tmp" + std::to_string(seed);
    save_backbone(tmp, fb);
    std::filesystem::rename(tmp, cached);
    return load_frozen_backbone(cached);
}

namespace {

std::vector<Sample> labeled_samples(const Pool& pool) {
    std::vector<Sample> out;
    for (int i : pool.labeled_indices()) out.push_back({pool.image(i), pool.mask(i)});
    return out;
}

TuneOptions tune_options(const ExperimentConfig& c, int epochs, std::uint64_t seed) {
    TuneOptions t;
    t.optimizer = c.tune_optimizer;
    t.epochs = epochs;
    t.lr = c.tune_lr;
    t.momentum = c.tune_momentum;
    t.batch_size = c.tune_batch;
    t.grad_clip = c.tune_clip;
    t.weights = c.weights;
    t.branches = c.branches;
    t.seed = seed;
    return t;
}

struct SeedArtifacts {
    std::vector<std::string> step0_rows;
    std::vector<std::string> step1_rows;
    std::vector<ScoreCsvRow> score_rows;
    std::vector<PerCaseRow> percase_rows;
};

SeedResult run_seed(const ExperimentConfig& c, std::uint64_t seed, ParameterBudget& budget, SeedArtifacts& art) {
    SeedResult res;
    res.seed = seed;
    const auto ckpt_dir = c.run_dir / "checkpoints";
    const auto log_dir = c.run_dir / "logs";
    const std::string tag = "seed" + std::to_string(seed);

    auto backbone = std::make_shared<const FrozenBackbone>(pretrained_backbone(c, seed));
    res.pretrain_holdout_dice = backbone->report().holdout_dice;
    save_backbone(ckpt_dir / ("backbone_" + tag + ".ckpt"), *backbone);

    Pool pool = seed_pool(c, seed);
    const Pool test = seed_test_set(c, seed);
    std::vector<Tensor> features;
    for (std::size_t i = 0; i < pool.size(); ++i) features.push_back(extract_features(*backbone, pool.image(i)));

    res.step0_indices = kcenter_greedy(features, c.budget_step0, derive_seed(seed, kKCenter));
    for (int i : res.step0_indices) res.step0_ids.push_back(pool.case_id(i));
    pool = label_oracle(std::move(pool), res.step0_indices);
    for (std::size_t r = 0; r < res.step0_indices.size(); ++r)
        art.step0_rows.push_back(std::to_string(seed) + ",kcenter," + std::to_string(r) + ',' +
                                     std::to_string(res.step0_indices[r]) + ',' + res.step0_ids[r]);

    std::vector<Mask> masks;
    for (int i : pool.labeled_indices()) masks.push_back(pool.mask(i));
    const Tensor prior = foreground_prior(masks, {c.image_size / 2, c.image_size / 2});
    PromptConfig pc;
    pc.num_prompts = c.prompts;
    pc.num_classes = pool.num_classes();
    PromptedModel model(backbone, init_prompt_set(prior, c.prompts, derive_seed(seed, kPromptInit), pc.generator_noise), pc,
                        derive_seed(seed, kPromptInit, 1));
    budget = model.budget();

    const std::uint64_t hash_before = backbone->weights_hash();
    const std::vector<Sample> step0_samples = labeled_samples(pool);
    write_training_log_csv(log_dir / ("tune_" + tag + "_step0.csv"),
                           prompt_tune(model, step0_samples, tune_options(c, c.tune_epochs, derive_seed(seed, kTuneStep0))));
    const auto step0_ckpt = ckpt_dir / ("prompted_" + tag + "_step0.ckpt");
    save_prompted(step0_ckpt, model);

    const std::vector<int> unlabeled = pool.unlabeled_indices();
    res.step1_scores = score_pool(model, pool, unlabeled);
    const std::vector<int> labeled = pool.labeled_indices();

    for (Strategy strategy : c.strategies) {
        const std::string name = to_string(strategy);
        Selection sel = select_step1(strategy, res.step1_scores, features, labeled, c.budget_step1,
                                     derive_seed(seed, kRandomPick));
        StrategyResult sr;
        sr.strategy = strategy;
        sr.step1_indices = sel.indices;
        sr.note = sel.note;
        for (int i : sel.indices) sr.step1_ids.push_back(pool.case_id(i));
        const std::set<int> chosen(sel.indices.begin(), sel.indices.end());
        for (const ScoreRecord& r : sel.records)
            art.score_rows.push_back({pool.case_id(r.case_index), r, chosen.contains(r.case_index), name, seed});
        for (std::size_t r = 0; r < sel.indices.size(); ++r)
            art.step1_rows.push_back(std::to_string(seed) + ',' + name + ',' + std::to_string(r) + ',' +
                                         std::to_string(sel.indices[r]) + ',' + sr.step1_ids[r]);

        const Pool step1_pool = label_oracle(pool, sel.indices);
        PromptedModel tuned = model;
        load_prompted(step0_ckpt, tuned);
        write_training_log_csv(log_dir / ("tune_" + tag + "_" + name + ".csv"),
                               prompt_tune(tuned, labeled_samples(step1_pool),
                                           tune_options(c, c.retune_epochs, derive_seed(seed, kTuneStep1))));
        save_prompted(ckpt_dir / ("prompted_" + tag + "_" + name + ".ckpt"), tuned);

        std::vector<CaseMetrics> cm;
        for (std::size_t i = 0; i < test.size(); ++i) {
            cm.push_back(evaluate_case(argmax_mask(tuned.forward_one(test.image(i), 0)), test.mask(i)));
            art.percase_rows.push_back({name, seed, test.case_id(i), cm.back()});
        }
        sr.summary = aggregate(cm);
        res.strategies.push_back(std::move(sr));
    }
    if (backbone->weights_hash() != hash_before) throw TrainingFailure("backbone changed during tuning", tag);
    return res;
}

} // namespace

RunReport run_pipeline(const ExperimentConfig& c) {
    c.validate();
    const auto t0 = std::chrono::steady_clock::now();
    for (const char* sub : {"checkpoints", "selections", "scores", "metrics", "logs", "plots"})
        std::filesystem::create_directories(c.run_dir / sub);
    {
        std::ofstream echo(c.run_dir / "config.echo");
        echo << c.echo();
    }

    RunReport report;
    report.config_echo = c.echo();
    SeedArtifacts art;
    for (std::uint64_t seed : c.seeds) {
        SeedArtifacts local;
        try {
            report.seeds.push_back(run_seed(c, seed, report.budget, local));
        } catch (const std::exception& e) {
            SeedResult failed;
            failed.seed = seed;
            failed.ok = false;
            failed.error = e.what();
            if (const auto* tf = dynamic_cast<const TrainingFailure*>(&e)) failed.error += " (" + tf->diagnostics() + ")";
            report.seeds.push_back(std::move(failed));
            continue;
        }
        art.step0_rows.insert(art.step0_rows.end(), local.step0_rows.begin(), local.step0_rows.end());
        art.step1_rows.insert(art.step1_rows.end(), local.step1_rows.begin(), local.step1_rows.end());
        art.score_rows.insert(art.score_rows.end(), local.score_rows.begin(), local.score_rows.end());
        art.percase_rows.insert(art.percase_rows.end(), local.percase_rows.begin(), local.percase_rows.end());
    }

    std::ofstream s0(c.run_dir / "selections" / "step0.csv"), s1(c.run_dir / "selections" / "step1.csv");
    s0 << "seed,strategy,rank,case_index,case_id\n";
    s1 << "seed,strategy,rank,case_index,case_id\n";
    for (const std::string& row : art.step0_rows) s0 << row << '\n';
    for (const std::string& row : art.step1_rows) s1 << row << '\n';
    write_scores_csv(c.run_dir / "scores" / "step1.csv", art.score_rows);
    write_percase_csv(c.run_dir / "metrics" / "percase.csv", art.percase_rows);

    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ofstream(c.run_dir / "report.json") << to_json(report).dump(2) << '\n';
    std::ofstream(c.run_dir / "timing.json") << json{{"wall_seconds", report.wall_seconds}}.dump(2) << '\n';
    if (c.strategies.size() >= 2) write_comparison(c.run_dir, report, compare_strategies(report, c.strategies));
    return report;
}

ComparisonTable compare_strategies(const RunReport& report, std::span<const Strategy> expected) {
    std::vector<std::string> order;
    for (Strategy s : expected) order.push_back(to_string(s));
    for (const SeedResult& s : report.seeds)
        for (const StrategyResult& st : s.strategies)
            if (std::find(order.begin(), order.end(), to_string(st.strategy)) == order.end())
                order.push_back(to_string(st.strategy));

    const std::size_t M = std::size(kMetricNames);
    ComparisonTable table;
    for (const std::string& name : order) {
        std::vector<std::vector<double>> values;
        for (const SeedResult& s : report.seeds) {
            if (!s.ok) continue;
            for (const StrategyResult& st : s.strategies)
                if (to_string(st.strategy) == name) values.push_back(summary_values(st.summary));
        }
        ComparisonRow row;
        row.strategy = name;
        row.n_seeds = static_cast<int>(values.size());
        row.missing = values.empty();
        row.mean.assign(M, row.missing ? std::nan("") : 0.0);
        row.std.assign(M, row.missing ? std::nan("") : 0.0);
        for (std::size_t m = 0; m < M && !row.missing; ++m) {
            double sum = 0.0;
            for (const auto& v : values) sum += v[m];
            row.mean[m] = sum / values.size();
            if (values.size() > 1) {
                double ss = 0.0;
                for (const auto& v : values) ss += (v[m] - row.mean[m]) * (v[m] - row.mean[m]);
                row.std[m] = std::sqrt(ss / (values.size() - 1));
            }
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

void write_comparison_csv(const std::filesystem::path& file, const ComparisonTable& table) {
    std::ofstream out(file);
    if (!out) throw InvalidArgument("cannot write " + file.string());
    out << "strategy,n_seeds,missing";
    for (const char* m : kMetricNames) out << ',' << m << "_mean," << m << "_std";
    out << '\n';
    for (const ComparisonRow& r : table.rows) {
        out << r.strategy << ',' << r.n_seeds << ',' << (r.missing ? 1 : 0);
        for (std::size_t m = 0; m < r.mean.size(); ++m)
            out << ',' << (r.missing ? "" : fmt(r.mean[m])) << ',' << (r.missing ? "" : fmt(r.std[m]));
        out << '\n';
    }
}

ComparisonTable read_comparison_csv(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw InvalidArgument("cannot read " + file.string());
    std::string line;
    std::getline(in, line);
    ComparisonTable table;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        while (cells.size() < 3 + 2 * std::size(kMetricNames)) cells.emplace_back();
        ComparisonRow r;
        r.strategy = cells[0];
        r.n_seeds = std::stoi(cells[1]);
        r.missing = cells[2] == "1";
        for (std::size_t m = 0; m < std::size(kMetricNames); ++m) {
            const std::string& a = cells[3 + 2 * m];
            const std::string& b = cells[4 + 2 * m];
            r.mean.push_back(a.empty() ? std::nan("") : std::stod(a));
            r.std.push_back(b.empty() ? std::nan("") : std::stod(b));
        }
        table.rows.push_back(std::move(r));
    }
    return table;
}

namespace {

constexpr const char* kPalette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1"};

void write_metric_plot(const std::filesystem::path& file, const ComparisonTable& table) {
    const int M = static_cast<int>(std::size(kMetricNames));
    const int S = static_cast<int>(table.rows.size());
    const double group_w = 40.0 + 18.0 * S, left = 50, top = 20, h = 220;
    const double width = left + group_w * M + 160, height = top + h + 60;
    std::ofstream out(file);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double y = top + h - h * t / 4.0;
        out << "<line x1=\"" << left << "\" x2=\"" << left + group_w * M << "\" y1=\"" << y << "\" y2=\"" << y
            << "\" stroke=\"#ddd\"/><text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << t * 0.25
            << "</text>\n";
    }
    for (int m = 0; m < M; ++m) {
        const double gx = left + group_w * m + 20;
        for (int s = 0; s < S; ++s) {
            const ComparisonRow& r = table.rows[s];
            if (r.missing) continue;
            const double v = std::clamp(r.mean[m], 0.0, 1.0), e = r.std[m];
            const double x = gx + 18.0 * s;
            out << "<rect x=\"" << x << "\" y=\"" << top + h - h * v << "\" width=\"14\" height=\"" << h * v << "\" fill=\""
                << kPalette[s % std::size(kPalette)] << "\"/>\n";
            out << "<line x1=\"" << x + 7 << "\" x2=\"" << x + 7 << "\" y1=\"" << top + h - h * std::min(1.0, v + e)
                << "\" y2=\"" << top + h - h * std::max(0.0, v - e) << "\" stroke=\"black\"/>\n";
        }
        out << "<text x=\"" << gx + 9.0 * S << "\" y=\"" << top + h + 16 << "\" text-anchor=\"middle\">" << kMetricNames[m]
            << "</text>\n";
    }
    for (int s = 0; s < S; ++s) {
        const double y = top + 14.0 * s;
        out << "<rect x=\"" << left + group_w * M + 10 << "\" y=\"" << y << "\" width=\"10\" height=\"10\" fill=\""
            << kPalette[s % std::size(kPalette)] << "\"/><text x=\"" << left + group_w * M + 26 << "\" y=\"" << y + 9
            << "\">" << table.rows[s].strategy << (table.rows[s].missing ? " (missing)" : "") << "</text>\n";
    }
    out << "</svg>\n";
}

void write_score_histograms(const std::filesystem::path& file, const PoolScores& scores) {
    const int bins = 10;
    std::vector<std::pair<std::string, std::vector<double>>> cols;
    auto normalized = [](const std::vector<double>& v) {
        double m = 0.0;
        for (double x : v) m = std::max(m, x);
        std::vector<double> out;
        for (double x : v) out.push_back(m > 0.0 ? x / m : 0.0);
        return out;
    };
    const auto sd = normalized(scores.s_d), sg = normalized(scores.s_g);
    std::vector<double> s;
    for (std::size_t i = 0; i < sd.size(); ++i) s.push_back(sd[i] * sg[i]);
    cols = {{"s_d / max", sd}, {"s_g / max", sg}, {"S", s}};
    const double pw = 220, ph = 150, pad = 40;
    std::ofstream out(file);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << (pw + pad) * cols.size() + pad << "\" height=\""
        << ph + 2 * pad << "\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (std::size_t c = 0; c < cols.size(); ++c) {
        std::vector<int> counts(bins, 0);
        for (double v : cols[c].second) ++counts[std::clamp(static_cast<int>(v * bins), 0, bins - 1)];
        const int peak = std::max(1, *std::max_element(counts.begin(), counts.end()));
        const double ox = pad + c * (pw + pad), oy = pad + ph;
        for (int b = 0; b < bins; ++b) {
            const double bh = ph * counts[b] / peak;
            out << "<rect x=\"" << ox + b * pw / bins << "\" y=\"" << oy - bh << "\" width=\"" << pw / bins - 1
                << "\" height=\"" << bh << "\" fill=\"" << kPalette[c] << "\"/>\n";
        }
        out << "<line x1=\"" << ox << "\" x2=\"" << ox + pw << "\" y1=\"" << oy << "\" y2=\"" << oy << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << ox + pw / 2 << "\" y=\"" << pad - 8 << "\" text-anchor=\"middle\">" << cols[c].first
            << " (max bin " << peak << ")</text>\n";
        out << "<text x=\"" << ox << "\" y=\"" << oy + 14 << "\">0</text><text x=\"" << ox + pw << "\" y=\"" << oy + 14
            << "\" text-anchor=\"end\">1</text>\n";
    }
    out << "</svg>\n";
}

} // namespace

void write_comparison(const std::filesystem::path& dir, const RunReport& report, const ComparisonTable& table) {
    std::filesystem::create_directories(dir / "plots");
    write_comparison_csv(dir / "comparison.csv", table);
    write_metric_plot(dir / "plots" / "metrics.svg", table);
    for (const SeedResult& s : report.seeds)
        if (s.ok && !s.step1_scores.indices.empty())
            write_score_histograms(dir / "plots" / ("scores_seed" + std::to_string(s.seed) + ".svg"), s.step1_scores);
}

} // namespace slpt
