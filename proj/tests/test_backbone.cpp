#include <doctest.h>

#include <filesystem>

#include "slpt/checkpoint.hpp"
#include "slpt/errors.hpp"
#include "test_support.hpp"

using namespace slpt;

namespace {

std::vector<Tensor> snapshot(const ConstParamRefs& params) {
    std::vector<Tensor> out;
    for (const Parameter* p : params) out.push_back(p->value);
    return out;
}

std::vector<Case> organ_cases(int n, std::uint64_t seed, ImageSize size) {
    std::vector<Case> out;
    for (int i = 0; i < n; ++i) out.push_back(gen_pretrain_case(derive_seed(seed, i), size));
    return out;
}

double cosine(const Tensor& a, const Tensor& b) { return a.dot(b) / (a.norm() * b.norm()); }

} // namespace

TEST_CASE("block count and insertion shapes") {
    BackboneConfig cfg;
    Backbone net(cfg, 0);
    CHECK(net.num_blocks() == 7);
    const auto shapes = net.insertion_shapes();
    REQUIRE(shapes.size() == 7);
    CHECK(shapes[0] == BlockShape{8, 64, 64});
    CHECK(shapes[3] == BlockShape{64, 8, 8});
    CHECK(shapes[6] == BlockShape{8, 64, 64});

    Graph g(false);
    Var logits = net.pretrain_logits(g, g.constant(Tensor({1, 64, 64}, 0.3)));
    CHECK(logits.shape() == Shape{2, 64, 64});

    int seen = 0;
    net.run(g, g.constant(Tensor({1, 64, 64})), [&](int i, Var f) {
        CHECK(f.shape() == Shape{shapes[i].channels, shapes[i].height, shapes[i].width});
        ++seen;
        return f;
    });
    CHECK(seen == 7);
}

TEST_CASE("config validation") {
    BackboneConfig cfg;
    cfg.input_size = {60, 64};
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg.input_size = {64, 64};
    cfg.num_scales = 0;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("same seed gives identical weights") {
    Backbone a(BackboneConfig{}, 3), b(BackboneConfig{}, 3), c(BackboneConfig{}, 4);
    CHECK(snapshot(std::as_const(a).all_parameters()) == snapshot(std::as_const(b).all_parameters()));
    CHECK_FALSE(snapshot(std::as_const(a).all_parameters()) == snapshot(std::as_const(c).all_parameters()));
}

TEST_CASE("zero epochs leave weights unchanged") {
    const auto cfg = slpt::test::toy_backbone_config(32);
    Backbone net(cfg, 2);
    const auto before = snapshot(std::as_const(net).all_parameters());
    PretrainOptions opt;
    opt.epochs = 0;
    FrozenBackbone frozen = pretrain(net, organ_cases(20, 1, {32, 32}), opt);
    CHECK(snapshot(frozen.net().all_parameters()) == before);
    CHECK(frozen.report().epochs == 0);
    for (const Parameter* p : frozen.net().all_parameters()) CHECK(p->frozen);
}

TEST_CASE("pretraining is deterministic") {
    const auto cfg = slpt::test::toy_backbone_config(32);
    const auto cases = organ_cases(20, 2, {32, 32});
    PretrainOptions opt;
    opt.epochs = 2;
    FrozenBackbone a = pretrain(Backbone(cfg, 5), cases, opt);
    FrozenBackbone b = pretrain(Backbone(cfg, 5), cases, opt);
    CHECK(a.weights_hash() == b.weights_hash());
    CHECK(snapshot(a.net().all_parameters()) == snapshot(b.net().all_parameters()));
    CHECK_THROWS_AS(pretrain(Backbone(cfg, 5), std::span(cases).first(10), opt), InvalidArgument);
}

TEST_CASE("organ pretraining reaches high held-out Dice") {
    PretrainOptions opt;
    opt.epochs = 30;
    FrozenBackbone frozen = pretrain(Backbone(BackboneConfig{}, 0), organ_cases(100, 9, {64, 64}), opt);
    MESSAGE("held-out organ Dice " << frozen.report().holdout_dice);
    CHECK(frozen.report().holdout_dice >= 0.85);
    CHECK(frozen.report().train_cases == 80);
    CHECK(frozen.report().holdout_cases == 20);
}

TEST_CASE("bottleneck features") {
    auto frozen = slpt::test::toy_backbone(3, 32);
    Case c = gen_pretrain_case(4, {32, 32});
    Tensor f1 = extract_features(*frozen, c.image);
    Tensor f2 = extract_features(*frozen, c.image);
    CHECK(f1 == f2);
    CHECK(f1.shape() == Shape{frozen->config().bottleneck_channels()});

    // organ-free image: every pixel set to the mean background intensity
    double bg = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < c.mask.size(); ++i)
        if (c.mask.labels[i] == 0) bg += c.image[i], ++n;
    Tensor plain({1, 32, 32}, bg / n);
    CHECK(cosine(extract_features(*frozen, plain), f1) < 0.999);
}

TEST_CASE("frozen backbone checkpoints") {
    auto frozen = slpt::test::toy_backbone(6);
    const auto dir = std::filesystem::temp_directory_path() / "slpt_test_backbone";
    std::filesystem::remove_all(dir);
    save_backbone(dir / "frozen.ckpt", *frozen);
    FrozenBackbone back = load_frozen_backbone(dir / "frozen.ckpt");
    CHECK(back.weights_hash() == frozen->weights_hash());
    CHECK(back.config() == frozen->config());

    CHECK_THROWS_AS(load_trainable_backbone(dir / "frozen.ckpt"), FrozenParameterError);
    Backbone thawed = load_trainable_backbone(dir / "frozen.ckpt", true);
    for (const Parameter* p : std::as_const(thawed).all_parameters()) CHECK_FALSE(p->frozen);

    save_backbone(dir / "open.ckpt", Backbone(slpt::test::toy_backbone_config(), 1), PretrainReport{});
    CHECK_NOTHROW(load_trainable_backbone(dir / "open.ckpt"));
    CHECK_THROWS_AS(load_frozen_backbone(dir / "missing.ckpt"), InvalidArgument);
    std::filesystem::remove_all(dir);
}

TEST_CASE("frozen weights reject optimizer updates") {
    auto frozen = slpt::test::toy_backbone(7);
    Backbone copy = frozen->net();
    CHECK_THROWS_AS(SgdMomentum(copy.all_parameters()), FrozenParameterError);
}
