#include "slpt/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <numeric>
#include <sstream>

#include "slpt/errors.hpp"
#include "slpt/metrics.hpp"

namespace slpt {

void BackboneConfig::validate() const {
    if (num_scales < 2) throw InvalidArgument("backbone: num_scales must be >= 2");
    if (base_channels < 8) throw InvalidArgument("backbone: base_channels must be >= 8");
    if (input_channels < 1) throw InvalidArgument("backbone: input_channels must be >= 1");
    if (num_classes_pretrain < 2) throw InvalidArgument("backbone: num_classes_pretrain must be >= 2");
    const int f = 1 << num_scales;
    if (input_size.height % f || input_size.width % f || input_size.height < f || input_size.width < f)
        throw InvalidArgument("backbone: input size must be a positive multiple of 2^num_scales");
}

Backbone::Backbone(const BackboneConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(derive_seed(seed, 0xBACB0E));
    const int S = config_.num_scales;
    int h = config_.input_size.height, w = config_.input_size.width;
    int prev = config_.input_channels;
    auto name = [](int i) { return "block" + std::to_string(i); };
    for (int s = 0; s <= S; ++s) {
        const int c = config_.base_channels << s;
        const bool down = s > 0;
        if (down) h /= 2, w /= 2;
        BackboneBlock b;
        b.kind = s < S ? BackboneBlock::Kind::encoder : BackboneBlock::Kind::bottleneck;
        b.conv1 = Conv2d(name(s) + ".conv1", prev, c, 3, ConvSpec{down ? 2 : 1, 1, 1, 1}, rng);
        b.conv2 = Conv2d(name(s) + ".conv2", c, c, 3, ConvSpec{1, 1, 1, 1}, rng);
        b.out = {c, h, w};
        blocks_.push_back(std::move(b));
        prev = c;
    }
    for (int d = 0; d < S; ++d) {
        const int s = S - 1 - d;
        const int c = config_.base_channels << s;
        h *= 2, w *= 2;
        const int i = S + 1 + d;
        BackboneBlock b;
        b.kind = BackboneBlock::Kind::decoder;
        b.skip_from = s;
        b.conv1 = Conv2d(name(i) + ".conv1", prev + c, c, 3, ConvSpec{1, 1, 1, 1}, rng);
        b.conv2 = Conv2d(name(i) + ".conv2", c, c, 3, ConvSpec{1, 1, 1, 1}, rng);
        b.out = {c, h, w};
        blocks_.push_back(std::move(b));
        prev = c;
    }
    head_ = Conv2d("pretrain_head", prev, config_.num_classes_pretrain, 1, ConvSpec{}, rng, ConvInit{0.5, true});
}

std::vector<BlockShape> Backbone::insertion_shapes() const {
    std::vector<BlockShape> out;
    for (const auto& b : blocks_) out.push_back(b.out);
    return out;
}

Var Backbone::block_forward(Graph& g, int i, Var x, const std::vector<Var>& outputs) const {
    const BackboneBlock& b = blocks_[i];
    if (b.kind == BackboneBlock::Kind::decoder) {
        const Var parts[] = {ops::upsample_nearest(x, 2), outputs[b.skip_from]};
        x = ops::concat_channels(parts);
    }
    x = ops::relu(b.conv1.forward(g, x));
    return ops::relu(b.conv2.forward(g, x));
}

Var Backbone::run(Graph& g, Var x, const InsertionHook& hook) const {
    const Tensor& X = x.value();
    if (X.dim() != 3 || X.size(0) != config_.input_channels || X.size(1) != config_.input_size.height ||
        X.size(2) != config_.input_size.width)
        throw InvalidArgument("backbone: input shape " + shape_str(X.shape()) + " does not match configuration");
    std::vector<Var> outputs;
    for (int i = 0; i < num_blocks(); ++i) {
        x = block_forward(g, i, x, outputs);
        if (hook) x = hook(i, x);
        outputs.push_back(x);
    }
    return x;
}

Var Backbone::run_to_bottleneck(Graph& g, Var x) const {
    const Tensor& X = x.value();
    if (X.dim() != 3 || X.size(0) != config_.input_channels || X.size(1) != config_.input_size.height ||
        X.size(2) != config_.input_size.width)
        throw InvalidArgument("backbone: input shape " + shape_str(X.shape()) + " does not match configuration");
    std::vector<Var> outputs;
    for (int i = 0; i <= config_.num_scales; ++i) {
        x = block_forward(g, i, x, outputs);
        outputs.push_back(x);
    }
    return x;
}

Var Backbone::pretrain_logits(Graph& g, Var x) const { return head_.forward(g, run(g, x)); }

ParamRefs Backbone::block_parameters() {
    ParamRefs out;
    for (auto& b : blocks_) {
        b.conv1.collect(out);
        b.conv2.collect(out);
    }
    return out;
}

ConstParamRefs Backbone::block_parameters() const {
    ConstParamRefs out;
    for (const auto& b : blocks_) {
        b.conv1.collect(out);
        b.conv2.collect(out);
    }
    return out;
}

ParamRefs Backbone::all_parameters() {
    ParamRefs out = block_parameters();
    head_.collect(out);
    return out;
}

ConstParamRefs Backbone::all_parameters() const {
    ConstParamRefs out = block_parameters();
    head_.collect(out);
    return out;
}

void Backbone::freeze() {
    for (Parameter* p : all_parameters()) p->frozen = true;
}

void Backbone::unfreeze() {
    for (Parameter* p : all_parameters()) p->frozen = false;
}

std::uint64_t hash_parameters(const ConstParamRefs& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* data, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const Parameter* p : params) {
        feed(p->name.data(), p->name.size());
        for (int d : p->value.shape()) feed(&d, sizeof d);
        feed(p->value.data(), p->value.numel() * sizeof(double));
    }
    return h;
}

FrozenBackbone::FrozenBackbone(Backbone net, PretrainReport report) : net_(std::move(net)), report_(std::move(report)) {
    net_.freeze();
}

std::uint64_t FrozenBackbone::weights_hash() const { return hash_parameters(net_.all_parameters()); }

FrozenBackbone pretrain(Backbone backbone, std::span<const Case> cases, const PretrainOptions& opt) {
    if (cases.size() < 20) throw InvalidArgument("pretrain: need at least 20 cases, got " + std::to_string(cases.size()));
    if (opt.epochs < 0 || opt.batch_size < 1 || !(opt.lr > 0.0)) throw InvalidArgument("pretrain: invalid options");
    const int n = static_cast<int>(cases.size());
    const int n_hold = std::clamp(static_cast<int>(std::lround(opt.holdout_fraction * n)), 1, n - 1);
    const int n_train = n - n_hold;

    PretrainReport report;
    report.epochs = opt.epochs;
    report.train_cases = n_train;
    report.holdout_cases = n_hold;

    backbone.unfreeze();
    ParamRefs params = backbone.all_parameters();
    Adam adam(params);
    Rng rng(derive_seed(opt.seed, 0x5052));
    std::vector<int> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    const int steps_per_epoch = (n_train + opt.batch_size - 1) / opt.batch_size;
    const int total_steps = std::max(1, opt.epochs * steps_per_epoch);
    int step = 0;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (int start = 0; start < n_train; start += opt.batch_size, ++step) {
            const int end = std::min(n_train, start + opt.batch_size);
            Graph g;
            std::vector<Var> losses;
            for (int j = start; j < end; ++j) {
                const Case& c = cases[order[j]];
                Var logits = backbone.pretrain_logits(g, g.constant(c.image));
                Var ce = ops::cross_entropy(logits, c.mask);
                Var dice = ops::tversky_index(ops::softmax_channels(logits), c.mask, 0.5, 0.5, 1e-5);
                losses.push_back(ops::sub(ce, dice));
            }
            Var loss = ops::average(losses);
            const double value = loss.value()[0] + 1.0;
            if (!std::isfinite(value)) {
                std::ostringstream diag;
                diag << "epoch=" << epoch << " step=" << step << " loss=" << value;
                throw TrainingFailure("pretraining diverged", diag.str());
            }
            g.backward(loss);
            std::vector<Tensor> grads;
            for (const Parameter* p : params) grads.push_back(g.grad_of(*p));
            clip_grad_norm(grads, 10.0);
            const double lr = opt.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * step / total_steps));
            adam.step(grads, lr);
            epoch_loss += value * (end - start);
        }
        report.epoch_loss.push_back(epoch_loss / n_train);
    }
    report.final_loss = report.epoch_loss.empty() ? 0.0 : report.epoch_loss.back();

    double dice = 0.0;
    for (int i = n_train; i < n; ++i) {
        Graph g(false);
        const Tensor& logits = backbone.pretrain_logits(g, g.constant(cases[i].image)).value();
        dice += dice_per_case(argmax_mask(logits), cases[i].mask);
    }
    report.holdout_dice = dice / n_hold;
    return FrozenBackbone(std::move(backbone), std::move(report));
}

Tensor extract_features(const FrozenBackbone& frozen, const Tensor& image) {
    Graph g(false);
    Var f = ops::global_avg_pool(frozen.net().run_to_bottleneck(g, g.constant(image)));
    return f.value().reshaped({f.value().size(0)});
}

} // namespace slpt
