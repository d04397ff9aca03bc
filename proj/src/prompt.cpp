#include "slpt/prompt.hpp"

#include <cmath>
#include <numeric>

#include "slpt/errors.hpp"

namespace slpt {
namespace {

int divisible_groups(int requested, int cin, int cout) {
    return (requested > 1 && cin % requested == 0 && cout % requested == 0) ? requested : 1;
}

void require_finite(Var v, const char* what) {
    if (!v.value().all_finite()) throw NumericError(std::string("FPU: non-finite ") + what);
}

} // namespace

void PromptConfig::validate() const {
    if (num_prompts < 2) throw InvalidArgument("prompt config: K must be >= 2");
    if (num_classes < 2) throw InvalidArgument("prompt config: num_classes must be >= 2");
    if (dilations.empty()) throw InvalidArgument("prompt config: at least one dilation rate required");
    for (int d : dilations)
        if (d < 1) throw InvalidArgument("prompt config: dilation rates must be >= 1");
    if (fpu_reduction < 1 || se_reduction < 1 || prompt_groups < 1 || adapter_groups < 1)
        throw InvalidArgument("prompt config: reductions and groups must be >= 1");
}

Var PromptGenerator::forward(Graph& g, Var meta) const {
    const Tensor& M = meta.value();
    Var up = ops::resize_bilinear(meta, M.size(1) * 2, M.size(2) * 2);
    return ops::add(conv.forward(g, up), g.constant(noise));
}

std::vector<Tensor> PromptSet::generate() const {
    Graph g(false);
    Var m = g.param(meta);
    std::vector<Tensor> out;
    for (const PromptGenerator& gen : generators) out.push_back(gen.forward(g, m).value());
    return out;
}

void PromptSet::collect(ParamRefs& out) {
    out.push_back(&meta);
    for (PromptGenerator& gen : generators) gen.conv.collect(out);
}

void PromptSet::collect(ConstParamRefs& out) const {
    out.push_back(&meta);
    for (const PromptGenerator& gen : generators) gen.conv.collect(out);
}

PromptSet init_prompt_set(const Tensor& prior, int num_prompts, std::uint64_t seed, double noise_amplitude) {
    if (prior.dim() != 3 || prior.size(0) != 1)
        throw InvalidArgument("init_prompt_set: prior must be [1, H/2, W/2], got " + shape_str(prior.shape()));
    if (num_prompts < 2) throw InvalidArgument("init_prompt_set: K must be >= 2");
    PromptSet set;
    set.meta.name = "prompt.meta";
    set.meta.value = prior;
    const int H = prior.size(1) * 2, W = prior.size(2) * 2;
    for (int k = 0; k < num_prompts; ++k) {
        Rng rng(derive_seed(seed, 0x6E6, k));
        PromptGenerator gen;
        gen.conv = Conv2d("prompt.gen" + std::to_string(k), 1, 1, 3, ConvSpec{1, 1, 1, 1}, rng, ConvInit{0.0, true});
        // Starts near a local average of the meta prompt, perturbed per generator.
        for (double& w : gen.conv.weight.value.storage()) w = 1.0 / 9.0 + normal(rng, 0.0, 0.1);
        gen.conv.bias.value[0] = normal(rng, 0.0, 0.1);
        gen.noise = Tensor({1, H, W});
        for (double& v : gen.noise.storage()) v = noise_amplitude * normal(rng);
        set.generators.push_back(std::move(gen));
    }
    return set;
}

Var PromptAdapter::forward(Graph& g, Var prompt) const {
    return project.forward(g, ops::resize_bilinear(prompt, target.height, target.width));
}

Fpu::Fpu(const std::string& name, int C, const PromptConfig& cfg, Rng& rng) : channels(C) {
    const int r = std::max(C / cfg.fpu_reduction, 2);
    const int q = std::max(C / cfg.se_reduction, 2);
    reduce = Conv2d(name + ".reduce", 2 * C, r, 1, ConvSpec{}, rng);
    for (int d : cfg.dilations)
        context.emplace_back(name + ".context_d" + std::to_string(d), r, r, 3, ConvSpec{1, d, d, r}, rng);
    const int branches = static_cast<int>(cfg.dilations.size()) + 1;
    mix = Conv2d(name + ".mix", branches * r, C, 1, ConvSpec{}, rng, ConvInit{cfg.fusion_init_gain, true});
    squeeze = Conv2d(name + ".se_squeeze", C, q, 1, ConvSpec{}, rng);
    excite = Conv2d(name + ".se_excite", q, C, 1, ConvSpec{}, rng);
    prompt_depthwise = Conv2d(name + ".prompt_dw", 2 * C, 2 * C, 3, ConvSpec{1, 1, 1, 2 * C}, rng);
    const int pg = divisible_groups(cfg.prompt_groups, 2 * C, C);
    prompt_pointwise = Conv2d(name + ".prompt_pw", 2 * C, C, 1, ConvSpec{1, 0, 1, pg}, rng);
}

std::pair<Var, Var> Fpu::forward(Graph& g, Var feature, Var prompt) const {
    if (feature.shape() != prompt.shape())
        throw InvalidArgument("FPU: feature " + shape_str(feature.shape()) + " and prompt " +
                              shape_str(prompt.shape()) + " differ in shape");
    if (feature.value().size(0) != channels)
        throw InvalidArgument("FPU: expected " + std::to_string(channels) + " channels, got " +
                              shape_str(feature.shape()));
    require_finite(feature, "feature");
    require_finite(prompt, "prompt");
    const int h = feature.value().size(1), w = feature.value().size(2);

    const Var fp[] = {feature, prompt};
    Var z = ops::relu(reduce.forward(g, ops::concat_channels(fp)));
    std::vector<Var> parts;
    for (const Conv2d& c : context) parts.push_back(ops::relu(c.forward(g, z)));
    parts.push_back(ops::expand_spatial(ops::global_avg_pool(z), h, w));
    Var fused = mix.forward(g, ops::concat_channels(parts));

    Var gate = ops::sigmoid(excite.forward(g, ops::relu(squeeze.forward(g, ops::global_avg_pool(fused)))));
    Var attention = ops::mul_channel(fused, gate);
    Var updated = ops::add(ops::mul(feature, attention), feature);

    const Var qp[] = {updated, prompt};
    Var next_prompt = prompt_pointwise.forward(g, prompt_depthwise.forward(g, ops::concat_channels(qp)));
    return {updated, next_prompt};
}

void Fpu::collect(ParamRefs& out) {
    reduce.collect(out);
    for (Conv2d& c : context) c.collect(out);
    mix.collect(out);
    squeeze.collect(out);
    excite.collect(out);
    prompt_depthwise.collect(out);
    prompt_pointwise.collect(out);
}

void Fpu::collect(ConstParamRefs& out) const {
    reduce.collect(out);
    for (const Conv2d& c : context) c.collect(out);
    mix.collect(out);
    squeeze.collect(out);
    excite.collect(out);
    prompt_depthwise.collect(out);
    prompt_pointwise.collect(out);
}

PromptedModel::PromptedModel(std::shared_ptr<const FrozenBackbone> backbone, PromptSet prompts,
                             const PromptConfig& config, std::uint64_t seed)
    : backbone_(std::move(backbone)), config_(config), prompts_(std::move(prompts)) {
    if (!backbone_) throw InvalidArgument("PromptedModel: null backbone");
    config_.validate();
    if (prompts_.size() != config_.num_prompts)
        throw InvalidArgument("PromptedModel: prompt set has " + std::to_string(prompts_.size()) + " prompts, config says " +
                              std::to_string(config_.num_prompts));
    const BackboneConfig& bc = backbone_->config();
    if (prompts_.meta.value.shape() != Shape{1, bc.input_size.height / 2, bc.input_size.width / 2})
        throw InvalidArgument("PromptedModel: meta prompt must be [1, H/2, W/2], got " +
                              shape_str(prompts_.meta.value.shape()));

    Rng rng(derive_seed(seed, 0xF9E));
    const auto shapes = backbone_->net().insertion_shapes();
    int prev = 1;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const std::string name = "fpu" + std::to_string(i);
        const int C = shapes[i].channels;
        PromptAdapter ad;
        ad.target = shapes[i];
        ad.project = Conv2d(name + ".adapter", prev, C, 1, ConvSpec{1, 0, 1, divisible_groups(config_.adapter_groups, prev, C)},
                            rng);
        adapters_.push_back(std::move(ad));
        fpus_.emplace_back(name, C, config_, rng);
        prev = C;
    }
    for (int k = 0; k < config_.num_prompts; ++k) {
        Rng head_rng(derive_seed(seed, 0x4EAD, k));
        heads_.emplace_back("head" + std::to_string(k), prev, config_.num_classes, 1, ConvSpec{}, head_rng, ConvInit{0.1, true});
    }
    verify_shapes();
}

void PromptedModel::check_branch(int branch) const {
    if (branch < 0 || branch >= num_prompts())
        throw InvalidArgument("branch " + std::to_string(branch) + " out of range [0, " + std::to_string(num_prompts()) +
                              ")");
}

void PromptedModel::verify_shapes() const {
    const BackboneConfig& bc = backbone_->config();
    Graph g(false);
    Var x = g.constant(Tensor({bc.input_channels, bc.input_size.height, bc.input_size.width}));
    Var p = prompts_.generators[0].forward(g, g.param(prompts_.meta));
    if (p.shape() != Shape{1, bc.input_size.height, bc.input_size.width})
        throw InvalidArgument("PromptedModel: generated prompt has shape " + shape_str(p.shape()));
    // Fpu::forward rejects any insertion point where prompt and feature shapes differ.
    logits_with_prompt(g, x, p, 0);
}

Var PromptedModel::logits_with_prompt(Graph& g, Var x, Var prompt, int branch) const {
    check_branch(branch);
    Var current = prompt;
    auto hook = [&](int i, Var feature) {
        Var adapted = adapters_[i].forward(g, current);
        auto [f, p] = fpus_[i].forward(g, feature, adapted);
        current = p;
        return f;
    };
    return heads_[branch].forward(g, backbone_->net().run(g, x, hook));
}

Var PromptedModel::logits(Graph& g, Var x, int branch) const {
    check_branch(branch);
    Var prompt = prompts_.generators[branch].forward(g, g.param(prompts_.meta));
    return logits_with_prompt(g, x, prompt, branch);
}

Tensor PromptedModel::forward_one(const Tensor& x, int branch) const {
    Graph g(false);
    return ops::softmax_channels(logits(g, g.constant(x), branch)).value();
}

std::vector<Tensor> PromptedModel::forward_all(const Tensor& x) const {
    std::vector<Tensor> out;
    for (int k = 0; k < num_prompts(); ++k) out.push_back(forward_one(x, k));
    return out;
}

ParamRefs PromptedModel::tunable() {
    ParamRefs out;
    prompts_.collect(out);
    for (PromptAdapter& a : adapters_) a.project.collect(out);
    for (Fpu& f : fpus_) f.collect(out);
    for (Conv2d& h : heads_) h.collect(out);
    return out;
}

ConstParamRefs PromptedModel::tunable() const {
    ConstParamRefs out;
    prompts_.collect(out);
    for (const PromptAdapter& a : adapters_) a.project.collect(out);
    for (const Fpu& f : fpus_) f.collect(out);
    for (const Conv2d& h : heads_) h.collect(out);
    return out;
}

std::vector<ParamDescriptor> PromptedModel::tunable_parameters() const {
    std::vector<ParamDescriptor> out;
    for (const Parameter* p : tunable()) out.push_back({p->name, p->value.shape(), p->value.numel()});
    return out;
}

ParameterBudget PromptedModel::budget() const {
    return {count_parameters(tunable()), count_parameters(backbone_->net().block_parameters())};
}

} // namespace slpt
