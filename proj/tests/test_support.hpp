#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>

#include "slpt/backbone.hpp"
#include "slpt/data_synth.hpp"
#include "slpt/prompt.hpp"
#include "slpt/rng.hpp"

namespace slpt::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.storage()) v = uniform(rng, lo, hi);
    return t;
}

/// Random per-pixel distributions over C channels, [C,H,W].
inline Tensor random_simplex(int C, int H, int W, Rng& rng, double sharpness = 1.0) {
    Tensor t({C, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double s = 0.0;
            for (int c = 0; c < C; ++c) s += t.at(c, y, x) = std::exp(sharpness * normal(rng));
            for (int c = 0; c < C; ++c) t.at(c, y, x) /= s;
        }
    return t;
}

inline Mask random_mask(int H, int W, int classes, Rng& rng) {
    Mask m(H, W);
    for (int& v : m.labels) v = uniform_int(rng, 0, classes - 1);
    return m;
}

inline double rel_err(double analytic, double numeric, double floor = 1e-8) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central difference of f with respect to v[i].
inline double central_diff(const std::function<double()>& f, double& v, double h = 1e-6) {
    const double keep = v;
    v = keep + h;
    const double up = f();
    v = keep - h;
    const double down = f();
    v = keep;
    return (up - down) / (2.0 * h);
}

/// Fourth-order central difference; smaller truncation error for the same step.
inline double central_diff5(const std::function<double()>& f, double& v, double h = 1e-4) {
    const double keep = v;
    auto at = [&](double d) {
        v = keep + d;
        return f();
    };
    const double r = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
    v = keep;
    return r;
}

/// Moves every tunable weight off exact zeros so no ReLU sits on its kink.
inline void jitter(PromptedModel& model, Rng& rng, double scale = 0.05) {
    for (Parameter* p : model.tunable())
        for (double& v : p->value.storage()) v += scale * normal(rng);
}

inline BackboneConfig toy_backbone_config(int size = 16) {
    BackboneConfig c;
    c.num_scales = 2;
    c.base_channels = 8;
    c.input_size = {size, size};
    return c;
}

inline std::shared_ptr<const FrozenBackbone> toy_backbone(std::uint64_t seed = 1, int size = 16) {
    return std::make_shared<const FrozenBackbone>(Backbone(toy_backbone_config(size), seed), PretrainReport{});
}

inline PromptedModel toy_model(std::uint64_t seed = 1, int classes = 3, int K = 3, int size = 16) {
    Rng rng(derive_seed(seed, 0x70));
    Tensor prior = random_tensor({1, size / 2, size / 2}, rng, 0.0, 1.0);
    PromptConfig pc;
    pc.num_prompts = K;
    pc.num_classes = classes;
    return PromptedModel(toy_backbone(seed, size), init_prompt_set(prior, K, seed), pc, seed);
}

/// Blocky synthetic samples for quick tuning runs.
inline std::vector<Case> toy_cases(int n, std::uint64_t seed, int size = 32) {
    LesionProfile profile = LesionProfile::default_profile();
    std::vector<Case> out;
    for (int i = 0; i < n; ++i) out.push_back(gen_downstream_case(derive_seed(seed, i), {size, size}, profile));
    return out;
}

} // namespace slpt::test
