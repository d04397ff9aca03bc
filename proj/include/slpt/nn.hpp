#pragma once

#include <string>
#include <vector>

#include "slpt/autograd.hpp"
#include "slpt/rng.hpp"

namespace slpt {

using ParamRefs = std::vector<Parameter*>;
using ConstParamRefs = std::vector<const Parameter*>;

struct ConvInit {
    double gain = 1.0;    ///< multiplies the He-normal standard deviation; 0 gives zero weights
    bool bias = true;
};

/// 2D convolution layer owning its weight and bias.
struct Conv2d {
    Parameter weight;
    Parameter bias;
    ConvSpec spec;
    bool has_bias = true;

    Conv2d() = default;
    Conv2d(const std::string& name, int cin, int cout, int kernel, ConvSpec spec, Rng& rng, ConvInit init = {});

    int in_channels() const { return weight.value.size(1) * spec.groups; }
    int out_channels() const { return weight.value.size(0); }

    Var forward(Graph& g, Var x) const;
    void collect(ParamRefs& out);
    void collect(ConstParamRefs& out) const;
};

std::size_t count_parameters(const ConstParamRefs& params);

/// Momentum SGD. Refuses to touch frozen parameters.
class SgdMomentum {
public:
    SgdMomentum(ParamRefs params, double momentum = 0.9, double weight_decay = 0.0);
    void step(const std::vector<Tensor>& grads, double lr);

private:
    ParamRefs params_;
    std::vector<Tensor> velocity_;
    double momentum_;
    double weight_decay_;
};

class Adam {
public:
    explicit Adam(ParamRefs params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(const std::vector<Tensor>& grads, double lr);

private:
    ParamRefs params_;
    std::vector<Tensor> m_, v_;
    double beta1_, beta2_, eps_;
    long t_ = 0;
};

/// Scales gradients in place so their global L2 norm is at most max_norm; returns the pre-clip norm.
double clip_grad_norm(std::vector<Tensor>& grads, double max_norm);

} // namespace slpt
