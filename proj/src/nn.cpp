#include "slpt/nn.hpp"

#include <cmath>

#include "slpt/errors.hpp"

namespace slpt {

Conv2d::Conv2d(const std::string& name, int cin, int cout, int kernel, ConvSpec s, Rng& rng, ConvInit init)
    : spec(s), has_bias(init.bias) {
    if (cin % s.groups != 0 || cout % s.groups != 0)
        throw InvalidArgument("Conv2d " + name + ": channels not divisible by groups");
    const int cin_g = cin / s.groups;
    weight.name = name + ".weight";
    weight.value = Tensor({cout, cin_g, kernel, kernel});
    const double stddev = init.gain * std::sqrt(2.0 / (cin_g * kernel * kernel));
    if (stddev > 0.0)
        for (double& v : weight.value.storage()) v = normal(rng, 0.0, stddev);
    bias.name = name + ".bias";
    bias.value = Tensor({has_bias ? cout : 0});
}

Var Conv2d::forward(Graph& g, Var x) const {
    Var w = g.param(weight);
    if (!has_bias) return ops::conv2d(x, w, nullptr, spec);
    Var b = g.param(bias);
    return ops::conv2d(x, w, &b, spec);
}

void Conv2d::collect(ParamRefs& out) {
    out.push_back(&weight);
    if (has_bias) out.push_back(&bias);
}

void Conv2d::collect(ConstParamRefs& out) const {
    out.push_back(&weight);
    if (has_bias) out.push_back(&bias);
}

std::size_t count_parameters(const ConstParamRefs& params) {
    std::size_t n = 0;
    for (const Parameter* p : params) n += p->value.numel();
    return n;
}

namespace {
void check_step(const ParamRefs& params, const std::vector<Tensor>& grads) {
    if (grads.size() != params.size()) throw InvalidArgument("optimizer: gradient count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->frozen) throw FrozenParameterError("optimizer: parameter " + params[i]->name + " is frozen");
        require_same_shape(params[i]->value, grads[i], "optimizer step");
    }
}

void reject_frozen(const ParamRefs& params) {
    for (const Parameter* p : params)
        if (p->frozen) throw FrozenParameterError("optimizer: parameter " + p->name + " is frozen");
}
} // namespace

SgdMomentum::SgdMomentum(ParamRefs params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    reject_frozen(params_);
    for (const Parameter* p : params_) velocity_.push_back(Tensor::zeros(p->value.shape()));
}

void SgdMomentum::step(const std::vector<Tensor>& grads, double lr) {
    check_step(params_, grads);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& w = params_[i]->value;
        Tensor& v = velocity_[i];
        for (std::size_t j = 0; j < w.numel(); ++j) {
            const double g = grads[i][j] + weight_decay_ * w[j];
            v[j] = momentum_ * v[j] + g;
            w[j] -= lr * v[j];
        }
    }
}

Adam::Adam(ParamRefs params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    reject_frozen(params_);
    for (const Parameter* p : params_) {
        m_.push_back(Tensor::zeros(p->value.shape()));
        v_.push_back(Tensor::zeros(p->value.shape()));
    }
}

void Adam::step(const std::vector<Tensor>& grads, double lr) {
    check_step(params_, grads);
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& w = params_[i]->value;
        for (std::size_t j = 0; j < w.numel(); ++j) {
            const double g = grads[i][j];
            m_[i][j] = beta1_ * m_[i][j] + (1 - beta1_) * g;
            v_[i][j] = beta2_ * v_[i][j] + (1 - beta2_) * g * g;
            w[j] -= lr * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps_);
        }
    }
}

double clip_grad_norm(std::vector<Tensor>& grads, double max_norm) {
    double sq = 0.0;
    for (const Tensor& g : grads) sq += g.dot(g);
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm)
        for (Tensor& g : grads) g *= max_norm / norm;
    return norm;
}

} // namespace slpt
