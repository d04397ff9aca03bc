#include "slpt/losses.hpp"

#include <cmath>
#include <sstream>

#include "slpt/errors.hpp"

namespace slpt {

void BranchConfig::validate() const {
    if (!(alpha > 0.0) || !(beta > 0.0)) throw InvalidArgument("branch config: alpha and beta must be positive");
}

std::vector<BranchConfig> default_branches() {
    return {{0.5, 0.5, AugStrength::light}, {0.7, 0.3, AugStrength::medium}, {0.3, 0.7, AugStrength::heavy}};
}

void LossWeights::validate() const {
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0) || !(lambda3 >= 0.0))
        throw InvalidArgument("loss weights must be non-negative");
}

double tversky_index(const Tensor& prob, const Mask& target, double alpha, double beta, double eps) {
    Graph g(false);
    return ops::tversky_index(g.constant(prob), target, alpha, beta, eps).value()[0];
}

double tversky_loss(const Tensor& prob, const Mask& target, const BranchConfig& branch) {
    branch.validate();
    return 1.0 - tversky_index(prob, target, branch.alpha, branch.beta);
}

double diversity_loss(std::span<const Tensor> prompts) {
    Graph g(false);
    std::vector<Var> vs;
    for (const Tensor& p : prompts) vs.push_back(g.constant(p));
    return ops::pairwise_cosine_sum(vs).value()[0];
}

LossGraph total_loss_graph(Graph& g, const PromptedModel& model, std::span<const Sample> batch,
                           const LossWeights& weights, std::span<const BranchConfig> branches, std::uint64_t seed) {
    weights.validate();
    const int K = model.num_prompts();
    if (static_cast<int>(branches.size()) != K)
        throw InvalidArgument("total_loss: " + std::to_string(branches.size()) + " branch configs for K=" + std::to_string(K));
    if (batch.empty()) throw InvalidArgument("total_loss: empty batch");
    for (const BranchConfig& b : branches) b.validate();

    LossGraph out;
    LossBreakdown& bd = out.breakdown;
    bd.branch.assign(K, 0.0);
    bd.tversky.assign(K, 0.0);
    bd.cross_entropy.assign(K, 0.0);

    Var meta = g.param(model.prompts().meta);
    std::vector<Var> prompts;
    for (int k = 0; k < K; ++k) prompts.push_back(model.prompts().generators[k].forward(g, meta));

    std::vector<Var> terms;
    const Var one = g.constant(Tensor({1}, 1.0));
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (int k = 0; k < K; ++k) {
        for (std::size_t s = 0; s < batch.size(); ++s) {
            auto [img, msk] = augment(batch[s].image, batch[s].mask, branches[k].aug_strength,
                                      derive_seed(seed, static_cast<std::uint64_t>(k), s));
            Var logits = model.logits_with_prompt(g, g.constant(std::move(img)), prompts[k], k);
            Var tl = ops::tversky_index(ops::softmax_channels(logits), msk, branches[k].alpha, branches[k].beta,
                                        kTverskyEps);
            Var ce = ops::cross_entropy(logits, msk);
            const double tl_loss = 1.0 - tl.value()[0];
            bd.tversky[k] += tl_loss * inv_n;
            bd.cross_entropy[k] += ce.value()[0] * inv_n;
            bd.branch[k] += (weights.lambda1 * tl_loss + weights.lambda2 * ce.value()[0]) * inv_n;
            Var tversky_loss = ops::sub(one, tl);
            terms.push_back(
                ops::scale(ops::add(ops::scale(tversky_loss, weights.lambda1), ops::scale(ce, weights.lambda2)), inv_n));
        }
    }
    Var div = ops::pairwise_cosine_sum(prompts);
    bd.diversity = div.value()[0];
    terms.push_back(ops::scale(div, weights.lambda3));
    out.total = ops::add_all(terms);

    bd.total = weights.lambda3 * bd.diversity;
    for (double b : bd.branch) bd.total += b;
    if (!std::isfinite(bd.total)) {
        std::ostringstream diag;
        diag << "diversity=" << bd.diversity;
        for (int k = 0; k < K; ++k) diag << " tversky[" << k << "]=" << bd.tversky[k] << " ce[" << k << "]=" << bd.cross_entropy[k];
        throw TrainingFailure("total loss is not finite", diag.str());
    }
    return out;
}

LossBreakdown total_loss(const PromptedModel& model, std::span<const Sample> batch, const LossWeights& weights,
                         std::span<const BranchConfig> branches, std::uint64_t seed) {
    Graph g(false);
    return total_loss_graph(g, model, batch, weights, branches, seed).breakdown;
}

} // namespace slpt
