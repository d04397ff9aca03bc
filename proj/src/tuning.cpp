#include "slpt/tuning.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

#include "slpt/errors.hpp"

namespace slpt {

TrainingLog prompt_tune(PromptedModel& model, std::span<const Sample> labeled, const TuneOptions& opt) {
    if (labeled.empty()) throw InvalidArgument("prompt_tune: labeled set is empty");
    if (opt.epochs < 0 || opt.batch_size < 1 || !(opt.lr > 0.0))
        throw InvalidArgument("prompt_tune: invalid options");
    opt.weights.validate();

    ParamRefs params = model.tunable();
    std::optional<SgdMomentum> sgd;
    std::optional<Adam> adam;
    if (opt.optimizer == TuneOptimizer::adam) adam.emplace(params, opt.momentum);
    else sgd.emplace(params, opt.momentum);
    Rng rng(derive_seed(opt.seed, 0x7E9E));
    const int n = static_cast<int>(labeled.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    const int steps_per_epoch = (n + opt.batch_size - 1) / opt.batch_size;
    const int total_steps = std::max(1, opt.epochs * steps_per_epoch);

    TrainingLog log;
    int step = 0;
    double last_total = 0.0;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);
        EpochLog row;
        row.epoch = epoch;
        row.lr = opt.lr * std::pow(1.0 - static_cast<double>(step) / total_steps, opt.poly_power);
        const int K = model.num_prompts();
        row.loss.branch.assign(K, 0.0);
        row.loss.tversky.assign(K, 0.0);
        row.loss.cross_entropy.assign(K, 0.0);
        for (int start = 0; start < n; start += opt.batch_size, ++step) {
            std::vector<Sample> batch;
            for (int j = start; j < std::min(n, start + opt.batch_size); ++j) batch.push_back(labeled[order[j]]);
            Graph g;
            LossGraph lg;
            try {
                lg = total_loss_graph(g, model, batch, opt.weights, opt.branches,
                                      derive_seed(opt.seed, static_cast<std::uint64_t>(step)));
            } catch (const NumericError& e) {
                std::ostringstream diag;
                diag << "epoch=" << epoch << " step=" << step << " last_loss=" << last_total << " cause=" << e.what();
                throw TrainingFailure("prompt tuning diverged", diag.str());
            }
            last_total = lg.breakdown.total;
            g.backward(lg.total);
            std::vector<Tensor> grads;
            for (const Parameter* p : params) grads.push_back(g.grad_of(*p));
            const double gnorm = clip_grad_norm(grads, opt.grad_clip);
            if (!std::isfinite(gnorm)) {
                std::ostringstream diag;
                diag << "epoch=" << epoch << " step=" << step << " loss=" << lg.breakdown.total << " grad_norm=" << gnorm;
                throw TrainingFailure("prompt tuning diverged", diag.str());
            }
            const double lr = opt.lr * std::pow(1.0 - static_cast<double>(step) / total_steps, opt.poly_power);
            if (adam) adam->step(grads, lr);
            else sgd->step(grads, lr);

            const double w = 1.0 / steps_per_epoch;
            row.loss.total += w * lg.breakdown.total;
            row.loss.diversity += w * lg.breakdown.diversity;
            for (int k = 0; k < K; ++k) {
                row.loss.branch[k] += w * lg.breakdown.branch[k];
                row.loss.tversky[k] += w * lg.breakdown.tversky[k];
                row.loss.cross_entropy[k] += w * lg.breakdown.cross_entropy[k];
            }
            row.grad_norm += w * gnorm;
        }
        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.epochs.push_back(std::move(row));
    }
    return log;
}

void write_training_log_csv(const std::filesystem::path& file, const TrainingLog& log) {
    std::ofstream out(file);
    if (!out) throw InvalidArgument("cannot write " + file.string());
    out.precision(10);
    const std::size_t K = log.epochs.empty() ? 0 : log.epochs.front().loss.branch.size();
    out << "epoch,lr,total,diversity";
    for (std::size_t k = 0; k < K; ++k) out << ",tversky_" << k << ",ce_" << k;
    out << ",grad_norm,seconds\n";
    for (const EpochLog& e : log.epochs) {
        out << e.epoch << ',' << e.lr << ',' << e.loss.total << ',' << e.loss.diversity;
        for (std::size_t k = 0; k < K; ++k) out << ',' << e.loss.tversky[k] << ',' << e.loss.cross_entropy[k];
        out << ',' << e.grad_norm << ',' << e.seconds << '\n';
    }
}

} // namespace slpt
