#include "duplab/adversarial.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "duplab/rng.hpp"

namespace duplab {

namespace {

double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

void project_ball(std::vector<double>& x, std::span<const double> x0, double eps) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - x0[i];
        d2 += d * d;
    }
    const double dist = std::sqrt(d2);
    if (dist <= eps) return;
    const double scale = eps / dist;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = x0[i] + scale * (x[i] - x0[i]);
}

void clamp_box(std::vector<double>& x, const std::optional<std::pair<double, double>>& box) {
    if (!box) return;
    for (double& v : x) v = std::clamp(v, box->first, box->second);
}

}  // namespace

std::vector<double> pgd_l2_ascend(
    const std::function<double(std::span<const double>)>& loss,
    const std::function<std::vector<double>(std::span<const double>)>& loss_grad,
    std::span<const double> x0, const PgdConfig& cfg,
    const std::function<void(std::span<const double>, double)>& observer) {
    if (cfg.epsilon < 0.0) throw std::invalid_argument("epsilon must be >= 0");
    if (cfg.n_steps < 1) throw std::invalid_argument("n_steps must be >= 1");
    std::vector<double> x(x0.begin(), x0.end());
    if (cfg.epsilon == 0.0) return x;

    if (cfg.random_start) {
        // uniform draw from the epsilon-ball: gaussian direction, radius eps*u^(1/d)
        Rng rng(cfg.seed);
        std::vector<double> dir(x.size());
        for (double& v : dir) v = rng.normal();
        const double norm = l2_norm(dir);
        if (norm > 0.0) {
            const double radius =
                cfg.epsilon * std::pow(rng.uniform(), 1.0 / static_cast<double>(x.size()));
            for (std::size_t i = 0; i < x.size(); ++i) x[i] = x0[i] + radius * dir[i] / norm;
        }
        clamp_box(x, cfg.clip_range);
    }

    double best_loss = loss(x);
    std::vector<double> best_x = x;
    if (observer) observer(x, best_loss);

    const double step = cfg.effective_step();
    for (std::size_t it = 0; it < cfg.n_steps; ++it) {
        const std::vector<double> g = loss_grad(x);
        if (g.size() != x.size()) throw std::invalid_argument("gradient dimension mismatch");
        const double gnorm = l2_norm(g);
        if (gnorm > 0.0) {
            for (std::size_t i = 0; i < x.size(); ++i) x[i] += step * g[i] / gnorm;
            project_ball(x, x0, cfg.epsilon);
            clamp_box(x, cfg.clip_range);
        }
        const double l = loss(x);
        if (observer) observer(x, l);
        if (l > best_loss) {
            best_loss = l;
            best_x = x;
        }
    }
    return best_x;
}

std::vector<double> pgd_l2(const MlpModel& model, std::span<const double> x, int y,
                           const PgdConfig& cfg) {
    return pgd_l2_ascend(
        [&](std::span<const double> z) { return cross_entropy(model, z, y); },
        [&](std::span<const double> z) { return input_gradient(model, z, y); }, x, cfg);
}

std::pair<MlpModel, TrainLog> adversarial_train(const LabeledDataset& dataset,
                                                const AdvTrainConfig& cfg) {
    if (cfg.mix < 0.0 || cfg.mix > 1.0)
        throw std::invalid_argument("mix must lie in [0, 1]");
    const BatchTransform attack_batch = [&cfg](const MlpModel& model, std::size_t epoch,
                                               std::size_t batch,
                                               std::vector<std::vector<double>>& xs,
                                               const std::vector<int>& ys) {
        const std::size_t k = static_cast<std::size_t>(
            std::llround(cfg.mix * static_cast<double>(xs.size())));
        for (std::size_t t = 0; t < k; ++t) {
            PgdConfig attack = cfg.attack;
            attack.seed = mix_seed(cfg.attack.seed, epoch, batch, t);
            xs[t] = pgd_l2(model, xs[t], ys[t], attack);
        }
    };
    return train_with_transform(dataset, cfg.mlp, attack_batch);
}

double robust_accuracy(const MlpModel& model, const LabeledDataset& dataset,
                       const PgdConfig& cfg) {
    if (dataset.samples.empty())
        throw std::invalid_argument("robust_accuracy: empty dataset");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const Sample& s = dataset.samples[i];
        PgdConfig attack = cfg;
        attack.seed = mix_seed(cfg.seed, i);
        const std::vector<double> adv = pgd_l2(model, s.features, s.label, attack);
        const std::vector<double> p = forward(model, adv);
        const std::size_t argmax = std::max_element(p.begin(), p.end()) - p.begin();
        if (argmax == static_cast<std::size_t>(s.label)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

}  // namespace duplab
