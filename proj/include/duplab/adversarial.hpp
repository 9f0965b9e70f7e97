#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "duplab/mlp.hpp"

namespace duplab {

struct PgdConfig {
    double epsilon = 0.5;   // l2 radius around the clean input
    double step_size = 0.0;  // <= 0 selects 2.5 * epsilon / n_steps
    std::size_t n_steps = 10;
    bool random_start = true;
    std::optional<std::pair<double, double>> clip_range;  // per-feature box
    std::uint64_t seed = 0;

    double effective_step() const {
        return step_size > 0.0 ? step_size : 2.5 * epsilon / static_cast<double>(n_steps);
    }
};

struct AdvTrainConfig {
    MlpConfig mlp;
    PgdConfig attack;
    double mix = 1.0;  // fraction of each batch replaced by adversarial examples
};

// Generic l2 projected gradient ascent on an arbitrary scalar loss. Steps move
// along the normalized gradient, are projected back onto the epsilon-ball
// around x0 and clamped to clip_range; a zero gradient leaves the iterate
// unchanged for that step. Returns the evaluated iterate with the highest
// loss. The observer, when set, sees every raw iterate and its loss.
std::vector<double> pgd_l2_ascend(
    const std::function<double(std::span<const double>)>& loss,
    const std::function<std::vector<double>(std::span<const double>)>& loss_grad,
    std::span<const double> x0, const PgdConfig& cfg,
    const std::function<void(std::span<const double>, double)>& observer = {});

// PGD on the cross-entropy loss of a classifier.
std::vector<double> pgd_l2(const MlpModel& model, std::span<const double> x, int y,
                           const PgdConfig& cfg);

// Replaces a seeded fraction of every minibatch with attacks against the
// current model before each SGD step.
std::pair<MlpModel, TrainLog> adversarial_train(const LabeledDataset& dataset,
                                                const AdvTrainConfig& cfg);

// Fraction of samples still classified correctly after a per-sample attack.
double robust_accuracy(const MlpModel& model, const LabeledDataset& dataset,
                       const PgdConfig& cfg);

}  // namespace duplab
