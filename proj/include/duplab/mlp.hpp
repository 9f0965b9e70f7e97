#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "duplab/dataset.hpp"

namespace duplab {

enum class Activation { relu, tanh };

struct MlpConfig {
    std::vector<std::size_t> layer_sizes;  // input, hidden..., output (class count)
    Activation activation = Activation::relu;
    double learning_rate = 0.05;
    std::size_t epochs = 30;
    std::size_t batch_size = 64;
    double weight_init_scale = 1.0;  // weights ~ U(-scale/sqrt(fan_in), +scale/sqrt(fan_in))
    std::uint64_t seed = 0;
};

// Feedforward softmax classifier. weights[l] is (out x in) row-major.
struct MlpModel {
    MlpConfig config;
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> biases;

    std::size_t input_dim() const { return config.layer_sizes.front(); }
    std::size_t output_dim() const { return config.layer_sizes.back(); }
};

struct TrainLog {
    std::vector<double> loss;      // mean cross-entropy per epoch (pre-update)
    std::vector<double> accuracy;  // fraction of correct argmax per epoch (pre-update)
};

struct MlpMetrics {
    double overall = 0.0;
    std::map<int, double> per_class;
    double mean_loss = 0.0;
};

// Seeded initialization: uniform weights scaled by 1/sqrt(fan_in), zero biases.
MlpModel init_mlp(const MlpConfig& config);

// Pre-softmax outputs and softmax class probabilities.
std::vector<double> logits(const MlpModel& model, std::span<const double> x);
std::vector<double> forward(const MlpModel& model, std::span<const double> x);

// Minibatch SGD on cross-entropy with per-epoch seeded shuffling.
// Labels must lie in [0, output_dim).
std::pair<MlpModel, TrainLog> train_standard(const LabeledDataset& dataset,
                                             const MlpConfig& config);

// Hook applied to each minibatch's inputs before the gradient step; the
// adversarial trainer uses it to substitute attacked inputs.
using BatchTransform =
    std::function<void(const MlpModel& model, std::size_t epoch, std::size_t batch,
                       std::vector<std::vector<double>>& xs, const std::vector<int>& ys)>;

std::pair<MlpModel, TrainLog> train_with_transform(const LabeledDataset& dataset,
                                                   const MlpConfig& config,
                                                   const BatchTransform& transform);

// Exact gradient of the cross-entropy loss at (x, y) with respect to x.
std::vector<double> input_gradient(const MlpModel& model, std::span<const double> x, int y);

// Full gradient of the cross-entropy loss at (x, y): per-layer weight and
// bias gradients plus the input gradient.
struct MlpGradients {
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> biases;
    std::vector<double> input;
};
MlpGradients loss_gradients(const MlpModel& model, std::span<const double> x, int y);

// Gradient with respect to x of coeffs . logits(x) (e.g. a logit margin).
std::vector<double> logit_combination_input_gradient(const MlpModel& model,
                                                     std::span<const double> x,
                                                     std::span<const double> coeffs);

double cross_entropy(const MlpModel& model, std::span<const double> x, int y);

MlpMetrics evaluate(const MlpModel& model, const LabeledDataset& dataset);

// Version-tagged JSON weight bundle.
void save_mlp(const MlpModel& model, const std::string& path);
MlpModel load_mlp(const std::string& path);

}  // namespace duplab
