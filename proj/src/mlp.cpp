#include "duplab/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "duplab/rng.hpp"

namespace duplab {

namespace {

double activate(Activation act, double z) {
    return act == Activation::relu ? (z > 0.0 ? z : 0.0) : std::tanh(z);
}

// derivative in terms of pre-activation z; relu'(0) taken as 0
double activate_deriv(Activation act, double z) {
    if (act == Activation::relu) return z > 0.0 ? 1.0 : 0.0;
    const double t = std::tanh(z);
    return 1.0 - t * t;
}

struct Scratch {
    // pre[l] and post[l] are the layer-l pre-activations and outputs;
    // post.back() holds the logits (the output layer has no activation)
    std::vector<std::vector<double>> pre, post;
    std::vector<std::vector<double>> delta;

    void resize(const MlpConfig& cfg) {
        const std::size_t layers = cfg.layer_sizes.size() - 1;
        pre.resize(layers);
        post.resize(layers);
        delta.resize(layers);
        for (std::size_t l = 0; l < layers; ++l) {
            pre[l].resize(cfg.layer_sizes[l + 1]);
            post[l].resize(cfg.layer_sizes[l + 1]);
            delta[l].resize(cfg.layer_sizes[l + 1]);
        }
    }
};

void forward_store(const MlpModel& m, std::span<const double> x, Scratch& s) {
    const std::size_t layers = m.weights.size();
    std::span<const double> in = x;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t rows = m.config.layer_sizes[l + 1];
        const std::size_t cols = m.config.layer_sizes[l];
        const double* w = m.weights[l].data();
        for (std::size_t r = 0; r < rows; ++r) {
            double z = m.biases[l][r];
            const double* wr = w + r * cols;
            for (std::size_t t = 0; t < cols; ++t) z += wr[t] * in[t];
            s.pre[l][r] = z;
            s.post[l][r] = l + 1 == layers ? z : activate(m.config.activation, z);
        }
        in = s.post[l];
    }
}

void softmax_from_logits(std::span<const double> z, std::vector<double>& p) {
    p.resize(z.size());
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) {
        p[k] = std::exp(z[k] - zmax);
        sum += p[k];
    }
    for (double& v : p) v /= sum;
}

double log_sum_exp(std::span<const double> z) {
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - zmax);
    return zmax + std::log(sum);
}

struct Gradients {
    std::vector<std::vector<double>> weights, biases;

    void resize_like(const MlpModel& m) {
        weights.resize(m.weights.size());
        biases.resize(m.biases.size());
        for (std::size_t l = 0; l < m.weights.size(); ++l) {
            weights[l].assign(m.weights[l].size(), 0.0);
            biases[l].assign(m.biases[l].size(), 0.0);
        }
    }

    void zero() {
        for (auto& w : weights) std::fill(w.begin(), w.end(), 0.0);
        for (auto& b : biases) std::fill(b.begin(), b.end(), 0.0);
    }
};

// Backpropagates an output-layer seed (dLoss/dLogits already stored in
// s.delta.back()); accumulates weight gradients into grads when given and
// writes dLoss/dInput into input_grad when given.
void backward_from_seed(const MlpModel& m, std::span<const double> x, Scratch& s,
                        Gradients* grads, std::vector<double>* input_grad) {
    const std::size_t layers = m.weights.size();
    for (std::size_t li = layers; li-- > 0;) {
        const std::size_t rows = m.config.layer_sizes[li + 1];
        const std::size_t cols = m.config.layer_sizes[li];
        const std::span<const double> in = li == 0 ? x : std::span<const double>(s.post[li - 1]);
        const std::vector<double>& del = s.delta[li];
        if (grads) {
            double* gw = grads->weights[li].data();
            for (std::size_t r = 0; r < rows; ++r) {
                const double d = del[r];
                grads->biases[li][r] += d;
                double* gwr = gw + r * cols;
                for (std::size_t t = 0; t < cols; ++t) gwr[t] += d * in[t];
            }
        }
        const bool need_prev = li > 0 || input_grad != nullptr;
        if (!need_prev) continue;
        std::vector<double>& prev =
            li == 0 ? *input_grad : s.delta[li - 1];  // reuse delta storage below
        std::vector<double> acc(cols, 0.0);
        const double* w = m.weights[li].data();
        for (std::size_t r = 0; r < rows; ++r) {
            const double d = del[r];
            const double* wr = w + r * cols;
            for (std::size_t t = 0; t < cols; ++t) acc[t] += d * wr[t];
        }
        if (li == 0) {
            prev = std::move(acc);
        } else {
            for (std::size_t t = 0; t < cols; ++t)
                prev[t] = acc[t] * activate_deriv(m.config.activation, s.pre[li - 1][t]);
        }
    }
}

void check_dim(const MlpModel& m, std::size_t dim) {
    if (dim != m.input_dim())
        throw std::invalid_argument("input dimension " + std::to_string(dim) +
                                    " does not match model input " +
                                    std::to_string(m.input_dim()));
}

void validate_config(const MlpConfig& cfg) {
    if (cfg.layer_sizes.size() < 2)
        throw std::invalid_argument("layer_sizes needs at least input and output");
    for (std::size_t s : cfg.layer_sizes)
        if (s == 0) throw std::invalid_argument("layer sizes must be positive");
    if (cfg.batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
}

}  // namespace

MlpModel init_mlp(const MlpConfig& config) {
    validate_config(config);
    MlpModel m;
    m.config = config;
    Rng rng(config.seed);
    for (std::size_t l = 0; l + 1 < config.layer_sizes.size(); ++l) {
        const std::size_t rows = config.layer_sizes[l + 1];
        const std::size_t cols = config.layer_sizes[l];
        const double bound = config.weight_init_scale / std::sqrt(static_cast<double>(cols));
        std::vector<double> w(rows * cols);
        for (double& v : w) v = (2.0 * rng.uniform() - 1.0) * bound;
        m.weights.push_back(std::move(w));
        m.biases.emplace_back(rows, 0.0);
    }
    return m;
}

std::vector<double> logits(const MlpModel& model, std::span<const double> x) {
    check_dim(model, x.size());
    Scratch s;
    s.resize(model.config);
    forward_store(model, x, s);
    return s.post.back();
}

std::vector<double> forward(const MlpModel& model, std::span<const double> x) {
    std::vector<double> z = logits(model, x);
    std::vector<double> p;
    softmax_from_logits(z, p);
    return p;
}

double cross_entropy(const MlpModel& model, std::span<const double> x, int y) {
    std::vector<double> z = logits(model, x);
    return log_sum_exp(z) - z[static_cast<std::size_t>(y)];
}

std::vector<double> input_gradient(const MlpModel& model, std::span<const double> x, int y) {
    check_dim(model, x.size());
    if (y < 0 || static_cast<std::size_t>(y) >= model.output_dim())
        throw std::invalid_argument("class index out of range");
    Scratch s;
    s.resize(model.config);
    forward_store(model, x, s);
    softmax_from_logits(s.post.back(), s.delta.back());
    s.delta.back()[static_cast<std::size_t>(y)] -= 1.0;
    std::vector<double> grad;
    backward_from_seed(model, x, s, nullptr, &grad);
    return grad;
}

MlpGradients loss_gradients(const MlpModel& model, std::span<const double> x, int y) {
    check_dim(model, x.size());
    if (y < 0 || static_cast<std::size_t>(y) >= model.output_dim())
        throw std::invalid_argument("class index out of range");
    Scratch s;
    s.resize(model.config);
    forward_store(model, x, s);
    softmax_from_logits(s.post.back(), s.delta.back());
    s.delta.back()[static_cast<std::size_t>(y)] -= 1.0;
    Gradients grads;
    grads.resize_like(model);
    MlpGradients out;
    backward_from_seed(model, x, s, &grads, &out.input);
    out.weights = std::move(grads.weights);
    out.biases = std::move(grads.biases);
    return out;
}

std::vector<double> logit_combination_input_gradient(const MlpModel& model,
                                                     std::span<const double> x,
                                                     std::span<const double> coeffs) {
    check_dim(model, x.size());
    if (coeffs.size() != model.output_dim())
        throw std::invalid_argument("coefficient count must equal the class count");
    Scratch s;
    s.resize(model.config);
    forward_store(model, x, s);
    std::copy(coeffs.begin(), coeffs.end(), s.delta.back().begin());
    std::vector<double> grad;
    backward_from_seed(model, x, s, nullptr, &grad);
    return grad;
}

std::pair<MlpModel, TrainLog> train_with_transform(const LabeledDataset& dataset,
                                                   const MlpConfig& config,
                                                   const BatchTransform& transform) {
    validate_config(config);
    if (dataset.samples.empty()) throw std::invalid_argument("empty training set");
    const std::size_t n = dataset.size();
    const std::size_t classes = config.layer_sizes.back();
    if (dataset.dim() != config.layer_sizes.front())
        throw std::invalid_argument("dataset dimension does not match layer_sizes");
    for (std::size_t i = 0; i < n; ++i) {
        const int y = dataset.samples[i].label;
        if (y < 0 || static_cast<std::size_t>(y) >= classes)
            throw std::invalid_argument("label " + std::to_string(y) + " at sample " +
                                        std::to_string(i) + " outside [0, " +
                                        std::to_string(classes) + ")");
    }

    MlpModel model = init_mlp(config);
    TrainLog log;
    Scratch scratch;
    scratch.resize(config);
    Gradients grads;
    grads.resize_like(model);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(config.seed, 0x73687566666c65ULL));  // "shufle" salt
    std::vector<std::vector<double>> batch_x;
    std::vector<int> batch_y;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        // seeded Fisher-Yates shuffle per epoch
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const std::size_t j = i + shuffle_rng.uniform_int(n - i);
            std::swap(order[i], order[j]);
        }
        double epoch_loss = 0.0;
        std::size_t epoch_correct = 0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < n; start += config.batch_size, ++batch_index) {
            const std::size_t count = std::min(config.batch_size, n - start);
            batch_x.resize(count);
            batch_y.resize(count);
            for (std::size_t b = 0; b < count; ++b) {
                batch_x[b] = dataset.samples[order[start + b]].features;
                batch_y[b] = dataset.samples[order[start + b]].label;
            }
            if (transform) transform(model, epoch, batch_index, batch_x, batch_y);

            grads.zero();
            for (std::size_t b = 0; b < count; ++b) {
                forward_store(model, batch_x[b], scratch);
                const std::vector<double>& z = scratch.post.back();
                epoch_loss += log_sum_exp(z) - z[static_cast<std::size_t>(batch_y[b])];
                const std::size_t argmax =
                    std::max_element(z.begin(), z.end()) - z.begin();
                if (argmax == static_cast<std::size_t>(batch_y[b])) ++epoch_correct;
                softmax_from_logits(z, scratch.delta.back());
                scratch.delta.back()[static_cast<std::size_t>(batch_y[b])] -= 1.0;
                backward_from_seed(model, batch_x[b], scratch, &grads, nullptr);
            }
            const double step = config.learning_rate / static_cast<double>(count);
            for (std::size_t l = 0; l < model.weights.size(); ++l) {
                for (std::size_t t = 0; t < model.weights[l].size(); ++t)
                    model.weights[l][t] -= step * grads.weights[l][t];
                for (std::size_t t = 0; t < model.biases[l].size(); ++t)
                    model.biases[l][t] -= step * grads.biases[l][t];
            }
        }
        log.loss.push_back(epoch_loss / static_cast<double>(n));
        log.accuracy.push_back(static_cast<double>(epoch_correct) / static_cast<double>(n));
    }
    return {std::move(model), std::move(log)};
}

std::pair<MlpModel, TrainLog> train_standard(const LabeledDataset& dataset,
                                             const MlpConfig& config) {
    return train_with_transform(dataset, config, {});
}

MlpMetrics evaluate(const MlpModel& model, const LabeledDataset& dataset) {
    if (dataset.samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
    Scratch s;
    s.resize(model.config);
    MlpMetrics metrics;
    std::map<int, std::size_t> correct, total;
    double loss = 0.0;
    for (const Sample& sample : dataset.samples) {
        check_dim(model, sample.features.size());
        forward_store(model, sample.features, s);
        const std::vector<double>& z = s.post.back();
        loss += log_sum_exp(z) - z[static_cast<std::size_t>(sample.label)];
        const std::size_t argmax = std::max_element(z.begin(), z.end()) - z.begin();
        ++total[sample.label];
        if (argmax == static_cast<std::size_t>(sample.label)) ++correct[sample.label];
    }
    std::size_t correct_all = 0;
    for (const auto& [label, count] : total) {
        metrics.per_class[label] =
            static_cast<double>(correct[label]) / static_cast<double>(count);
        correct_all += correct[label];
    }
    metrics.overall = static_cast<double>(correct_all) / static_cast<double>(dataset.size());
    metrics.mean_loss = loss / static_cast<double>(dataset.size());
    return metrics;
}

void save_mlp(const MlpModel& model, const std::string& path) {
    nlohmann::json j;
    j["format"] = "duplab-mlp";
    j["version"] = 1;
    j["layer_sizes"] = model.config.layer_sizes;
    j["activation"] = model.config.activation == Activation::relu ? "relu" : "tanh";
    j["learning_rate"] = model.config.learning_rate;
    j["epochs"] = model.config.epochs;
    j["batch_size"] = model.config.batch_size;
    j["weight_init_scale"] = model.config.weight_init_scale;
    j["seed"] = model.config.seed;
    j["weights"] = model.weights;
    j["biases"] = model.biases;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << "\n";
}

MlpModel load_mlp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    nlohmann::json j;
    in >> j;
    if (j.value("format", "") != "duplab-mlp")
        throw std::runtime_error(path + " is not an mlp weight bundle");
    MlpModel m;
    m.config.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
    m.config.activation =
        j.at("activation").get<std::string>() == "tanh" ? Activation::tanh : Activation::relu;
    m.config.learning_rate = j.at("learning_rate").get<double>();
    m.config.epochs = j.at("epochs").get<std::size_t>();
    m.config.batch_size = j.at("batch_size").get<std::size_t>();
    m.config.weight_init_scale = j.at("weight_init_scale").get<double>();
    m.config.seed = j.at("seed").get<std::uint64_t>();
    m.weights = j.at("weights").get<std::vector<std::vector<double>>>();
    m.biases = j.at("biases").get<std::vector<std::vector<double>>>();
    return m;
}

}  // namespace duplab
