#include "duplab/svm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "duplab/rng.hpp"

namespace duplab {

double kernel_eval(std::span<const double> x, std::span<const double> y,
                   const KernelParams& params) {
    if (x.size() != y.size())
        throw std::invalid_argument("kernel_eval: dimension mismatch (" +
                                    std::to_string(x.size()) + " vs " +
                                    std::to_string(y.size()) + ")");
    double d2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        d2 += d * d;
    }
    return std::exp(-params.gamma * d2);
}

double default_gamma(const LabeledDataset& dataset) {
    const std::size_t n = dataset.size();
    const std::size_t d = dataset.dim();
    if (n < 2 || d == 0) return 1.0;
    std::vector<double> variances(d);
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (const Sample& s : dataset.samples) mean += s.features[j];
        mean /= static_cast<double>(n);
        double ss = 0.0;
        for (const Sample& s : dataset.samples) {
            const double diff = s.features[j] - mean;
            ss += diff * diff;
        }
        variances[j] = ss / static_cast<double>(n - 1);
    }
    std::sort(variances.begin(), variances.end());
    const double median = d % 2 == 1
                              ? variances[d / 2]
                              : 0.5 * (variances[d / 2 - 1] + variances[d / 2]);
    if (median <= 0.0) return 1.0;
    return 1.0 / (static_cast<double>(d) * median);
}

namespace {

// index drawn uniformly among all positions attaining the extreme value
std::size_t pick_tied(const std::vector<std::size_t>& ties, Rng& rng) {
    return ties.size() == 1 ? ties[0] : ties[rng.uniform_int(ties.size())];
}

}  // namespace

SvmModel train_svm(const LabeledDataset& dataset, const SvmConfig& config) {
    const std::size_t n = dataset.size();
    if (config.c <= 0.0) throw std::invalid_argument("C must be > 0");
    if (config.kkt_tol <= 0.0) throw std::invalid_argument("kkt_tol must be > 0");

    bool has_pos = false, has_neg = false;
    for (const Sample& s : dataset.samples) {
        if (s.label == +1)
            has_pos = true;
        else if (s.label == -1)
            has_neg = true;
        else
            throw std::invalid_argument("train_svm: label " + std::to_string(s.label) +
                                        " outside {-1,+1}");
    }
    if (!has_pos || !has_neg)
        throw std::invalid_argument("train_svm: dataset must contain both classes");

    KernelParams kernel = config.kernel;
    if (kernel.gamma <= 0.0) kernel.gamma = default_gamma(dataset);

    const double c = config.c;
    const double tol = config.kkt_tol;

    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = dataset.samples[i].label;

    // full Gram matrix; training sets stay small enough for this to be cheap
    std::vector<double> gram(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        gram[i * n + i] = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double k = kernel_eval(dataset.samples[i].features,
                                         dataset.samples[j].features, kernel);
            gram[i * n + j] = k;
            gram[j * n + i] = k;
        }
    }

    // dual gradient of 1/2 a^T Q a - e^T a with Q_ij = y_i y_j K_ij
    std::vector<double> alpha(n, 0.0);
    std::vector<double> grad(n, -1.0);

    Rng rng(config.seed);
    const std::size_t max_updates = config.max_passes * std::max<std::size_t>(n, 1);
    bool converged = false;
    double m_up = 0.0, m_low = 0.0;
    std::vector<std::size_t> up_ties, low_ties;

    for (std::size_t iter = 0; iter < max_updates; ++iter) {
        // maximal violating pair over I_up / I_low
        m_up = -std::numeric_limits<double>::infinity();
        m_low = std::numeric_limits<double>::infinity();
        up_ties.clear();
        low_ties.clear();
        for (std::size_t t = 0; t < n; ++t) {
            const double v = -y[t] * grad[t];
            const bool in_up = (y[t] == +1 && alpha[t] < c) || (y[t] == -1 && alpha[t] > 0.0);
            const bool in_low = (y[t] == -1 && alpha[t] < c) || (y[t] == +1 && alpha[t] > 0.0);
            if (in_up) {
                if (v > m_up) {
                    m_up = v;
                    up_ties.clear();
                }
                if (v == m_up) up_ties.push_back(t);
            }
            if (in_low) {
                if (v < m_low) {
                    m_low = v;
                    low_ties.clear();
                }
                if (v == m_low) low_ties.push_back(t);
            }
        }
        if (up_ties.empty() || low_ties.empty() || m_up - m_low <= tol) {
            converged = true;
            break;
        }
        const std::size_t i = pick_tied(up_ties, rng);
        const std::size_t j = pick_tied(low_ties, rng);

        // two-variable sub-problem along alpha_i += y_i*delta, alpha_j -= y_j*delta
        const double quad =
            std::max(gram[i * n + i] + gram[j * n + j] - 2.0 * gram[i * n + j], 1e-12);
        double delta = (m_up - m_low) / quad;
        delta = std::min(delta, y[i] == +1 ? c - alpha[i] : alpha[i]);
        delta = std::min(delta, y[j] == +1 ? alpha[j] : c - alpha[j]);
        alpha[i] += y[i] * delta;
        alpha[j] -= y[j] * delta;
        alpha[i] = std::clamp(alpha[i], 0.0, c);
        alpha[j] = std::clamp(alpha[j], 0.0, c);
        for (std::size_t t = 0; t < n; ++t)
            grad[t] += y[t] * delta * (gram[t * n + i] - gram[t * n + j]);
    }

    // bias: average over free support vectors, else the violation midpoint
    double bias;
    double free_sum = 0.0;
    std::size_t free_count = 0;
    for (std::size_t t = 0; t < n; ++t)
        if (alpha[t] > 1e-8 && alpha[t] < c - 1e-8) {
            free_sum += -y[t] * grad[t];
            ++free_count;
        }
    if (free_count > 0)
        bias = free_sum / static_cast<double>(free_count);
    else if (std::isfinite(m_up) && std::isfinite(m_low))
        bias = 0.5 * (m_up + m_low);
    else
        bias = 0.0;

    SvmModel model;
    model.kernel = kernel;
    model.c = c;
    model.bias = bias;
    model.converged = converged;
    for (std::size_t t = 0; t < n; ++t)
        if (alpha[t] > 0.0) {
            model.support_vectors.push_back(dataset.samples[t].features);
            model.alphas.push_back(alpha[t]);
            model.labels.push_back(y[t]);
        }
    return model;
}

double decision_value(const SvmModel& model, std::span<const double> x) {
    double f = model.bias;
    for (std::size_t i = 0; i < model.support_vectors.size(); ++i)
        f += model.alphas[i] * model.labels[i] *
             kernel_eval(model.support_vectors[i], x, model.kernel);
    return f;
}

int predict(const SvmModel& model, std::span<const double> x) {
    return decision_value(model, x) >= 0.0 ? +1 : -1;
}

ClassAccuracy evaluate_per_class(const SvmModel& model, const LabeledDataset& dataset) {
    if (dataset.samples.empty())
        throw std::invalid_argument("evaluate_per_class: empty dataset");
    std::map<int, std::size_t> correct, total;
    for (const Sample& s : dataset.samples) {
        ++total[s.label];
        if (predict(model, s.features) == s.label) ++correct[s.label];
    }
    ClassAccuracy acc;
    std::size_t correct_all = 0;
    for (const auto& [label, count] : total) {
        acc.per_class[label] =
            static_cast<double>(correct[label]) / static_cast<double>(count);
        correct_all += correct[label];
    }
    acc.overall = static_cast<double>(correct_all) / static_cast<double>(dataset.size());
    return acc;
}

void save_svm(const SvmModel& model, const std::string& path) {
    nlohmann::json j;
    j["format"] = "duplab-svm";
    j["version"] = 1;
    j["gamma"] = model.kernel.gamma;
    j["c"] = model.c;
    j["bias"] = model.bias;
    j["converged"] = model.converged;
    j["alphas"] = model.alphas;
    j["labels"] = model.labels;
    j["support_vectors"] = model.support_vectors;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << "\n";
}

SvmModel load_svm(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    nlohmann::json j;
    in >> j;
    if (j.value("format", "") != "duplab-svm")
        throw std::runtime_error(path + " is not an svm model bundle");
    SvmModel model;
    model.kernel.gamma = j.at("gamma").get<double>();
    model.c = j.at("c").get<double>();
    model.bias = j.at("bias").get<double>();
    model.converged = j.at("converged").get<bool>();
    model.alphas = j.at("alphas").get<std::vector<double>>();
    model.labels = j.at("labels").get<std::vector<int>>();
    model.support_vectors = j.at("support_vectors").get<std::vector<std::vector<double>>>();
    return model;
}

}  // namespace duplab
