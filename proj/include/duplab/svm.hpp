#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "duplab/dataset.hpp"

namespace duplab {

struct KernelParams {
    double gamma = 1.0;  // RBF width, must be > 0
};

struct SvmConfig {
    double c = 1.0;           // box bound on the dual variables
    KernelParams kernel{0.0};  // gamma <= 0 selects the scale-aware default
    double kkt_tol = 1e-3;
    std::size_t max_passes = 10000;  // sweep budget; pair updates capped at max_passes * n
    std::uint64_t seed = 0;          // working-pair tie-breaking
};

// Dual expansion of a trained soft-margin classifier. Only entries with
// alpha > 0 are kept; decision values are unchanged by dropping zero terms.
struct SvmModel {
    std::vector<std::vector<double>> support_vectors;
    std::vector<double> alphas;  // in (0, C]
    std::vector<int> labels;     // in {-1, +1}
    double bias = 0.0;
    KernelParams kernel{1.0};
    double c = 1.0;
    bool converged = true;
};

// exp(-gamma * ||x - y||^2); throws on dimension mismatch
double kernel_eval(std::span<const double> x, std::span<const double> y,
                   const KernelParams& params);

// 1 / (d * median per-feature variance), the default RBF width
double default_gamma(const LabeledDataset& dataset);

// SMO with maximal-KKT-violation pair selection and seeded random
// tie-breaking. Requires both labels present and labels within {-1, +1}.
// A model that failed to reach kkt_tol within the sweep budget is returned
// with converged = false.
SvmModel train_svm(const LabeledDataset& dataset, const SvmConfig& config);

// f(x) = sum_i alpha_i y_i K(sv_i, x) + b
double decision_value(const SvmModel& model, std::span<const double> x);

// sign(f(x)), with sign(0) mapped to +1
int predict(const SvmModel& model, std::span<const double> x);

struct ClassAccuracy {
    std::map<int, double> per_class;
    double overall = 0.0;
};

ClassAccuracy evaluate_per_class(const SvmModel& model, const LabeledDataset& dataset);

// JSON bundle round-trip (alphas, labels, support vectors, bias, gamma)
void save_svm(const SvmModel& model, const std::string& path);
SvmModel load_svm(const std::string& path);

}  // namespace duplab
