#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "duplab/adversarial.hpp"
#include "duplab/dataset.hpp"
#include "duplab/duplication.hpp"
#include "duplab/mlp.hpp"
#include "duplab/rng.hpp"
#include "duplab/svm.hpp"

namespace duplab {

using Predictor = std::function<double(std::span<const double>)>;

struct RegressionSample {
    std::vector<double> x;
    double y = 0.0;
};

using RegressionTrainer = std::function<Predictor(const std::vector<RegressionSample>&)>;

// Ground-truth regression setup: noisy observations y = target(x) + noise,
// with fresh training sets drawn per replicate.
struct RegressionTask {
    std::function<double(std::span<const double>)> target;
    std::function<std::vector<double>(Rng&)> sample_input;
    double noise_sigma = 0.0;
    std::size_t train_size = 0;
    std::uint64_t seed = 0;
};

struct BiasVarianceEstimate {
    double bias_sq = 0.0;
    double variance = 0.0;
    double irreducible = 0.0;    // noise_sigma^2
    double expected_loss = 0.0;  // independent estimate of E[(y - f_hat)^2]
    double se_bias_sq = 0.0;
    double se_variance = 0.0;
    double se_expected_loss = 0.0;
    double identity_gap = 0.0;  // bias_sq + variance + irreducible - expected_loss
    double se_identity_gap = 0.0;
    std::size_t replicates = 0;
};

// Trains `replicates` models on independent draws from the task and
// decomposes the prediction error over eval_points. Standard errors are
// delete-one jackknife estimates over replicates (NaN when replicates < 3).
BiasVarianceEstimate estimate_bias_variance(const RegressionTask& task,
                                            const RegressionTrainer& trainer,
                                            const std::vector<std::vector<double>>& eval_points,
                                            std::size_t replicates,
                                            std::size_t n_workers = 1);

// A trained model reduced to its decision score and input gradient.
struct ScorePredictor {
    Predictor value;
    std::function<std::vector<double>(std::span<const double>)> gradient;
};

struct AdvDecompTerms {
    double c_x_mean = 0.0;        // ensemble-gradient / perturbation interaction
    double c_prime_x_mean = 0.0;  // prediction-variability term
    double residual = 0.0;        // |lhs - rhs| diagnostic, not an assertion
    std::size_t replicates = 0;
};

// Perturbation generated by PGD against the ensemble-mean predictor under a
// squared-error objective toward target y.
AdvDecompTerms estimate_adv_terms(const std::vector<ScorePredictor>& models,
                                  std::span<const double> x, double y,
                                  const PgdConfig& attack);

// Same terms for an externally supplied perturbation.
AdvDecompTerms estimate_adv_terms_fixed_beta(const std::vector<ScorePredictor>& models,
                                             std::span<const double> x, double y,
                                             std::span<const double> beta);

// Adapters onto the two classifier families. The SVM gradient is a central
// finite difference of the decision value; the MLP path is the exact input
// gradient of the logit margin (class at pos_index minus class at neg_index).
ScorePredictor svm_score_predictor(const SvmModel& model, double fd_step = 1e-4);
ScorePredictor mlp_margin_predictor(const MlpModel& model, std::size_t pos_index,
                                    std::size_t neg_index);

// Posterior margin 2*P(class +1 | x) - 1 of the two-Gaussian generative task
// with equal priors; the evaluable target for decision scores.
std::function<double(std::span<const double>)> bayes_posterior_margin(
    const GaussianSpec& spec);

using DatasetScoreTrainer = std::function<Predictor(const LabeledDataset&)>;

struct ProbeConfig {
    std::size_t replicates = 200;
    std::size_t eval_per_class = 200;
    std::uint64_t seed = 0;
    std::size_t n_workers = 1;
};

// Per-(policy, class) decomposition of trained decision scores against the
// Bayes posterior margin. signed_bias is the mean of (ensemble mean - target)
// over the class's eval points; positive values mean scores pushed toward
// class +1.
struct ProbeRow {
    std::size_t policy_index = 0;
    int rate_percent = 0;
    int label = 0;
    double bias_sq = 0.0;
    double variance = 0.0;
    double signed_bias = 0.0;
    double se_bias_sq = 0.0;
    double se_variance = 0.0;
    double se_signed_bias = 0.0;
    std::size_t replicates = 0;
};

// For every policy: draws replicate training sets from `base`, injects
// duplicates, trains, and scores a shared grid of per-class eval points.
// Replicate datasets are shared across policies so rows are paired.
std::vector<ProbeRow> duplication_bias_probe(const GaussianSpec& base,
                                             const std::vector<DuplicationPolicy>& policies,
                                             const DatasetScoreTrainer& trainer,
                                             const ProbeConfig& cfg);

}  // namespace duplab
