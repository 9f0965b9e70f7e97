#include "duplab/decomposition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "duplab/parallel.hpp"

namespace duplab {

namespace {

constexpr std::uint64_t kDataSalt = 0xdada;
constexpr std::uint64_t kNoiseSalt = 0x401e;
constexpr std::uint64_t kEvalSalt = 0xe4a1;
constexpr std::uint64_t kInjectSalt = 0xd0b1;

double jackknife_se(const std::vector<double>& leave_one_out) {
    const std::size_t r = leave_one_out.size();
    if (r < 2) return std::numeric_limits<double>::quiet_NaN();
    double mean = 0.0;
    for (double v : leave_one_out) mean += v;
    mean /= static_cast<double>(r);
    double ss = 0.0;
    for (double v : leave_one_out) ss += (v - mean) * (v - mean);
    return std::sqrt(ss * static_cast<double>(r - 1) / static_cast<double>(r));
}

// Column-wise decomposition of an R x P prediction matrix against targets.
struct MatrixStats {
    double bias_sq = 0.0, variance = 0.0, signed_bias = 0.0;
    double se_bias_sq = 0.0, se_variance = 0.0, se_signed_bias = 0.0;
};

MatrixStats decompose_predictions(const std::vector<std::vector<double>>& preds,
                                  std::span<const double> targets) {
    const std::size_t r = preds.size();
    const std::size_t p = targets.size();
    std::vector<double> col_sum(p, 0.0), col_sumsq(p, 0.0);
    for (const auto& row : preds)
        for (std::size_t j = 0; j < p; ++j) {
            col_sum[j] += row[j];
            col_sumsq[j] += row[j] * row[j];
        }

    MatrixStats out;
    for (std::size_t j = 0; j < p; ++j) {
        const double mean = col_sum[j] / static_cast<double>(r);
        const double dev = mean - targets[j];
        out.bias_sq += dev * dev;
        out.signed_bias += dev;
        if (r >= 2)
            out.variance += (col_sumsq[j] - static_cast<double>(r) * mean * mean) /
                            static_cast<double>(r - 1);
    }
    out.bias_sq /= static_cast<double>(p);
    out.signed_bias /= static_cast<double>(p);
    out.variance = std::max(0.0, out.variance / static_cast<double>(p));

    if (r >= 3) {
        std::vector<double> loo_bias(r), loo_var(r), loo_signed(r);
        for (std::size_t drop = 0; drop < r; ++drop) {
            double b = 0.0, v = 0.0, sb = 0.0;
            for (std::size_t j = 0; j < p; ++j) {
                const double s = col_sum[j] - preds[drop][j];
                const double q = col_sumsq[j] - preds[drop][j] * preds[drop][j];
                const double mean = s / static_cast<double>(r - 1);
                const double dev = mean - targets[j];
                b += dev * dev;
                sb += dev;
                v += (q - static_cast<double>(r - 1) * mean * mean) /
                     static_cast<double>(r - 2);
            }
            loo_bias[drop] = b / static_cast<double>(p);
            loo_var[drop] = v / static_cast<double>(p);
            loo_signed[drop] = sb / static_cast<double>(p);
        }
        out.se_bias_sq = jackknife_se(loo_bias);
        out.se_variance = jackknife_se(loo_var);
        out.se_signed_bias = jackknife_se(loo_signed);
    } else {
        out.se_bias_sq = out.se_variance = out.se_signed_bias =
            std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

}  // namespace

BiasVarianceEstimate estimate_bias_variance(const RegressionTask& task,
                                            const RegressionTrainer& trainer,
                                            const std::vector<std::vector<double>>& eval_points,
                                            std::size_t replicates, std::size_t n_workers) {
    if (replicates < 2)
        throw std::invalid_argument("estimate_bias_variance needs at least 2 replicates");
    if (eval_points.empty()) throw std::invalid_argument("no eval points");
    const std::size_t p = eval_points.size();

    std::vector<double> targets(p);
    for (std::size_t j = 0; j < p; ++j) targets[j] = task.target(eval_points[j]);

    std::vector<std::vector<double>> preds(replicates, std::vector<double>(p));
    std::vector<double> rep_loss(replicates, 0.0);

    run_parallel(replicates, n_workers, [&](std::size_t r) {
        Rng data_rng(mix_seed(task.seed, kDataSalt, r));
        std::vector<RegressionSample> train(task.train_size);
        for (auto& s : train) {
            s.x = task.sample_input(data_rng);
            s.y = task.target(s.x) + task.noise_sigma * data_rng.normal();
        }
        const Predictor model = trainer(train);

        Rng noise_rng(mix_seed(task.seed, kNoiseSalt, r));
        double loss = 0.0;
        for (std::size_t j = 0; j < p; ++j) {
            const double pred = model(eval_points[j]);
            preds[r][j] = pred;
            const double y = targets[j] + task.noise_sigma * noise_rng.normal();
            loss += (y - pred) * (y - pred);
        }
        rep_loss[r] = loss / static_cast<double>(p);
    });

    const MatrixStats stats = decompose_predictions(preds, targets);

    BiasVarianceEstimate est;
    est.replicates = replicates;
    est.bias_sq = stats.bias_sq;
    est.variance = stats.variance;
    est.irreducible = task.noise_sigma * task.noise_sigma;
    est.se_bias_sq = stats.se_bias_sq;
    est.se_variance = stats.se_variance;

    double loss_total = 0.0;
    for (double l : rep_loss) loss_total += l;
    est.expected_loss = loss_total / static_cast<double>(replicates);

    if (replicates >= 3) {
        // joint jackknife keeps the correlations between components
        std::vector<double> loo_loss(replicates), loo_gap(replicates);
        std::vector<double> col_sum(p, 0.0), col_sumsq(p, 0.0);
        for (const auto& row : preds)
            for (std::size_t j = 0; j < p; ++j) {
                col_sum[j] += row[j];
                col_sumsq[j] += row[j] * row[j];
            }
        for (std::size_t drop = 0; drop < replicates; ++drop) {
            double b = 0.0, v = 0.0;
            for (std::size_t j = 0; j < p; ++j) {
                const double s = col_sum[j] - preds[drop][j];
                const double q = col_sumsq[j] - preds[drop][j] * preds[drop][j];
                const double mean = s / static_cast<double>(replicates - 1);
                const double dev = mean - targets[j];
                b += dev * dev;
                v += (q - static_cast<double>(replicates - 1) * mean * mean) /
                     static_cast<double>(replicates - 2);
            }
            b /= static_cast<double>(p);
            v /= static_cast<double>(p);
            const double l =
                (loss_total - rep_loss[drop]) / static_cast<double>(replicates - 1);
            loo_loss[drop] = l;
            loo_gap[drop] = b + v + est.irreducible - l;
        }
        est.se_expected_loss = jackknife_se(loo_loss);
        est.se_identity_gap = jackknife_se(loo_gap);
    } else {
        est.se_expected_loss = est.se_identity_gap = std::numeric_limits<double>::quiet_NaN();
    }
    est.identity_gap = est.bias_sq + est.variance + est.irreducible - est.expected_loss;
    return est;
}

AdvDecompTerms estimate_adv_terms_fixed_beta(const std::vector<ScorePredictor>& models,
                                             std::span<const double> x, double y,
                                             std::span<const double> beta) {
    const std::size_t r = models.size();
    if (r < 2) throw std::invalid_argument("estimate_adv_terms needs at least 2 models");
    if (beta.size() != x.size())
        throw std::invalid_argument("perturbation dimension mismatch");
    const std::size_t d = x.size();

    std::vector<double> values(r);
    std::vector<std::vector<double>> grads(r);
    for (std::size_t m = 0; m < r; ++m) {
        values[m] = models[m].value(x);
        grads[m] = models[m].gradient(x);
        if (grads[m].size() != d)
            throw std::invalid_argument("model gradient dimension mismatch");
    }

    double fbar = 0.0;
    for (double v : values) fbar += v;
    fbar /= static_cast<double>(r);
    std::vector<double> gbar(d, 0.0);
    for (const auto& g : grads)
        for (std::size_t i = 0; i < d; ++i) gbar[i] += g[i];
    for (double& v : gbar) v /= static_cast<double>(r);

    AdvDecompTerms terms;
    terms.replicates = r;
    for (std::size_t i = 0; i < d; ++i) terms.c_x_mean += gbar[i] * beta[i];

    double c_prime = 0.0;
    double var = 0.0;
    for (std::size_t m = 0; m < r; ++m) {
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i) dot += (grads[m][i] - gbar[i]) * beta[i];
        c_prime += 2.0 * (values[m] - fbar) * dot;
        var += (values[m] - fbar) * (values[m] - fbar);
    }
    terms.c_prime_x_mean = c_prime / static_cast<double>(r);
    var /= static_cast<double>(r - 1);

    std::vector<double> x_adv(x.begin(), x.end());
    for (std::size_t i = 0; i < d; ++i) x_adv[i] += beta[i];
    double lhs = 0.0;
    for (std::size_t m = 0; m < r; ++m) {
        const double e = y - models[m].value(x_adv);
        lhs += e * e;
    }
    lhs /= static_cast<double>(r);
    const double e0 = y - fbar - terms.c_x_mean;
    const double rhs = e0 * e0 + var + terms.c_prime_x_mean;
    terms.residual = std::abs(lhs - rhs);
    return terms;
}

AdvDecompTerms estimate_adv_terms(const std::vector<ScorePredictor>& models,
                                  std::span<const double> x, double y,
                                  const PgdConfig& attack) {
    const std::size_t r = models.size();
    if (r < 2) throw std::invalid_argument("estimate_adv_terms needs at least 2 models");
    const std::size_t d = x.size();

    const auto mean_value = [&](std::span<const double> z) {
        double s = 0.0;
        for (const auto& m : models) s += m.value(z);
        return s / static_cast<double>(r);
    };
    const auto loss = [&](std::span<const double> z) {
        const double e = y - mean_value(z);
        return e * e;
    };
    const auto loss_grad = [&](std::span<const double> z) {
        std::vector<double> g(d, 0.0);
        for (const auto& m : models) {
            const std::vector<double> gm = m.gradient(z);
            for (std::size_t i = 0; i < d; ++i) g[i] += gm[i];
        }
        const double scale = -2.0 * (y - mean_value(z)) / static_cast<double>(r);
        for (double& v : g) v *= scale;
        return g;
    };

    const std::vector<double> x_adv = pgd_l2_ascend(loss, loss_grad, x, attack);
    std::vector<double> beta(d);
    for (std::size_t i = 0; i < d; ++i) beta[i] = x_adv[i] - x[i];
    return estimate_adv_terms_fixed_beta(models, x, y, beta);
}

ScorePredictor svm_score_predictor(const SvmModel& model, double fd_step) {
    ScorePredictor p;
    p.value = [model](std::span<const double> x) { return decision_value(model, x); };
    p.gradient = [model, fd_step](std::span<const double> x) {
        std::vector<double> probe(x.begin(), x.end());
        std::vector<double> grad(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double saved = probe[i];
            probe[i] = saved + fd_step;
            const double hi = decision_value(model, probe);
            probe[i] = saved - fd_step;
            const double lo = decision_value(model, probe);
            probe[i] = saved;
            grad[i] = (hi - lo) / (2.0 * fd_step);
        }
        return grad;
    };
    return p;
}

ScorePredictor mlp_margin_predictor(const MlpModel& model, std::size_t pos_index,
                                    std::size_t neg_index) {
    if (pos_index >= model.output_dim() || neg_index >= model.output_dim())
        throw std::invalid_argument("class index out of range");
    ScorePredictor p;
    p.value = [model, pos_index, neg_index](std::span<const double> x) {
        const std::vector<double> z = logits(model, x);
        return z[pos_index] - z[neg_index];
    };
    p.gradient = [model, pos_index, neg_index](std::span<const double> x) {
        std::vector<double> coeffs(model.output_dim(), 0.0);
        coeffs[pos_index] = 1.0;
        coeffs[neg_index] = -1.0;
        return logit_combination_input_gradient(model, x, coeffs);
    };
    return p;
}

std::function<double(std::span<const double>)> bayes_posterior_margin(
    const GaussianSpec& spec) {
    const auto& s = spec.sigma;
    const double det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
    if (det <= 0.0) throw std::invalid_argument("covariance not positive definite");
    // inverse of the shared 2x2 covariance
    const double i00 = s[1][1] / det, i01 = -s[0][1] / det, i11 = s[0][0] / det;
    const auto mu1 = spec.mu1, mu2 = spec.mu2;
    return [=](std::span<const double> x) {
        if (x.size() != 2) throw std::invalid_argument("expected 2-d input");
        const double d1x = x[0] - mu1[0], d1y = x[1] - mu1[1];
        const double d2x = x[0] - mu2[0], d2y = x[1] - mu2[1];
        const double q1 = d1x * (i00 * d1x + i01 * d1y) + d1y * (i01 * d1x + i11 * d1y);
        const double q2 = d2x * (i00 * d2x + i01 * d2y) + d2y * (i01 * d2x + i11 * d2y);
        // (p2 - p1) / (p2 + p1) with equal priors and shared normalization
        return std::tanh((q1 - q2) / 4.0);
    };
}

std::vector<ProbeRow> duplication_bias_probe(const GaussianSpec& base,
                                             const std::vector<DuplicationPolicy>& policies,
                                             const DatasetScoreTrainer& trainer,
                                             const ProbeConfig& cfg) {
    if (cfg.replicates < 2) throw std::invalid_argument("probe needs at least 2 replicates");
    if (policies.empty()) throw std::invalid_argument("no policies given");

    GaussianSpec eval_spec = base;
    eval_spec.n_per_class = cfg.eval_per_class;
    eval_spec.seed = mix_seed(cfg.seed, kEvalSalt);
    const LabeledDataset eval_points = sample_gaussian(eval_spec);
    const auto target = bayes_posterior_margin(base);
    std::vector<double> targets(eval_points.size());
    for (std::size_t j = 0; j < eval_points.size(); ++j)
        targets[j] = target(eval_points.samples[j].features);

    // replicate training sets are shared across policies
    std::vector<LabeledDataset> train_sets(cfg.replicates);
    for (std::size_t r = 0; r < cfg.replicates; ++r) {
        GaussianSpec spec = base;
        spec.seed = mix_seed(cfg.seed, kDataSalt, r);
        train_sets[r] = sample_gaussian(spec);
    }

    const std::size_t n_policies = policies.size();
    std::vector<std::vector<std::vector<double>>> scores(
        n_policies, std::vector<std::vector<double>>(
                        cfg.replicates, std::vector<double>(eval_points.size())));

    run_parallel(n_policies * cfg.replicates, cfg.n_workers, [&](std::size_t task) {
        const std::size_t ip = task / cfg.replicates;
        const std::size_t r = task % cfg.replicates;
        DuplicationPolicy policy = policies[ip];
        policy.seed = mix_seed(policy.seed, mix_seed(cfg.seed, kInjectSalt, r));
        const auto [train, report] = inject(train_sets[r], policy);
        (void)report;
        const Predictor model = trainer(train);
        for (std::size_t j = 0; j < eval_points.size(); ++j)
            scores[ip][r][j] = model(eval_points.samples[j].features);
    });

    std::vector<ProbeRow> rows;
    for (std::size_t ip = 0; ip < n_policies; ++ip) {
        for (int label : {-1, +1}) {
            // columns belonging to this class
            std::vector<std::size_t> cols;
            for (std::size_t j = 0; j < eval_points.size(); ++j)
                if (eval_points.samples[j].label == label) cols.push_back(j);
            std::vector<std::vector<double>> block(cfg.replicates,
                                                   std::vector<double>(cols.size()));
            std::vector<double> block_targets(cols.size());
            for (std::size_t c = 0; c < cols.size(); ++c) {
                block_targets[c] = targets[cols[c]];
                for (std::size_t r = 0; r < cfg.replicates; ++r)
                    block[r][c] = scores[ip][r][cols[c]];
            }
            const MatrixStats stats = decompose_predictions(block, block_targets);
            ProbeRow row;
            row.policy_index = ip;
            row.rate_percent = policies[ip].rate_percent;
            row.label = label;
            row.bias_sq = stats.bias_sq;
            row.variance = stats.variance;
            row.signed_bias = stats.signed_bias;
            row.se_bias_sq = stats.se_bias_sq;
            row.se_variance = stats.se_variance;
            row.se_signed_bias = stats.se_signed_bias;
            row.replicates = cfg.replicates;
            rows.push_back(row);
        }
    }
    return rows;
}

}  // namespace duplab
