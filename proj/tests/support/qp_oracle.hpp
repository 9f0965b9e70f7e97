#pragma once

// Brute-force oracle for the soft-margin SVM dual on tiny problems:
//   max  sum(a) - 1/2 a^T Q a   s.t.  0 <= a <= C,  y^T a = 0,
// with Q_ij = y_i y_j exp(-gamma ||x_i - x_j||^2).
//
// Enumerates every active-set pattern (each variable at 0, at C, or free),
// solves the free variables' stationarity system with the equality
// constraint, keeps feasible candidates and returns the best objective.
// Every candidate is evaluated with the exact objective, so the result is
// the global dual optimum up to linear-solve precision. Independent of the
// production solver by construction.

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

namespace duplab::test {

struct QpOracleResult {
    std::vector<double> alpha;
    double objective = -std::numeric_limits<double>::infinity();
    double bias = 0.0;
};

namespace detail {

// Gaussian elimination with partial pivoting; returns false when singular.
inline bool solve_linear(std::vector<double> a, std::vector<double> b,
                         std::vector<double>& x) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r * n + col]) > std::abs(a[pivot * n + col])) pivot = r;
        if (std::abs(a[pivot * n + col]) < 1e-10) return false;
        if (pivot != col) {
            for (std::size_t k = 0; k < n; ++k) std::swap(a[pivot * n + k], a[col * n + k]);
            std::swap(b[pivot], b[col]);
        }
        for (std::size_t r = col + 1; r < n; ++r) {
            const double factor = a[r * n + col] / a[col * n + col];
            for (std::size_t k = col; k < n; ++k) a[r * n + k] -= factor * a[col * n + k];
            b[r] -= factor * b[col];
        }
    }
    x.assign(n, 0.0);
    for (std::size_t row = n; row-- > 0;) {
        double s = b[row];
        for (std::size_t k = row + 1; k < n; ++k) s -= a[row * n + k] * x[k];
        x[row] = s / a[row * n + row];
    }
    return true;
}

}  // namespace detail

inline QpOracleResult solve_svm_dual_oracle(const std::vector<std::vector<double>>& points,
                                            const std::vector<int>& labels, double c,
                                            double gamma) {
    const std::size_t n = points.size();
    if (n == 0 || n > 12) throw std::invalid_argument("oracle handles 1..12 points");

    std::vector<double> kmat(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double d2 = 0.0;
            for (std::size_t t = 0; t < points[i].size(); ++t) {
                const double d = points[i][t] - points[j][t];
                d2 += d * d;
            }
            kmat[i * n + j] = std::exp(-gamma * d2);
        }
    const auto q = [&](std::size_t i, std::size_t j) {
        return labels[i] * labels[j] * kmat[i * n + j];
    };
    const auto objective = [&](const std::vector<double>& a) {
        double lin = 0.0, quad = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            lin += a[i];
            for (std::size_t j = 0; j < n; ++j) quad += a[i] * a[j] * q(i, j);
        }
        return lin - 0.5 * quad;
    };

    QpOracleResult best;
    std::size_t patterns = 1;
    for (std::size_t i = 0; i < n; ++i) patterns *= 3;

    std::vector<int> state(n);  // 0 = at zero, 1 = at C, 2 = free
    std::vector<std::size_t> free_idx;
    for (std::size_t code = 0; code < patterns; ++code) {
        std::size_t rem = code;
        free_idx.clear();
        for (std::size_t i = 0; i < n; ++i) {
            state[i] = static_cast<int>(rem % 3);
            rem /= 3;
            if (state[i] == 2) free_idx.push_back(i);
        }

        std::vector<double> alpha(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            if (state[i] == 1) alpha[i] = c;

        const std::size_t f = free_idx.size();
        if (f > 0) {
            // [Q_FF  y_F; y_F^T  0] [a_F; b] = [1 - C Q_FU 1; -C sum(y_U)]
            const std::size_t m = f + 1;
            std::vector<double> a(m * m, 0.0), rhs(m, 0.0), sol;
            for (std::size_t r = 0; r < f; ++r) {
                const std::size_t i = free_idx[r];
                for (std::size_t col = 0; col < f; ++col)
                    a[r * m + col] = q(i, free_idx[col]);
                a[r * m + f] = labels[i];
                a[f * m + r] = labels[i];
                double fixed = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    if (state[j] == 1) fixed += q(i, j) * c;
                rhs[r] = 1.0 - fixed;
            }
            double fixed_y = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                if (state[j] == 1) fixed_y += labels[j] * c;
            rhs[f] = -fixed_y;

            if (!detail::solve_linear(a, rhs, sol)) {
                // ridge the free block; the candidate is still scored with
                // the exact objective, so this can only under-report
                for (std::size_t r = 0; r < f; ++r) a[r * m + r] += 1e-9;
                if (!detail::solve_linear(a, rhs, sol)) continue;
            }
            bool ok = true;
            for (std::size_t r = 0; r < f; ++r) {
                if (sol[r] < -1e-9 || sol[r] > c + 1e-9) {
                    ok = false;
                    break;
                }
                alpha[free_idx[r]] = std::min(std::max(sol[r], 0.0), c);
            }
            if (!ok) continue;
        }

        double balance = 0.0;
        for (std::size_t i = 0; i < n; ++i) balance += labels[i] * alpha[i];
        if (std::abs(balance) > 1e-7) continue;

        const double value = objective(alpha);
        if (value > best.objective) {
            best.objective = value;
            best.alpha = alpha;
        }
    }

    if (best.alpha.empty()) throw std::runtime_error("oracle found no feasible pattern");

    // bias from the optimal multipliers
    std::vector<double> margin(n, 0.0);  // y_i - s_i with s_i = sum_j a_j y_j K_ij
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            s += best.alpha[j] * labels[j] * kmat[i * n + j];
        margin[i] = labels[i] - s;
    }
    double free_sum = 0.0;
    std::size_t free_count = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (best.alpha[i] > 1e-6 * c && best.alpha[i] < c * (1.0 - 1e-6)) {
            free_sum += margin[i];
            ++free_count;
        }
    if (free_count > 0) {
        best.bias = free_sum / static_cast<double>(free_count);
    } else {
        double up = -std::numeric_limits<double>::infinity();
        double low = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            const bool in_up = (labels[i] == +1 && best.alpha[i] < c - 1e-9) ||
                               (labels[i] == -1 && best.alpha[i] > 1e-9);
            const bool in_low = (labels[i] == -1 && best.alpha[i] < c - 1e-9) ||
                                (labels[i] == +1 && best.alpha[i] > 1e-9);
            if (in_up) up = std::max(up, margin[i]);
            if (in_low) low = std::min(low, margin[i]);
        }
        best.bias = 0.5 * (up + low);
    }
    return best;
}

// decision value of the oracle solution at a query point
inline double oracle_decision(const QpOracleResult& result,
                              const std::vector<std::vector<double>>& points,
                              const std::vector<int>& labels, double gamma,
                              const std::vector<double>& x) {
    double f = result.bias;
    for (std::size_t i = 0; i < points.size(); ++i) {
        double d2 = 0.0;
        for (std::size_t t = 0; t < x.size(); ++t) {
            const double d = points[i][t] - x[t];
            d2 += d * d;
        }
        f += result.alpha[i] * labels[i] * std::exp(-gamma * d2);
    }
    return f;
}

}  // namespace duplab::test
