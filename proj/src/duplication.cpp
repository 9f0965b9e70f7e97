#include "duplab/duplication.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "duplab/rng.hpp"

namespace duplab {

namespace {

void validate(const DuplicationPolicy& policy) {
    if (policy.rate_percent < 0)
        throw std::invalid_argument("rate_percent must be >= 0");
    if (policy.uniform()) return;
    double total = 0.0;
    for (const auto& [label, w] : policy.class_weights) {
        if (w < 0.0)
            throw std::invalid_argument("negative selection weight for class " +
                                        std::to_string(label));
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("class weights must sum to 1, got " +
                                    std::to_string(total));
}

// byte image of a sample's identity: label followed by raw feature bits
std::string sample_key(const Sample& s) {
    std::string key(sizeof(int) + s.features.size() * sizeof(double), '\0');
    std::memcpy(key.data(), &s.label, sizeof(int));
    std::memcpy(key.data() + sizeof(int), s.features.data(),
                s.features.size() * sizeof(double));
    return key;
}

}  // namespace

std::pair<LabeledDataset, DuplicationReport> inject(const LabeledDataset& dataset,
                                                    const DuplicationPolicy& policy) {
    validate(policy);
    const std::size_t n = dataset.size();
    const std::size_t k =
        static_cast<std::size_t>(policy.rate_percent) * n / 100;  // floor
    if (policy.rate_percent > 0 && n == 0)
        throw std::invalid_argument("cannot inject duplicates into an empty dataset");

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < n; ++i) by_class[dataset.samples[i].label].push_back(i);

    std::vector<int> weighted_labels;
    std::vector<double> cumulative;
    if (!policy.uniform()) {
        double acc = 0.0;
        for (const auto& [label, w] : policy.class_weights) {
            if (w == 0.0) continue;
            auto it = by_class.find(label);
            if (it == by_class.end() || it->second.empty())
                throw std::invalid_argument("selection weight " + format_double(w) +
                                            " on empty class " + std::to_string(label));
            acc += w;
            weighted_labels.push_back(label);
            cumulative.push_back(acc);
        }
    }

    DuplicationReport report;
    report.n_duplicates = k;
    for (int label : dataset.class_set) report.per_class_duplicates[label] = 0;

    LabeledDataset out = dataset;
    out.samples.reserve(n + k);
    Rng rng(policy.seed);
    for (std::size_t t = 0; t < k; ++t) {
        std::size_t pick;
        if (policy.uniform()) {
            pick = rng.uniform_int(n);
        } else {
            const double u = rng.uniform() * cumulative.back();
            std::size_t c = 0;
            while (u >= cumulative[c] && c + 1 < cumulative.size()) ++c;
            const auto& members = by_class.at(weighted_labels[c]);
            pick = members[rng.uniform_int(members.size())];
        }
        Sample copy = dataset.samples[pick];
        copy.is_duplicate = true;
        ++report.per_class_duplicates[copy.label];
        out.samples.push_back(std::move(copy));
    }

    // realized shares, or the configured selection distribution when k == 0
    for (int label : dataset.class_set) {
        double value;
        if (k > 0) {
            value = static_cast<double>(report.per_class_duplicates[label]) /
                    static_cast<double>(k);
        } else if (policy.uniform()) {
            auto it = by_class.find(label);
            const std::size_t count = it == by_class.end() ? 0 : it->second.size();
            value = n == 0 ? 0.0 : static_cast<double>(count) / static_cast<double>(n);
        } else {
            auto it = policy.class_weights.find(label);
            value = it == policy.class_weights.end() ? 0.0 : it->second;
        }
        report.d_ratio[label] = value;
    }
    return {std::move(out), std::move(report)};
}

double d_ratio(const DuplicationReport& report, int label) {
    auto it = report.d_ratio.find(label);
    if (it == report.d_ratio.end())
        throw std::invalid_argument("unknown label " + std::to_string(label));
    return it->second;
}

LabeledDataset dedup_exact(const LabeledDataset& dataset) {
    LabeledDataset out;
    out.class_set = dataset.class_set;
    out.origin = dataset.origin;
    out.seed = dataset.seed;
    std::unordered_set<std::string> seen;
    for (const Sample& s : dataset.samples)
        if (seen.insert(sample_key(s)).second) out.samples.push_back(s);
    return out;
}

}  // namespace duplab
