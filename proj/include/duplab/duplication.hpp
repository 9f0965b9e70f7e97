#pragma once

#include <cstdint>
#include <map>
#include <utility>

#include "duplab/dataset.hpp"

namespace duplab {

// Controls duplicate injection. An empty class_weights map selects uniformly
// over all samples; a non-empty map is a per-class selection distribution
// (weights must be nonnegative and sum to 1).
struct DuplicationPolicy {
    int rate_percent = 0;  // duplicates as % of the original dataset size; may exceed 100
    std::map<int, double> class_weights;
    std::uint64_t seed = 0;

    bool uniform() const { return class_weights.empty(); }
};

struct DuplicationReport {
    std::size_t n_duplicates = 0;
    std::map<int, std::size_t> per_class_duplicates;
    // fraction of duplicates per label; when n_duplicates == 0 this holds the
    // policy's configured selection probability instead
    std::map<int, double> d_ratio;
};

// Appends floor(rate_percent * |dataset| / 100) exact copies, each flagged
// is_duplicate, drawn with replacement: uniformly over all samples, or class
// first then member for a biased policy. Original samples keep their order.
std::pair<LabeledDataset, DuplicationReport> inject(const LabeledDataset& dataset,
                                                    const DuplicationPolicy& policy);

// Realized duplicate share of `label`; falls back to the configured selection
// probability when no duplicates were drawn. Throws on unknown labels.
double d_ratio(const DuplicationReport& report, int label);

// Removes samples whose (features, label) are byte-identical to an earlier
// sample. Stable and idempotent.
LabeledDataset dedup_exact(const LabeledDataset& dataset);

}  // namespace duplab
