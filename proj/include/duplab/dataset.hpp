#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace duplab {

struct Sample {
    std::vector<double> features;
    int label = 0;
    bool is_duplicate = false;

    bool operator==(const Sample&) const = default;
};

enum class DatasetOrigin { synthetic, image };

// Ordered collection of labeled samples. Immutable by convention once built:
// every transformation in the library returns a new dataset.
struct LabeledDataset {
    std::vector<Sample> samples;
    std::vector<int> class_set;  // sorted, unique labels this dataset declares
    DatasetOrigin origin = DatasetOrigin::synthetic;
    std::optional<std::uint64_t> seed;  // generation seed; absent for file-loaded data

    std::size_t size() const { return samples.size(); }
    std::size_t dim() const { return samples.empty() ? 0 : samples.front().features.size(); }
    std::map<int, std::size_t> class_counts() const;
};

// Two-class 2-D Gaussian generator spec. Class -1 is drawn from N(mu1, sigma)
// and class +1 from N(mu2, sigma).
struct GaussianSpec {
    std::array<double, 2> mu1{0.0, 0.0};
    std::array<double, 2> mu2{1.0, 1.0};
    std::array<std::array<double, 2>, 2> sigma{{{1.0, 0.5}, {0.5, 1.0}}};
    std::size_t n_per_class = 100;
    std::uint64_t seed = 0;
};

// CIFAR-10 binary batch ingestion. `path` may be a directory holding the
// standard batch files (data_batch_1..5.bin / test_batch.bin) or a single
// .bin file.
struct ImageSource {
    enum class Split { train, test };

    std::string path;
    Split split = Split::train;
    std::optional<std::vector<int>> class_subset;
    std::optional<std::size_t> max_per_class;
    int downscale = 1;  // block-mean factor; must divide 32 (1, 2, 4, 8)
    bool normalize = true;
};

// Draws n_per_class points per class via the Cholesky factor of sigma applied
// to Box-Muller normals; class -1 samples come first. Deterministic in
// spec.seed. Throws std::invalid_argument if sigma is not symmetric positive
// definite (the message names the offending eigenvalue).
LabeledDataset sample_gaussian(const GaussianSpec& spec);

// Reads 3073-byte records (label + 3x1024 channel planes). Pixels are scaled
// to [0,1] when normalize is set; downscaling averages non-overlapping f x f
// blocks per channel. class_subset filtering and max_per_class truncation
// preserve file order. Throws std::runtime_error on missing files, lengths
// that are not a multiple of 3073 (reports the byte offset), or label bytes
// > 9 (reports the record index).
LabeledDataset load_cifar10(const ImageSource& source);

// Uniform without-replacement draw of per_class samples from every class in
// the class set, deterministic in seed; output keeps the original sample
// order. Throws if any class has fewer than per_class samples.
LabeledDataset subsample(const LabeledDataset& dataset, std::size_t per_class,
                         std::uint64_t seed);

// Canonical serialization: CSV with header `label,is_duplicate,f0,...,f{d-1}`
// and shortest round-trip number rendering.
void save_csv(const LabeledDataset& dataset, const std::string& path);
LabeledDataset load_csv(const std::string& path,
                        DatasetOrigin origin = DatasetOrigin::synthetic);

// Shortest decimal string that parses back to exactly the same double.
std::string format_double(double value);

}  // namespace duplab
