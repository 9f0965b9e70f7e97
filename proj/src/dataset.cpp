#include "duplab/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "duplab/rng.hpp"

namespace duplab {

namespace fs = std::filesystem;

std::map<int, std::size_t> LabeledDataset::class_counts() const {
    std::map<int, std::size_t> counts;
    for (int label : class_set) counts[label] = 0;
    for (const Sample& s : samples) ++counts[s.label];
    return counts;
}

std::string format_double(double value) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc{}) throw std::runtime_error("number formatting failed");
    return std::string(buf, ptr);
}

namespace {

double parse_double(std::string_view text) {
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size())
        throw std::runtime_error("bad numeric field: '" + std::string(text) + "'");
    return value;
}

// eigenvalues of a symmetric 2x2 matrix, ascending
std::array<double, 2> eigenvalues2x2(const std::array<std::array<double, 2>, 2>& m) {
    const double tr = m[0][0] + m[1][1];
    const double det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
    return {tr / 2.0 - disc, tr / 2.0 + disc};
}

}  // namespace

LabeledDataset sample_gaussian(const GaussianSpec& spec) {
    const auto& s = spec.sigma;
    if (std::abs(s[0][1] - s[1][0]) > 1e-12)
        throw std::invalid_argument("covariance must be symmetric");
    const auto eig = eigenvalues2x2(s);
    if (eig[0] <= 0.0)
        throw std::invalid_argument("covariance not positive definite: eigenvalue " +
                                    format_double(eig[0]) + " <= 0");

    // 2x2 Cholesky factor, sigma = L L^T
    const double l11 = std::sqrt(s[0][0]);
    const double l21 = s[0][1] / l11;
    const double l22 = std::sqrt(s[1][1] - l21 * l21);

    LabeledDataset out;
    out.class_set = {-1, +1};
    out.origin = DatasetOrigin::synthetic;
    out.seed = spec.seed;
    out.samples.reserve(2 * spec.n_per_class);

    Rng rng(spec.seed);
    const std::array<std::pair<int, std::array<double, 2>>, 2> classes = {
        {{-1, spec.mu1}, {+1, spec.mu2}}};
    for (const auto& [label, mu] : classes) {
        for (std::size_t i = 0; i < spec.n_per_class; ++i) {
            const double z1 = rng.normal();
            const double z2 = rng.normal();
            Sample sample;
            sample.features = {mu[0] + l11 * z1, mu[1] + l21 * z1 + l22 * z2};
            sample.label = label;
            out.samples.push_back(std::move(sample));
        }
    }
    return out;
}

namespace {

constexpr std::size_t kCifarRecordBytes = 3073;  // 1 label byte + 3*1024 pixels
constexpr std::size_t kCifarPixels = 3072;

void load_cifar_file(const fs::path& file, const ImageSource& source,
                     std::vector<Sample>& out) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open cifar batch: " + file.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    if (bytes.size() % kCifarRecordBytes != 0) {
        const std::size_t offset = bytes.size() - bytes.size() % kCifarRecordBytes;
        throw std::runtime_error("malformed cifar batch " + file.string() + ": " +
                                 std::to_string(bytes.size()) +
                                 " bytes is not a multiple of 3073 (partial record at byte offset " +
                                 std::to_string(offset) + ")");
    }

    const int f = source.downscale;
    const std::size_t side = 32 / static_cast<std::size_t>(f);
    const std::size_t n_records = bytes.size() / kCifarRecordBytes;
    const double scale = source.normalize ? 1.0 / 255.0 : 1.0;

    for (std::size_t r = 0; r < n_records; ++r) {
        const unsigned char* rec =
            reinterpret_cast<const unsigned char*>(bytes.data()) + r * kCifarRecordBytes;
        const int label = rec[0];
        if (label > 9)
            throw std::runtime_error("invalid label byte " + std::to_string(label) +
                                     " at record " + std::to_string(r) + " in " +
                                     file.string());
        Sample sample;
        sample.label = label;
        sample.features.resize(3 * side * side);
        const unsigned char* pixels = rec + 1;
        for (std::size_t ch = 0; ch < 3; ++ch) {
            const unsigned char* plane = pixels + ch * 1024;
            double* out_plane = sample.features.data() + ch * side * side;
            for (std::size_t br = 0; br < side; ++br) {
                for (std::size_t bc = 0; bc < side; ++bc) {
                    double sum = 0.0;
                    for (int dr = 0; dr < f; ++dr)
                        for (int dc = 0; dc < f; ++dc)
                            sum += plane[(br * f + dr) * 32 + (bc * f + dc)];
                    out_plane[br * side + bc] = scale * sum / (f * f);
                }
            }
        }
        out.push_back(std::move(sample));
    }
}

}  // namespace

LabeledDataset load_cifar10(const ImageSource& source) {
    if (source.downscale != 1 && source.downscale != 2 && source.downscale != 4 &&
        source.downscale != 8)
        throw std::invalid_argument("downscale factor must be 1, 2, 4 or 8");

    std::vector<fs::path> files;
    const fs::path root(source.path);
    if (fs::is_regular_file(root)) {
        files.push_back(root);
    } else if (fs::is_directory(root)) {
        if (source.split == ImageSource::Split::train) {
            for (int i = 1; i <= 5; ++i) {
                fs::path f = root / ("data_batch_" + std::to_string(i) + ".bin");
                if (fs::exists(f)) files.push_back(f);
            }
        } else {
            fs::path f = root / "test_batch.bin";
            if (fs::exists(f)) files.push_back(f);
        }
        if (files.empty())
            throw std::runtime_error("no cifar batch files found under " + root.string());
    } else {
        throw std::runtime_error("cifar path does not exist: " + root.string());
    }

    LabeledDataset out;
    out.origin = DatasetOrigin::image;
    for (const auto& file : files) load_cifar_file(file, source, out.samples);

    if (source.class_subset) {
        std::vector<int> keep = *source.class_subset;
        std::sort(keep.begin(), keep.end());
        keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
        std::erase_if(out.samples, [&](const Sample& s) {
            return !std::binary_search(keep.begin(), keep.end(), s.label);
        });
        out.class_set = keep;
    } else {
        out.class_set = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    }

    if (source.max_per_class) {
        std::map<int, std::size_t> taken;
        std::vector<Sample> kept;
        kept.reserve(out.samples.size());
        for (Sample& s : out.samples)
            if (taken[s.label]++ < *source.max_per_class) kept.push_back(std::move(s));
        out.samples = std::move(kept);
    }
    return out;
}

LabeledDataset subsample(const LabeledDataset& dataset, std::size_t per_class,
                         std::uint64_t seed) {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i)
        by_class[dataset.samples[i].label].push_back(i);

    std::vector<std::size_t> chosen;
    for (const auto& [label, indices] : by_class) {
        if (indices.size() < per_class)
            throw std::invalid_argument("class " + std::to_string(label) + " has only " +
                                        std::to_string(indices.size()) +
                                        " samples, cannot subsample " +
                                        std::to_string(per_class));
        // partial Fisher-Yates over the class's index list
        std::vector<std::size_t> pool = indices;
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(static_cast<std::int64_t>(label))));
        for (std::size_t i = 0; i < per_class; ++i) {
            const std::size_t j = i + rng.uniform_int(pool.size() - i);
            std::swap(pool[i], pool[j]);
            chosen.push_back(pool[i]);
        }
    }
    std::sort(chosen.begin(), chosen.end());

    LabeledDataset out;
    out.class_set = dataset.class_set;
    out.origin = dataset.origin;
    out.seed = seed;
    out.samples.reserve(chosen.size());
    for (std::size_t i : chosen) out.samples.push_back(dataset.samples[i]);
    return out;
}

void save_csv(const LabeledDataset& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "label,is_duplicate";
    for (std::size_t i = 0; i < dataset.dim(); ++i) out << ",f" << i;
    out << "\n";
    for (const Sample& s : dataset.samples) {
        out << s.label << ',' << (s.is_duplicate ? 1 : 0);
        for (double v : s.features) out << ',' << format_double(v);
        out << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

LabeledDataset load_csv(const std::string& path, DatasetOrigin origin) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty dataset file: " + path);

    LabeledDataset out;
    out.origin = origin;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        Sample s;
        std::size_t field = 0;
        std::size_t start = 0;
        while (start <= line.size()) {
            std::size_t end = line.find(',', start);
            if (end == std::string::npos) end = line.size();
            const std::string_view token(line.data() + start, end - start);
            if (field == 0)
                s.label = static_cast<int>(parse_double(token));
            else if (field == 1)
                s.is_duplicate = parse_double(token) != 0.0;
            else
                s.features.push_back(parse_double(token));
            ++field;
            start = end + 1;
        }
        if (!out.samples.empty() && s.features.size() != out.samples.front().features.size())
            throw std::runtime_error("inconsistent feature count at data row " +
                                     std::to_string(out.samples.size() + 1) + " in " + path);
        out.samples.push_back(std::move(s));
    }
    std::vector<int> labels;
    for (const Sample& s : out.samples) labels.push_back(s.label);
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    out.class_set = std::move(labels);
    return out;
}

}  // namespace duplab
