#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

#include "duplab/dataset.hpp"
#include "duplab/rng.hpp"
#include "support/tmpdir.hpp"

using namespace duplab;
using duplab::test::TempDir;
using duplab::test::read_file;

namespace {

void write_cifar_records(const std::string& path,
                         const std::vector<std::pair<int, unsigned char>>& records) {
    std::ofstream out(path, std::ios::binary);
    for (const auto& [label, fill] : records) {
        out.put(static_cast<char>(label));
        for (int i = 0; i < 3072; ++i) out.put(static_cast<char>(fill));
    }
}

}  // namespace

TEST_CASE("empty gaussian spec yields an empty two-class dataset") {
    GaussianSpec spec;
    spec.n_per_class = 0;
    const LabeledDataset d = sample_gaussian(spec);
    CHECK(d.samples.empty());
    CHECK(d.class_set == std::vector<int>{-1, +1});
}

TEST_CASE("gaussian sampler matches its spec moments at n=100000") {
    GaussianSpec spec;
    spec.n_per_class = 100000;
    spec.seed = 2024;
    const LabeledDataset d = sample_gaussian(spec);
    REQUIRE(d.size() == 200000);

    // class +1 mean within 0.02 of [1,1] (3*sigma/sqrt(n) ~ 0.0095)
    double mx = 0.0, my = 0.0;
    std::size_t n_pos = 0;
    for (const Sample& s : d.samples)
        if (s.label == +1) {
            mx += s.features[0];
            my += s.features[1];
            ++n_pos;
        }
    REQUIRE(n_pos == spec.n_per_class);
    mx /= n_pos;
    my /= n_pos;
    CHECK(std::abs(mx - 1.0) < 0.02);
    CHECK(std::abs(my - 1.0) < 0.02);

    // sample covariance of class +1 entrywise within 0.02 of [[1,.5],[.5,1]]
    double cxx = 0.0, cxy = 0.0, cyy = 0.0;
    for (const Sample& s : d.samples)
        if (s.label == +1) {
            const double dx = s.features[0] - mx;
            const double dy = s.features[1] - my;
            cxx += dx * dx;
            cxy += dx * dy;
            cyy += dy * dy;
        }
    cxx /= n_pos - 1;
    cxy /= n_pos - 1;
    cyy /= n_pos - 1;
    CHECK(std::abs(cxx - 1.0) < 0.02);
    CHECK(std::abs(cxy - 0.5) < 0.02);
    CHECK(std::abs(cyy - 1.0) < 0.02);
}

TEST_CASE("gaussian mean error shrinks with sample size") {
    const std::vector<std::size_t> sizes = {1000, 10000, 100000};
    std::vector<double> mean_err(sizes.size(), 0.0);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        for (std::size_t k = 0; k < sizes.size(); ++k) {
            GaussianSpec spec;
            spec.n_per_class = sizes[k];
            spec.seed = mix_seed(99, seed, k);
            const LabeledDataset d = sample_gaussian(spec);
            double mx = 0.0, my = 0.0;
            for (const Sample& s : d.samples)
                if (s.label == -1) {
                    mx += s.features[0];
                    my += s.features[1];
                }
            mx /= spec.n_per_class;
            my /= spec.n_per_class;
            mean_err[k] += std::hypot(mx, my);
        }
    }
    CHECK(mean_err[1] < mean_err[0]);
    CHECK(mean_err[2] < mean_err[1]);
}

TEST_CASE("identical spec and seed regenerate byte-identical datasets") {
    TempDir tmp;
    GaussianSpec spec;
    spec.seed = 77;
    save_csv(sample_gaussian(spec), tmp.file("a.csv"));
    save_csv(sample_gaussian(spec), tmp.file("b.csv"));
    CHECK(read_file(tmp.file("a.csv")) == read_file(tmp.file("b.csv")));
    GaussianSpec other = spec;
    other.seed = 78;
    save_csv(sample_gaussian(other), tmp.file("c.csv"));
    CHECK(read_file(tmp.file("a.csv")) != read_file(tmp.file("c.csv")));
}

TEST_CASE("non positive definite covariance is rejected with the eigenvalue") {
    GaussianSpec spec;
    spec.sigma = {{{1.0, 2.0}, {2.0, 1.0}}};  // eigenvalues -1 and 3
    CHECK_THROWS_WITH_AS(sample_gaussian(spec),
                         doctest::Contains("eigenvalue -1"), std::invalid_argument);
    GaussianSpec asym;
    asym.sigma = {{{1.0, 0.5}, {0.2, 1.0}}};
    CHECK_THROWS_AS(sample_gaussian(asym), std::invalid_argument);
}

TEST_CASE("single cifar record parses into one sample") {
    TempDir tmp;
    write_cifar_records(tmp.file("test_batch.bin"), {{7, 255}});
    ImageSource src;
    src.path = tmp.file("test_batch.bin");
    src.split = ImageSource::Split::test;
    const LabeledDataset d = load_cifar10(src);
    REQUIRE(d.size() == 1);
    CHECK(d.samples[0].label == 7);
    REQUIRE(d.samples[0].features.size() == 3072);
    CHECK(d.samples[0].features[0] == doctest::Approx(1.0));  // 255 normalized
    CHECK(d.origin == DatasetOrigin::image);
    CHECK_FALSE(d.seed.has_value());
}

TEST_CASE("downscale of a constant image keeps the constant") {
    TempDir tmp;
    write_cifar_records(tmp.file("batch.bin"), {{3, 100}});
    ImageSource src;
    src.path = tmp.file("batch.bin");
    src.downscale = 2;
    const LabeledDataset d = load_cifar10(src);
    REQUIRE(d.size() == 1);
    REQUIRE(d.samples[0].features.size() == 768);
    for (double v : d.samples[0].features) CHECK(v == doctest::Approx(100.0 / 255.0));
}

TEST_CASE("unnormalized load keeps raw pixel values") {
    TempDir tmp;
    write_cifar_records(tmp.file("batch.bin"), {{0, 200}});
    ImageSource src;
    src.path = tmp.file("batch.bin");
    src.normalize = false;
    const LabeledDataset d = load_cifar10(src);
    CHECK(d.samples[0].features[17] == doctest::Approx(200.0));
}

TEST_CASE("malformed record length reports the byte offset") {
    TempDir tmp;
    {
        std::ofstream out(tmp.file("bad.bin"), std::ios::binary);
        for (int i = 0; i < 3073 + 10; ++i) out.put('\0');
    }
    ImageSource src;
    src.path = tmp.file("bad.bin");
    CHECK_THROWS_WITH_AS(load_cifar10(src), doctest::Contains("byte offset 3073"),
                         std::runtime_error);
}

TEST_CASE("label byte over 9 reports the record index") {
    TempDir tmp;
    write_cifar_records(tmp.file("bad.bin"), {{1, 0}, {12, 0}});
    ImageSource src;
    src.path = tmp.file("bad.bin");
    CHECK_THROWS_WITH_AS(load_cifar10(src), doctest::Contains("record 1"),
                         std::runtime_error);
}

TEST_CASE("missing files name the path") {
    ImageSource src;
    src.path = "/nonexistent/cifar";
    CHECK_THROWS_WITH_AS(load_cifar10(src), doctest::Contains("/nonexistent/cifar"),
                         std::runtime_error);
}

TEST_CASE("class filtering and truncation preserve file order") {
    TempDir tmp;
    write_cifar_records(tmp.file("batch.bin"),
                        {{0, 1}, {1, 2}, {0, 3}, {2, 4}, {1, 5}, {0, 6}});
    ImageSource src;
    src.path = tmp.file("batch.bin");
    src.class_subset = std::vector<int>{0, 1};
    src.max_per_class = 2;
    src.normalize = false;
    const LabeledDataset d = load_cifar10(src);
    REQUIRE(d.size() == 4);
    CHECK(d.samples[0].features[0] == 1.0);
    CHECK(d.samples[1].features[0] == 2.0);
    CHECK(d.samples[2].features[0] == 3.0);
    CHECK(d.samples[3].features[0] == 5.0);
    CHECK(d.class_set == std::vector<int>{0, 1});
}

TEST_CASE("subsampling the full class size is the identity as a multiset") {
    GaussianSpec spec;
    spec.n_per_class = 20;
    spec.seed = 5;
    const LabeledDataset d = sample_gaussian(spec);
    const LabeledDataset s = subsample(d, 20, 123);
    REQUIRE(s.size() == d.size());
    auto key = [](const Sample& x) { return std::make_tuple(x.features, x.label); };
    std::vector<std::tuple<std::vector<double>, int>> a, b;
    for (const Sample& x : d.samples) a.push_back(key(x));
    for (const Sample& x : s.samples) b.push_back(key(x));
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
}

TEST_CASE("subsampling one per class covers every class") {
    TempDir tmp;
    std::vector<std::pair<int, unsigned char>> records;
    for (int rep = 0; rep < 3; ++rep)
        for (int label = 0; label < 10; ++label)
            records.push_back({label, static_cast<unsigned char>(label)});
    write_cifar_records(tmp.file("batch.bin"), records);
    ImageSource src;
    src.path = tmp.file("batch.bin");
    const LabeledDataset d = load_cifar10(src);
    const LabeledDataset s = subsample(d, 1, 9);
    REQUIRE(s.size() == 10);
    for (const auto& [label, count] : s.class_counts()) {
        (void)label;
        CHECK(count == 1);
    }
}

TEST_CASE("subsample is deterministic in the seed and errors on deficits") {
    GaussianSpec spec;
    spec.n_per_class = 30;
    const LabeledDataset d = sample_gaussian(spec);
    const LabeledDataset a = subsample(d, 10, 4);
    const LabeledDataset b = subsample(d, 10, 4);
    CHECK(a.samples == b.samples);
    const LabeledDataset c = subsample(d, 10, 5);
    CHECK(a.samples != c.samples);
    CHECK_THROWS_WITH_AS(subsample(d, 31, 0), doctest::Contains("class -1"),
                         std::invalid_argument);
}

TEST_CASE("csv round-trip reproduces a loaded dataset") {
    TempDir tmp;
    GaussianSpec spec;
    spec.n_per_class = 15;
    spec.seed = 31;
    const LabeledDataset d = sample_gaussian(spec);
    save_csv(d, tmp.file("d.csv"));
    const LabeledDataset loaded = load_csv(tmp.file("d.csv"));
    CHECK(loaded.samples == d.samples);
    CHECK(loaded.class_set == d.class_set);
    save_csv(loaded, tmp.file("d2.csv"));
    CHECK(read_file(tmp.file("d.csv")) == read_file(tmp.file("d2.csv")));
}
