#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <tuple>
#include <vector>

#include "duplab/dataset.hpp"
#include "duplab/duplication.hpp"
#include "duplab/rng.hpp"

using namespace duplab;

namespace {

LabeledDataset balanced_pool(std::size_t per_class, std::uint64_t seed) {
    GaussianSpec spec;
    spec.n_per_class = per_class;
    spec.seed = seed;
    return sample_gaussian(spec);
}

std::vector<std::tuple<std::vector<double>, int, bool>> multiset(const LabeledDataset& d) {
    std::vector<std::tuple<std::vector<double>, int, bool>> keys;
    for (const Sample& s : d.samples) keys.emplace_back(s.features, s.label, s.is_duplicate);
    std::sort(keys.begin(), keys.end());
    return keys;
}

}  // namespace

TEST_CASE("rate zero is the identity") {
    const LabeledDataset d = balanced_pool(10, 1);
    DuplicationPolicy policy;
    policy.rate_percent = 0;
    const auto [out, report] = inject(d, policy);
    CHECK(out.samples == d.samples);
    CHECK(report.n_duplicates == 0);
}

TEST_CASE("30 percent of 200 samples appends 60 duplicates") {
    const LabeledDataset d = balanced_pool(100, 2);
    DuplicationPolicy policy;
    policy.rate_percent = 30;
    const auto [out, report] = inject(d, policy);
    CHECK(report.n_duplicates == 60);
    CHECK(out.size() == 260);
}

TEST_CASE("appended size follows floor(rate*n/100) for arbitrary rates and sizes") {
    Rng rng(99);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t per_class = 1 + rng.uniform_int(40);
        const int rate = static_cast<int>(rng.uniform_int(250));
        const LabeledDataset d = balanced_pool(per_class, 100 + trial);
        DuplicationPolicy policy;
        policy.rate_percent = rate;
        policy.seed = trial;
        const auto [out, report] = inject(d, policy);
        const std::size_t expected = static_cast<std::size_t>(rate) * d.size() / 100;
        CHECK(report.n_duplicates == expected);
        CHECK(out.size() == d.size() + expected);
        // originals untouched, in order
        for (std::size_t i = 0; i < d.size(); ++i) CHECK(out.samples[i] == d.samples[i]);
        // every appended sample is a flagged byte-identical copy of an original
        for (std::size_t i = d.size(); i < out.size(); ++i) {
            const Sample& dup = out.samples[i];
            CHECK(dup.is_duplicate);
            const bool found =
                std::any_of(d.samples.begin(), d.samples.end(), [&](const Sample& s) {
                    return s.features == dup.features && s.label == dup.label;
                });
            CHECK(found);
        }
    }
}

TEST_CASE("injection is deterministic in (dataset, policy, seed)") {
    const LabeledDataset d = balanced_pool(25, 3);
    DuplicationPolicy policy;
    policy.rate_percent = 80;
    policy.seed = 17;
    const auto [a, ra] = inject(d, policy);
    const auto [b, rb] = inject(d, policy);
    CHECK(a.samples == b.samples);
    CHECK(ra.per_class_duplicates == rb.per_class_duplicates);
    policy.seed = 18;
    const auto [c, rc] = inject(d, policy);
    (void)rc;
    CHECK(a.samples != c.samples);
}

TEST_CASE("uniform duplicate shares stay near one half on a balanced pool") {
    const LabeledDataset d = balanced_pool(500, 4);
    DuplicationPolicy policy;
    policy.rate_percent = 1000;  // k = 10000
    policy.seed = 5;
    const auto [out, report] = inject(d, policy);
    (void)out;
    REQUIRE(report.n_duplicates == 10000);
    const double ratio = d_ratio(report, +1);
    CHECK(ratio >= 0.485);  // 3 binomial standard errors around 0.5
    CHECK(ratio <= 0.515);
}

TEST_CASE("biased 0.7/0.3 selection concentrates duplicates accordingly") {
    const LabeledDataset d = balanced_pool(500, 6);
    DuplicationPolicy policy;
    policy.rate_percent = 1000;
    policy.class_weights = {{+1, 0.7}, {-1, 0.3}};
    policy.seed = 7;
    const auto [out, report] = inject(d, policy);
    (void)out;
    const double ratio = d_ratio(report, +1);
    CHECK(ratio >= 0.686);  // 3 binomial standard errors around 0.7
    CHECK(ratio <= 0.714);
}

TEST_CASE("pooled uniform draws pass a binomial test against one half") {
    const LabeledDataset d = balanced_pool(50, 8);
    std::size_t positives = 0;
    const std::size_t k = 100, runs = 1000;
    for (std::size_t s = 0; s < runs; ++s) {
        DuplicationPolicy policy;
        policy.rate_percent = 100;
        policy.seed = mix_seed(1234, s);
        const auto [out, report] = inject(d, policy);
        (void)out;
        positives += report.per_class_duplicates.at(+1);
    }
    // two-sided test at alpha = 0.01: |p_hat - 0.5| <= 2.576 * sqrt(0.25/n)
    const double n = static_cast<double>(k * runs);
    const double p_hat = static_cast<double>(positives) / n;
    CHECK(std::abs(p_hat - 0.5) <= 2.576 * std::sqrt(0.25 / n));
}

TEST_CASE("d_ratio falls back to the configured selection probability at zero") {
    const LabeledDataset d = balanced_pool(10, 9);
    DuplicationPolicy uniform;
    uniform.rate_percent = 0;
    const auto [u_out, u_report] = inject(d, uniform);
    (void)u_out;
    CHECK(d_ratio(u_report, +1) == doctest::Approx(0.5));

    DuplicationPolicy biased;
    biased.rate_percent = 0;
    biased.class_weights = {{+1, 0.7}, {-1, 0.3}};
    const auto [b_out, b_report] = inject(d, biased);
    (void)b_out;
    CHECK(d_ratio(b_report, +1) == doctest::Approx(0.7));
    CHECK_THROWS_AS(d_ratio(b_report, 42), std::invalid_argument);
}

TEST_CASE("d_ratio reflects realized counts") {
    DuplicationReport report;
    report.n_duplicates = 60;
    report.per_class_duplicates = {{+1, 35}, {-1, 25}};
    report.d_ratio = {{+1, 35.0 / 60.0}, {-1, 25.0 / 60.0}};
    CHECK(d_ratio(report, +1) == doctest::Approx(0.58333).epsilon(1e-4));
    CHECK(d_ratio(report, -1) == doctest::Approx(0.41667).epsilon(1e-4));
}

TEST_CASE("weights on an empty class are rejected by name") {
    const LabeledDataset d = balanced_pool(5, 10);
    DuplicationPolicy policy;
    policy.rate_percent = 50;
    policy.class_weights = {{+1, 0.5}, {3, 0.5}};
    CHECK_THROWS_WITH_AS(inject(d, policy), doctest::Contains("class 3"),
                         std::invalid_argument);
}

TEST_CASE("weights must sum to one") {
    const LabeledDataset d = balanced_pool(5, 11);
    DuplicationPolicy policy;
    policy.rate_percent = 50;
    policy.class_weights = {{+1, 0.8}, {-1, 0.3}};
    CHECK_THROWS_AS(inject(d, policy), std::invalid_argument);
}

TEST_CASE("dedup removes injected duplicates exactly") {
    const LabeledDataset d = balanced_pool(30, 12);
    DuplicationPolicy policy;
    policy.rate_percent = 150;
    policy.seed = 13;
    const auto [dup, report] = inject(d, policy);
    (void)report;
    CHECK(multiset(dedup_exact(dup)) == multiset(dedup_exact(d)));
}

TEST_CASE("dedup is stable, idempotent and a no-op without duplicates") {
    const LabeledDataset d = balanced_pool(30, 14);
    const LabeledDataset once = dedup_exact(d);
    CHECK(once.samples == d.samples);
    LabeledDataset with_dups = d;
    with_dups.samples.push_back(d.samples[3]);
    with_dups.samples.push_back(d.samples[0]);
    const LabeledDataset deduped = dedup_exact(with_dups);
    CHECK(deduped.samples == d.samples);
    CHECK(dedup_exact(deduped).samples == deduped.samples);
}
