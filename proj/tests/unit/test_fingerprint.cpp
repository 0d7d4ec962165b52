#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "msa2/fingerprint.hpp"
#include "msa2/nn.hpp"
#include "msa2/tensor.hpp"

using namespace msa2;

namespace {

// Sort, then interpolate at fractional index q*(n-1).
double quantile_oracle(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const auto hi = lo + 1 < v.size() ? lo + 1 : lo;
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Nearest odd size in [1, 13] by exhaustive distance comparison, ties up.
int quantize_oracle(double raw) {
    int best = 1;
    for (int k = 3; k <= 13; k += 2)
        if (std::abs(raw - k) <= std::abs(raw - best)) best = k;
    return best;
}

LabelMap mask_with(int h, int w, std::vector<std::pair<int, int>> counts) {
    LabelMap m(h, w);
    std::size_t i = 0;
    for (auto [cls, n] : counts)
        for (int k = 0; k < n; ++k) m.labels[i++] = static_cast<std::uint8_t>(cls);
    return m;
}

}  // namespace

TEST_CASE("area proportions") {
    CHECK(area_proportions(LabelMap(8, 8), 3) == std::vector<double>{0.0, 0.0});
    CHECK(area_proportions(mask_with(4, 4, {{1, 4}}), 2) == std::vector<double>{0.25});

    LabelMap m = mask_with(10, 10, {{1, 37}, {2, 13}});
    Rng rng(3);
    for (std::size_t i = m.size(); i > 1; --i) std::swap(m.labels[i - 1], m.labels[rng.index(i)]);
    std::array<int, 3> counted{};
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x) ++counted[m.at(y, x)];
    const auto p = area_proportions(m, 3);
    CHECK(p[0] == counted[1] / 100.0);
    CHECK(p[1] == counted[2] / 100.0);
    CHECK(p[0] == doctest::Approx(0.37));
    CHECK(p[1] == doctest::Approx(0.13));

    LabelMap bad(2, 2);
    bad.labels[3] = 3;
    CHECK_THROWS_AS(area_proportions(bad, 3), DataError);
}

TEST_CASE("quartile statistics") {
    CHECK(quartile_stats(std::vector<double>{0.3}) == QuartileVector{0.3, 0.3, 0.3, 0.3});
    const std::vector<double> four{0.4, 0.1, 0.3, 0.2};
    const auto q = quartile_stats(four);
    for (int i = 0; i < 4; ++i) CHECK(q[i] == quantile_oracle(four, std::array{0.25, 0.5, 0.75, 0.95}[i]));
    CHECK(q[0] == doctest::Approx(0.175));
    CHECK(q[1] == doctest::Approx(0.25));
    CHECK(q[2] == doctest::Approx(0.325));
    CHECK(q[3] == doctest::Approx(0.385));
    CHECK_THROWS_WITH_AS(quartile_stats(std::vector<double>{}), doctest::Contains("no foreground samples"), DataError);

    Rng rng(1000);
    std::vector<double> draws(1000);
    for (auto& d : draws) d = rng.uniform();
    const auto big = quartile_stats(draws);
    const std::array qs{0.25, 0.5, 0.75, 0.95};
    for (int i = 0; i < 4; ++i) CHECK(big[i] == quantile_oracle(draws, qs[i]));
}

TEST_CASE("quartile statistics are order invariant and nondecreasing") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> v(1 + rng.index(40));
        for (auto& x : v) x = rng.uniform();
        const auto a = quartile_stats(v);
        std::reverse(v.begin(), v.end());
        CHECK(quartile_stats(v) == a);
        CHECK(std::is_sorted(a.begin(), a.end()));
    }
}

TEST_CASE("kernel quantization") {
    CHECK(quantize_kernel(1.0) == 1);
    CHECK(quantize_kernel(1.99) == 1);
    CHECK(quantize_kernel(2.0) == 3);  // tie goes up
    CHECK(quantize_kernel(4.0) == 5);
    CHECK(quantize_kernel(14.0) == 13);
    CHECK(quantize_kernel(0.2) == 1);
    Rng rng(9);
    for (int i = 0; i < 2000; ++i) {
        const double raw = rng.uniform(0.5, 15.0);
        CHECK(quantize_kernel(raw) == quantize_oracle(raw));
    }
}

TEST_CASE("candidate matrix construction") {
    const auto none = build_candidate_matrix(QuartileVector{0, 0, 0, 0});
    for (int s = 0; s < 4; ++s)
        for (int b = 0; b < 4; ++b) CHECK(none.quantized[b][s] == kBaseKernels[b]);

    const QuartileVector q{0.05, 0.12, 0.25, 0.60};
    const auto m = build_candidate_matrix(q);
    for (int s = 0; s < 4; ++s) {
        CHECK(m.shift[s] == 1.0 + q[s]);
        CHECK(m.raw[1][s] == 3.0 * (1.0 + q[s]));
        CHECK(m.quantized[1][s] == quantize_oracle(3.0 * (1.0 + q[s])));
    }
    CHECK(m.raw[1][0] == doctest::Approx(3.15));
    CHECK(m.raw[1][3] == doctest::Approx(4.80));
    CHECK(m.quantized[1] == std::array<int, 4>{3, 3, 3, 5});

    const auto top = build_candidate_matrix(QuartileVector{1, 1, 1, 1});
    CHECK(top.raw[3] == std::array<double, 4>{14, 14, 14, 14});
    CHECK(top.quantized[3] == std::array<int, 4>{13, 13, 13, 13});
}

TEST_CASE("candidate matrices are monotone in the quartiles") {
    Rng rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        QuartileVector a{}, b{};
        for (int s = 0; s < 4; ++s) {
            a[s] = rng.uniform();
            b[s] = a[s] + (1.0 - a[s]) * rng.uniform();
        }
        const auto ma = build_candidate_matrix(a), mb = build_candidate_matrix(b);
        for (int r = 0; r < 4; ++r)
            for (int s = 0; s < 4; ++s) {
                CHECK(ma.quantized[r][s] <= mb.quantized[r][s]);
                CHECK(ma.quantized[r][s] % 2 == 1);
            }
    }
}

TEST_CASE("dataset fingerprints") {
    const std::vector<LabelMap> one{mask_with(4, 4, {{1, 4}})};
    const auto fp1 = fingerprint_dataset(one, 2, "one");
    CHECK(fp1.pooled_quartiles == QuartileVector{0.25, 0.25, 0.25, 0.25});
    CHECK(fp1.sample_count == 1);

    const std::vector<LabelMap> two{mask_with(10, 10, {{1, 10}}), mask_with(10, 10, {{1, 30}})};
    const auto fp2 = fingerprint_dataset(two, 2, "two");
    CHECK(fp2.pooled_quartiles[1] == quantile_oracle({0.1, 0.3}, 0.5));
    CHECK(fp2.pooled_quartiles[1] == doctest::Approx(0.2));

    // absent classes contribute nothing; background never sampled
    const std::vector<LabelMap> mixed{mask_with(10, 10, {{1, 20}}), mask_with(10, 10, {{1, 40}, {2, 5}}),
                                      LabelMap(10, 10)};
    const auto fp3 = fingerprint_dataset(mixed, 3, "mixed");
    CHECK(fp3.per_class_samples.at(1) == std::vector<double>{0.2, 0.4});
    CHECK(fp3.per_class_samples.at(2) == std::vector<double>{0.05});
    CHECK(fp3.pooled_quartiles == quartile_stats(std::vector<double>{0.2, 0.4, 0.05}));
    CHECK(fp3.per_class_quartiles.at(2) == QuartileVector{0.05, 0.05, 0.05, 0.05});

    const std::vector<LabelMap> shuffled{mixed[2], mixed[1], mixed[0]};
    const auto fp4 = fingerprint_dataset(shuffled, 3, "mixed");
    CHECK(fp4.pooled_quartiles == fp3.pooled_quartiles);
    CHECK(fp4.per_class_quartiles == fp3.per_class_quartiles);
    CHECK(to_json(fp4) == to_json(fp3));

    const std::vector<LabelMap> empty{LabelMap(4, 4), LabelMap(4, 4)};
    CHECK_THROWS_AS(fingerprint_dataset(empty, 2, "empty"), DataError);
}

TEST_CASE("fingerprint JSON round trip and field names") {
    const std::vector<LabelMap> masks{mask_with(10, 10, {{1, 20}, {2, 7}}), mask_with(10, 10, {{1, 33}})};
    const auto fp = fingerprint_dataset(masks, 3, "rt");
    const auto j = to_json(fp);
    for (const char* key : {"dataset_id", "sample_count", "per_class_quartiles", "pooled_quartiles", "candidate_matrix"})
        CHECK(j.contains(key));
    for (const char* key : {"base", "shift", "raw", "quantized"}) CHECK(j["candidate_matrix"].contains(key));
    const auto back = fingerprint_from_json(j);
    CHECK(back.pooled_quartiles == fp.pooled_quartiles);
    CHECK(back.per_class_quartiles == fp.per_class_quartiles);
    CHECK(build_candidate_matrix(back) == build_candidate_matrix(fp));
    CHECK(candidate_matrix_from_json(to_json(build_candidate_matrix(fp))) == build_candidate_matrix(fp));
    CHECK(build_candidate_matrix(fp, 2) == build_candidate_matrix(fp.per_class_quartiles.at(2)));
}
