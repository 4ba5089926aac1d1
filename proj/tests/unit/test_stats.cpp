#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "thermopalm/errors.hpp"
#include "thermopalm/stats.hpp"

using namespace thermopalm;

namespace {

// pmf by running products in long double, then the two-sided sum.
double binomial_oracle(long k, long n, double p) {
    std::vector<long double> pmf(static_cast<std::size_t>(n) + 1);
    const long double q = 1.0L - p;
    long double log_term = n * std::log(q);
    pmf[0] = std::exp(log_term);
    for (long i = 1; i <= n; ++i) {
        log_term += std::log(static_cast<long double>(n - i + 1)) - std::log(static_cast<long double>(i)) +
                    std::log(static_cast<long double>(p)) - std::log(q);
        pmf[static_cast<std::size_t>(i)] = std::exp(log_term);
    }
    const long double obs = pmf[static_cast<std::size_t>(k)];
    long double total = 0;
    for (long double v : pmf)
        if (v <= obs * (1 + 1e-7L)) total += v;
    return static_cast<double>(std::min<long double>(1.0L, total));
}

// Two-sided exact p by enumerating every sign assignment of the midranks.
std::pair<double, double> wilcoxon_oracle(const std::vector<double>& diffs) {
    std::vector<double> d;
    for (double x : diffs)
        if (x != 0) d.push_back(x);
    const std::size_t n = d.size();
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n; ++i) {
        double less = 0, equal = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (std::abs(d[j]) < std::abs(d[i])) ++less;
            if (std::abs(d[j]) == std::abs(d[i])) ++equal;
        }
        rank[i] = less + (equal + 1) / 2.0;
    }
    double w = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (d[i] > 0) w += rank[i];
    const double mu = n * (n + 1) / 4.0;
    std::size_t extreme = 0;
    for (std::uint64_t mask = 0; mask < (1ull << n); ++mask) {
        double s = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask >> i & 1) s += rank[i];
        if (std::abs(s - mu) >= std::abs(w - mu) - 1e-9) ++extreme;
    }
    return {w, static_cast<double>(extreme) / static_cast<double>(1ull << n)};
}

}  // namespace

TEST(BinomialTest, Examples) {
    EXPECT_NEAR(binomial_test(5, 10), 1.0, 1e-12);
    EXPECT_NEAR(binomial_test(10, 10), 2 * std::pow(0.5, 10), 1e-15);
    EXPECT_NEAR(binomial_test(84, 100), binomial_oracle(84, 100, 0.5), 1e-10);
    EXPECT_NEAR(binomial_test(0, 0), 1.0, 1e-15);
}

TEST(BinomialTest, MatchesTailSummationOnRandomCases) {
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<long> nd(1, 400);
    std::uniform_real_distribution<double> pd(0.01, 0.99);
    for (int c = 0; c < 1000; ++c) {
        const long n = nd(rng);
        const long k = std::uniform_int_distribution<long>(0, n)(rng);
        const double p = c % 4 == 0 ? 0.5 : pd(rng);
        ASSERT_NEAR(binomial_test(k, n, p), binomial_oracle(k, n, p), 1e-10) << k << "/" << n << " p=" << p;
    }
}

TEST(BinomialTest, RejectsBadArguments) {
    EXPECT_THROW(binomial_test(11, 10), InvalidArgument);
    EXPECT_THROW(binomial_test(1, 10, 1.5), InvalidArgument);
}

TEST(Wilcoxon, AllPositiveEight) {
    const std::vector<double> d{1, 2, 3, 4, 5, 6, 7, 8};
    const auto r = wilcoxon_signed_rank(d);
    EXPECT_EQ(r.statistic, 36.0);
    EXPECT_NEAR(r.p_value, 2.0 / 256.0, 1e-15);
    EXPECT_TRUE(r.exact);
}

TEST(Wilcoxon, MirroredPairsGiveNoShift) {
    const std::vector<double> d{1, -1, 2, -2, 3, -3, 4, -4};
    EXPECT_NEAR(wilcoxon_signed_rank(d).p_value, 1.0, 1e-12);
}

TEST(Wilcoxon, PairsOverloadUsesDifferences) {
    const std::vector<std::pair<double, double>> pairs{{5, 4}, {6, 4}, {7, 4}, {3, 4}, {9, 4}, {6, 6}};
    const std::vector<double> d{1, 2, 3, -1, 5, 0};
    EXPECT_EQ(wilcoxon_signed_rank(pairs).p_value, wilcoxon_signed_rank(d).p_value);
    EXPECT_EQ(wilcoxon_signed_rank(pairs).n, 5);
}

TEST(Wilcoxon, AllZeroThrows) {
    const std::vector<double> d{0, 0, 0};
    EXPECT_THROW(wilcoxon_signed_rank(d), InvalidArgument);
}

TEST(Wilcoxon, MatchesSignEnumerationUpToTwelve) {
    std::mt19937_64 rng(13);
    for (int n = 1; n <= 12; ++n) {
        for (int rep = 0; rep < 25; ++rep) {
            std::vector<double> d(static_cast<std::size_t>(n));
            // Small integer grid to force ties; rep 0 is continuous.
            std::uniform_int_distribution<int> small(-4, 6);
            std::normal_distribution<double> cont(0.5, 1.0);
            bool nonzero = false;
            for (auto& x : d) {
                x = rep == 0 ? cont(rng) : small(rng);
                nonzero |= x != 0;
            }
            if (!nonzero) d[0] = 1;
            const auto r = wilcoxon_signed_rank(d);
            const auto [w, p] = wilcoxon_oracle(d);
            ASSERT_EQ(r.statistic, w);
            ASSERT_NEAR(r.p_value, p, 1e-12) << "n=" << n << " rep=" << rep;
        }
    }
}

TEST(Wilcoxon, NormalApproximationAboveTwenty) {
    std::vector<double> d;
    for (int i = 1; i <= 30; ++i) d.push_back(i % 3 == 0 ? -i : i);
    const auto r = wilcoxon_signed_rank(d);
    EXPECT_FALSE(r.exact);
    // W+ = 465 - 165 = 300, mu = 232.5, var = 2363.75, continuity 0.5.
    EXPECT_EQ(r.statistic, 300.0);
    EXPECT_NEAR(r.p_value, std::erfc((67.0 / std::sqrt(2363.75)) / std::sqrt(2.0)), 1e-12);
}
