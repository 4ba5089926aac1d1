#pragma once

#include <span>
#include <utility>
#include <vector>

namespace thermopalm {

/// Exact two-sided binomial test: total probability of outcomes no more
/// likely than the observed one (relative tolerance 1e-7).
double binomial_test(long successes, long n, double p0 = 0.5);

struct WilcoxonResult {
    double statistic;  // W+, sum of (mid)ranks of positive differences
    double p_value;    // two-sided
    int n;             // non-zero differences
    bool exact;
};

/// Signed-rank test on paired differences. Zeros are dropped and ties get
/// midranks. Exact null distribution for n <= 20, normal approximation with
/// tie and continuity correction above. Throws InvalidArgument if every
/// difference is zero.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences);
WilcoxonResult wilcoxon_signed_rank(std::span<const std::pair<double, double>> pairs);

}  // namespace thermopalm
