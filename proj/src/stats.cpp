#include "thermopalm/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "thermopalm/errors.hpp"

namespace thermopalm {

namespace {

double log_binomial_pmf(long k, long n, double p) {
    if (p == 0.0) return k == 0 ? 0.0 : -INFINITY;
    if (p == 1.0) return k == n ? 0.0 : -INFINITY;
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) + k * std::log(p) +
           (n - k) * std::log1p(-p);
}

double normal_upper(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

double binomial_test(long successes, long n, double p0) {
    if (n < 0 || successes < 0 || successes > n) throw InvalidArgument("binomial_test: need 0 <= successes <= n");
    if (!(p0 >= 0.0 && p0 <= 1.0)) throw InvalidArgument("binomial_test: p0 must be in [0, 1]");
    const double observed = log_binomial_pmf(successes, n, p0);
    const double cutoff = observed + std::log1p(1e-7);
    double p = 0.0;
    for (long i = 0; i <= n; ++i) {
        const double lp = log_binomial_pmf(i, n, p0);
        if (lp <= cutoff) p += std::exp(lp);
    }
    return std::min(1.0, p);
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences) {
    std::vector<double> d;
    for (double x : differences) {
        if (!std::isfinite(x)) throw InvalidArgument("wilcoxon_signed_rank: non-finite difference");
        if (x != 0.0) d.push_back(x);
    }
    const int n = static_cast<int>(d.size());
    if (n == 0) throw InvalidArgument("wilcoxon_signed_rank: all differences are zero");

    std::vector<int> order(d.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return std::abs(d[a]) < std::abs(d[b]); });

    // Doubled midranks keep everything integral.
    std::vector<int> rank2(d.size());
    double tie_term = 0.0;
    for (int i = 0; i < n;) {
        int j = i;
        while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
        const int r2 = (i + 1) + (j + 1);
        for (int k = i; k <= j; ++k) rank2[order[k]] = r2;
        const double t = j - i + 1;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    int w2 = 0;
    for (int i = 0; i < n; ++i)
        if (d[i] > 0) w2 += rank2[i];

    WilcoxonResult r{w2 / 2.0, 1.0, n, n <= 20};
    const double mu = n * (n + 1) / 4.0;
    if (r.exact) {
        const int total2 = n * (n + 1);
        std::vector<double> count(total2 + 1, 0.0);
        count[0] = 1.0;
        int reach = 0;
        for (int i = 0; i < n; ++i) {
            for (int s = reach; s >= 0; --s)
                if (count[s] != 0.0) count[s + rank2[i]] += count[s];
            reach += rank2[i];
        }
        const double dev = std::abs(w2 - 2.0 * mu);
        double tail = 0.0;
        for (int s = 0; s <= total2; ++s)
            if (std::abs(s - 2.0 * mu) >= dev - 1e-9) tail += count[s];
        r.p_value = std::min(1.0, tail / std::ldexp(1.0, n));
        return r;
    }
    const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if (!(var > 0)) {
        r.p_value = 1.0;
        return r;
    }
    const double diff = r.statistic - mu;
    const double corrected = std::max(0.0, std::abs(diff) - 0.5);
    r.p_value = std::min(1.0, 2.0 * normal_upper(corrected / std::sqrt(var)));
    return r;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const std::pair<double, double>> pairs) {
    std::vector<double> d;
    d.reserve(pairs.size());
    for (const auto& [a, b] : pairs) d.push_back(a - b);
    return wilcoxon_signed_rank(std::span<const double>(d));
}

}  // namespace thermopalm
