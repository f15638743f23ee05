// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#include "stats_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>

namespace spdmsim::testing
{

namespace
{

long double t_pdf(long double x, long double df)
{
    const long double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) /
                          std::sqrt(df * 3.14159265358979323846L);
    return c * std::pow(1 + x * x / df, -(df + 1) / 2);
}

long double t_cdf(long double x, long double df)
{
    const int n = 20000;
    const long double h = x / n;
    long double sum = t_pdf(0, df) + t_pdf(x, df);
    for (int i = 1; i < n; ++i)
        sum += (i % 2 ? 4 : 2) * t_pdf(i * h, df);
    return 0.5L + sum * h / 3;
}

} // namespace

double oracle_t975(std::size_t df)
{
    static std::mutex mutex;
    static std::map<std::size_t, double> cache;
    std::lock_guard lock(mutex);
    if (auto it = cache.find(df); it != cache.end())
        return it->second;
    // The CDF is concave above zero, so steps from below approach the root
    // monotonically; 1.9 is below every 97.5% quantile.
    const auto d = static_cast<long double>(df);
    long double x = 1.9L;
    for (int i = 0; i < 50; ++i)
    {
        const long double step = (t_cdf(x, d) - 0.975L) / t_pdf(x, d);
        x -= step;
        if (std::abs(step) < 1e-14L)
            break;
    }
    return cache[df] = static_cast<double>(x);
}

bench::StatSummary oracle_summary(const std::vector<double>& v)
{
    bench::StatSummary s;
    s.n = v.size();
    long double sum = 0;
    for (double x : v)
        sum += x;
    const long double mean = sum / v.size();
    long double ss = 0;
    for (double x : v)
        ss += (x - mean) * (x - mean);
    s.mean = static_cast<double>(mean);
    s.sd = static_cast<double>(std::sqrt(ss / (v.size() - 1)));
    s.ci95 = oracle_t975(v.size() - 1) * s.sd / std::sqrt(static_cast<double>(v.size()));
    return s;
}

bool close_rel(double a, double b, double tol)
{
    return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

} // namespace spdmsim::testing
