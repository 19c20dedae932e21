#include "plr/stats.hpp"

#include "plr/common.hpp"

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace plr::stats {

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw Error("normal_quantile: p must be in (0,1)");
    // Acklam's rational approximation as a starting point.
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425;
    double x;
    if (p < plow) {
        double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        double q = p - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // Two Halley refinements against the exact CDF.
    for (int i = 0; i < 2; ++i) {
        double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
        double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
        x = x - u / (1.0 + x * u / 2.0);
    }
    return x;
}

namespace {

// Continuity-corrected Wilson bounds at critical value z.
Interval wilson_cc(long s, long n, double z, double coverage) {
    double p = double(s) / double(n);
    double z2 = z * z;
    double denom = 2.0 * (double(n) + z2);
    double lo_in = z2 - 1.0 / double(n) + 4.0 * double(n) * p * (1.0 - p) + (4.0 * p - 2.0);
    double hi_in = z2 - 1.0 / double(n) + 4.0 * double(n) * p * (1.0 - p) - (4.0 * p - 2.0);
    double lo = (s == 0) ? 0.0
                         : (2.0 * double(n) * p + z2 - (z * std::sqrt(std::max(lo_in, 0.0)) + 1.0)) / denom;
    double hi = (s == n) ? 1.0
                         : (2.0 * double(n) * p + z2 + (z * std::sqrt(std::max(hi_in, 0.0)) + 1.0)) / denom;
    return {std::clamp(lo, 0.0, 1.0), std::clamp(hi, 0.0, 1.0), coverage};
}

// Same formula but evaluated at a non-integer success count, for the
// granularity-free rejection threshold.
double wilson_cc_lower_real(double s, long n, double z) {
    double p = s / double(n);
    double z2 = z * z;
    double denom = 2.0 * (double(n) + z2);
    double lo_in = z2 - 1.0 / double(n) + 4.0 * double(n) * p * (1.0 - p) + (4.0 * p - 2.0);
    return (2.0 * double(n) * p + z2 - (z * std::sqrt(std::max(lo_in, 0.0)) + 1.0)) / denom;
}

} // namespace

Interval wilson_interval(long successes, long n, double alpha) {
    if (n < 1) throw Error("wilson_interval: n must be >= 1");
    if (successes < 0 || successes > n) throw Error("wilson_interval: successes out of range");
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error("wilson_interval: alpha must be in (0,1)");
    double z = normal_quantile(1.0 - alpha / 2.0);
    return wilson_cc(successes, n, z, 1.0 - alpha);
}

bool rejects_baseline(long successes, long n, double baseline, double alpha) {
    if (n < 1) throw Error("rejects_baseline: n must be >= 1");
    if (successes < 0 || successes > n) throw Error("rejects_baseline: successes out of range");
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error("rejects_baseline: alpha must be in (0,1)");
    double z = normal_quantile(1.0 - alpha);
    return wilson_cc(successes, n, z, 1.0 - 2.0 * alpha).lower > baseline;
}

RejectionThreshold min_accuracy_to_reject(long n, double baseline, double alpha) {
    if (n < 1) throw Error("min_accuracy_to_reject: n must be >= 1");
    RejectionThreshold out;
    for (long s = 0; s <= n; ++s) {
        if (rejects_baseline(s, n, baseline, alpha)) {
            out.achievable = double(s) / double(n);
            break;
        }
    }
    if (!out.achievable) return out;
    // Bisect for the smallest real-valued accuracy whose lower bound clears
    // the baseline.
    double z = normal_quantile(1.0 - alpha);
    double lo = baseline * double(n), hi = *out.achievable * double(n);
    if (wilson_cc_lower_real(lo, n, z) > baseline) {
        out.threshold = lo / double(n);
        return out;
    }
    for (int i = 0; i < 200; ++i) {
        double mid = 0.5 * (lo + hi);
        if (wilson_cc_lower_real(mid, n, z) > baseline)
            hi = mid;
        else
            lo = mid;
    }
    out.threshold = hi / double(n);
    return out;
}

MeanCi bootstrap_mean_ci(const std::vector<double>& samples, int b, double z, uint64_t seed) {
    if (samples.size() < 2) throw Error("bootstrap_mean_ci: need at least 2 samples");
    if (b < 2) throw Error("bootstrap_mean_ci: need at least 2 resamples");
    size_t n = samples.size();
    double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / double(n);
    Rng rng(seed);
    std::vector<double> means(size_t(b), 0.0);
    for (int i = 0; i < b; ++i) {
        double acc = 0.0;
        for (size_t j = 0; j < n; ++j) acc += samples[rng.below(n)];
        means[size_t(i)] = acc / double(n);
    }
    double bm = std::accumulate(means.begin(), means.end(), 0.0) / double(b);
    double var = 0.0;
    for (double m : means) var += (m - bm) * (m - bm);
    double se = std::sqrt(var / double(b - 1));
    return {mean, mean - z * se, mean + z * se};
}

double quantile(std::vector<double> samples, double q) {
    if (samples.empty()) throw Error("quantile: empty input");
    if (!(q >= 0.0 && q <= 1.0)) throw Error("quantile: q must be in [0,1]");
    std::sort(samples.begin(), samples.end());
    double h = q * double(samples.size() - 1);
    size_t lo = size_t(std::floor(h));
    size_t hi = std::min(lo + 1, samples.size() - 1);
    double frac = h - double(lo);
    return samples[lo] + frac * (samples[hi] - samples[lo]);
}

Interval percentile_interval(const std::vector<double>& samples, double lo, double hi) {
    if (lo > hi) throw Error("percentile_interval: lo > hi");
    return {quantile(samples, lo), quantile(samples, hi), hi - lo};
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
    size_t n = v.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        double r = 0.5 * double(i + j) + 1.0; // average 1-based rank of the tie group
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

} // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw Error("spearman: length mismatch");
    if (x.size() < 2) throw Error("spearman: need at least 2 points");
    std::vector<double> rx = average_ranks(x), ry = average_ranks(y);
    double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / double(rx.size());
    double my = std::accumulate(ry.begin(), ry.end(), 0.0) / double(ry.size());
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw Error("spearman: constant input vector");
    return sxy / std::sqrt(sxx * syy);
}

double expected_separable_dims(long d, long n) {
    if (d < 1 || n < 1) throw Error("expected_separable_dims: d and n must be >= 1");
    using boost::multiprecision::cpp_int;
    cpp_int fact_n = 1, fact_2n = 1;
    for (long i = 2; i <= n; ++i) fact_n *= i;
    for (long i = 2; i <= 2 * n; ++i) fact_2n *= i;
    cpp_int num = cpp_int(d) * 2 * fact_n * fact_n;
    // Exact rational num / (2n)!; reduce then convert.
    cpp_int g = gcd(num, fact_2n);
    num /= g;
    cpp_int den = fact_2n / g;
    // Scale so the double conversion keeps full precision even when the
    // ratio underflows a direct integer conversion.
    boost::multiprecision::cpp_bin_float_100 r =
        boost::multiprecision::cpp_bin_float_100(num) /
        boost::multiprecision::cpp_bin_float_100(den);
    return r.convert_to<double>();
}

} // namespace plr::stats
