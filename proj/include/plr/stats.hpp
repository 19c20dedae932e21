#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace plr::stats {

struct Interval {
    double lower = 0.0;
    double upper = 1.0;
    double coverage = 0.0; // e.g. 0.95
};

// Standard normal quantile, accurate to ~1e-12 (rational approximation
// refined with Newton steps on std::erfc).
double normal_quantile(double p);

// Continuity-corrected Wilson score interval (Newcombe 1998) at two-sided
// level 1-alpha for `successes` out of `n`.
Interval wilson_interval(long successes, long n, double alpha);

// One-sided test at level alpha that the true proportion exceeds `baseline`:
// rejects when the continuity-corrected Wilson lower bound computed with the
// one-sided critical value z_{1-alpha} lies above the baseline.
bool rejects_baseline(long successes, long n, double baseline, double alpha);

struct RejectionThreshold {
    // Smallest achievable accuracy s/n (integer s) that rejects; empty when
    // not even s = n rejects.
    std::optional<double> achievable;
    // Smallest real-valued observed accuracy whose interval excludes the
    // baseline (the granularity-free threshold).
    std::optional<double> threshold;
};

RejectionThreshold min_accuracy_to_reject(long n, double baseline, double alpha);

struct MeanCi {
    double mean = 0.0;
    double lower = 0.0;
    double upper = 0.0;
};

// mean +- z * bootstrap standard error of the mean; deterministic given seed.
MeanCi bootstrap_mean_ci(const std::vector<double>& samples, int b, double z,
                         uint64_t seed);

// Type-7 (linear interpolation) quantile of unsorted data.
double quantile(std::vector<double> samples, double q);

Interval percentile_interval(const std::vector<double>& samples,
                             double lo = 0.05, double hi = 0.95);

// Spearman rank correlation with average ranks for ties. Throws on constant
// input (undefined correlation).
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// Expected number of embedding dimensions (out of d) in which two classes of
// n points each separate linearly by chance: d * 2 * (n!)^2 / (2n)!.
// Evaluated with exact big-integer factorials.
double expected_separable_dims(long d, long n);

} // namespace plr::stats
