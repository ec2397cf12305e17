#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace mvrisk::evalreport {

// Mann-Whitney AUC from average ranks: P(score_pos > score_neg) + 0.5 P(tie).
// Throws NotEvaluable unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t redrawn = 0;  // resamples discarded for missing a class
};

inline constexpr std::size_t kDefaultBootstrap = 2000;

// Percentile bootstrap over patients. Resample b uses its own stream derived
// from (seed, b), so the interval does not depend on the thread count.
Interval bootstrap_ci(std::span<const double> scores, std::span<const int> labels, std::size_t n_boot,
                      double level = 0.95, std::uint64_t seed = 0);

// Linear-interpolated quantile of a sorted sample (q in [0,1]).
double quantile_sorted(std::span<const double> sorted, double q);

}  // namespace mvrisk::evalreport
