#include "mvrisk/evalreport/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mvrisk/core/errors.hpp"
#include "mvrisk/core/rng.hpp"

namespace mvrisk::evalreport {

double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size())
        throw ShapeMismatch("auc: " + std::to_string(scores.size()) + " scores vs " + std::to_string(labels.size()) +
                            " labels");
    std::size_t n_pos = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw InvalidParameter("auc labels must be 0 or 1");
        n_pos += static_cast<std::size_t>(l);
    }
    const std::size_t n = labels.size(), n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw NotEvaluable("auc needs at least one positive and one negative");
    for (double s : scores)
        if (std::isnan(s)) throw InvalidParameter("auc scores contain NaN");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Sum of doubled average ranks of positives keeps everything integral.
    long long doubled = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const long long doubled_rank = static_cast<long long>(i + 1 + j);  // 2 * mean of ranks i+1..j
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) doubled += doubled_rank;
        i = j;
    }
    const long long p = static_cast<long long>(n_pos);
    const long long doubled_u = doubled - p * (p + 1);
    return static_cast<double>(doubled_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double quantile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw InvalidParameter("quantile of an empty sample");
    const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(sorted.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    const std::size_t j = std::min(i + 1, sorted.size() - 1);
    const double t = pos - static_cast<double>(i);
    return sorted[i] + t * (sorted[j] - sorted[i]);
}

Interval bootstrap_ci(std::span<const double> scores, std::span<const int> labels, std::size_t n_boot, double level,
                      std::uint64_t seed) {
    if (n_boot < 1) throw InvalidParameter("n_boot must be >= 1");
    if (!(level > 0.0 && level < 1.0)) throw InvalidParameter("confidence level must lie in (0,1)");
    auc(scores, labels);
    const std::size_t n = scores.size();
    std::vector<double> stats(n_boot);
    std::vector<std::size_t> redraws(n_boot, 0);
    const long nb = static_cast<long>(n_boot);
#pragma omp parallel for schedule(static)
    for (long b = 0; b < nb; ++b) {
        Rng rng = make_rng(seed, {static_cast<std::uint64_t>(b)});
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        std::vector<double> s(n);
        std::vector<int> l(n);
        for (;;) {
            std::size_t pos = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t k = pick(rng);
                s[i] = scores[k];
                l[i] = labels[k];
                pos += static_cast<std::size_t>(l[i]);
            }
            if (pos > 0 && pos < n) break;
            ++redraws[static_cast<std::size_t>(b)];
        }
        stats[static_cast<std::size_t>(b)] = auc(s, l);
    }
    std::sort(stats.begin(), stats.end());
    const double tail = (1.0 - level) / 2.0;
    return {quantile_sorted(stats, tail), quantile_sorted(stats, 1.0 - tail),
            std::accumulate(redraws.begin(), redraws.end(), std::size_t{0})};
}

}  // namespace mvrisk::evalreport
