#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "batchcp/combiners.hpp"
#include "batchcp/conformal.hpp"
#include "batchcp/errors.hpp"
#include "batchcp/random.hpp"

namespace batchcp {

/// Class counts (m_1, ..., m_K) of a batch, summing to m.
using Composition = std::vector<std::size_t>;

/// Number of compositions of m into K nonnegative parts, C(m+K-1, K-1),
/// saturating at uint64 max.
inline std::uint64_t composition_count(std::size_t m, std::size_t K)
{
    if (K == 0) return m == 0 ? 1 : 0;
    // C(m+K-1, m) built incrementally; each partial product is itself a binomial
    unsigned __int128 c = 1;
    for (std::size_t j = 1; j <= m; ++j) {
        c = c * (K - 1 + j) / j;
        if (c > std::numeric_limits<std::uint64_t>::max()) return std::numeric_limits<std::uint64_t>::max();
    }
    return static_cast<std::uint64_t>(c);
}

/// All compositions of m into K parts, lexicographic order.
inline std::vector<Composition> compositions(std::size_t m, std::size_t K)
{
    std::vector<Composition> out;
    if (K == 0) return out;
    Composition cur(K, 0);
    auto rec = [&](auto&& self, std::size_t k, std::size_t left) -> void {
        if (k + 1 == K) {
            cur[k] = left;
            out.push_back(cur);
            return;
        }
        for (std::size_t v = 0; v <= left; ++v) {
            cur[k] = v;
            self(self, k + 1, left - v);
        }
    };
    rec(rec, 0, m);
    return out;
}

/// Index floor((B+1) alpha) of the empirical threshold order statistic.
inline std::size_t threshold_rank(std::size_t B, double alpha)
{
    // the relative nudge keeps exact products such as 2000 * 0.05 from flooring to 99
    return static_cast<std::size_t>(std::floor(static_cast<double>(B + 1) * alpha * (1.0 + 1e-12)));
}

/// xi_(j) with xi_(0) = -inf. Sorts `stats` in place.
inline double order_statistic(std::vector<double>& stats, std::size_t j)
{
    if (j == 0) return -std::numeric_limits<double>::infinity();
    std::nth_element(stats.begin(), stats.begin() + static_cast<std::ptrdiff_t>(j - 1), stats.end());
    return stats[j - 1];
}

/// Monte-Carlo null draws xi_b = F(p_b), b = 1..B, for one composition.
///
/// `class_sizes` holds n (iid, one entry) or n_1..n_K (conditional);
/// `composition` holds m (iid, one entry) or m_1..m_K. Each class block draws
/// n_k + m_k uniforms; the first n_k are calibration scores. Iteration b uses
/// its own stream keyed by (seed, composition, b).
inline std::vector<double> null_statistics(CalibrationMode mode, std::span<const std::size_t> class_sizes,
                                           std::span<const std::size_t> composition, const CombinerSpec& F,
                                           std::size_t B, std::uint64_t seed)
{
    if (class_sizes.size() != composition.size()) throw InputError("composition and class sizes differ in length");
    if (mode == CalibrationMode::full && class_sizes.size() != 1) throw InputError("iid calibration takes one n and one m");
    if (!is_monotone_in_p(F)) throw InputError("the oracle estimator cannot be calibrated");
    std::size_t m = 0;
    for (std::size_t k = 0; k < composition.size(); ++k) {
        m += composition[k];
        if (composition[k] > 0 && class_sizes[k] == 0) {
            throw InputError("class " + std::to_string(k) + " has test items but no calibration examples");
        }
    }
    if (m == 0) throw InputError("batch size must be positive");

    PanelContext ctx{mode, {}};
    for (auto n : class_sizes) ctx.class_denominators.push_back(n + 1);

    std::vector<std::uint64_t> key(composition.begin(), composition.end());
    key.push_back(0);
    std::vector<double> stats(B);
    std::vector<double> cal;
    std::vector<PValue> p(m);
    for (std::size_t b = 0; b < B; ++b) {
        key.back() = b;
        Engine eng(derive_seed(seed, key));
        std::size_t slot = 0;
        for (std::size_t k = 0; k < composition.size(); ++k) {
            if (composition[k] == 0) continue;
            cal.resize(class_sizes[k]);
            for (auto& s : cal) s = uniform01(eng);
            for (std::size_t i = 0; i < composition[k]; ++i) {
                const double test = uniform01(eng);
                std::uint64_t above = 0;
                for (double s : cal) above += s >= test ? 1 : 0;
                p[slot++] = PValue{1 + above, class_sizes[k] + 1};
            }
        }
        stats[b] = combine(F, p, ctx).value;
    }
    return stats;
}

/// Empirical threshold t = xi_(floor((B+1) alpha)) for the iid model.
inline double calibrate_iid(std::size_t n, std::size_t m, const CombinerSpec& F, double alpha, std::size_t B,
                            std::uint64_t seed)
{
    if (B < 1) throw InputError("B must be at least 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0,1)");
    const std::size_t sizes[] = {n};
    const std::size_t comp[] = {m};
    auto stats = null_statistics(CalibrationMode::full, sizes, comp, F, B, seed);
    return order_statistic(stats, threshold_rank(B, alpha));
}

/// Empirical threshold for one class composition in the conditional model.
inline double calibrate_conditional(std::span<const std::size_t> class_sizes, std::span<const std::size_t> composition,
                                    const CombinerSpec& F, double alpha, std::size_t B, std::uint64_t seed)
{
    if (B < 1) throw InputError("B must be at least 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0,1)");
    auto stats = null_statistics(CalibrationMode::class_conditional, class_sizes, composition, F, B, seed);
    return order_statistic(stats, threshold_rank(B, alpha));
}

/// Calibrated empirical thresholds, one per composition (conditional) or a
/// single entry keyed by the empty composition (iid).
struct ThresholdTable {
    CalibrationMode mode = CalibrationMode::full;
    double alpha = 0.1;
    std::size_t B = 0;
    std::uint64_t seed = 0;
    std::string generator = kGeneratorName;
    std::string combiner;
    std::size_t m = 0;
    std::vector<std::size_t> class_sizes;
    std::map<Composition, double> entries;

    double lookup(std::span<const std::size_t> counts) const
    {
        if (mode == CalibrationMode::full) {
            const auto it = entries.find(Composition{});
            if (it == entries.end()) throw InputError("threshold table has no iid entry");
            return it->second;
        }
        const auto it = entries.find(Composition(counts.begin(), counts.end()));
        if (it == entries.end()) throw InputError("threshold table is missing a composition");
        return it->second;
    }
};

/// Calibrates every composition of m (conditional) or the single iid entry.
inline ThresholdTable build_table(CalibrationMode mode, std::vector<std::size_t> class_sizes, std::size_t m,
                                  const CombinerSpec& F, double alpha, std::size_t B, std::uint64_t seed,
                                  std::uint64_t budget = 1'000'000)
{
    ThresholdTable table;
    table.mode = mode;
    table.alpha = alpha;
    table.B = B;
    table.seed = seed;
    table.combiner = to_string(F);
    table.m = m;
    table.class_sizes = class_sizes;
    if (mode == CalibrationMode::full) {
        if (class_sizes.size() != 1) throw InputError("iid table takes a single calibration size n");
        table.entries[Composition{}] = calibrate_iid(class_sizes[0], m, F, alpha, B, seed);
        return table;
    }
    const auto count = composition_count(m, class_sizes.size());
    if (count > budget) {
        throw BudgetExceeded("threshold table needs " + std::to_string(count) + " compositions, budget is " +
                             std::to_string(budget));
    }
    for (const auto& comp : compositions(m, class_sizes.size())) {
        table.entries[comp] = calibrate_conditional(class_sizes, comp, F, alpha, B, seed);
    }
    return table;
}

} // namespace batchcp
