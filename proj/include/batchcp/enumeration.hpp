#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "batchcp/combiners.hpp"
#include "batchcp/conformal.hpp"
#include "batchcp/errors.hpp"
#include "batchcp/thresholds.hpp"

namespace batchcp {

/// Candidate batch labels y, 0-based classes.
using LabelVector = std::vector<int>;
using BigInt = boost::multiprecision::cpp_int;

inline constexpr std::uint64_t kDefaultBudget = 10'000'000;

/// m_k(y) = #{i : y_i = k}.
inline std::vector<std::size_t> count_vector(std::span<const int> y, std::size_t K)
{
    std::vector<std::size_t> counts(K, 0);
    for (int label : y) {
        if (label < 0 || static_cast<std::size_t>(label) >= K) throw InputError("label out of range");
        ++counts[static_cast<std::size_t>(label)];
    }
    return counts;
}

/// Include y iff F(p(y)) > alpha.
struct AlphaRule {
    double alpha = 0.1;
};

/// Include y iff F(p(y)) >= t, with t looked up by count_vector(y) in conditional tables.
using BatchRule = std::variant<AlphaRule, ThresholdTable>;

inline bool admits(const BatchRule& rule, const BatchPValue& F, std::span<const std::size_t> counts)
{
    if (const auto* a = std::get_if<AlphaRule>(&rule)) return F.value > a->alpha;
    return F.value >= std::get<ThresholdTable>(rule).lookup(counts);
}

inline std::string describe(const BatchRule& rule)
{
    if (const auto* a = std::get_if<AlphaRule>(&rule)) return "alpha=" + detail::format_real(a->alpha);
    const auto& t = std::get<ThresholdTable>(rule);
    return "table:" + t.combiner + ",B=" + std::to_string(t.B) + ",seed=" + std::to_string(t.seed);
}

/// Checks that a threshold table was calibrated for this panel's sizes.
inline void check_table_matches(const ThresholdTable& table, const PValuePanel& panel)
{
    if (table.m != panel.m()) throw InputError("threshold table batch size differs from the panel");
    if (table.mode != panel.mode()) throw InputError("threshold table calibration mode differs from the panel");
    if (table.mode == CalibrationMode::full) {
        if (table.class_sizes.size() != 1 || table.class_sizes[0] + 1 != panel.denominators().front()) {
            throw InputError("threshold table calibration size differs from the panel");
        }
        return;
    }
    if (table.class_sizes.size() != panel.K()) throw InputError("threshold table class count differs from the panel");
    for (std::size_t k = 0; k < panel.K(); ++k) {
        if (table.class_sizes[k] + 1 != panel.denominators()[k]) {
            throw InputError("threshold table class size differs from the panel for class " + std::to_string(k));
        }
    }
}

struct SetMember {
    LabelVector labels;
    std::optional<BatchPValue> p; ///< unset for sets reconstructed from bounds
};

/// A batch prediction set. Members are kept in lexicographic discovery order.
struct BatchPredictionSet {
    std::size_t m = 0;
    std::size_t K = 0;
    CalibrationMode mode = CalibrationMode::full;
    std::string combiner;
    std::string rule;
    std::vector<SetMember> members;

    bool empty() const { return members.empty(); }
    std::size_t size() const { return members.size(); }
};

struct EnumerationOptions {
    bool prefilter = false;
    std::uint64_t budget = kDefaultBudget;
};

/// Product of the sizes, saturating at uint64 max.
inline std::uint64_t candidate_count(std::span<const std::vector<int>> choices)
{
    std::uint64_t total = 1;
    for (const auto& c : choices) {
        if (c.empty()) return 0;
        if (__builtin_mul_overflow(total, static_cast<std::uint64_t>(c.size()), &total)) {
            return std::numeric_limits<std::uint64_t>::max();
        }
    }
    return total;
}

inline void check_budget(std::uint64_t candidates, std::uint64_t budget)
{
    if (candidates > budget) {
        const std::string count = candidates == std::numeric_limits<std::uint64_t>::max()
                                      ? std::string("more than 2^64")
                                      : std::to_string(candidates);
        throw BudgetExceeded("enumeration needs " + count + " candidates, budget is " + std::to_string(budget) +
                             "; use --bounds-mode shortcut for class-count bounds");
    }
}

/// Per-item labels surviving Bonferroni at level alpha: {k : p_i^(k) > alpha/m}.
/// No member of the Bonferroni or Simes set uses a label outside these.
inline std::vector<std::vector<int>> bonferroni_prefilter(const PValuePanel& panel, double alpha)
{
    std::vector<std::vector<int>> keep(panel.m());
    for (std::size_t i = 0; i < panel.m(); ++i) {
        for (std::size_t k = 0; k < panel.K(); ++k) {
            if (detail::scaled(panel(i, k), panel.m(), 1) > alpha) keep[i].push_back(static_cast<int>(k));
        }
    }
    return keep;
}

namespace detail {

// Odometer over the product of per-item choice lists, lexicographic in (y_1..y_m).
template <class Visit>
void for_each_candidate(std::span<const std::vector<int>> choices, Visit&& visit)
{
    const std::size_t m = choices.size();
    if (candidate_count(choices) == 0) return;
    std::vector<std::size_t> idx(m, 0);
    LabelVector y(m);
    for (std::size_t i = 0; i < m; ++i) y[i] = choices[i][0];
    while (true) {
        visit(std::as_const(y));
        std::size_t i = m;
        while (i > 0) {
            --i;
            if (++idx[i] < choices[i].size()) {
                y[i] = choices[i][idx[i]];
                break;
            }
            idx[i] = 0;
            y[i] = choices[i][0];
            if (i == 0) return;
        }
    }
}

} // namespace detail

/// Enumerates [K]^m (or the prefiltered product) and keeps the candidates the
/// rule admits.
inline BatchPredictionSet enumerate_set(const PValuePanel& panel, const CombinerSpec& combiner, const BatchRule& rule,
                                        const EnumerationOptions& options = {})
{
    const std::size_t m = panel.m();
    const std::size_t K = panel.K();
    if (const auto* a = std::get_if<AlphaRule>(&rule)) {
        if (!(a->alpha >= 0.0 && a->alpha < 1.0)) throw InputError("alpha must lie in [0,1)");
    } else {
        check_table_matches(std::get<ThresholdTable>(rule), panel);
    }

    std::vector<std::vector<int>> choices;
    if (options.prefilter) {
        const bool simes_like = std::holds_alternative<Bonferroni>(combiner) || std::holds_alternative<Simes>(combiner);
        if (!simes_like || !std::holds_alternative<AlphaRule>(rule)) {
            throw InputError("the Bonferroni prefilter only applies to Bonferroni or Simes with an alpha rule");
        }
        choices = bonferroni_prefilter(panel, std::get<AlphaRule>(rule).alpha);
    } else {
        choices.assign(m, {});
        for (auto& c : choices) {
            for (std::size_t k = 0; k < K; ++k) c.push_back(static_cast<int>(k));
        }
    }
    check_budget(candidate_count(choices), options.budget);

    BatchPredictionSet out;
    out.m = m;
    out.K = K;
    out.mode = panel.mode();
    out.combiner = to_string(combiner);
    out.rule = describe(rule);

    const auto ctx = PanelContext::of(panel);
    std::vector<PValue> p(m);
    detail::for_each_candidate(choices, [&](const LabelVector& y) {
        for (std::size_t i = 0; i < m; ++i) p[i] = panel(i, static_cast<std::size_t>(y[i]));
        const auto F = combine(combiner, p, ctx, y);
        if (admits(rule, F, count_vector(y, K))) out.members.push_back({y, F});
    });
    return out;
}

/// Per-item projections C_i of a batch set.
struct IndividualSets {
    std::vector<std::vector<int>> sets;
    bool empty = false; ///< the batch set had no members
};

inline IndividualSets individual_sets(const BatchPredictionSet& set)
{
    IndividualSets out;
    out.sets.assign(set.m, {});
    out.empty = set.empty();
    std::vector<std::vector<bool>> seen(set.m, std::vector<bool>(set.K, false));
    for (const auto& member : set.members) {
        for (std::size_t i = 0; i < set.m; ++i) seen[i][static_cast<std::size_t>(member.labels[i])] = true;
    }
    for (std::size_t i = 0; i < set.m; ++i) {
        for (std::size_t k = 0; k < set.K; ++k) {
            if (seen[i][k]) out.sets[i].push_back(static_cast<int>(k));
        }
    }
    return out;
}

struct Interval {
    std::size_t lower = 0;
    std::size_t upper = 0;

    friend bool operator==(const Interval&, const Interval&) = default;
};

/// Per-class bounds [l_k, u_k] on the class counts m_k(Y).
struct CountBounds {
    std::size_t m = 0;
    std::size_t K = 0;
    std::vector<Interval> per_class; ///< empty iff is_empty
    bool is_empty = false;

    static CountBounds empty_marker(std::size_t m, std::size_t K) { return {m, K, {}, true}; }
    bool contains(std::span<const std::size_t> counts) const
    {
        if (is_empty) return false;
        for (std::size_t k = 0; k < K; ++k) {
            if (counts[k] < per_class[k].lower || counts[k] > per_class[k].upper) return false;
        }
        return true;
    }
    friend bool operator==(const CountBounds&, const CountBounds&) = default;
};

/// Exact bounds: min and max of m_k(y) over the members.
inline CountBounds class_count_bounds(const BatchPredictionSet& set)
{
    if (set.empty()) return CountBounds::empty_marker(set.m, set.K);
    CountBounds b{set.m, set.K, std::vector<Interval>(set.K, Interval{set.m, 0}), false};
    for (const auto& member : set.members) {
        const auto counts = count_vector(member.labels, set.K);
        for (std::size_t k = 0; k < set.K; ++k) {
            b.per_class[k].lower = std::min(b.per_class[k].lower, counts[k]);
            b.per_class[k].upper = std::max(b.per_class[k].upper, counts[k]);
        }
    }
    return b;
}

/// Number of label vectors whose counts respect the bounds:
/// sum over admissible compositions of m! / (m_1! ... m_K!).
/// Computed as f_k(s) = sum_v C(s, v) f_{k+1}(s - v), the number of ways to
/// fill s positions with classes k..K-1, in O(K m^2) big-integer steps.
inline BigInt reconstruct_cardinality(const CountBounds& bounds)
{
    if (bounds.is_empty) throw InputError("cannot reconstruct from empty bounds");
    const std::size_t m = bounds.m;
    const std::size_t K = bounds.K;
    if (bounds.per_class.size() != K) throw InputError("bounds do not cover every class");

    std::vector<std::vector<BigInt>> binom(m + 1);
    for (std::size_t s = 0; s <= m; ++s) {
        binom[s].assign(s + 1, 1);
        for (std::size_t v = 1; v < s; ++v) binom[s][v] = binom[s - 1][v - 1] + binom[s - 1][v];
    }
    std::vector<BigInt> f(m + 1, 0), next(m + 1);
    f[0] = 1;
    for (std::size_t k = K; k-- > 0;) {
        const auto lo = bounds.per_class[k].lower;
        const auto hi = std::min(bounds.per_class[k].upper, m);
        for (std::size_t s = 0; s <= m; ++s) {
            BigInt total = 0;
            for (std::size_t v = lo; v <= std::min(hi, s); ++v) {
                if (f[s - v] != 0) total += binom[s][v] * f[s - v];
            }
            next[s] = std::move(total);
        }
        std::swap(f, next);
    }
    return f[m];
}

/// Vectors in the product of the individual sets whose counts respect the
/// bounds; contains the exact set whenever bounds and individual sets do.
inline BatchPredictionSet conservative_set_filter(const CountBounds& bounds,
                                                  std::span<const std::vector<int>> individual,
                                                  std::uint64_t budget = kDefaultBudget)
{
    if (bounds.is_empty) throw InputError("cannot filter with empty bounds");
    if (individual.size() != bounds.m) throw InputError("individual sets and bounds disagree on m");
    check_budget(candidate_count(individual), budget);
    BatchPredictionSet out;
    out.m = bounds.m;
    out.K = bounds.K;
    out.rule = "count-bounds";
    detail::for_each_candidate(individual, [&](const LabelVector& y) {
        if (bounds.contains(count_vector(y, bounds.K))) out.members.push_back({y, std::nullopt});
    });
    return out;
}

} // namespace batchcp
