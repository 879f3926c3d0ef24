#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <variant>
#include <vector>

#include "batchcp/combiners.hpp"
#include "batchcp/conformal.hpp"
#include "batchcp/enumeration.hpp"
#include "batchcp/errors.hpp"
#include "batchcp/thresholds.hpp"

namespace batchcp {

/// Per-class sorted columns used by the shortcut.
struct ShortcutWorkspace {
    std::vector<PValue> a; ///< p_i^(k), decreasing
    std::vector<PValue> b; ///< max_{j != k} p_i^(j), decreasing
    std::vector<PValue> q; ///< merge of a_1..a_v and b_1..b_{m-v}, increasing

    ShortcutWorkspace(const PValuePanel& panel, std::size_t k)
    {
        const std::size_t m = panel.m();
        a.reserve(m);
        b.reserve(m);
        for (std::size_t i = 0; i < m; ++i) {
            a.push_back(panel(i, k));
            PValue best{0, 1};
            for (std::size_t j = 0; j < panel.K(); ++j) {
                if (j != k && best < panel(i, j)) best = panel(i, j);
            }
            b.push_back(best);
        }
        std::sort(a.begin(), a.end(), std::greater<>());
        std::sort(b.begin(), b.end(), std::greater<>());
        q.resize(m);
    }

    /// Fills q with the top v of a and top m-v of b in increasing order;
    /// both prefixes are decreasing, so the merge walks them from the back.
    void merge(std::size_t v)
    {
        const std::size_t m = a.size();
        std::size_t ia = v;     // a[0..ia) remain
        std::size_t ib = m - v; // b[0..ib) remain
        for (std::size_t out = 0; out < m; ++out) {
            if (ib == 0 || (ia > 0 && a[ia - 1] <= b[ib - 1])) {
                q[out] = a[--ia];
            } else {
                q[out] = b[--ib];
            }
        }
    }
};

/// Runs the v-loop for every class; `accept(q, k, v)` decides h_{v,k}.
/// Returns the empty marker if some class has no qualifying v.
template <class Accept>
CountBounds shortcut_bounds_with(const PValuePanel& panel, Accept&& accept)
{
    const std::size_t m = panel.m();
    const std::size_t K = panel.K();
    CountBounds out{m, K, std::vector<Interval>(K), false};
    for (std::size_t k = 0; k < K; ++k) {
        ShortcutWorkspace ws(panel, k);
        std::size_t lo = std::numeric_limits<std::size_t>::max();
        std::size_t hi = 0;
        bool any = false;
        for (std::size_t v = m + 1; v-- > 0;) {
            ws.merge(v);
            if (accept(std::as_const(ws.q), k, v)) {
                any = true;
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
        if (!any) return CountBounds::empty_marker(m, K);
        out.per_class[k] = {lo, hi};
    }
    return out;
}

/// Conservative count bounds for the (adaptive) Simes set at level alpha in
/// O(K m^2): h_{v,k} = min_l m0(q) q_(l) / l, kept when > alpha.
inline CountBounds simes_shortcut_bounds(const PValuePanel& panel, double alpha,
                                         const M0Estimator& estimator = ConstantM0{})
{
    if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0,1)");
    if (std::holds_alternative<OracleM0>(estimator)) {
        throw Unsupported("the oracle m0 estimator is not monotone in the p-values; shortcut bounds refuse it");
    }
    const CombinerSpec spec = AdaptiveSimes{estimator};
    const auto ctx = PanelContext::of(panel);
    return shortcut_bounds_with(panel, [&](const std::vector<PValue>& q, std::size_t, std::size_t) {
        return combine_dominating(spec, q, ctx).value > alpha;
    });
}

/// Conservative count bounds for any symmetric monotone F with an empirical
/// threshold table: h_{v,k} = 1{F(q) >= min t over compositions with m_k = v}.
inline CountBounds general_shortcut_bounds(const PValuePanel& panel, const CombinerSpec& combiner,
                                           const ThresholdTable& table)
{
    if (!is_monotone_in_p(combiner)) {
        throw Unsupported("the oracle m0 estimator is not monotone in the p-values; shortcut bounds refuse it");
    }
    check_table_matches(table, panel);
    const std::size_t m = panel.m();
    const std::size_t K = panel.K();

    // tmin[k][v] = min over compositions with m_k = v of t
    std::vector<std::vector<double>> tmin(K, std::vector<double>(m + 1, std::numeric_limits<double>::infinity()));
    if (table.mode == CalibrationMode::full) {
        const double t = table.lookup({});
        for (auto& row : tmin) std::fill(row.begin(), row.end(), t);
    } else {
        if (table.entries.size() != composition_count(m, K)) {
            throw InputError("threshold table does not cover every composition of m");
        }
        for (const auto& [comp, t] : table.entries) {
            for (std::size_t k = 0; k < K; ++k) tmin[k][comp[k]] = std::min(tmin[k][comp[k]], t);
        }
    }
    const auto ctx = PanelContext::of(panel);
    return shortcut_bounds_with(panel, [&](const std::vector<PValue>& q, std::size_t k, std::size_t v) {
        return combine_dominating(combiner, q, ctx).value >= tmin[k][v];
    });
}

/// Shortcut dispatch by rule: alpha rules use F(q) > alpha with the monotone
/// envelope of F, tables go through general_shortcut_bounds.
inline CountBounds shortcut_bounds(const PValuePanel& panel, const CombinerSpec& combiner, const BatchRule& rule)
{
    if (const auto* table = std::get_if<ThresholdTable>(&rule)) return general_shortcut_bounds(panel, combiner, *table);
    const double alpha = std::get<AlphaRule>(rule).alpha;
    if (const auto* a = std::get_if<AdaptiveSimes>(&combiner)) return simes_shortcut_bounds(panel, alpha, a->estimator);
    if (std::holds_alternative<Simes>(combiner)) return simes_shortcut_bounds(panel, alpha);
    if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0,1)");
    const auto ctx = PanelContext::of(panel);
    return shortcut_bounds_with(panel, [&](const std::vector<PValue>& q, std::size_t, std::size_t) {
        return combine_dominating(combiner, q, ctx).value > alpha;
    });
}

} // namespace batchcp
