#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "batchcp/conformal.hpp"
#include "batchcp/errors.hpp"

namespace batchcp {

/// A batch p-value F(p(y)). `value` is capped at 1 for reporting; `raw` is the
/// uncapped comparison quantity and may be +inf.
struct BatchPValue {
    double value = 1.0;
    double raw = 1.0;
};

inline BatchPValue capped(double raw) { return {std::min(raw, 1.0), raw}; }

template <class P>
concept PValueLike = std::same_as<P, double> || std::same_as<P, PValue>;

namespace detail {

inline double as_double(double p) { return p; }
inline double as_double(const PValue& p) { return p.value(); }

// (a * p) / b with a single rounding when p is an exact rank fraction, so that
// statistics landing exactly on a decimal alpha compare equal to it.
inline double scaled(const PValue& p, std::uint64_t a, std::uint64_t b)
{
    return static_cast<double>(a * p.num) / static_cast<double>(b * p.den);
}
inline double scaled(double p, std::uint64_t a, std::uint64_t b)
{
    return static_cast<double>(a) * p / static_cast<double>(b);
}

template <PValueLike P>
std::vector<P> sorted_copy(std::span<const P> p)
{
    std::vector<P> s(p.begin(), p.end());
    if (!std::is_sorted(s.begin(), s.end())) std::sort(s.begin(), s.end());
    return s;
}

template <PValueLike P>
void require_nonempty(std::span<const P> p)
{
    if (p.empty()) throw InputError("empty p-value vector");
}

inline bool is_one(const PValue& p) { return p.num == p.den; }
inline bool is_one(double p) { return p >= 1.0; }

} // namespace detail

/// F_Bonf = m * min_i p_i.
template <PValueLike P>
BatchPValue bonferroni_p(std::span<const P> p)
{
    detail::require_nonempty(p);
    const P lo = *std::min_element(p.begin(), p.end());
    return capped(detail::scaled(lo, p.size(), 1));
}

/// F_Simes = min_l m * p_(l) / l, p_(l) the l-th smallest.
template <PValueLike P>
BatchPValue simes_p(std::span<const P> p)
{
    detail::require_nonempty(p);
    const auto s = detail::sorted_copy(p);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t l = 1; l <= s.size(); ++l) best = std::min(best, detail::scaled(s[l - 1], s.size(), l));
    return capped(best);
}

/// An m0 estimate. When `den > 0` the estimate is the exact rational num/den
/// and `value` is its rounding; +inf marks a saturated estimator.
struct M0Estimate {
    double value = 0.0;
    std::uint64_t num = 0;
    std::uint64_t den = 0;

    static M0Estimate real(double v) { return {v, 0, 0}; }
    static M0Estimate rational(std::uint64_t a, std::uint64_t b)
    {
        const auto g = std::gcd(a, b);
        return {static_cast<double>(a) / static_cast<double>(b), a / g, b / g};
    }
    static M0Estimate infinite() { return real(std::numeric_limits<double>::infinity()); }
    bool exact() const { return den > 0; }
    bool is_infinite() const { return std::isinf(value); }
};

/// F_A-Simes = min_l m0 * p_(l) / l. With m0 = +inf the batch is never
/// rejected (value 1).
template <PValueLike P>
BatchPValue adaptive_simes_p(std::span<const P> p, const M0Estimate& m0)
{
    detail::require_nonempty(p);
    if (std::isnan(m0.value) || m0.value <= 0.0) throw InputError("m0 estimate must be positive");
    if (m0.is_infinite()) return {1.0, std::numeric_limits<double>::infinity()};
    const auto s = detail::sorted_copy(p);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t l = 1; l <= s.size(); ++l) {
        double term = 0.0;
        if constexpr (std::is_same_v<P, PValue>) {
            if (m0.exact()) {
                term = static_cast<double>(m0.num * s[l - 1].num) / static_cast<double>(m0.den * s[l - 1].den * l);
            } else {
                term = m0.value * static_cast<double>(s[l - 1].num) / static_cast<double>(s[l - 1].den * l);
            }
        } else {
            term = m0.value * s[l - 1] / static_cast<double>(l);
        }
        best = std::min(best, term);
    }
    return capped(best);
}

template <PValueLike P>
BatchPValue adaptive_simes_p(std::span<const P> p, double m0)
{
    return adaptive_simes_p(p, M0Estimate::real(m0));
}

/// Survival function of chi^2(2m) at x, exp(-x/2) * sum_{j<m} (x/2)^j / j!.
inline double chi2_even_survival(double x, std::size_t m)
{
    if (m == 0) throw InputError("chi-square degrees of freedom must be positive");
    if (x <= 0.0) return 1.0;
    const double half = 0.5 * x;
    double term = 1.0;
    double sum = 1.0;
    for (std::size_t j = 1; j < m; ++j) {
        term *= half / static_cast<double>(j);
        sum += term;
    }
    return std::exp(-half) * sum;
}

/// F_Fisher = T(-2 sum log p_i), T the chi^2(2m) survival function.
inline BatchPValue fisher_p(std::span<const double> p)
{
    detail::require_nonempty(p);
    auto s = detail::sorted_copy(p);
    double x = 0.0;
    for (double v : s) {
        if (!(v > 0.0)) throw InputError("Fisher combiner requires strictly positive p-values");
        x -= 2.0 * std::log(v);
    }
    const double t = chi2_even_survival(x, s.size());
    return {t, t};
}

/// Exact-grid overload: the statistic is computed from the reduced rational
/// product when it fits in 64 bits, so any two vectors with the same product
/// get bit-identical values.
inline BatchPValue fisher_p(std::span<const PValue> p)
{
    detail::require_nonempty(p);
    std::uint64_t num = 1;
    std::uint64_t den = 1;
    bool fits = true;
    for (const auto& v : p) {
        if (v.num == 0) throw InputError("Fisher combiner requires strictly positive p-values");
        if (__builtin_mul_overflow(num, v.num, &num) || __builtin_mul_overflow(den, v.den, &den)) {
            fits = false;
            break;
        }
        const auto g = std::gcd(num, den);
        num /= g;
        den /= g;
    }
    double x = 0.0;
    if (fits) {
        x = static_cast<double>(-2.0L * (std::log(static_cast<long double>(num)) - std::log(static_cast<long double>(den))));
    } else {
        auto s = detail::sorted_copy(p);
        for (const auto& v : s) x -= 2.0 * std::log(v.value());
    }
    const double t = chi2_even_survival(x, p.size());
    return {t, t};
}

// ---------------------------------------------------------------------------
// m0 estimators

/// floor(lambda * den), tolerant of representation error in lambda.
inline std::uint64_t storey_cut(double lambda, std::uint64_t den)
{
    return static_cast<std::uint64_t>(std::floor(lambda * static_cast<double>(den) + 1e-9));
}

inline bool storey_lambda_is_grid(double lambda, std::uint64_t den)
{
    const double x = lambda * static_cast<double>(den);
    return std::abs(x - std::round(x)) < 1e-9;
}

inline void check_lambda(double lambda)
{
    if (!(lambda > 0.0 && lambda < 1.0)) throw InputError("Storey lambda must lie strictly inside (0,1)");
}

/// Storey estimator on plain p-values: (1 + #{p_i >= lambda}) / (1 - lambda).
inline double storey_m0(std::span<const double> p, double lambda)
{
    check_lambda(lambda);
    const auto c = std::count_if(p.begin(), p.end(), [&](double v) { return v >= lambda; });
    return (1.0 + static_cast<double>(c)) / (1.0 - lambda);
}

/// Storey-type estimator for conformal p-values with grid rounding.
///
/// iid: (1-lambda)^{-1} (1 + #{p_i >= floor((n+1)lambda)/(n+1)}).
/// conditional: kappa(y) (1 + sum_i 1{p_i >= lambda_{y_i}}) with
/// lambda_k = floor(lambda(n_k+1))/(n_k+1) and
/// kappa(y) = (1 - min_k lambda_k)^{1/(m-1)} prod_k (1-lambda_k)^{-m_k(y)/(m-1)}.
/// Each entry's class threshold is recovered from its denominator n_k+1.
inline M0Estimate storey_m0(std::span<const PValue> p, double lambda, CalibrationMode mode,
                            std::span<const std::uint64_t> class_denominators)
{
    check_lambda(lambda);
    detail::require_nonempty(p);
    const std::uint64_t c = static_cast<std::uint64_t>(std::count_if(
        p.begin(), p.end(), [&](const PValue& v) { return v.num >= storey_cut(lambda, v.den); }));

    if (mode == CalibrationMode::full) {
        const std::uint64_t d = p.front().den;
        if (storey_lambda_is_grid(lambda, d)) return M0Estimate::rational(d * (1 + c), d - storey_cut(lambda, d));
        return M0Estimate::real(static_cast<double>(1 + c) / (1.0 - lambda));
    }

    const std::size_t m = p.size();
    if (m < 2) throw Unsupported("class-conditional Storey estimator needs m >= 2");
    if (class_denominators.empty()) throw InputError("Storey estimator needs the class denominators");

    // lambda_min as the rational fmin/dmin
    std::uint64_t dmin = class_denominators.front();
    std::uint64_t fmin = storey_cut(lambda, dmin);
    for (auto d : class_denominators) {
        const auto f = storey_cut(lambda, d);
        if (f * dmin < fmin * d) {
            fmin = f;
            dmin = d;
        }
    }
    const bool uniform = std::all_of(p.begin(), p.end(), [&](const PValue& v) {
        return storey_cut(lambda, v.den) * dmin == fmin * v.den;
    });
    if (uniform) return M0Estimate::rational(dmin * (1 + c), dmin - fmin);

    long double log_kappa = std::log1p(-static_cast<long double>(fmin) / static_cast<long double>(dmin));
    for (const auto& v : p) {
        log_kappa -= std::log1p(-static_cast<long double>(storey_cut(lambda, v.den)) / static_cast<long double>(v.den));
    }
    log_kappa /= static_cast<long double>(m - 1);
    return M0Estimate::real(static_cast<double>(std::exp(log_kappa) * static_cast<long double>(1 + c)));
}

/// Upper envelope of the Storey estimator that depends on the p-values alone
/// and is coordinatewise monotone; used where the candidate's classes are
/// unknown (shortcut bounds). Equals storey_m0 in iid mode and whenever all
/// lambda_k coincide.
inline M0Estimate storey_m0_upper(std::span<const PValue> p, double lambda, CalibrationMode mode,
                                  std::span<const std::uint64_t> class_denominators)
{
    if (mode == CalibrationMode::full) return storey_m0(p, lambda, mode, class_denominators);
    check_lambda(lambda);
    detail::require_nonempty(p);
    const std::size_t m = p.size();
    if (m < 2) throw Unsupported("class-conditional Storey estimator needs m >= 2");

    std::uint64_t dmin = class_denominators.front();
    std::uint64_t fmin = storey_cut(lambda, dmin);
    long double worst = 0.0L; // max_k -log(1 - lambda_k)
    bool uniform = true;
    for (auto d : class_denominators) {
        const auto f = storey_cut(lambda, d);
        if (f * dmin != fmin * d) uniform = false;
        if (f * dmin < fmin * d) {
            fmin = f;
            dmin = d;
        }
        worst = std::max(worst, -std::log1p(-static_cast<long double>(f) / static_cast<long double>(d)));
    }
    const std::uint64_t c = static_cast<std::uint64_t>(
        std::count_if(p.begin(), p.end(), [&](const PValue& v) { return v.num * dmin >= fmin * v.den; }));
    if (uniform) return M0Estimate::rational(dmin * (1 + c), dmin - fmin);

    const long double log_kappa =
        (std::log1p(-static_cast<long double>(fmin) / static_cast<long double>(dmin)) +
         static_cast<long double>(m) * worst) /
        static_cast<long double>(m - 1);
    return M0Estimate::real(static_cast<double>(std::exp(log_kappa) * static_cast<long double>(1 + c)));
}

/// Quantile estimator (m - l + 1) / (1 - p_(l)); +inf when p_(l) = 1.
template <PValueLike P>
M0Estimate quantile_m0(std::span<const P> p, std::size_t ell)
{
    detail::require_nonempty(p);
    const std::size_t m = p.size();
    if (ell < 1 || ell > m) throw InputError("quantile estimator index must lie in 1..m");
    const auto s = detail::sorted_copy(p);
    const P q = s[ell - 1];
    if (detail::is_one(q)) return M0Estimate::infinite();
    if constexpr (std::is_same_v<P, PValue>) {
        return M0Estimate::rational((m - ell + 1) * q.den, q.den - q.num);
    } else {
        return M0Estimate::real(static_cast<double>(m - ell + 1) / (1.0 - q));
    }
}

/// ceil(m/2), the median choice of the quantile index.
inline std::size_t median_index(std::size_t m) { return (m + 1) / 2; }

// ---------------------------------------------------------------------------
// Combiner specifications

struct ConstantM0 {};
struct StoreyM0 {
    double lambda = 0.5;
};
struct QuantileM0 {
    std::optional<std::size_t> ell; ///< unset: ceil(m/2)
};
/// m0(y) = #{i : y_i = Y_i}; needs the true labels, so only usable in simulation.
struct OracleM0 {
    std::vector<int> truth;
};
/// Pointwise minimum of several practical estimators.
struct MinOfM0 {
    std::vector<std::variant<ConstantM0, StoreyM0, QuantileM0>> parts;
};

using M0Estimator = std::variant<ConstantM0, StoreyM0, QuantileM0, OracleM0, MinOfM0>;

struct Bonferroni {};
struct Simes {};
struct AdaptiveSimes {
    M0Estimator estimator;
};
struct Fisher {};

using CombinerSpec = std::variant<Bonferroni, Simes, AdaptiveSimes, Fisher>;

/// What a combiner needs to know about the panel besides the p-values.
struct PanelContext {
    CalibrationMode mode = CalibrationMode::full;
    std::vector<std::uint64_t> class_denominators;

    static PanelContext of(const PValuePanel& panel) { return {panel.mode(), panel.denominators()}; }
};

namespace detail {

inline std::string format_real(double v)
{
    std::string s = std::to_string(v);
    while (!s.empty() && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
}

inline M0Estimate min_estimate(const M0Estimate& a, const M0Estimate& b) { return b.value < a.value ? b : a; }

template <class Part>
M0Estimate estimate_part(const Part& part, std::span<const PValue> p, const PanelContext& ctx, bool dominating)
{
    using T = std::decay_t<Part>;
    if constexpr (std::is_same_v<T, ConstantM0>) {
        return M0Estimate::rational(p.size(), 1);
    } else if constexpr (std::is_same_v<T, StoreyM0>) {
        return dominating ? storey_m0_upper(p, part.lambda, ctx.mode, ctx.class_denominators)
                          : storey_m0(p, part.lambda, ctx.mode, ctx.class_denominators);
    } else {
        return quantile_m0(p, part.ell.value_or(median_index(p.size())));
    }
}

} // namespace detail

inline std::string to_string(const M0Estimator& est)
{
    return std::visit(
        [](const auto& e) -> std::string {
            using T = std::decay_t<decltype(e)>;
            if constexpr (std::is_same_v<T, ConstantM0>) {
                return "simes";
            } else if constexpr (std::is_same_v<T, StoreyM0>) {
                return "storey-simes:" + detail::format_real(e.lambda);
            } else if constexpr (std::is_same_v<T, QuantileM0>) {
                return e.ell ? "quantile-simes:" + std::to_string(*e.ell) : std::string("quantile-simes");
            } else if constexpr (std::is_same_v<T, OracleM0>) {
                return "oracle-simes";
            } else {
                std::string s = "min-simes";
                for (const auto& part : e.parts) {
                    std::visit(
                        [&](const auto& q) {
                            using Q = std::decay_t<decltype(q)>;
                            if constexpr (std::is_same_v<Q, StoreyM0>) {
                                s += ":storey=" + detail::format_real(q.lambda);
                            } else if constexpr (std::is_same_v<Q, QuantileM0>) {
                                s += q.ell ? ":quantile=" + std::to_string(*q.ell) : std::string(":quantile");
                            } else {
                                s += ":constant";
                            }
                        },
                        part);
                }
                return s;
            }
        },
        est);
}

inline std::string to_string(const CombinerSpec& spec)
{
    return std::visit(
        [](const auto& c) -> std::string {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, Bonferroni>) return "bonferroni";
            else if constexpr (std::is_same_v<T, Simes>) return "simes";
            else if constexpr (std::is_same_v<T, Fisher>) return "fisher";
            else return to_string(c.estimator);
        },
        spec);
}

namespace detail {

inline std::vector<std::string_view> split(std::string_view s, char sep)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline double parse_lambda(std::string_view s)
{
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw InputError("bad lambda '" + std::string(s) + "'");
    check_lambda(v);
    return v;
}

inline std::size_t parse_ell(std::string_view s)
{
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || v == 0) {
        throw InputError("bad quantile index '" + std::string(s) + "'");
    }
    return v;
}

} // namespace detail

/// Parses `bonferroni | simes | storey-simes[:<lambda>] | quantile-simes[:<ell>]
/// | oracle-simes | fisher | min-simes[:storey=<lambda>][:quantile[=<ell>]]`.
/// Missing parameters fall back to the given defaults (lambda) or ceil(m/2) (ell).
inline CombinerSpec parse_combiner(std::string_view text, double default_lambda = 0.5,
                                   std::optional<std::size_t> default_ell = std::nullopt)
{
    const auto parts = detail::split(text, ':');
    const auto head = parts.front();
    if (head == "bonferroni" && parts.size() == 1) return Bonferroni{};
    if (head == "simes" && parts.size() == 1) return Simes{};
    if (head == "fisher" && parts.size() == 1) return Fisher{};
    if (head == "oracle-simes" && parts.size() == 1) return AdaptiveSimes{OracleM0{}};
    if (head == "storey-simes" && parts.size() <= 2) {
        const double lambda = parts.size() == 2 ? detail::parse_lambda(parts[1]) : default_lambda;
        check_lambda(lambda);
        return AdaptiveSimes{StoreyM0{lambda}};
    }
    if (head == "quantile-simes" && parts.size() <= 2) {
        return AdaptiveSimes{QuantileM0{parts.size() == 2 ? std::optional(detail::parse_ell(parts[1])) : default_ell}};
    }
    if (head == "min-simes") {
        MinOfM0 min;
        if (parts.size() == 1) {
            min.parts.emplace_back(StoreyM0{default_lambda});
            min.parts.emplace_back(QuantileM0{default_ell});
        }
        for (std::size_t j = 1; j < parts.size(); ++j) {
            const auto kv = detail::split(parts[j], '=');
            if (kv[0] == "storey") {
                min.parts.emplace_back(StoreyM0{kv.size() == 2 ? detail::parse_lambda(kv[1]) : default_lambda});
            } else if (kv[0] == "quantile") {
                min.parts.emplace_back(QuantileM0{kv.size() == 2 ? std::optional(detail::parse_ell(kv[1])) : default_ell});
            } else if (kv[0] == "constant" && kv.size() == 1) {
                min.parts.emplace_back(ConstantM0{});
            } else {
                throw InputError("unknown min-simes component '" + std::string(parts[j]) + "'");
            }
        }
        return AdaptiveSimes{std::move(min)};
    }
    throw InputError("unknown combiner '" + std::string(text) +
                     "' (expected bonferroni|simes|storey-simes:<lambda>|quantile-simes:<ell>|oracle-simes|fisher|"
                     "min-simes)");
}

/// True when F depends on the p-values alone and is coordinatewise monotone.
inline bool is_monotone_in_p(const CombinerSpec& spec)
{
    const auto* a = std::get_if<AdaptiveSimes>(&spec);
    return a == nullptr || !std::holds_alternative<OracleM0>(a->estimator);
}

/// Combiners with no level-alpha guarantee of their own; they need an
/// empirical threshold table.
inline bool needs_empirical_threshold(const CombinerSpec& spec)
{
    if (std::holds_alternative<Fisher>(spec)) return true;
    const auto* a = std::get_if<AdaptiveSimes>(&spec);
    return a != nullptr && std::holds_alternative<MinOfM0>(a->estimator);
}

/// m0 estimate for the candidate `labels` (only the oracle looks at them).
inline M0Estimate estimate_m0(const M0Estimator& est, std::span<const PValue> p, const PanelContext& ctx,
                              std::span<const int> labels = {})
{
    return std::visit(
        [&](const auto& e) -> M0Estimate {
            using T = std::decay_t<decltype(e)>;
            if constexpr (std::is_same_v<T, OracleM0>) {
                if (e.truth.size() != labels.size()) throw InputError("oracle estimator needs the true label vector");
                std::uint64_t hits = 0;
                for (std::size_t i = 0; i < labels.size(); ++i) hits += labels[i] == e.truth[i] ? 1 : 0;
                return M0Estimate::rational(hits, 1);
            } else if constexpr (std::is_same_v<T, MinOfM0>) {
                if (e.parts.empty()) throw InputError("min-of estimator needs at least one component");
                std::optional<M0Estimate> best;
                for (const auto& part : e.parts) {
                    const auto v = std::visit([&](const auto& q) { return detail::estimate_part(q, p, ctx, false); }, part);
                    best = best ? detail::min_estimate(*best, v) : v;
                }
                return *best;
            } else {
                return detail::estimate_part(e, p, ctx, false);
            }
        },
        est);
}

/// F(p(y)) for a candidate label vector y with p-values `p = p(y)`.
inline BatchPValue combine(const CombinerSpec& spec, std::span<const PValue> p, const PanelContext& ctx,
                           std::span<const int> labels = {})
{
    return std::visit(
        [&](const auto& c) -> BatchPValue {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, Bonferroni>) {
                return bonferroni_p(p);
            } else if constexpr (std::is_same_v<T, Simes>) {
                return simes_p(p);
            } else if constexpr (std::is_same_v<T, Fisher>) {
                return fisher_p(p);
            } else {
                const auto m0 = estimate_m0(c.estimator, p, ctx, labels);
                // oracle with m0(y) = 0: no coordinate can be right, reject outright
                if (m0.value == 0.0) return {0.0, 0.0};
                return adaptive_simes_p(p, m0);
            }
        },
        spec);
}

/// A monotone upper envelope G with G(q) >= F(p(y)) whenever q dominates p(y)
/// after sorting. Storey is replaced by storey_m0_upper; the oracle is refused.
inline BatchPValue combine_dominating(const CombinerSpec& spec, std::span<const PValue> q, const PanelContext& ctx)
{
    const auto* a = std::get_if<AdaptiveSimes>(&spec);
    if (a == nullptr) return combine(spec, q, ctx);
    return std::visit(
        [&](const auto& e) -> BatchPValue {
            using T = std::decay_t<decltype(e)>;
            if constexpr (std::is_same_v<T, OracleM0>) {
                throw Unsupported("the oracle m0 estimator is not a monotone function of the p-values");
            } else if constexpr (std::is_same_v<T, MinOfM0>) {
                std::optional<M0Estimate> best;
                for (const auto& part : e.parts) {
                    const auto v = std::visit([&](const auto& x) { return detail::estimate_part(x, q, ctx, true); }, part);
                    best = best ? detail::min_estimate(*best, v) : v;
                }
                if (!best) throw InputError("min-of estimator needs at least one component");
                return adaptive_simes_p(q, *best);
            } else {
                return adaptive_simes_p(q, detail::estimate_part(e, q, ctx, true));
            }
        },
        a->estimator);
}

} // namespace batchcp
