#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "batchcp/combiners.hpp"
#include "batchcp/conformal.hpp"
#include "batchcp/enumeration.hpp"
#include "batchcp/errors.hpp"
#include "batchcp/random.hpp"
#include "batchcp/thresholds.hpp"

namespace batchcp {

/// Three bivariate normal classes with identity covariance, centered at
/// (0,0), (snr,0) and (snr,snr).
struct GaussianConfig {
    double snr = 2.0;
    std::size_t n_per_class = 400;
    std::size_t m_per_class = 2;
    std::uint64_t seed = 1;
    std::size_t replications = 1000;

    static constexpr std::size_t K = 3;
    std::size_t m() const { return K * m_per_class; }
    std::array<std::array<double, 2>, K> centers() const { return {{{0.0, 0.0}, {snr, 0.0}, {snr, snr}}}; }
};

struct GaussianSample {
    CalibrationSet calibration;
    ScorePanel panel;
    LabelVector truth;
};

/// S_k(x) = 1 - P(k | x) under equal priors and the true class densities.
inline std::array<double, GaussianConfig::K> bayes_scores(const GaussianConfig& cfg, double x, double y)
{
    const auto c = cfg.centers();
    std::array<double, GaussianConfig::K> logit{};
    for (std::size_t k = 0; k < GaussianConfig::K; ++k) {
        const double dx = x - c[k][0];
        const double dy = y - c[k][1];
        logit[k] = -0.5 * (dx * dx + dy * dy);
    }
    const double top = *std::max_element(logit.begin(), logit.end());
    double total = 0.0;
    for (auto& v : logit) total += (v = std::exp(v - top));
    std::array<double, GaussianConfig::K> scores{};
    for (std::size_t k = 0; k < GaussianConfig::K; ++k) scores[k] = 1.0 - logit[k] / total;
    return scores;
}

/// One data generation: n_per_class calibration and m_per_class test points
/// per class (test items grouped by class), class-conditional calibration.
inline GaussianSample generate_gaussian(const GaussianConfig& cfg, std::size_t replication = 0)
{
    constexpr std::size_t K = GaussianConfig::K;
    Engine eng(derive_seed(cfg.seed, {0x6761757373ULL, replication}));
    std::normal_distribution<double> noise(0.0, 1.0);
    const auto c = cfg.centers();

    std::vector<CalibrationEntry> entries;
    entries.reserve(K * cfg.n_per_class);
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t j = 0; j < cfg.n_per_class; ++j) {
            const double x = c[k][0] + noise(eng);
            const double y = c[k][1] + noise(eng);
            entries.push_back({static_cast<int>(k), bayes_scores(cfg, x, y)[k]});
        }
    }
    std::vector<double> scores;
    LabelVector truth;
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t i = 0; i < cfg.m_per_class; ++i) {
            const double x = c[k][0] + noise(eng);
            const double y = c[k][1] + noise(eng);
            const auto s = bayes_scores(cfg, x, y);
            scores.insert(scores.end(), s.begin(), s.end());
            truth.push_back(static_cast<int>(k));
        }
    }
    return {build_calibration(std::move(entries), CalibrationMode::class_conditional, K),
            ScorePanel(truth.size(), K, std::move(scores)), std::move(truth)};
}

/// A named method in a size experiment. Oracle estimators get the true
/// labels filled in per replication; `empirical` methods use a threshold table.
struct Method {
    std::string name;
    CombinerSpec combiner;
    bool empirical = false;
};

/// Bonferroni, Simes, Storey-Simes (lambda = 1/2), median-Simes, oracle Simes, Fisher.
inline std::vector<Method> default_methods()
{
    return {{"bonferroni", Bonferroni{}, false},
            {"simes", Simes{}, false},
            {"storey-simes", AdaptiveSimes{StoreyM0{0.5}}, false},
            {"median-simes", AdaptiveSimes{QuantileM0{}}, false},
            {"oracle-simes", AdaptiveSimes{OracleM0{}}, false},
            {"fisher", Fisher{}, true}};
}

struct MethodSummary {
    std::string name;
    double mean_size = 0.0;
    double non_coverage = 0.0;
    std::size_t empty_sets = 0;
    std::vector<double> mean_lower; ///< over replications with a non-empty set
    std::vector<double> mean_upper;
    std::vector<std::size_t> sizes; ///< per replication
};

struct ExperimentReport {
    GaussianConfig config;
    double alpha = 0.1;
    std::size_t B = 0;
    std::vector<MethodSummary> methods;
    std::size_t simes_not_in_bonferroni = 0; ///< replications where C_Simes is not a subset of C_Bonf
    std::size_t oracle_not_in_simes = 0;     ///< replications where C_oracle is not a subset of C_Simes
    double runtime_seconds = 0.0;

    const MethodSummary* find(std::string_view name) const
    {
        for (const auto& s : methods) {
            if (s.name == name) return &s;
        }
        return nullptr;
    }
};

namespace detail {

inline bool contains_labels(const BatchPredictionSet& set, const LabelVector& y)
{
    return std::any_of(set.members.begin(), set.members.end(), [&](const SetMember& s) { return s.labels == y; });
}

// Members are in lexicographic order, so inclusion is a linear merge.
inline bool is_subset(const BatchPredictionSet& inner, const BatchPredictionSet& outer)
{
    auto it = outer.members.begin();
    for (const auto& s : inner.members) {
        while (it != outer.members.end() && it->labels < s.labels) ++it;
        if (it == outer.members.end() || it->labels != s.labels) return false;
    }
    return true;
}

} // namespace detail

/// Average set size, non-coverage and count bounds per method over
/// replications of the Gaussian model. Empirical methods share one
/// conditional threshold table calibrated with B draws per composition.
inline ExperimentReport run_size_experiment(const GaussianConfig& cfg, std::vector<Method> methods, double alpha,
                                            std::size_t B = 1999, std::uint64_t budget = kDefaultBudget)
{
    const auto start = std::chrono::steady_clock::now();
    constexpr std::size_t K = GaussianConfig::K;
    const std::size_t m = cfg.m();
    std::uint64_t candidates = 1;
    for (std::size_t i = 0; i < m; ++i) {
        if (__builtin_mul_overflow(candidates, static_cast<std::uint64_t>(K), &candidates)) {
            candidates = std::numeric_limits<std::uint64_t>::max();
            break;
        }
    }
    check_budget(candidates, budget);

    std::vector<std::optional<ThresholdTable>> tables(methods.size());
    for (std::size_t j = 0; j < methods.size(); ++j) {
        if (methods[j].empirical) {
            tables[j] = build_table(CalibrationMode::class_conditional, std::vector<std::size_t>(K, cfg.n_per_class), m,
                                    methods[j].combiner, alpha, B, derive_seed(cfg.seed, {0x7461626c65ULL, j}));
        }
    }

    ExperimentReport report;
    report.config = cfg;
    report.alpha = alpha;
    report.B = B;
    for (const auto& meth : methods) {
        MethodSummary s;
        s.name = meth.name;
        s.mean_lower.assign(K, 0.0);
        s.mean_upper.assign(K, 0.0);
        report.methods.push_back(std::move(s));
    }
    std::vector<std::size_t> misses(methods.size(), 0);

    const auto index_of = [&](std::string_view name) -> std::optional<std::size_t> {
        for (std::size_t j = 0; j < methods.size(); ++j) {
            if (methods[j].name == name) return j;
        }
        return std::nullopt;
    };
    const auto bonf = index_of("bonferroni");
    const auto simes = index_of("simes");
    const auto oracle = index_of("oracle-simes");

    for (std::size_t r = 0; r < cfg.replications; ++r) {
        const auto sample = generate_gaussian(cfg, r);
        const auto panel = conformal_pvalues(sample.calibration, sample.panel);
        std::vector<BatchPredictionSet> sets;
        sets.reserve(methods.size());
        for (std::size_t j = 0; j < methods.size(); ++j) {
            CombinerSpec spec = methods[j].combiner;
            if (auto* a = std::get_if<AdaptiveSimes>(&spec)) {
                if (auto* o = std::get_if<OracleM0>(&a->estimator)) o->truth = sample.truth;
            }
            const BatchRule rule = tables[j] ? BatchRule(*tables[j]) : BatchRule(AlphaRule{alpha});
            sets.push_back(enumerate_set(panel, spec, rule, {false, budget}));
            auto& s = report.methods[j];
            s.sizes.push_back(sets.back().size());
            if (!detail::contains_labels(sets.back(), sample.truth)) ++misses[j];
            const auto bounds = class_count_bounds(sets.back());
            if (bounds.is_empty) {
                ++s.empty_sets;
            } else {
                for (std::size_t k = 0; k < K; ++k) {
                    s.mean_lower[k] += static_cast<double>(bounds.per_class[k].lower);
                    s.mean_upper[k] += static_cast<double>(bounds.per_class[k].upper);
                }
            }
        }
        if (bonf && simes && !detail::is_subset(sets[*simes], sets[*bonf])) ++report.simes_not_in_bonferroni;
        if (oracle && simes && !detail::is_subset(sets[*oracle], sets[*simes])) ++report.oracle_not_in_simes;
    }

    const double reps = static_cast<double>(std::max<std::size_t>(cfg.replications, 1));
    for (std::size_t j = 0; j < methods.size(); ++j) {
        auto& s = report.methods[j];
        double total = 0.0;
        for (auto v : s.sizes) total += static_cast<double>(v);
        s.mean_size = total / reps;
        s.non_coverage = static_cast<double>(misses[j]) / reps;
        const double nonempty = static_cast<double>(cfg.replications - s.empty_sets);
        for (std::size_t k = 0; k < K; ++k) {
            s.mean_lower[k] = nonempty > 0 ? s.mean_lower[k] / nonempty : 0.0;
            s.mean_upper[k] = nonempty > 0 ? s.mean_upper[k] / nonempty : 0.0;
        }
    }
    report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

/// Distribution-free coverage study with iid uniform scores.
struct CoverageConfig {
    CalibrationMode mode = CalibrationMode::full;
    std::vector<std::size_t> class_sizes; ///< {n} (iid) or n_1..n_K
    std::vector<std::size_t> composition; ///< {m} (iid) or m_1..m_K
    CombinerSpec combiner = Simes{};
    bool empirical = false; ///< use a calibrated threshold instead of alpha
    double alpha = 0.1;
    std::size_t replications = 10000;
    std::size_t B = 1999;
    std::uint64_t seed = 1;
    /// Redraw the empirical threshold every this many replications so that the
    /// estimate averages over the Monte-Carlo draws too; 0 keeps a single threshold.
    std::size_t threshold_refresh = 0;
};

struct CoverageResult {
    std::size_t replications = 0;
    std::size_t misses = 0;
    std::optional<double> threshold; ///< first empirical threshold used, if any
    std::size_t thresholds_drawn = 0;

    double non_coverage() const
    {
        return replications == 0 ? 0.0 : static_cast<double>(misses) / static_cast<double>(replications);
    }
};

/// Simulates calibration and batch with iid uniform scores (the rank law is
/// the same for any continuous score distribution) and counts how often the
/// true label vector falls outside the batch prediction set.
inline CoverageResult run_coverage_experiment(const CoverageConfig& cfg)
{
    const bool iid = cfg.mode == CalibrationMode::full;
    if (cfg.class_sizes.empty() || cfg.class_sizes.size() != cfg.composition.size()) {
        throw InputError("coverage experiment needs matching class sizes and composition");
    }
    if (iid && cfg.class_sizes.size() != 1) throw InputError("iid coverage takes one n and one m");
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw InputError("alpha must lie in (0,1)");

    // iid panels still need two classes; the second one is never the truth
    const std::size_t K = iid ? 2 : cfg.class_sizes.size();
    std::size_t m = 0;
    LabelVector truth;
    for (std::size_t k = 0; k < cfg.composition.size(); ++k) {
        m += cfg.composition[k];
        truth.insert(truth.end(), cfg.composition[k], iid ? 0 : static_cast<int>(k));
    }
    if (m == 0) throw InputError("batch size must be positive");

    CoverageResult result;
    BatchRule rule = AlphaRule{cfg.alpha};
    auto calibrate = [&](std::uint64_t draw) {
        ThresholdTable table;
        table.mode = cfg.mode;
        table.alpha = cfg.alpha;
        table.B = cfg.B;
        table.m = m;
        table.seed = draw == 0 ? derive_seed(cfg.seed, {0x63616c6962ULL}) : derive_seed(cfg.seed, {0x63616c6962ULL, draw});
        table.combiner = to_string(cfg.combiner);
        table.class_sizes = cfg.class_sizes;
        const double t = iid ? calibrate_iid(cfg.class_sizes[0], m, cfg.combiner, cfg.alpha, cfg.B, table.seed)
                             : calibrate_conditional(cfg.class_sizes, cfg.composition, cfg.combiner, cfg.alpha, cfg.B,
                                                     table.seed);
        table.entries[iid ? Composition{} : cfg.composition] = t;
        if (!result.threshold) result.threshold = t;
        ++result.thresholds_drawn;
        rule = std::move(table);
    };
    if (cfg.empirical) calibrate(0);

    CombinerSpec spec = cfg.combiner;
    if (auto* a = std::get_if<AdaptiveSimes>(&spec)) {
        if (auto* o = std::get_if<OracleM0>(&a->estimator)) o->truth = truth;
    }
    const auto counts = count_vector(truth, K);

    std::vector<CalibrationEntry> entries;
    std::vector<double> scores(m * K);
    for (std::size_t r = 0; r < cfg.replications; ++r) {
        if (cfg.empirical && cfg.threshold_refresh > 0 && r > 0 && r % cfg.threshold_refresh == 0) calibrate(r);
        Engine eng(derive_seed(cfg.seed, {0x636f766572ULL, r}));
        entries.clear();
        for (std::size_t k = 0; k < cfg.class_sizes.size(); ++k) {
            for (std::size_t j = 0; j < cfg.class_sizes[k]; ++j) {
                // iid: calibration labels are irrelevant to full calibration
                const int label = iid ? static_cast<int>(eng() % K) : static_cast<int>(k);
                entries.push_back({label, uniform01(eng)});
            }
        }
        for (auto& s : scores) s = uniform01(eng);
        const auto cal = build_calibration(entries, cfg.mode, K);
        const auto panel = conformal_pvalues(cal, ScorePanel(m, K, scores));
        const auto F = combine(spec, panel.select(truth), PanelContext::of(panel), truth);
        if (!admits(rule, F, counts)) ++result.misses;
        ++result.replications;
    }
    return result;
}

} // namespace batchcp
