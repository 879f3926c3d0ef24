#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "batchcp/errors.hpp"

namespace batchcp {

/// Which calibration examples a class p-value is ranked against.
enum class CalibrationMode {
    full,             ///< all n examples (iid model)
    class_conditional ///< only the n_k examples labeled k (conditional model)
};

inline std::string_view to_string(CalibrationMode mode)
{
    return mode == CalibrationMode::full ? "iid" : "conditional";
}

inline CalibrationMode parse_mode(std::string_view s)
{
    if (s == "iid" || s == "full") return CalibrationMode::full;
    if (s == "conditional" || s == "class-conditional") return CalibrationMode::class_conditional;
    throw InputError("unknown calibration mode '" + std::string(s) + "' (expected iid|conditional)");
}

/// A conformal p-value kept as the exact rank fraction num/den, 1 <= num <= den.
struct PValue {
    std::uint64_t num = 1;
    std::uint64_t den = 1;

    double value() const { return static_cast<double>(num) / static_cast<double>(den); }

    friend bool operator==(const PValue& a, const PValue& b)
    {
        return a.num * b.den == b.num * a.den;
    }
    friend std::strong_ordering operator<=>(const PValue& a, const PValue& b)
    {
        return a.num * b.den <=> b.num * a.den;
    }
};

struct CalibrationEntry {
    int label = 0; ///< 0-based class index
    double score = 0.0;
};

/// Labeled calibration scores S_{Y_j}(X_j).
class CalibrationSet {
public:
    CalibrationSet() = default;
    CalibrationSet(std::vector<CalibrationEntry> entries, CalibrationMode mode, std::vector<std::size_t> class_counts)
        : entries_(std::move(entries)), mode_(mode), class_counts_(std::move(class_counts))
    {
    }

    const std::vector<CalibrationEntry>& entries() const { return entries_; }
    CalibrationMode mode() const { return mode_; }
    const std::vector<std::size_t>& class_counts() const { return class_counts_; }
    std::size_t size() const { return entries_.size(); }
    std::size_t num_classes() const { return class_counts_.size(); }

private:
    std::vector<CalibrationEntry> entries_;
    CalibrationMode mode_ = CalibrationMode::full;
    std::vector<std::size_t> class_counts_;
};

/// Tallies class counts. When num_classes is 0 the class count is inferred as
/// max label + 1. Entries are kept in input order.
inline CalibrationSet build_calibration(std::vector<CalibrationEntry> entries, CalibrationMode mode,
                                        std::size_t num_classes = 0)
{
    if (entries.empty()) throw InputError("empty calibration");
    int max_label = 0;
    for (std::size_t j = 0; j < entries.size(); ++j) {
        const auto& e = entries[j];
        if (e.label < 0) throw InputError("calibration row " + std::to_string(j) + ": negative label");
        if (!std::isfinite(e.score)) throw InputError("calibration row " + std::to_string(j) + ": non-finite score");
        max_label = std::max(max_label, e.label);
    }
    const std::size_t K = num_classes == 0 ? static_cast<std::size_t>(max_label) + 1 : num_classes;
    if (static_cast<std::size_t>(max_label) >= K) {
        throw InputError("calibration label " + std::to_string(max_label) + " out of range for K=" + std::to_string(K));
    }
    std::vector<std::size_t> counts(K, 0);
    for (const auto& e : entries) ++counts[static_cast<std::size_t>(e.label)];
    return CalibrationSet(std::move(entries), mode, std::move(counts));
}

/// m x K matrix of test scores, entry (i,k) = S_k(X_{n+i}), row-major.
class ScorePanel {
public:
    ScorePanel() = default;
    ScorePanel(std::size_t m, std::size_t K, std::vector<double> scores)
        : m_(m), K_(K), scores_(std::move(scores))
    {
        if (m_ < 1) throw InputError("score panel needs at least one test item");
        if (K_ < 2) throw InputError("score panel needs at least two classes");
        if (scores_.size() != m_ * K_) throw InputError("score panel size mismatch");
        for (std::size_t i = 0; i < m_; ++i) {
            for (std::size_t k = 0; k < K_; ++k) {
                if (!std::isfinite(scores_[i * K_ + k])) {
                    throw InputError("non-finite test score at row " + std::to_string(i) + ", column " +
                                     std::to_string(k));
                }
            }
        }
    }

    std::size_t m() const { return m_; }
    std::size_t K() const { return K_; }
    double operator()(std::size_t i, std::size_t k) const { return scores_[i * K_ + k]; }
    std::span<const double> row(std::size_t i) const { return {scores_.data() + i * K_, K_}; }

private:
    std::size_t m_ = 0;
    std::size_t K_ = 0;
    std::vector<double> scores_;
};

/// The m x K grid of conformal p-values. Immutable once built.
class PValuePanel {
public:
    PValuePanel() = default;
    PValuePanel(std::size_t m, CalibrationMode mode, std::vector<std::uint64_t> denominators,
                std::vector<std::uint64_t> numerators)
        : m_(m), mode_(mode), den_(std::move(denominators)), num_(std::move(numerators))
    {
        if (num_.size() != m_ * den_.size()) throw InputError("p-value panel size mismatch");
        for (std::size_t i = 0; i < m_; ++i) {
            for (std::size_t k = 0; k < den_.size(); ++k) {
                const auto a = num_[i * den_.size() + k];
                if (a < 1 || a > den_[k]) throw InputError("p-value numerator off the rank grid");
            }
        }
    }

    std::size_t m() const { return m_; }
    std::size_t K() const { return den_.size(); }
    CalibrationMode mode() const { return mode_; }
    /// d+1 for each class, d = n (full) or n_k (conditional).
    const std::vector<std::uint64_t>& denominators() const { return den_; }
    PValue operator()(std::size_t i, std::size_t k) const { return {num_[i * den_.size() + k], den_[k]}; }

    /// p(y) = (p_i^{(y_i)})_i for a candidate label vector.
    std::vector<PValue> select(std::span<const int> labels) const
    {
        std::vector<PValue> out;
        out.reserve(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) out.push_back((*this)(i, static_cast<std::size_t>(labels[i])));
        return out;
    }

private:
    std::size_t m_ = 0;
    CalibrationMode mode_ = CalibrationMode::full;
    std::vector<std::uint64_t> den_;
    std::vector<std::uint64_t> num_;
};

/// Number of calibration scores >= s in an ascending-sorted range.
inline std::uint64_t count_at_least(std::span<const double> sorted_scores, double s)
{
    return static_cast<std::uint64_t>(sorted_scores.end() -
                                      std::lower_bound(sorted_scores.begin(), sorted_scores.end(), s));
}

/// p_i^(k) = (1 + #{j in D_cal^(k) : S_{Y_j}(X_j) >= S_k(X_{n+i})}) / (|D_cal^(k)| + 1).
///
/// Ties are counted by the >= comparison, which can only raise a p-value.
inline PValuePanel conformal_pvalues(const CalibrationSet& cal, const ScorePanel& panel)
{
    const std::size_t K = panel.K();
    for (const auto& e : cal.entries()) {
        if (static_cast<std::size_t>(e.label) >= K) {
            throw InputError("calibration label " + std::to_string(e.label) + " out of range for K=" +
                             std::to_string(K));
        }
    }

    std::vector<std::vector<double>> ref(cal.mode() == CalibrationMode::full ? 1 : K);
    for (const auto& e : cal.entries()) {
        ref[cal.mode() == CalibrationMode::full ? 0 : static_cast<std::size_t>(e.label)].push_back(e.score);
    }
    for (std::size_t r = 0; r < ref.size(); ++r) {
        if (ref[r].empty()) {
            throw InputError("class-conditional calibration has no examples of class " + std::to_string(r));
        }
        std::sort(ref[r].begin(), ref[r].end());
    }

    std::vector<std::uint64_t> den(K);
    for (std::size_t k = 0; k < K; ++k) den[k] = ref[ref.size() == 1 ? 0 : k].size() + 1;

    std::vector<std::uint64_t> num(panel.m() * K);
    for (std::size_t i = 0; i < panel.m(); ++i) {
        for (std::size_t k = 0; k < K; ++k) {
            const auto& sorted = ref[ref.size() == 1 ? 0 : k];
            num[i * K + k] = 1 + count_at_least(sorted, panel(i, k));
        }
    }
    return PValuePanel(panel.m(), cal.mode(), std::move(den), std::move(num));
}

} // namespace batchcp
