#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "batchcp/combiners.hpp"
#include "batchcp/conformal.hpp"
#include "batchcp/enumeration.hpp"
#include "batchcp/errors.hpp"
#include "batchcp/experiment.hpp"
#include "batchcp/thresholds.hpp"

namespace batchcp::io {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_row(std::string_view line)
{
    auto cells = batchcp::detail::split(line, ',');
    for (auto& c : cells) c = trim(c);
    return cells;
}

inline std::string where(std::size_t row, std::size_t col)
{
    return "row " + std::to_string(row) + ", column " + std::to_string(col);
}

inline double parse_double(std::string_view s, std::size_t row, std::size_t col)
{
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw InputError(where(row, col) + ": cannot parse '" + std::string(s) + "' as a number");
    }
    if (!std::isfinite(v)) throw InputError(where(row, col) + ": non-finite value");
    return v;
}

inline int parse_label(std::string_view s, std::size_t row, std::size_t col)
{
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || v < 0) {
        throw InputError(where(row, col) + ": label must be a nonnegative integer, got '" + std::string(s) + "'");
    }
    return v;
}

// Reads the header line, stripping a UTF-8 byte order mark; returns false at EOF.
inline bool read_header(std::istream& in, std::string& line)
{
    while (std::getline(in, line)) {
        if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
        if (!trim(line).empty()) return true;
    }
    return false;
}

inline std::ifstream open(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    return in;
}

} // namespace detail

/// Calibration CSV: header `label,score`, labels 0-based.
inline CalibrationSet read_calibration_csv(std::istream& in, CalibrationMode mode, std::size_t num_classes = 0)
{
    std::string line;
    if (!detail::read_header(in, line)) throw InputError("empty calibration");
    const auto header = detail::split_row(line);
    if (header.size() != 2 || header[0] != "label" || header[1] != "score") {
        throw InputError("calibration header must be 'label,score'");
    }
    std::vector<CalibrationEntry> entries;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_row(line);
        if (cells.size() != 2) {
            throw InputError("row " + std::to_string(row) + ": expected 2 columns, found " + std::to_string(cells.size()));
        }
        entries.push_back({detail::parse_label(cells[0], row, 0), detail::parse_double(cells[1], row, 1)});
    }
    if (entries.empty()) throw InputError("empty calibration");
    return build_calibration(std::move(entries), mode, num_classes);
}

/// Test CSV: header `s1,...,sK`, one row of K scores per test item.
inline ScorePanel read_test_csv(std::istream& in)
{
    std::string line;
    if (!detail::read_header(in, line)) throw InputError("empty test file");
    const auto header = detail::split_row(line);
    const std::size_t K = header.size();
    if (K < 2) throw InputError("test header needs at least two score columns");
    for (std::size_t k = 0; k < K; ++k) {
        if (header[k] != "s" + std::to_string(k + 1)) {
            throw InputError("test header column " + std::to_string(k) + " must be 's" + std::to_string(k + 1) + "'");
        }
    }
    std::vector<double> scores;
    std::size_t row = 0;
    std::size_t m = 0;
    while (std::getline(in, line)) {
        ++row;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_row(line);
        if (cells.size() != K) {
            throw InputError("row " + std::to_string(row) + ": expected " + std::to_string(K) + " columns, found " +
                             std::to_string(cells.size()));
        }
        for (std::size_t k = 0; k < K; ++k) scores.push_back(detail::parse_double(cells[k], row, k));
        ++m;
    }
    if (m == 0) throw InputError("empty test file");
    return ScorePanel(m, K, std::move(scores));
}

inline CalibrationSet read_calibration_csv(const std::string& path, CalibrationMode mode, std::size_t num_classes = 0)
{
    auto in = detail::open(path);
    return read_calibration_csv(in, mode, num_classes);
}

inline ScorePanel read_test_csv(const std::string& path)
{
    auto in = detail::open(path);
    return read_test_csv(in);
}

// ---------------------------------------------------------------------------
// p-value panels

inline json to_json(const PValuePanel& panel)
{
    json num = json::array();
    json p = json::array();
    for (std::size_t i = 0; i < panel.m(); ++i) {
        json nrow = json::array();
        json prow = json::array();
        for (std::size_t k = 0; k < panel.K(); ++k) {
            nrow.push_back(panel(i, k).num);
            prow.push_back(panel(i, k).value());
        }
        num.push_back(std::move(nrow));
        p.push_back(std::move(prow));
    }
    return {{"mode", to_string(panel.mode())},
            {"m", panel.m()},
            {"K", panel.K()},
            {"denominators", panel.denominators()},
            {"numerators", std::move(num)},
            {"p", std::move(p)}};
}

inline PValuePanel panel_from_json(const json& j)
{
    const auto m = j.at("m").get<std::size_t>();
    const auto K = j.at("K").get<std::size_t>();
    auto den = j.at("denominators").get<std::vector<std::uint64_t>>();
    std::vector<std::uint64_t> num;
    for (const auto& row : j.at("numerators")) {
        for (const auto& v : row) num.push_back(v.get<std::uint64_t>());
    }
    if (den.size() != K || num.size() != m * K) throw InputError("p-value JSON dimensions are inconsistent");
    return PValuePanel(m, parse_mode(j.at("mode").get<std::string>()), std::move(den), std::move(num));
}

inline void write_pvalues_csv(std::ostream& out, const PValuePanel& panel)
{
    out << "item,class,numerator,denominator,p\n";
    std::array<char, 32> buf{};
    for (std::size_t i = 0; i < panel.m(); ++i) {
        for (std::size_t k = 0; k < panel.K(); ++k) {
            const auto p = panel(i, k);
            // shortest representation that round-trips
            const auto end = std::to_chars(buf.data(), buf.data() + buf.size(), p.value()).ptr;
            out << i << ',' << k << ',' << p.num << ',' << p.den << ',' << std::string_view(buf.data(), end - buf.data())
                << '\n';
        }
    }
}

// ---------------------------------------------------------------------------
// Sets and bounds

inline json bounds_to_json(const CountBounds& b)
{
    if (b.is_empty) return nullptr;
    json out = json::array();
    for (const auto& iv : b.per_class) out.push_back({iv.lower, iv.upper});
    return out;
}

inline CountBounds bounds_from_json(const json& j, std::size_t m, std::size_t K)
{
    if (j.is_null()) return CountBounds::empty_marker(m, K);
    CountBounds b{m, K, {}, false};
    for (const auto& iv : j) b.per_class.push_back({iv.at(0).get<std::size_t>(), iv.at(1).get<std::size_t>()});
    if (b.per_class.size() != K) throw InputError("bounds JSON has the wrong number of classes");
    return b;
}

/// Everything a `set` or `bounds` command reports.
struct SetReport {
    std::size_t m = 0;
    std::size_t K = 0;
    CalibrationMode mode = CalibrationMode::full;
    std::string combiner;
    std::string rule;
    std::optional<double> alpha;
    std::string bounds_mode = "exact";
    std::optional<BatchPredictionSet> set; ///< present for exact enumeration
    std::optional<IndividualSets> individual;
    CountBounds bounds;
    std::optional<BigInt> reconstructed_cardinality;
    json provenance = json::object();
};

inline json to_json(const SetReport& r, bool include_members = true)
{
    json out = {{"alpha", r.alpha ? json(*r.alpha) : json(nullptr)},
                {"combiner", r.combiner},
                {"mode", to_string(r.mode)},
                {"rule", r.rule},
                {"m", r.m},
                {"K", r.K},
                {"bounds_mode", r.bounds_mode},
                {"empty", r.bounds.is_empty},
                {"bounds", bounds_to_json(r.bounds)},
                {"provenance", r.provenance}};
    if (r.set) {
        out["set_size"] = r.set->size();
        if (include_members) {
            json members = json::array();
            for (const auto& s : r.set->members) {
                members.push_back({{"labels", s.labels}, {"p", s.p ? json(s.p->value) : json(nullptr)}});
            }
            out["members"] = std::move(members);
        }
    }
    if (r.individual) out["individual_sets"] = r.individual->sets;
    if (r.reconstructed_cardinality) out["reconstructed_cardinality"] = r.reconstructed_cardinality->str();
    return out;
}

inline SetReport set_report_from_json(const json& j)
{
    SetReport r;
    r.m = j.at("m").get<std::size_t>();
    r.K = j.at("K").get<std::size_t>();
    r.mode = parse_mode(j.at("mode").get<std::string>());
    r.combiner = j.at("combiner").get<std::string>();
    r.rule = j.at("rule").get<std::string>();
    if (!j.at("alpha").is_null()) r.alpha = j.at("alpha").get<double>();
    r.bounds_mode = j.at("bounds_mode").get<std::string>();
    r.bounds = bounds_from_json(j.at("bounds"), r.m, r.K);
    r.provenance = j.value("provenance", json::object());
    if (j.contains("members")) {
        BatchPredictionSet set;
        set.m = r.m;
        set.K = r.K;
        set.mode = r.mode;
        set.combiner = r.combiner;
        set.rule = r.rule;
        for (const auto& s : j.at("members")) {
            SetMember member{s.at("labels").get<LabelVector>(), std::nullopt};
            if (!s.at("p").is_null()) {
                const double p = s.at("p").get<double>();
                member.p = BatchPValue{p, p};
            }
            set.members.push_back(std::move(member));
        }
        r.set = std::move(set);
    }
    if (j.contains("individual_sets")) {
        r.individual = IndividualSets{j.at("individual_sets").get<std::vector<std::vector<int>>>(), r.bounds.is_empty};
    }
    if (j.contains("reconstructed_cardinality")) {
        r.reconstructed_cardinality = BigInt(j.at("reconstructed_cardinality").get<std::string>());
    }
    return r;
}

// ---------------------------------------------------------------------------
// Threshold tables

inline json threshold_to_json(double t)
{
    if (std::isinf(t)) return t < 0 ? json("-inf") : json("inf");
    return t;
}

inline double threshold_from_json(const json& j)
{
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        throw InputError("bad threshold value '" + s + "'");
    }
    return j.get<double>();
}

inline json to_json(const ThresholdTable& t)
{
    json entries = json::array();
    for (const auto& [comp, value] : t.entries) entries.push_back({{"composition", comp}, {"t", threshold_to_json(value)}});
    return {{"mode", to_string(t.mode)},
            {"alpha", t.alpha},
            {"B", t.B},
            {"seed", t.seed},
            {"generator", t.generator},
            {"combiner", t.combiner},
            {"m", t.m},
            {"class_sizes", t.class_sizes},
            {"entries", std::move(entries)}};
}

inline ThresholdTable table_from_json(const json& j)
{
    ThresholdTable t;
    try {
        t.mode = parse_mode(j.at("mode").get<std::string>());
        t.alpha = j.at("alpha").get<double>();
        t.B = j.at("B").get<std::size_t>();
        t.seed = j.at("seed").get<std::uint64_t>();
        t.generator = j.value("generator", std::string(kGeneratorName));
        t.combiner = j.value("combiner", std::string());
        t.m = j.at("m").get<std::size_t>();
        t.class_sizes = j.at("class_sizes").get<std::vector<std::size_t>>();
        for (const auto& e : j.at("entries")) {
            t.entries[e.at("composition").get<Composition>()] = threshold_from_json(e.at("t"));
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed threshold table: ") + e.what());
    }
    return t;
}

inline ThresholdTable read_table(const std::string& path)
{
    auto in = detail::open(path);
    json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("cannot parse threshold table '" + path + "': " + e.what());
    }
    return table_from_json(j);
}

// ---------------------------------------------------------------------------
// Experiment reports

inline json to_json(const ExperimentReport& r)
{
    json methods = json::array();
    for (const auto& s : r.methods) {
        methods.push_back({{"name", s.name},
                           {"mean_size", s.mean_size},
                           {"non_coverage", s.non_coverage},
                           {"empty_sets", s.empty_sets},
                           {"mean_lower", s.mean_lower},
                           {"mean_upper", s.mean_upper},
                           {"sizes", s.sizes}});
    }
    return {{"config",
             {{"snr", r.config.snr},
              {"n_per_class", r.config.n_per_class},
              {"m_per_class", r.config.m_per_class},
              {"K", GaussianConfig::K},
              {"seed", r.config.seed},
              {"replications", r.config.replications}}},
            {"alpha", r.alpha},
            {"B", r.B},
            {"generator", kGeneratorName},
            {"methods", std::move(methods)},
            {"simes_not_in_bonferroni", r.simes_not_in_bonferroni},
            {"oracle_not_in_simes", r.oracle_not_in_simes},
            {"runtime_seconds", r.runtime_seconds}};
}

inline ExperimentReport report_from_json(const json& j)
{
    ExperimentReport r;
    const auto& c = j.at("config");
    r.config.snr = c.at("snr").get<double>();
    r.config.n_per_class = c.at("n_per_class").get<std::size_t>();
    r.config.m_per_class = c.at("m_per_class").get<std::size_t>();
    r.config.seed = c.at("seed").get<std::uint64_t>();
    r.config.replications = c.at("replications").get<std::size_t>();
    r.alpha = j.at("alpha").get<double>();
    r.B = j.at("B").get<std::size_t>();
    for (const auto& s : j.at("methods")) {
        MethodSummary m;
        m.name = s.at("name").get<std::string>();
        m.mean_size = s.at("mean_size").get<double>();
        m.non_coverage = s.at("non_coverage").get<double>();
        m.empty_sets = s.at("empty_sets").get<std::size_t>();
        m.mean_lower = s.at("mean_lower").get<std::vector<double>>();
        m.mean_upper = s.at("mean_upper").get<std::vector<double>>();
        m.sizes = s.at("sizes").get<std::vector<std::size_t>>();
        r.methods.push_back(std::move(m));
    }
    r.simes_not_in_bonferroni = j.at("simes_not_in_bonferroni").get<std::size_t>();
    r.oracle_not_in_simes = j.at("oracle_not_in_simes").get<std::size_t>();
    r.runtime_seconds = j.at("runtime_seconds").get<double>();
    return r;
}

/// Aligned text table: one row per SNR, mean sizes then non-coverage per method.
inline void write_report_table(std::ostream& out, const std::vector<ExperimentReport>& reports)
{
    if (reports.empty()) return;
    const auto& methods = reports.front().methods;
    out << std::setw(6) << "SNR";
    for (const auto& s : methods) out << std::setw(14) << s.name;
    out << "  |";
    for (const auto& s : methods) out << std::setw(14) << s.name;
    out << '\n';
    out << std::fixed;
    for (const auto& r : reports) {
        out << std::setw(6) << std::setprecision(2) << r.config.snr;
        for (const auto& s : r.methods) out << std::setw(14) << std::setprecision(2) << s.mean_size;
        out << "  |";
        for (const auto& s : r.methods) out << std::setw(14) << std::setprecision(3) << s.non_coverage;
        out << '\n';
    }
    out << std::defaultfloat;
}

/// Long-format per-replication set sizes, for violin or box plots.
inline void write_report_plot_csv(std::ostream& out, const std::vector<ExperimentReport>& reports)
{
    out << "snr,method,replication,size\n";
    for (const auto& r : reports) {
        for (const auto& s : r.methods) {
            for (std::size_t i = 0; i < s.sizes.size(); ++i) out << r.config.snr << ',' << s.name << ',' << i << ',' << s.sizes[i] << '\n';
        }
    }
}

} // namespace batchcp::io
