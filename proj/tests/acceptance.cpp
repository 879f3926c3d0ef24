// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 on any failure.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <boost/math/special_functions/gamma.hpp>

#include "test_util.hpp"

using namespace batchcp;
using oracle::Rational;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int prec = 4)
{
    std::ostringstream os;
    os.precision(prec);
    os << std::fixed << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// 1 and 2: brute-force equivalence and dominance

struct BruteForceTally {
    std::size_t panels = 0;
    std::size_t comparisons = 0;
    std::size_t mismatches = 0;
    std::size_t simes_outside_bonferroni = 0;
    std::string first_failure;
};

BruteForceTally run_brute_force()
{
    BruteForceTally tally;
    std::mt19937_64 rng(20240501);
    const std::array<std::pair<double, Rational>, 3> alphas{
        {{0.05, Rational(1, 20)}, {0.1, Rational(1, 10)}, {0.2, Rational(1, 5)}}};

    for (int rep = 0; rep < 500; ++rep) {
        const std::size_t m = 1 + rng() % 4;
        const std::size_t K = 2 + rng() % 3;
        const bool cond = rep % 2 == 1;
        const auto inst = testutil::random_instance(rng, m, K, cond, 3, 20);
        const auto panel = testutil::library_panel(inst);
        const auto p = oracle::pvalues(inst);
        const auto n = oracle::class_sizes(inst);
        const long n_total = static_cast<long>(inst.cal.size());
        const auto& [alpha, alpha_q] = alphas[static_cast<std::size_t>(rep) % alphas.size()];
        const std::size_t ell = (m + 1) / 2;
        ++tally.panels;

        auto compare = [&](const std::string& name, const CombinerSpec& spec, const BatchRule& rule,
                           const std::function<bool(const oracle::Labels&)>& keep) {
            const auto got = testutil::labels_of(enumerate_set(panel, spec, rule));
            const auto want = oracle::brute_force_set(m, K, keep);
            ++tally.comparisons;
            if (got != want) {
                ++tally.mismatches;
                if (tally.first_failure.empty()) {
                    tally.first_failure = name + " on panel " + std::to_string(rep) + " (" + std::to_string(got.size()) +
                                          " vs " + std::to_string(want.size()) + " members)";
                }
            }
            return got;
        };

        const auto bonf = compare("bonferroni", Bonferroni{}, AlphaRule{alpha}, [&](const oracle::Labels& y) {
            return oracle::bonferroni(oracle::select(p, y)) > alpha_q;
        });
        const auto simes = compare("simes", Simes{}, AlphaRule{alpha}, [&](const oracle::Labels& y) {
            return oracle::simes(oracle::select(p, y)) > alpha_q;
        });
        if (!std::includes(bonf.begin(), bonf.end(), simes.begin(), simes.end())) ++tally.simes_outside_bonferroni;

        // Storey needs m >= 2 in the conditional model
        if (!cond || m >= 2) {
            compare("storey-simes", AdaptiveSimes{StoreyM0{0.5}}, AlphaRule{alpha}, [&](const oracle::Labels& y) {
                const auto py = oracle::select(p, y);
                if (!cond) return oracle::simes_with(py, oracle::storey_iid(py, n_total, Rational(1, 2))) > alpha_q;
                const auto m0 = oracle::storey_conditional(py, y, n, Rational(1, 2));
                if (m0.exact) return oracle::simes_with(py, *m0.exact) > alpha_q;
                const auto s = oracle::sorted(py);
                long double best = 1.0L;
                for (std::size_t l = 1; l <= m; ++l) {
                    best = std::min(best, m0.approx * static_cast<long double>(s[l - 1]) / static_cast<long double>(l));
                }
                return best > static_cast<long double>(alpha_q);
            });
        }

        compare("quantile-simes", AdaptiveSimes{QuantileM0{ell}}, AlphaRule{alpha}, [&](const oracle::Labels& y) {
            const auto py = oracle::select(p, y);
            const auto m0 = oracle::quantile(py, ell);
            if (!m0) return true; // infinite estimate: never rejected
            return oracle::simes_with(py, *m0) > alpha_q;
        });

        std::vector<std::size_t> sizes;
        if (cond) {
            for (auto v : n) sizes.push_back(static_cast<std::size_t>(v));
        } else {
            sizes.push_back(inst.cal.size());
        }
        const auto table = build_table(cond ? CalibrationMode::class_conditional : CalibrationMode::full, sizes, m,
                                       Fisher{}, alpha, 199, 7000 + static_cast<std::uint64_t>(rep));
        compare("fisher-table", Fisher{}, table, [&](const oracle::Labels& y) {
            const double t = table.lookup(oracle::counts(y, K));
            if (std::isinf(t)) return true;
            const long double f = oracle::fisher(oracle::select(p, y));
            // distinct grid products differ far more than this relative slack
            return f >= static_cast<long double>(t) * (1.0L - 1e-9L);
        });
    }
    return tally;
}

Outcome criterion1(const BruteForceTally& t)
{
    return {t.mismatches == 0, std::to_string(t.comparisons) + " set comparisons over " + std::to_string(t.panels) +
                                   " panels, " + std::to_string(t.mismatches) + " mismatches" +
                                   (t.first_failure.empty() ? "" : "; first: " + t.first_failure)};
}

Outcome criterion2(const BruteForceTally& t)
{
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t violations = 0;
    for (int rep = 0; rep < 100000; ++rep) {
        const std::size_t m = 1 + rng() % 12;
        if (rep % 2 == 0) {
            std::vector<double> p(m);
            for (auto& v : p) v = std::max(u(rng), 1e-300);
            if (simes_p(std::span<const double>(p)).value > bonferroni_p(std::span<const double>(p)).value) ++violations;
        } else {
            const std::uint64_t den = 2 + rng() % 100;
            std::vector<PValue> p(m);
            for (auto& v : p) v = {1 + rng() % den, den};
            if (simes_p(std::span<const PValue>(p)).value > bonferroni_p(std::span<const PValue>(p)).value) ++violations;
        }
    }
    return {violations == 0 && t.simes_outside_bonferroni == 0,
            std::to_string(violations) + " of 100000 vectors with Simes > Bonferroni; " +
                std::to_string(t.simes_outside_bonferroni) + " of " + std::to_string(t.panels) +
                " panels with C_Simes outside C_Bonf"};
}

// ---------------------------------------------------------------------------
// 3-5: coverage

CoverageResult coverage(CalibrationMode mode, std::vector<std::size_t> n, std::vector<std::size_t> comp, CombinerSpec F,
                        double alpha, std::size_t reps, bool empirical, std::uint64_t seed)
{
    CoverageConfig cfg;
    cfg.mode = mode;
    cfg.class_sizes = std::move(n);
    cfg.composition = std::move(comp);
    cfg.combiner = std::move(F);
    cfg.alpha = alpha;
    cfg.replications = reps;
    cfg.empirical = empirical;
    cfg.B = 1999;
    cfg.seed = seed;
    // the guarantee averages over the null draws as well, so the threshold is
    // redrawn every 10 replications (2000 independent thresholds at 20000 reps)
    cfg.threshold_refresh = empirical ? 10 : 0;
    return run_coverage_experiment(cfg);
}

Outcome criterion3()
{
    const auto iid = coverage(CalibrationMode::full, {19}, {2}, Simes{}, 0.1, 100000, false, 301);
    const auto cond = coverage(CalibrationMode::class_conditional, {19, 19}, {1, 1}, Simes{}, 0.1, 100000, false, 302);
    const bool ok = std::abs(iid.non_coverage() - 0.1) <= 0.004 && std::abs(cond.non_coverage() - 0.1) <= 0.004;
    return {ok, "Simes non-coverage iid " + fmt(iid.non_coverage()) + ", conditional " + fmt(cond.non_coverage()) +
                    " (target 0.100 +/- 0.004, 100000 reps each)"};
}

Outcome criterion4()
{
    bool ok = true;
    std::string detail = "Storey-Simes lambda=1/2, 50000 reps:";
    std::uint64_t seed = 400;
    for (double alpha : {0.05, 0.1}) {
        const auto iid = coverage(CalibrationMode::full, {19}, {4}, AdaptiveSimes{StoreyM0{0.5}}, alpha, 50000, false, ++seed);
        const auto cond = coverage(CalibrationMode::class_conditional, {19, 39, 19}, {2, 1, 1},
                                   AdaptiveSimes{StoreyM0{0.5}}, alpha, 50000, false, ++seed);
        ok = ok && iid.non_coverage() <= alpha + 0.005 && cond.non_coverage() <= alpha + 0.005;
        detail += " alpha=" + fmt(alpha, 2) + " iid " + fmt(iid.non_coverage()) + " cond " + fmt(cond.non_coverage()) + ";";
    }
    detail += " bound alpha + 0.005";
    return {ok, detail};
}

Outcome criterion5()
{
    bool ok = true;
    std::string detail = "empirical thresholds B=1999, 20000 reps, alpha=0.1:";
    const std::vector<std::pair<std::string, CombinerSpec>> specs{
        {"fisher", Fisher{}}, {"min(storey,quantile)-simes", parse_combiner("min-simes:storey=0.5:quantile")}};
    std::uint64_t seed = 500;
    for (const auto& [name, spec] : specs) {
        const auto iid = coverage(CalibrationMode::full, {29}, {4}, spec, 0.1, 20000, true, ++seed);
        const auto cond = coverage(CalibrationMode::class_conditional, {19, 29, 24}, {2, 1, 1}, spec, 0.1, 20000, true, ++seed);
        ok = ok && iid.non_coverage() <= 0.11 && cond.non_coverage() <= 0.11;
        detail += " " + name + " iid " + fmt(iid.non_coverage()) + " cond " + fmt(cond.non_coverage()) + ";";
    }
    detail += " bound 0.11";
    return {ok, detail};
}

// ---------------------------------------------------------------------------
// 6: shortcut exactness and conservativeness

oracle::Instance complementary_instance(std::mt19937_64& rng, std::size_t m, bool conditional)
{
    oracle::Instance inst;
    inst.conditional = conditional;
    inst.m = m;
    inst.K = 2;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::size_t n = 10 + rng() % 40;
    for (std::size_t j = 0; j < n; ++j) {
        const double pi = u(rng);
        const int label = u(rng) < pi ? 0 : 1;
        inst.cal.push_back({label, label == 0 ? 1.0 - pi : pi});
    }
    if (conditional) {
        inst.cal.push_back({0, u(rng)});
        inst.cal.push_back({1, u(rng)});
    }
    for (std::size_t i = 0; i < m; ++i) {
        const double pi = u(rng);
        inst.scores.push_back({1.0 - pi, pi});
    }
    return inst;
}

Outcome criterion6()
{
    std::mt19937_64 rng(606);
    std::size_t unequal = 0;
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t m = 3 + static_cast<std::size_t>(rep) % 6;
        const auto panel = testutil::library_panel(complementary_instance(rng, m, rep % 2 == 1));
        const double alpha = rep % 3 == 0 ? 0.05 : (rep % 3 == 1 ? 0.1 : 0.2);
        const auto exact = class_count_bounds(enumerate_set(panel, Simes{}, AlphaRule{alpha}));
        if (!(simes_shortcut_bounds(panel, alpha) == exact)) ++unequal;
    }
    std::size_t violations = 0;
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t m = 1 + static_cast<std::size_t>(rep) % 6;
        const auto inst = testutil::random_instance(rng, m, 3, rep % 2 == 0, 5, 30);
        const auto panel = testutil::library_panel(inst);
        const auto exact = class_count_bounds(enumerate_set(panel, Simes{}, AlphaRule{0.1}));
        const auto fast = simes_shortcut_bounds(panel, 0.1);
        if (exact.is_empty) continue;
        if (fast.is_empty) {
            ++violations;
            continue;
        }
        for (std::size_t k = 0; k < 3; ++k) {
            if (fast.per_class[k].lower > exact.per_class[k].lower || fast.per_class[k].upper < exact.per_class[k].upper) {
                ++violations;
                break;
            }
        }
    }
    return {unequal == 0 && violations == 0,
            "K=2 complementary: " + std::to_string(unequal) + " of 200 differ from exact; K=3: " +
                std::to_string(violations) + " of 200 not conservative"};
}

// ---------------------------------------------------------------------------
// 7: multinomial reconstruction

Outcome criterion7()
{
    const CountBounds zip{5, 10, {{1, 2}, {0, 0}, {0, 0}, {0, 0}, {1, 1}, {0, 2}, {0, 2}, {0, 0}, {0, 1}, {0, 0}}, false};
    const auto zip_count = reconstruct_cardinality(zip);
    std::mt19937_64 rng(707);
    std::size_t mismatches = 0;
    for (int rep = 0; rep < 500; ++rep) {
        const std::size_t m = 1 + rng() % 6;
        const std::size_t K = 2 + rng() % 3;
        CountBounds b{m, K, {}, false};
        for (std::size_t k = 0; k < K; ++k) {
            std::size_t lo = rng() % (m + 1);
            std::size_t hi = rng() % (m + 1);
            if (lo > hi) std::swap(lo, hi);
            b.per_class.push_back({lo, hi});
        }
        std::uint64_t count = 0;
        for (const auto& y : oracle::all_vectors(m, K)) count += b.contains(oracle::counts(y, K)) ? 1 : 0;
        if (reconstruct_cardinality(b) != count) ++mismatches;
    }
    return {zip_count == 600 && mismatches == 0,
            "zip-code instance " + zip_count.str() + " (expected 600); " + std::to_string(mismatches) +
                " of 500 random bounds differ from brute force"};
}

// ---------------------------------------------------------------------------
// 8: Fisher closed form

Outcome criterion8()
{
    double worst = 0.0;
    for (std::size_t m = 1; m <= 20; ++m) {
        for (int step = 0; step <= 2000; ++step) {
            const double x = step * 0.1;
            const double got = chi2_even_survival(x, m);
            const double ref = x == 0.0 ? 1.0 : boost::math::gamma_q(static_cast<double>(m), x / 2.0);
            worst = std::max(worst, std::abs(got - ref) / ref);
        }
    }
    std::mt19937_64 rng(808);
    std::uniform_real_distribution<double> u(1e-12, 1.0);
    double worst_identity = 0.0;
    for (int rep = 0; rep < 100000; ++rep) {
        const std::vector<double> p{u(rng)};
        worst_identity = std::max(worst_identity, std::abs(fisher_p(std::span<const double>(p)).value - p[0]));
    }
    for (std::uint64_t den = 2; den <= 400; ++den) {
        for (std::uint64_t num = 1; num <= den; ++num) {
            const std::vector<PValue> p{{num, den}};
            worst_identity =
                std::max(worst_identity, std::abs(fisher_p(std::span<const PValue>(p)).value - p[0].value()));
        }
    }
    std::ostringstream os;
    os << "max rel. error vs incomplete gamma " << worst << " (bound 1e-12); m=1 identity max abs. error "
       << worst_identity << " (bound 1e-15)";
    return {worst <= 1e-12 && worst_identity <= 1e-15, os.str()};
}

// ---------------------------------------------------------------------------
// 9: Gaussian experiment

Outcome criterion9()
{
    bool ok = true;
    std::ostringstream os;
    os.precision(3);
    os << std::fixed;
    std::map<double, ExperimentReport> reports;
    for (double snr : {1.0, 1.5, 2.0, 4.0}) {
        GaussianConfig cfg;
        cfg.snr = snr;
        cfg.n_per_class = 400;
        cfg.m_per_class = 2;
        cfg.replications = 1000;
        cfg.seed = 900 + static_cast<std::uint64_t>(snr * 10);
        reports[snr] = run_size_experiment(cfg, default_methods(), 0.1, 1999);
    }
    auto size = [&](double snr, const char* name) { return reports[snr].find(name)->mean_size; };

    bool a = true;
    for (double snr : {1.0, 1.5, 2.0}) {
        a = a && size(snr, "storey-simes") < size(snr, "simes") && size(snr, "simes") < size(snr, "bonferroni");
    }
    bool b_low = true;
    for (const auto& s : reports[1.0].methods) {
        if (s.name != "fisher" && s.name != "oracle-simes") b_low = b_low && size(1.0, "fisher") < s.mean_size;
    }
    const bool b_high = size(4.0, "fisher") > size(4.0, "simes");
    bool c = true;
    double worst_nc = 0.0;
    bool d = true;
    for (auto& [snr, rep] : reports) {
        const double oracle_size = rep.find("oracle-simes")->mean_size;
        for (const auto& s : rep.methods) {
            worst_nc = std::max(worst_nc, s.non_coverage);
            c = c && s.non_coverage <= 0.13;
            if (s.name != "oracle-simes") d = d && oracle_size <= s.mean_size;
        }
    }
    ok = a && b_low && b_high && c && d;
    os << "(a) " << (a ? "ok" : "FAIL") << " (b) " << (b_low && b_high ? "ok" : "FAIL") << " (c) " << (c ? "ok" : "FAIL")
       << " max non-coverage " << worst_nc << " (d) " << (d ? "ok" : "FAIL") << "; mean sizes";
    for (double snr : {1.0, 1.5, 2.0, 4.0}) {
        os << " | snr " << snr << ":";
        for (const auto& s : reports[snr].methods) os << ' ' << s.name << '=' << s.mean_size;
    }
    return {ok, os.str()};
}

// ---------------------------------------------------------------------------
// 10: shortcut scaling and the enumeration budget

PValuePanel scaling_panel(std::size_t m, std::size_t K, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::vector<std::uint64_t> num(m * K);
    for (auto& v : num) v = 1 + rng() % 201;
    return PValuePanel(m, CalibrationMode::full, std::vector<std::uint64_t>(K, 201), std::move(num));
}

double time_shortcut(const PValuePanel& panel, int inner)
{
    double best = std::numeric_limits<double>::infinity();
    std::size_t sink = 0;
    for (int round = 0; round < 7; ++round) {
        const auto start = std::chrono::steady_clock::now();
        for (int i = 0; i < inner; ++i) {
            const auto b = simes_shortcut_bounds(panel, 0.1);
            sink += b.is_empty ? 0 : b.per_class[0].upper;
        }
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
        best = std::min(best, dt.count());
    }
    if (sink == std::numeric_limits<std::size_t>::max()) std::cerr << "";
    return best;
}

int run_cli(const std::string& args)
{
    const std::string cmd = std::string(BATCHCP_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome criterion10()
{
    const auto p20 = scaling_panel(20, 10, 1);
    const auto p40 = scaling_panel(40, 10, 1);
    const double t20 = time_shortcut(p20, 400);
    const double t40 = time_shortcut(p40, 400);
    const double ratio = t40 / t20;

    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "batchcp_acceptance";
    fs::create_directories(dir);
    std::mt19937_64 rng(1010);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    {
        std::ofstream cal(dir / "cal.csv");
        cal << "label,score\n";
        for (int j = 0; j < 200; ++j) cal << j % 10 << ',' << u(rng) << '\n';
        std::ofstream test(dir / "test.csv");
        for (int k = 0; k < 10; ++k) test << (k ? "," : "") << 's' << k + 1;
        test << '\n';
        for (int i = 0; i < 40; ++i) {
            for (int k = 0; k < 10; ++k) test << (k ? "," : "") << u(rng);
            test << '\n';
        }
    }
    const std::string io_args = "--calibration " + (dir / "cal.csv").string() + " --test " + (dir / "test.csv").string();
    const int exact_code = run_cli("bounds --combiner simes --alpha 0.1 " + io_args);
    const int shortcut_code = run_cli("bounds --bounds-mode shortcut --combiner simes --alpha 0.1 " + io_args);
    fs::remove_all(dir);

    std::ostringstream os;
    os.precision(3);
    os << "shortcut time m=20 " << t20 * 1e3 / 400 << " ms, m=40 " << t40 * 1e3 / 400 << " ms, ratio " << ratio
       << " (bound 5); exact bounds at K=10, m=40 exit code " << exact_code << " (expected 3), shortcut exit code "
       << shortcut_code;
    return {ratio <= 5.0 && exact_code == 3 && shortcut_code == 0, os.str()};
}

} // namespace

int main()
{
    int failures = 0;
    auto report = [&](int id, const Outcome& o) {
        std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << ": " << o.detail << std::endl;
        failures += o.pass ? 0 : 1;
    };
    const auto start = std::chrono::steady_clock::now();
    const auto tally = run_brute_force();
    report(1, criterion1(tally));
    report(2, criterion2(tally));
    report(3, criterion3());
    report(4, criterion4());
    report(5, criterion5());
    report(6, criterion6());
    report(7, criterion7());
    report(8, criterion8());
    report(9, criterion9());
    report(10, criterion10());
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << " in "
              << fmt(dt.count(), 1) << " s" << std::endl;
    return failures == 0 ? 0 : 1;
}
