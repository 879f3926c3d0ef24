// Command-line front end: pvalues, set, bounds, calibrate, simulate, coverage.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "batchcp/batchcp.hpp"

namespace {

using namespace batchcp;
using io::json;

constexpr int kExitInput = 2;
constexpr int kExitBudget = 3;

struct Common {
    std::string calibration;
    std::string test;
    std::string mode = "iid";
    std::string combiner = "simes";
    std::optional<double> alpha;
    double lambda = 0.5;
    std::optional<std::size_t> ell;
    std::string bounds_mode = "exact";
    std::string table;
    std::uint64_t budget = kDefaultBudget;
    std::uint64_t seed = 1;
    std::size_t reps = 1000;
    std::string out;
    std::string format = "json";
    bool prefilter = false;
    bool no_members = false;
};

void emit(const std::string& path, const std::string& text)
{
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot write '" + path + "'");
    f << text;
}

PValuePanel load_panel(const Common& c)
{
    if (c.calibration.empty() || c.test.empty()) throw InputError("--calibration and --test are required");
    const auto scores = io::read_test_csv(c.test);
    const auto cal = io::read_calibration_csv(c.calibration, parse_mode(c.mode), scores.K());
    return conformal_pvalues(cal, scores);
}

struct Resolved {
    CombinerSpec combiner;
    BatchRule rule;
    std::optional<double> alpha;
};

Resolved resolve_rule(const Common& c, const PValuePanel& panel)
{
    auto spec = parse_combiner(c.combiner, c.lambda, c.ell);
    if (!c.table.empty() && c.alpha) throw InputError("give either --alpha or --table, not both");
    if (!c.table.empty()) {
        auto table = io::read_table(c.table);
        check_table_matches(table, panel);
        return {std::move(spec), BatchRule(std::move(table)), std::nullopt};
    }
    if (needs_empirical_threshold(spec)) {
        throw InputError("combiner '" + c.combiner + "' needs an empirical threshold table (--table); run `calibrate` first");
    }
    if (!c.alpha) throw InputError("--alpha is required without --table");
    if (!(*c.alpha > 0.0 && *c.alpha < 1.0)) throw InputError("--alpha must lie in (0,1)");
    return {std::move(spec), BatchRule(AlphaRule{*c.alpha}), c.alpha};
}

json provenance(const Common& c, const PValuePanel& panel, const BatchRule& rule)
{
    json p = {{"calibration", c.calibration},
              {"test", c.test},
              {"denominators", panel.denominators()},
              {"budget", c.budget},
              {"prefilter", c.prefilter}};
    if (const auto* t = std::get_if<ThresholdTable>(&rule)) {
        p["table"] = {{"path", c.table}, {"B", t->B}, {"seed", t->seed}, {"generator", t->generator},
                      {"alpha", t->alpha}, {"combiner", t->combiner}};
    }
    return p;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

int cmd_pvalues(const Common& c)
{
    const auto panel = load_panel(c);
    if (c.format == "csv") {
        std::ostringstream os;
        io::write_pvalues_csv(os, panel);
        emit(c.out, os.str());
    } else {
        emit(c.out, dump(io::to_json(panel)));
    }
    return 0;
}

int cmd_set(const Common& c, bool bounds_only)
{
    const auto panel = load_panel(c);
    auto [spec, rule, alpha] = resolve_rule(c, panel);

    io::SetReport report;
    report.m = panel.m();
    report.K = panel.K();
    report.mode = panel.mode();
    report.combiner = to_string(spec);
    report.rule = describe(rule);
    report.alpha = alpha;
    report.provenance = provenance(c, panel, rule);

    const bool shortcut = bounds_only && c.bounds_mode == "shortcut";
    if (c.bounds_mode != "exact" && c.bounds_mode != "shortcut") throw InputError("--bounds-mode must be exact|shortcut");
    if (shortcut) {
        report.bounds_mode = "shortcut";
        report.bounds = shortcut_bounds(panel, spec, rule);
        // Bonferroni per-item sets contain every Simes or Bonferroni member
        const bool simes_like = std::holds_alternative<Simes>(spec) || std::holds_alternative<Bonferroni>(spec);
        if (simes_like && alpha) {
            IndividualSets ind{bonferroni_prefilter(panel, *alpha), report.bounds.is_empty};
            if (!report.bounds.is_empty && candidate_count(ind.sets) <= c.budget) {
                const auto filtered = conservative_set_filter(report.bounds, ind.sets, c.budget);
                report.provenance["filtered_set_size"] = filtered.size();
            }
            report.individual = std::move(ind);
        }
    } else {
        auto set = enumerate_set(panel, spec, rule, {c.prefilter, c.budget});
        report.bounds = class_count_bounds(set);
        report.individual = individual_sets(set);
        report.set = std::move(set);
    }
    if (!report.bounds.is_empty) report.reconstructed_cardinality = reconstruct_cardinality(report.bounds);
    emit(c.out, dump(io::to_json(report, !bounds_only && !c.no_members)));
    return 0;
}

struct CalibrateArgs {
    std::vector<std::size_t> class_sizes;
    std::size_t m = 0;
    std::size_t B = 1999;
    std::uint64_t table_budget = 1'000'000;
};

int cmd_calibrate(const Common& c, const CalibrateArgs& a)
{
    if (!c.alpha) throw InputError("--alpha is required");
    const auto mode = parse_mode(c.mode);
    const auto spec = parse_combiner(c.combiner, c.lambda, c.ell);
    const auto table = build_table(mode, a.class_sizes, a.m, spec, *c.alpha, a.B, c.seed, a.table_budget);
    emit(c.out, dump(io::to_json(table)));
    return 0;
}

struct SimulateArgs {
    std::vector<double> snr{1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5};
    std::size_t n_per_class = 400;
    std::size_t m_per_class = 2;
    std::size_t B = 1999;
};

int cmd_simulate(const Common& c, const SimulateArgs& a)
{
    const double alpha = c.alpha.value_or(0.1);
    std::vector<ExperimentReport> reports;
    for (double snr : a.snr) {
        GaussianConfig cfg{snr, a.n_per_class, a.m_per_class, c.seed, c.reps};
        auto methods = default_methods();
        for (auto& meth : methods) {
            if (meth.name == "storey-simes") meth.combiner = AdaptiveSimes{StoreyM0{c.lambda}};
            if (meth.name == "median-simes" && c.ell) meth.combiner = AdaptiveSimes{QuantileM0{c.ell}};
        }
        reports.push_back(run_size_experiment(cfg, std::move(methods), alpha, a.B, c.budget));
    }
    std::ostringstream os;
    if (c.format == "table") {
        io::write_report_table(os, reports);
    } else if (c.format == "csv") {
        io::write_report_plot_csv(os, reports);
    } else {
        json arr = json::array();
        for (const auto& r : reports) arr.push_back(io::to_json(r));
        os << arr.dump(2) << '\n';
    }
    emit(c.out, os.str());
    return 0;
}

struct CoverageArgs {
    std::vector<std::size_t> class_sizes;
    std::vector<std::size_t> composition;
    std::size_t B = 1999;
    bool empirical = false;
    std::size_t refresh = 0;
};

int cmd_coverage(const Common& c, const CoverageArgs& a)
{
    CoverageConfig cfg;
    cfg.mode = parse_mode(c.mode);
    cfg.class_sizes = a.class_sizes;
    cfg.composition = a.composition;
    cfg.combiner = parse_combiner(c.combiner, c.lambda, c.ell);
    cfg.empirical = a.empirical || needs_empirical_threshold(cfg.combiner);
    cfg.alpha = c.alpha.value_or(0.1);
    cfg.replications = c.reps;
    cfg.B = a.B;
    cfg.seed = c.seed;
    cfg.threshold_refresh = a.refresh;
    const auto res = run_coverage_experiment(cfg);
    const double nc = res.non_coverage();
    const double se = std::sqrt(cfg.alpha * (1 - cfg.alpha) / static_cast<double>(std::max<std::size_t>(res.replications, 1)));
    if (c.format == "table") {
        std::ostringstream os;
        os << "combiner " << to_string(cfg.combiner) << "  mode " << to_string(cfg.mode) << "  alpha " << cfg.alpha
           << "  reps " << res.replications << "  non-coverage " << nc << "  (alpha + 3se = " << cfg.alpha + 3 * se
           << ")\n";
        emit(c.out, os.str());
    } else {
        json j = {{"combiner", to_string(cfg.combiner)},
                  {"mode", to_string(cfg.mode)},
                  {"class_sizes", cfg.class_sizes},
                  {"composition", cfg.composition},
                  {"alpha", cfg.alpha},
                  {"replications", res.replications},
                  {"misses", res.misses},
                  {"non_coverage", nc},
                  {"mc_standard_error", se},
                  {"empirical", cfg.empirical},
                  {"B", cfg.empirical ? json(cfg.B) : json(nullptr)},
                  {"threshold", res.threshold ? io::threshold_to_json(*res.threshold) : json(nullptr)},
                  {"thresholds_drawn", res.thresholds_drawn},
                  {"seed", cfg.seed},
                  {"generator", kGeneratorName}};
        emit(c.out, dump(j));
    }
    return 0;
}

void add_panel_options(CLI::App* sub, Common& c)
{
    sub->add_option("--calibration", c.calibration, "calibration CSV (label,score)")->required();
    sub->add_option("--test", c.test, "test CSV (s1,...,sK)")->required();
    sub->add_option("--mode", c.mode, "iid | conditional")->check(CLI::IsMember({"iid", "conditional"}));
}

void add_rule_options(CLI::App* sub, Common& c)
{
    sub->add_option("--combiner", c.combiner,
                    "bonferroni | simes | storey-simes:<lambda> | quantile-simes:<ell> | oracle-simes | fisher | min-simes");
    sub->add_option("--alpha", c.alpha, "level alpha in (0,1)");
    sub->add_option("--lambda", c.lambda, "default Storey lambda");
    sub->add_option("--ell", c.ell, "default quantile index (ceil(m/2) when unset)");
    sub->add_option("--table", c.table, "threshold table JSON from `calibrate`");
    sub->add_option("--budget", c.budget, "maximum number of enumerated candidates");
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Batch conformal prediction sets, count bounds and calibrated thresholds"};
    app.require_subcommand(1);
    Common c;
    CalibrateArgs cal_args;
    SimulateArgs sim_args;
    CoverageArgs cov_args;

    auto* pv = app.add_subcommand("pvalues", "conformal p-value grid with exact numerators/denominators");
    add_panel_options(pv, c);

    auto* set = app.add_subcommand("set", "enumerate the batch prediction set");
    add_panel_options(set, c);
    add_rule_options(set, c);
    set->add_flag("--prefilter", c.prefilter, "restrict Bonferroni/Simes enumeration to Bonferroni survivors");
    set->add_flag("--no-members", c.no_members, "omit the member list");

    auto* bounds = app.add_subcommand("bounds", "per-class count bounds");
    add_panel_options(bounds, c);
    add_rule_options(bounds, c);
    bounds->add_option("--bounds-mode", c.bounds_mode, "exact | shortcut")->check(CLI::IsMember({"exact", "shortcut"}));
    bounds->add_flag("--prefilter", c.prefilter, "restrict exact Bonferroni/Simes enumeration to Bonferroni survivors");

    auto* calib = app.add_subcommand("calibrate", "Monte-Carlo empirical threshold table");
    calib->add_option("--mode", c.mode, "iid | conditional")->check(CLI::IsMember({"iid", "conditional"}));
    calib->add_option("--class-sizes", cal_args.class_sizes, "n (iid) or n_1 ... n_K (conditional)")->required()->delimiter(',');
    calib->add_option("--m", cal_args.m, "batch size")->required();
    calib->add_option("--combiner", c.combiner, "combining function");
    calib->add_option("--alpha", c.alpha, "level alpha in (0,1)")->required();
    calib->add_option("--lambda", c.lambda, "default Storey lambda");
    calib->add_option("--ell", c.ell, "default quantile index");
    calib->add_option("--B", cal_args.B, "Monte-Carlo iterations per composition");
    calib->add_option("--seed", c.seed, "master seed");
    calib->add_option("--budget", cal_args.table_budget, "maximum number of compositions");

    auto* sim = app.add_subcommand("simulate", "Gaussian three-class set-size experiment");
    sim->add_option("--snr", sim_args.snr, "signal-to-noise ratios")->delimiter(',');
    sim->add_option("--n-per-class", sim_args.n_per_class, "calibration examples per class");
    sim->add_option("--m-per-class", sim_args.m_per_class, "test items per class");
    sim->add_option("--alpha", c.alpha, "level (default 0.1)");
    sim->add_option("--lambda", c.lambda, "Storey lambda");
    sim->add_option("--ell", c.ell, "median-Simes quantile index");
    sim->add_option("--B", sim_args.B, "Monte-Carlo iterations for the Fisher table");
    sim->add_option("--reps", c.reps, "replications per SNR");
    sim->add_option("--seed", c.seed, "master seed");
    sim->add_option("--budget", c.budget, "enumeration budget");

    auto* cov = app.add_subcommand("coverage", "distribution-free coverage study with uniform scores");
    cov->add_option("--mode", c.mode, "iid | conditional")->check(CLI::IsMember({"iid", "conditional"}));
    cov->add_option("--class-sizes", cov_args.class_sizes, "n (iid) or n_1 ... n_K")->required()->delimiter(',');
    cov->add_option("--composition", cov_args.composition, "m (iid) or m_1 ... m_K")->required()->delimiter(',');
    cov->add_option("--combiner", c.combiner, "combining function");
    cov->add_option("--alpha", c.alpha, "level (default 0.1)");
    cov->add_option("--lambda", c.lambda, "default Storey lambda");
    cov->add_option("--ell", c.ell, "default quantile index");
    cov->add_option("--B", cov_args.B, "Monte-Carlo iterations for empirical thresholds");
    cov->add_flag("--empirical", cov_args.empirical, "use a calibrated threshold instead of alpha");
    cov->add_option("--threshold-refresh", cov_args.refresh,
                    "redraw the empirical threshold every N replications (0: once)");
    cov->add_option("--reps", c.reps, "replications");
    cov->add_option("--seed", c.seed, "master seed");

    for (auto* sub : {pv, set, bounds, calib, sim, cov}) {
        sub->add_option("--out", c.out, "output path (default stdout)");
    }
    pv->add_option("--format", c.format, "json | csv")->check(CLI::IsMember({"json", "csv"}));
    for (auto* sub : {set, bounds, calib}) {
        sub->add_option("--format", c.format, "json")->check(CLI::IsMember({"json"}));
    }
    sim->add_option("--format", c.format, "json | csv | table")->check(CLI::IsMember({"json", "csv", "table"}));
    cov->add_option("--format", c.format, "json | table")->check(CLI::IsMember({"json", "table"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInput;
    }

    try {
        if (pv->parsed()) return cmd_pvalues(c);
        if (set->parsed()) return cmd_set(c, false);
        if (bounds->parsed()) return cmd_set(c, true);
        if (calib->parsed()) return cmd_calibrate(c, cal_args);
        if (sim->parsed()) return cmd_simulate(c, sim_args);
        if (cov->parsed()) return cmd_coverage(c, cov_args);
    } catch (const BudgetExceeded& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitBudget;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const Unsupported& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    }
    return kExitInput;
}
