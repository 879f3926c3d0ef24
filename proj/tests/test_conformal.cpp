#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"

using namespace batchcp;

TEST(Calibration, TalliesClassCounts)
{
    const auto cal = build_calibration({{0, 0.3}, {1, 0.7}}, CalibrationMode::full);
    EXPECT_EQ(cal.size(), 2u);
    EXPECT_EQ(cal.class_counts(), (std::vector<std::size_t>{1, 1}));
}

TEST(Calibration, EmptyIsAnError)
{
    try {
        build_calibration({}, CalibrationMode::full);
        FAIL() << "no exception";
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("empty calibration"), std::string::npos);
    }
}

TEST(Calibration, FourHundredPerClass)
{
    std::vector<CalibrationEntry> entries;
    for (int k = 0; k < 3; ++k) {
        for (int j = 0; j < 400; ++j) entries.push_back({k, j / 400.0});
    }
    const auto cal = build_calibration(entries, CalibrationMode::class_conditional);
    EXPECT_EQ(cal.size(), 1200u);
    EXPECT_EQ(cal.class_counts(), (std::vector<std::size_t>{400, 400, 400}));
}

TEST(Calibration, RejectsBadInput)
{
    EXPECT_THROW(build_calibration({{-1, 0.5}}, CalibrationMode::full), InputError);
    EXPECT_THROW(build_calibration({{0, std::nan("")}}, CalibrationMode::full), InputError);
    EXPECT_THROW(build_calibration({{0, std::numeric_limits<double>::infinity()}}, CalibrationMode::full), InputError);
    EXPECT_THROW(build_calibration({{3, 0.5}}, CalibrationMode::full, 2), InputError);
}

TEST(PValues, RankCountExample)
{
    const auto cal = build_calibration({{0, 0.9}, {0, 0.7}, {1, 0.5}, {1, 0.3}}, CalibrationMode::full);
    const auto p = conformal_pvalues(cal, ScorePanel(1, 2, {0.6, 0.6}));
    EXPECT_EQ(p(0, 0).num, 3u);
    EXPECT_EQ(p(0, 0).den, 5u);
}

TEST(PValues, ExtremeScores)
{
    const auto cal = build_calibration({{0, 0.9}, {0, 0.7}, {1, 0.5}, {1, 0.3}}, CalibrationMode::full);
    const auto p = conformal_pvalues(cal, ScorePanel(1, 2, {2.0, -1.0}));
    EXPECT_EQ(p(0, 0), (PValue{1, 5}));
    EXPECT_EQ(p(0, 1), (PValue{5, 5}));
}

TEST(PValues, TiesCountAsAtLeast)
{
    const auto cal = build_calibration({{0, 0.5}, {0, 0.5}, {0, 0.2}}, CalibrationMode::full);
    const auto p = conformal_pvalues(cal, ScorePanel(1, 2, {0.5, 0.2}));
    EXPECT_EQ(p(0, 0), (PValue{3, 4}));
    EXPECT_EQ(p(0, 1), (PValue{4, 4}));
}

TEST(PValues, ConditionalUsesClassOnly)
{
    const auto cal = build_calibration({{0, 0.9}, {0, 0.1}, {1, 0.8}, {1, 0.7}, {1, 0.6}}, CalibrationMode::class_conditional);
    const auto p = conformal_pvalues(cal, ScorePanel(1, 2, {0.5, 0.65}));
    EXPECT_EQ(p(0, 0), (PValue{2, 3}));
    EXPECT_EQ(p(0, 1), (PValue{3, 4}));
    EXPECT_EQ(p.denominators(), (std::vector<std::uint64_t>{3, 4}));
}

TEST(PValues, ConditionalEmptyClassIsAnError)
{
    const auto cal = build_calibration({{0, 0.9}, {0, 0.1}}, CalibrationMode::class_conditional, 2);
    EXPECT_THROW(conformal_pvalues(cal, ScorePanel(1, 2, {0.5, 0.5})), InputError);
}

TEST(PValues, ScorePanelValidation)
{
    EXPECT_THROW(ScorePanel(1, 2, {0.5, std::nan("")}), InputError);
    EXPECT_THROW(ScorePanel(1, 2, {0.5}), InputError);
    EXPECT_THROW(ScorePanel(0, 2, {}), InputError);
}

TEST(PValues, MatchDirectCountOnRandomInstances)
{
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 300; ++rep) {
        const bool cond = rep % 2 == 1;
        const auto inst = testutil::random_instance(rng, 1 + rep % 5, 2 + rep % 3, cond);
        const auto panel = testutil::library_panel(inst);
        const auto ref = oracle::pvalues(inst);
        for (std::size_t i = 0; i < inst.m; ++i) {
            for (std::size_t k = 0; k < inst.K; ++k) {
                const auto v = panel(i, k);
                ASSERT_EQ(oracle::Rational(v.num, v.den), ref[i][k]);
                // grid property
                ASSERT_GE(v.num, 1u);
                ASSERT_LE(v.num, v.den);
            }
        }
    }
}

TEST(PValues, NonincreasingInTestScore)
{
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<CalibrationEntry> entries;
    for (int j = 0; j < 50; ++j) entries.push_back({j % 2, u(rng)});
    const auto cal = build_calibration(entries, CalibrationMode::full);
    std::vector<double> grid;
    for (int j = 0; j <= 100; ++j) grid.push_back(j / 100.0);
    std::vector<double> flat;
    for (double s : grid) flat.insert(flat.end(), {s, s});
    const auto p = conformal_pvalues(cal, ScorePanel(grid.size(), 2, flat));
    for (std::size_t i = 1; i < grid.size(); ++i) EXPECT_LE(p(i, 0), p(i - 1, 0));
}

TEST(PValues, MarginallySuperUniform)
{
    const std::size_t reps = 50000;
    const std::size_t n = 19;
    for (double u : {0.05, 0.1, 0.25}) {
        std::size_t hits = 0;
        for (std::size_t r = 0; r < reps; ++r) {
            Engine eng(derive_seed(77, {r}));
            std::vector<CalibrationEntry> entries;
            for (std::size_t j = 0; j < n; ++j) entries.push_back({0, uniform01(eng)});
            const auto cal = build_calibration(entries, CalibrationMode::full, 2);
            const auto p = conformal_pvalues(cal, ScorePanel(1, 2, {uniform01(eng), 0.5}));
            hits += p(0, 0).value() <= u ? 1 : 0;
        }
        const double freq = static_cast<double>(hits) / reps;
        EXPECT_LE(freq, u + 3.0 * std::sqrt(u * (1 - u) / reps)) << "u=" << u;
    }
}

TEST(Random, SeedDerivationIsDeterministicAndKeyed)
{
    EXPECT_EQ(derive_seed(1, {2, 3}), derive_seed(1, {2, 3}));
    EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
    EXPECT_NE(derive_seed(1, {2}), derive_seed(2, {2}));
    Engine a(derive_seed(9, {1}));
    for (int j = 0; j < 1000; ++j) {
        const double v = uniform01(a);
        ASSERT_GE(v, 0.0);
        ASSERT_LT(v, 1.0);
    }
}
