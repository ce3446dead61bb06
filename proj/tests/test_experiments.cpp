#include <gtest/gtest.h>

#include <cmath>

#include "moefn/experiments.hpp"
#include "moefn/parallel.hpp"

using namespace moefn;

TEST(CurveFit, OneTermExact) {
    const CurveFit f = fit_risk_curve({{10, 1.0}, {20, 0.25}, {40, 0.0625}}, CurveBasis::inverse_square);
    EXPECT_NEAR(f.a, 100.0, 1e-12);
    EXPECT_EQ(f.b, 0.0);
    EXPECT_LT(f.rss, 1e-24);
}

TEST(CurveFit, TwoTermExact) {
    std::vector<std::pair<double, double>> pts;
    for (double n : {10.0, 20.0, 40.0, 80.0}) {
        pts.emplace_back(n, 100.0 / (n * n) - 5.0 / n);
    }
    const CurveFit f = fit_risk_curve(pts, CurveBasis::inverse_square_and_linear);
    EXPECT_NEAR(f.a, 100.0, 1e-9 * 100.0);
    EXPECT_NEAR(f.b, -5.0, 1e-9 * 5.0);
}

TEST(CurveFit, SelfConsistentAtSweepScale) {
    RngStream rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const double a = 1e4 * rng.uniform();
        const double b = 40.0 * (rng.uniform() - 0.5);
        std::vector<std::pair<double, double>> pts;
        for (double n : {200.0, 400.0, 800.0, 1600.0}) {
            pts.emplace_back(n, a / (n * n) + b / n);
        }
        const CurveFit f = fit_risk_curve(pts, CurveBasis::inverse_square_and_linear);
        EXPECT_NEAR(f.a, a, 1e-9 * std::abs(a));
        EXPECT_NEAR(f.b, b, 1e-9 * std::abs(b));
    }
}

TEST(CurveFit, RankDeficientRejected) {
    EXPECT_THROW(fit_risk_curve({{10, 1.0}, {10, 2.0}}, CurveBasis::inverse_square_and_linear), ContractError);
    EXPECT_THROW(fit_risk_curve({{10, 1.0}}, CurveBasis::inverse_square_and_linear), ContractError);
    EXPECT_THROW(fit_risk_curve({{0, 1.0}, {1, 1.0}}, CurveBasis::inverse_square), ContractError);
}

TEST(LogLogSlope, PowerLaws) {
    EXPECT_NEAR(loglog_slope({{10, 3.0 / 100}, {20, 3.0 / 400}, {40, 3.0 / 1600}}), -2.0, 1e-12);
    EXPECT_NEAR(loglog_slope({{10, 0.5}, {100, 0.05}}), -1.0, 1e-12);
    EXPECT_THROW(loglog_slope({{10, 0.0}, {20, 1.0}}), ContractError);
}

TEST(CaseStudy, FormulaTerms) {
    const auto pts = case_study_1d(8.0, 1.0, 1.0, {100}, 4, RngStream(2));
    EXPECT_NEAR(pts[0].bias_term, 8.0 / 9.0, 1e-15);
    EXPECT_NEAR(pts[0].delta_variance, 8.0 / 8100.0, 1e-15);
}

TEST(CaseStudy, NoiselessIsExact) {
    const auto pts = case_study_1d(8.0, 0.0, 1.0, {10, 20}, 5, RngStream(3));
    for (const auto& p : pts) {
        EXPECT_NEAR(p.risk_mean, 0.0, 1e-20);
        EXPECT_EQ(p.bias_term, 0.0);
        EXPECT_EQ(p.delta_variance, 0.0);
    }
}

TEST(CaseStudy, RiskNeverBelowBayes) {
    const auto pts = case_study_1d(8.0, 1.0, 1.0, {20, 80}, 50, RngStream(4));
    for (const auto& p : pts) {
        EXPECT_GE(p.risk_mean, p.bias_term);
    }
}

TEST(SampleComplexity, ReproducibleAndThreadIndependent) {
    const BlockModelSpec spec = balanced_spec(4, 4, 40, 1.0, 8.0);
    set_thread_count(1);
    const SweepResult a = sample_complexity_sweep(spec, {40, 80}, 3, RngStream(5));
    set_thread_count(3);
    const SweepResult b = sample_complexity_sweep(spec, {40, 80}, 3, RngStream(5));
    set_thread_count(0);
    for (std::size_t g = 0; g < 2; ++g) {
        EXPECT_EQ(a.dense[g].trial_values, b.dense[g].trial_values);
        EXPECT_EQ(a.sparse[g].trial_values, b.sparse[g].trial_values);
        EXPECT_EQ(a.dense[g].mean, b.dense[g].mean);
    }
    EXPECT_TRUE(a.warnings.empty());
}

TEST(SampleComplexity, OrderingAndTrendAtSmallScale) {
    const BlockModelSpec spec = balanced_spec(8, 8, 80, 1.0, 8.0);
    const SweepResult r = sample_complexity_sweep(spec, {80, 160, 320, 640}, 20, RngStream(6));
    for (std::size_t g = 0; g < r.grid.size(); ++g) {
        EXPECT_LE(r.sparse[g].mean, r.dense[g].mean);
        EXPECT_GT(r.sparse[g].mean, 0.0);
        EXPECT_GT(r.dense[g].mean, 0.0);
        if (g > 0) {
            EXPECT_LE(r.dense[g].mean, r.dense[g - 1].mean + r.dense[g - 1].std_error);
            EXPECT_LE(r.sparse[g].mean, r.sparse[g - 1].mean + r.sparse[g - 1].std_error);
        }
    }
}

TEST(SampleComplexity, UnderdeterminedBlocksWarn) {
    const BlockModelSpec spec = balanced_spec(2, 20, 40, 1.0, 8.0);
    const SweepResult r = sample_complexity_sweep(spec, {12, 40}, 2, RngStream(7));
    ASSERT_EQ(r.warnings.size(), 2u);
    EXPECT_NE(r.warnings[0].find("n = 12"), std::string::npos);
    EXPECT_THROW(sample_complexity_sweep(spec, {40, 12}, 2, RngStream(7)), ContractError);
}

TEST(RobustnessSweep, MatchesBayesAtTrainingNoiseAndMonteCarlo) {
    const BlockModelSpec spec = balanced_spec(3, 6, 3, 0.5, 3.0);
    const auto pts = robustness_sweep(spec, {0.5, 1.0, 2.0}, {EstimatorKind::dense, EstimatorKind::sparse}, 100000,
                                      RngStream(8));
    ASSERT_EQ(pts.size(), 6u);
    EXPECT_NEAR(pts[0].closed_form, bayes_risk(spec, EstimatorKind::dense), 1e-12);
    EXPECT_NEAR(pts[1].closed_form, bayes_risk(spec, EstimatorKind::sparse), 1e-12);
    for (const auto& p : pts) {
        EXPECT_LE(p.monte_carlo.z_score(p.closed_form), 3.0);
        if (p.kind == EstimatorKind::sparse) {
            EXPECT_LE(p.closed_form, pts[&p - &pts[0] - 1].closed_form + 1e-12);
        }
    }
}

TEST(MisrouteSweep, SparseScalesWithEtaSquared) {
    const BlockModelSpec spec = balanced_spec(2, 4, 2, 1.0, 2.0);
    const auto pts = misroute_sweep(spec, 0, 1, {1.5, 3.0}, 50000, RngStream(9));
    ASSERT_EQ(pts.size(), 4u);
    EXPECT_EQ(pts[0].kind, EstimatorKind::sparse);
    const double base = misroute_risk(spec, 0, 1, 1.0, EstimatorKind::sparse);
    EXPECT_NEAR(pts[0].closed_form / base, 2.25, 1e-12);
    EXPECT_NEAR(pts[2].closed_form / base, 9.0, 1e-12);
    EXPECT_LE(pts[0].monte_carlo.z_score(pts[0].exact), 4.0);
    EXPECT_LE(pts[3].monte_carlo.z_score(pts[3].exact), 4.0);
}

TEST(MisrouteSweep, EtaAtMostOneSkipsSimulation) {
    const BlockModelSpec spec = balanced_spec(2, 4, 2, 1.0, 2.0);
    const auto pts = misroute_sweep(spec, 0, 1, {0.5}, 1000, RngStream(10));
    EXPECT_EQ(pts[0].monte_carlo.samples, 0u);
    EXPECT_FALSE(pts[0].warnings.empty());
    EXPECT_THROW(misroute_sweep(spec, 0, 1, {0.0}, 10, RngStream(10)), ContractError);
}
