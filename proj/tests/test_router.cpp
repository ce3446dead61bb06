#include <gtest/gtest.h>

#include <cmath>

#include "moefn/router.hpp"
#include "support/random_specs.hpp"

using namespace moefn;

namespace {

QdaRouter hand_router(QdaMode mode) {
    QdaRouter r;
    r.mode = mode;
    r.offsets = {0, 1};
    r.dims = {1, 1};
    for (int i = 0; i < 2; ++i) {
        r.covariances.push_back(Matrix::Constant(1, 1, 10.0));
        r.inverses.push_back(Matrix::Constant(1, 1, 0.1));
        r.log_dets.push_back(std::log(10.0));
    }
    r.noise_variance = 1.0;
    return r;
}

BlockModelSpec separated_spec(std::size_t k, Eigen::Index di, double ratio) {
    return balanced_spec(k, static_cast<Eigen::Index>(k) * di, static_cast<Eigen::Index>(k) * 2, 1.0, ratio);
}

}  // namespace

TEST(FitQda, CovarianceConvergesToSignalPlusNoise) {
    BlockModelSpec spec = balanced_spec(2, 6, 40000, 1.0, 4.0);
    RngStream rng(1);
    const QdaRouter r = fit_qda(generate_design(spec, rng));
    for (const Matrix& c : r.covariances) {
        EXPECT_LT((c - 5.0 * Matrix::Identity(3, 3)).norm() / (5.0 * std::sqrt(3.0)), 0.05);
    }
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_LT((r.inverses[i] * r.covariances[i] - Matrix::Identity(3, 3)).norm(), 1e-6);
    }
}

TEST(FitQda, SingleSampleScalar) {
    Dataset ds;
    ds.x = Matrix::Constant(1, 1, 0.0);
    ds.xbar = Matrix::Constant(1, 1, -3.0);
    ds.noise = ds.xbar;
    ds.y = Vector::Zero(1);
    ds.row_expert = {0};
    ds.feature_offsets = {0};
    ds.feature_dims = {1};
    const QdaRouter r = fit_qda(ds);
    EXPECT_DOUBLE_EQ(r.covariances[0](0, 0), 9.0);
}

TEST(FitQda, NoiseVarianceEstimate) {
    const BlockModelSpec spec = balanced_spec(4, 100, 2000, 1.0, 3.0);
    RngStream rng(2);
    const QdaRouter r = fit_qda(generate_design(spec, rng));
    EXPECT_GE(r.noise_variance, 0.95);
    EXPECT_LE(r.noise_variance, 1.05);
}

TEST(FitQda, SingularCovarianceIsRidged) {
    BlockModelSpec spec = balanced_spec(2, 8, 4, 0.0, 1.0);
    RngStream rng(3);
    const QdaRouter r = fit_qda(generate_design(spec, rng));
    EXPECT_EQ(r.ridged, (std::vector<std::size_t>{0, 1}));
    for (const Matrix& inv : r.inverses) {
        EXPECT_TRUE(inv.allFinite());
    }
}

TEST(QdaScores, FullLikelihoodHandExample) {
    const Vector x{{3.0, 0.1}};
    const Vector s = qda_scores(hand_router(QdaMode::full_likelihood), x);
    EXPECT_NEAR(s(0), -0.5 * std::log(10.0) - 9.0 / 20.0 + 9.0 / 2.0, 1e-14);
    EXPECT_NEAR(s(1), -0.5 * std::log(10.0) - 0.0005 + 0.005, 1e-14);
    EXPECT_EQ(route(hand_router(QdaMode::full_likelihood), x), 0u);
}

TEST(QdaScores, LiteralHandExample) {
    const Vector x{{3.0, 0.1}};
    const Vector s = qda_scores(hand_router(QdaMode::literal), x);
    EXPECT_NEAR(s(0), -0.5 * std::log(10.0) - 0.45, 1e-14);
    EXPECT_NEAR(s(1), -0.5 * std::log(10.0) - 0.0005, 1e-14);
    EXPECT_EQ(route(hand_router(QdaMode::literal), x), 1u);
}

TEST(QdaScores, ZeroInputAndTies) {
    const Vector s = qda_scores(hand_router(QdaMode::literal), Vector::Zero(2));
    EXPECT_DOUBLE_EQ(s(0), -0.5 * std::log(10.0));
    EXPECT_DOUBLE_EQ(s(1), s(0));
    EXPECT_EQ(route(hand_router(QdaMode::literal), Vector::Zero(2)), 0u);
}

TEST(QdaScores, ArgmaxUnchangedByConstantShift) {
    RngStream rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const Vector s = gaussian_matrix(5, 1, 1.0, rng).col(0);
        EXPECT_EQ(argmax(s), argmax((s.array() + 123.4).matrix()));
    }
}

TEST(QdaScores, FullLikelihoodIgnoresSharedNoiseCoordinates) {
    const BlockModelSpec spec = balanced_spec(3, 6, 60, 1.0, 5.0);
    RngStream rng(5);
    const Dataset ds = generate_design(spec, rng);
    const QdaRouter r = fit_qda(ds, QdaMode::full_likelihood, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const Vector x = gaussian_matrix(6, 1, 2.0, rng).col(0);
        Vector extended(9);
        extended << x, gaussian_matrix(3, 1, 1.0, rng).col(0);
        const Vector a = qda_scores(r, x);
        const Vector b = qda_scores(r, extended);
        for (Eigen::Index i = 1; i < 3; ++i) {
            EXPECT_NEAR(a(i) - a(0), b(i) - b(0), 1e-9);
        }
    }
}

TEST(FitQda, PermutationEquivariant) {
    const BlockModelSpec spec = balanced_spec(3, 6, 30, 1.0, 2.0);
    RngStream rng(6);
    const Dataset ds = generate_design(spec, rng);
    const std::vector<std::size_t> perm{2, 0, 1};
    Dataset permuted = ds;
    for (auto& z : permuted.row_expert) {
        z = perm[z];
    }
    for (std::size_t i = 0; i < 3; ++i) {
        permuted.feature_offsets[perm[i]] = ds.feature_offsets[i];
        permuted.feature_dims[perm[i]] = ds.feature_dims[i];
    }
    const QdaRouter a = fit_qda(ds);
    const QdaRouter b = fit_qda(permuted);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_LT((a.covariances[i] - b.covariances[perm[i]]).norm(), 1e-12);
    }
}

TEST(RouterSweep, NoiselessIsPerfect) {
    const BlockModelSpec spec = balanced_spec(3, 12, 6, 0.0, 1.0);
    const RouterSweepResult r =
        router_sweep(spec, {6, 12, 48}, 500, 3, QdaMode::full_likelihood, RngStream(7));
    for (const auto& p : r.points) {
        EXPECT_EQ(p.mean_error, 0.0);
    }
}

TEST(RouterSweep, ErrorTrendAndHighSeparation) {
    const BlockModelSpec spec = separated_spec(4, 10, 25.0);
    const RouterSweepResult r =
        router_sweep(spec, {40, 80, 200, 800}, 2000, 5, QdaMode::full_likelihood, RngStream(8));
    for (std::size_t g = 1; g < r.points.size(); ++g) {
        EXPECT_LE(r.points[g].mean_error, r.points[g - 1].mean_error + r.points[g - 1].std_error);
    }
    EXPECT_LE(r.points.back().mean_error, 0.01);
}

TEST(RouterSweep, ErrorFallsWithSeparation) {
    std::vector<double> errors;
    for (double ratio : {4.0, 25.0, 100.0}) {
        const BlockModelSpec spec = separated_spec(4, 4, ratio);
        errors.push_back(
            router_sweep(spec, {200}, 4000, 5, QdaMode::full_likelihood, RngStream(9)).points[0].mean_error);
    }
    EXPECT_GT(errors[0], errors[1]);
    EXPECT_GT(errors[1], errors[2]);
}

TEST(RouterSweep, RejectsTinyClassesAndBadGrid) {
    const BlockModelSpec spec = separated_spec(4, 2, 4.0);
    EXPECT_THROW(router_sweep(spec, {4}, 10, 1, QdaMode::literal, RngStream(1)), ContractError);
    EXPECT_THROW(router_sweep(spec, {40, 20}, 10, 1, QdaMode::literal, RngStream(1)), ContractError);
}

TEST(StratifiedCounts, SumsToTotal) {
    const auto c = stratified_counts({0.5, 0.3, 0.2}, 11);
    EXPECT_EQ(c, (std::vector<Eigen::Index>{6, 3, 2}));
    const auto even = stratified_counts({0.25, 0.25, 0.25, 0.25}, 800);
    EXPECT_EQ(even, (std::vector<Eigen::Index>{200, 200, 200, 200}));
}

TEST(OracleLabels, Examples) {
    EXPECT_EQ(oracle_labels(Matrix::Constant(3, 1, 2.0)), (std::vector<std::size_t>{0, 0, 0}));
    EXPECT_EQ(oracle_labels(Matrix::Constant(3, 2, 2.0)), (std::vector<std::size_t>{0, 0, 0}));
    // Expert 1 is exact on the first half, expert 2 on the second.
    const Vector y{{1.0, 2.0, 3.0, 4.0}};
    Matrix preds(4, 2);
    preds << 1.0, 0.0, 2.0, 0.0, 0.0, 3.0, 0.0, 4.0;
    EXPECT_EQ(oracle_labels(squared_error_losses(preds, y)), (std::vector<std::size_t>{0, 0, 1, 1}));
}

TEST(Logistic, SeparableToyReachesFullAccuracy) {
    RngStream rng(10);
    Matrix x(40, 2);
    std::vector<std::size_t> labels(40);
    for (int i = 0; i < 40; ++i) {
        labels[i] = i % 2;
        x(i, 0) = (i % 2 ? 2.0 : -2.0) + 0.5 * rng.normal();
        x(i, 1) = rng.normal();
    }
    const LogisticRouter r = fit_logistic_router(x, labels, 2);
    for (int i = 0; i < 40; ++i) {
        EXPECT_EQ(r.predict(x.row(i).transpose()), labels[i]);
    }
    for (std::size_t e = 1; e < r.objective_history.size(); ++e) {
        EXPECT_LE(r.objective_history[e], r.objective_history[e - 1]);
    }
    EXPECT_NEAR(r.probabilities(x.row(0).transpose()).sum(), 1.0, 1e-12);
}

TEST(Logistic, StrongRidgeShrinksWeights) {
    RngStream rng(11);
    const Matrix x = gaussian_matrix(50, 3, 1.0, rng);
    std::vector<std::size_t> labels(50);
    for (int i = 0; i < 50; ++i) {
        labels[i] = x(i, 0) > 0 ? 1 : 0;
    }
    LogisticOptions opt;
    opt.l2 = 1e6;
    EXPECT_LT(fit_logistic_router(x, labels, 2, opt).weights.norm(), 1e-2);
}

TEST(Logistic, LabelPermutationPermutesRows) {
    RngStream rng(12);
    const Matrix x = gaussian_matrix(60, 3, 1.0, rng);
    std::vector<std::size_t> labels(60);
    for (int i = 0; i < 60; ++i) {
        labels[i] = x(i, 0) > 0.5 ? 2 : (x(i, 1) > 0 ? 1 : 0);
    }
    const std::vector<std::size_t> perm{1, 2, 0};
    std::vector<std::size_t> permuted(60);
    for (int i = 0; i < 60; ++i) {
        permuted[i] = perm[labels[i]];
    }
    LogisticOptions opt;
    opt.l2 = 0.01;
    opt.epochs = 200;
    const LogisticRouter a = fit_logistic_router(x, labels, 3, opt);
    const LogisticRouter b = fit_logistic_router(x, permuted, 3, opt);
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_LT((a.weights.row(static_cast<Eigen::Index>(c)) - b.weights.row(static_cast<Eigen::Index>(perm[c]))).norm(),
                  1e-9);
    }
}

TEST(Logistic, L1ProducesExactZeros) {
    RngStream rng(13);
    const Matrix x = gaussian_matrix(200, 6, 1.0, rng);
    std::vector<std::size_t> labels(200);
    for (int i = 0; i < 200; ++i) {
        labels[i] = x(i, 0) > 0 ? 1 : 0;
    }
    LogisticOptions opt;
    opt.l1 = 0.05;
    const LogisticRouter r = fit_logistic_router(x, labels, 2, opt);
    EXPECT_GT((r.weights.array() == 0.0).count(), 4);
    EXPECT_NE(r.weights(1, 0), 0.0);
}

TEST(TopK, OrderingAndTies) {
    LogisticRouter r;
    r.weights = Matrix::Zero(3, 1);
    r.bias = Vector{{std::log(0.5), std::log(0.3), std::log(0.2)}};
    const Vector x = Vector::Zero(1);
    EXPECT_EQ(topk_route(r, x, 2), (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(topk_route(r, x, 1), (std::vector<std::size_t>{0}));
    EXPECT_EQ(topk_route(r, x, 3), (std::vector<std::size_t>{0, 1, 2}));
    r.bias.setZero();
    EXPECT_EQ(topk_route(r, x, 3), (std::vector<std::size_t>{0, 1, 2}));
    EXPECT_THROW(topk_route(r, x, 4), ContractError);
}
