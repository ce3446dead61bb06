#include <gtest/gtest.h>

#include "moefn/blockmodel.hpp"
#include "support/random_specs.hpp"

using namespace moefn;

namespace {

BlockModelSpec two_scalar_blocks(double sigma2, Eigen::Index rows) {
    BlockModelSpec spec = balanced_spec(2, 2, 2 * rows, sigma2, 1.0);
    spec.beta_star << 1.5, -2.0;
    return spec;
}

}  // namespace

TEST(Spec, ValidationListsEveryProblem) {
    BlockModelSpec spec = balanced_spec(2, 4, 4, 1.0, 1.0);
    spec.sigma2 = -1.0;
    spec.expert_probs = {0.5, 0.4};
    spec.covariances[1](0, 1) = 3.0;
    const auto problems = spec_problems(spec);
    ASSERT_EQ(problems.size(), 3u);
    EXPECT_NE(problems[0].find("sigma2"), std::string::npos);
    EXPECT_NE(problems[1].find("covariances[1]"), std::string::npos);
    EXPECT_NE(problems[2].find("simplex"), std::string::npos);
    EXPECT_THROW(validate(spec), SpecError);
}

TEST(Spec, RejectsIndefiniteCovariance) {
    BlockModelSpec spec = balanced_spec(1, 2, 2, 1.0, 1.0);
    spec.covariances[0] << 1.0, 2.0, 2.0, 1.0;
    ASSERT_EQ(spec_problems(spec).size(), 1u);
    EXPECT_NE(spec_problems(spec)[0].find("semi-definite"), std::string::npos);
}

TEST(GenerateDesign, NoiselessIsExact) {
    const BlockModelSpec spec = two_scalar_blocks(0.0, 2);
    RngStream rng(1);
    const Dataset ds = generate_design(spec, rng);
    EXPECT_EQ(ds.xbar, ds.x);
    EXPECT_EQ(ds.y, ds.x * spec.beta_star);
}

TEST(GenerateDesign, SupportPatternAndExactTargets) {
    RngStream rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        fixtures::RandomSpecOptions opt;
        opt.rows_per_block = 5;
        const BlockModelSpec spec = fixtures::random_spec(rng, opt);
        const Dataset ds = generate_design(spec, rng);
        for (Eigen::Index r = 0; r < ds.x.rows(); ++r) {
            const std::size_t z = ds.row_expert[static_cast<std::size_t>(r)];
            for (Eigen::Index c = 0; c < ds.x.cols(); ++c) {
                const bool inside = c >= spec.feature_offset(z) && c < spec.feature_offset(z) + spec.block_dims[z];
                if (!inside) {
                    EXPECT_EQ(ds.x(r, c), 0.0);
                }
            }
        }
        EXPECT_EQ((ds.y - ds.x * spec.beta_star).cwiseAbs().maxCoeff(), 0.0);
        EXPECT_LE((ds.xbar - ds.x - ds.noise).cwiseAbs().maxCoeff(), 1e-14 * std::max(1.0, ds.xbar.cwiseAbs().maxCoeff()));
    }
}

TEST(GenerateDesign, NoiseVariance) {
    const BlockModelSpec spec = balanced_spec(4, 400, 400, 1.0, 2.0);
    RngStream rng(3);
    const Dataset ds = generate_design(spec, rng);
    const double mean = ds.noise.mean();
    const double var = (ds.noise.array() - mean).square().mean();
    EXPECT_GE(var, 0.93);
    EXPECT_LE(var, 1.07);
}

TEST(FixedDesign, PrescribedSpectra) {
    BlockModelSpec spec = balanced_spec(2, 8, 4, 0.0, 1.0);
    RngStream rng(4);
    const Dataset ds = fixed_design(spec, {Vector{{3.0, 2.0}}, Vector{{1.5, 1.5}}}, rng);
    const Vector s0 = svd(ds.block_x(0)).singular_values;
    EXPECT_NEAR(s0(0), 3.0, 1e-10);
    EXPECT_NEAR(s0(1), 2.0, 1e-10);
    const Matrix x1 = ds.block_x(1);
    EXPECT_LT((x1 * x1.transpose() - 2.25 * Matrix::Identity(2, 2)).norm(), 1e-8);

    BlockModelSpec square = balanced_spec(1, 3, 3, 0.0, 1.0);
    const Dataset sq = fixed_design(square, {Vector{{5.0, 4.0, 3.0}}}, rng);
    EXPECT_LT((svd(sq.x).singular_values - Vector{{5.0, 4.0, 3.0}}).norm(), 1e-8);
    EXPECT_THROW(fixed_design(square, {Vector{{5.0, -4.0, 3.0}}}, rng), ContractError);
    EXPECT_THROW(fixed_design(square, {Vector{{5.0, 4.0}}}, rng), ContractError);
}

TEST(Population, CategoricalFrequencies) {
    BlockModelSpec spec = two_scalar_blocks(1.0, 1);
    spec.expert_probs = {1.0, 0.0};
    RngStream rng(5);
    const PopulationSample all_first = sample_population(spec, 200, rng);
    for (auto z : all_first.expert) {
        EXPECT_EQ(z, 0u);
    }
    spec.expert_probs = {0.5, 0.5};
    const PopulationSample s = sample_population(spec, 20000, rng);
    const double freq = static_cast<double>(std::count(s.expert.begin(), s.expert.end(), 0u)) / 20000.0;
    EXPECT_NEAR(freq, 0.5, 0.02);
}

TEST(Population, NoiselessAndSupport) {
    const BlockModelSpec spec = two_scalar_blocks(0.0, 1);
    RngStream rng(6);
    const PopulationSample s = sample_population(spec, 100, rng);
    EXPECT_EQ(s.xbar, s.x);
    for (std::size_t r = 0; r < s.size(); ++r) {
        EXPECT_EQ(s.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(1 - s.expert[r])), 0.0);
    }
}

TEST(Population, RestrictedCovarianceConverges) {
    BlockModelSpec spec = balanced_spec(2, 6, 2, 0.5, 1.0);
    RngStream crng(7);
    spec.covariances[0] = fixtures::covariance_with_spectrum(crng, Vector{{3.0, 1.0, 0.5}});
    spec.covariances[1] = fixtures::covariance_with_spectrum(crng, Vector{{2.0, 2.0, 0.2}});
    RngStream rng(8);
    const PopulationSample s = sample_population(spec, 100000, rng);
    for (std::size_t z = 0; z < 2; ++z) {
        Matrix acc = Matrix::Zero(3, 3);
        double count = 0.0;
        for (std::size_t r = 0; r < s.size(); ++r) {
            if (s.expert[r] == z) {
                const Vector x = s.x.row(static_cast<Eigen::Index>(r)).segment(spec.feature_offset(z), 3);
                acc += x * x.transpose();
                count += 1.0;
            }
        }
        acc /= count;
        EXPECT_LT((acc - spec.covariances[z]).norm() / spec.covariances[z].norm(), 0.05);
    }
}

TEST(Perturb, ReplacesNoiseOnly) {
    const BlockModelSpec spec = balanced_spec(2, 4, 2, 1.0, 2.0);
    RngStream rng(9);
    const PopulationSample s = sample_population(spec, 100000, rng);
    const PopulationSample clean = perturb_population(s, 0.0, rng);
    EXPECT_EQ(clean.xbar, clean.x);
    const PopulationSample loud = perturb_population(s, 4.0, rng);
    EXPECT_EQ(loud.x, s.x);
    EXPECT_EQ(loud.y, s.y);
    EXPECT_EQ(loud.expert, s.expert);
    const Matrix e = loud.xbar - loud.x;
    for (Eigen::Index c = 0; c < e.cols(); ++c) {
        const double var = e.col(c).squaredNorm() / static_cast<double>(e.rows());
        EXPECT_NEAR(var, 4.0, 0.2);
    }
    EXPECT_THROW(perturb_population(s, -1.0, rng), ContractError);
}

TEST(Misroute, ContractSupportAndScaling) {
    BlockModelSpec spec = balanced_spec(3, 6, 3, 0.0, 1.0);
    spec.covariances[2] << 2.0, 0.5, 0.5, 1.0;
    RngStream rng(10);
    EXPECT_THROW(misroute_population(spec, 0, 2, 1.0, 10, rng), ContractError);
    EXPECT_THROW(misroute_population(spec, 1, 1, 2.0, 10, rng), ContractError);
    const double eta = 3.0;
    const PopulationSample s = misroute_population(spec, 0, 2, eta, 100000, rng);
    for (Eigen::Index r = 0; r < 100; ++r) {
        EXPECT_NE(s.x(r, 0), 0.0);
        EXPECT_EQ(s.x(r, 2), 0.0);
        EXPECT_EQ(s.x(r, 3), 0.0);
        EXPECT_NE(s.x(r, 4), 0.0);
        EXPECT_DOUBLE_EQ(s.y(r), s.x.row(r).segment(0, 2).dot(spec.block_beta(0)));
    }
    EXPECT_EQ(s.routed[0], 2u);
    const Matrix block = s.x.middleCols(4, 2);
    const Matrix cov = block.transpose() * block / static_cast<double>(block.rows());
    const Matrix expected = eta * eta * spec.covariances[2];
    EXPECT_LT((cov - expected).norm() / expected.norm(), 0.05);
}
