#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "moefn/numerics.hpp"
#include "moefn/parallel.hpp"

using namespace moefn;

namespace {

Matrix random_rank(RngStream& rng, Eigen::Index rows, Eigen::Index cols, Eigen::Index rank) {
    return gaussian_matrix(rows, rank, 1.0, rng) * gaussian_matrix(rank, cols, 1.0, rng);
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST(Svd, IdentityAndDiagonal) {
    EXPECT_TRUE(svd(Matrix::Identity(3, 3)).singular_values.isApprox(Vector::Ones(3)));
    Matrix d = Matrix::Zero(2, 2);
    d(0, 0) = 3.0;
    d(1, 1) = 4.0;
    const Vector s = svd(d).singular_values;
    EXPECT_NEAR(s(0), 4.0, 1e-14);
    EXPECT_NEAR(s(1), 3.0, 1e-14);
}

TEST(Svd, ReconstructionAndOrthonormality) {
    RngStream rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix m = gaussian_matrix(5 + trial % 3, 3 + trial % 4, 1.0, rng);
        const SvdResult r = svd(m);
        const Eigen::Index q = r.singular_values.size();
        EXPECT_LT((r.left_vectors.transpose() * r.left_vectors - Matrix::Identity(q, q)).norm(), 1e-10);
        EXPECT_LT((r.right_vectors.transpose() * r.right_vectors - Matrix::Identity(q, q)).norm(), 1e-10);
        const Matrix back = r.left_vectors * r.singular_values.asDiagonal() * r.right_vectors.transpose();
        EXPECT_LT((back - m).norm() / m.norm(), 1e-10);
        for (Eigen::Index i = 1; i < q; ++i) {
            EXPECT_GE(r.singular_values(i - 1), r.singular_values(i));
        }
    }
}

TEST(PseudoInverse, RankDeficientDiagonal) {
    Matrix d = Matrix::Zero(2, 2);
    d(0, 0) = 2.0;
    const Matrix p = pseudo_inverse(d);
    EXPECT_DOUBLE_EQ(p(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(p(1, 1), 0.0);
}

TEST(PseudoInverse, FullRankIsInverse) {
    Matrix a(2, 2);
    a << 2.0, 1.0, 1.0, 3.0;
    EXPECT_LT((pseudo_inverse(a) - a.inverse()).norm(), 1e-12);
}

TEST(PseudoInverse, PenroseConditionsOnRandomRank) {
    RngStream rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::Index rows = 2 + static_cast<Eigen::Index>(rng.uniform_index(7));
        const Eigen::Index cols = 2 + static_cast<Eigen::Index>(rng.uniform_index(7));
        const Eigen::Index rank = 1 + static_cast<Eigen::Index>(rng.uniform_index(std::min(rows, cols)));
        const Matrix a = random_rank(rng, rows, cols, rank);
        const Matrix p = pseudo_inverse(a);
        const double scale = std::max(1.0, a.norm() * p.norm());
        EXPECT_LT((a * p * a - a).norm(), 1e-8 * scale);
        EXPECT_LT((p * a * p - p).norm(), 1e-8 * scale * p.norm());
        EXPECT_LT((a * p - (a * p).transpose()).norm(), 1e-8 * scale);
        EXPECT_LT((p * a - (p * a).transpose()).norm(), 1e-8 * scale);
    }
}

TEST(PseudoInverse, RandomRankTwo) {
    RngStream rng(9);
    const Matrix a = random_rank(rng, 4, 3, 2);
    EXPECT_LT((a * pseudo_inverse(a) * a - a).norm(), 1e-9);
}

TEST(SymEig, Examples) {
    Matrix d = Matrix::Zero(2, 2);
    d(0, 0) = 1.0;
    d(1, 1) = 2.0;
    const SymEigResult r = sym_eig(d);
    EXPECT_NEAR(r.values(0), 2.0, 1e-14);
    EXPECT_NEAR(r.values(1), 1.0, 1e-14);
    const Vector ones = sym_eig(Matrix::Ones(2, 2)).values;
    EXPECT_NEAR(ones(0), 2.0, 1e-14);
    EXPECT_NEAR(ones(1), 0.0, 1e-14);
}

TEST(SymEig, RandomPsdAndReconstruction) {
    RngStream rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix g = gaussian_matrix(6, 4, 1.0, rng);
        const Matrix s = g * g.transpose();
        const SymEigResult r = sym_eig(s);
        EXPECT_GE(r.values.minCoeff(), -1e-10);
        EXPECT_LT((r.vectors * r.values.asDiagonal() * r.vectors.transpose() - s).norm(), 1e-8 * s.norm());
    }
}

TEST(SymEig, RejectsAsymmetric) {
    Matrix a(2, 2);
    a << 1.0, 2.0, 0.0, 1.0;
    EXPECT_THROW(sym_eig(a), ContractError);
}

TEST(KMeans, SeparatedCloudsMatchBruteForce) {
    RngStream rng(21);
    Matrix pts(10, 1);
    for (int i = 0; i < 10; ++i) {
        pts(i, 0) = (i % 2 ? 10.0 : 0.0) + 0.3 * rng.normal();
    }
    // Brute-force minimum-inertia 2-partition.
    double best = std::numeric_limits<double>::infinity();
    unsigned best_mask = 0;
    for (unsigned mask = 1; mask < (1u << 10) - 1; ++mask) {
        double inertia = 0.0;
        for (int side = 0; side < 2; ++side) {
            double sum = 0.0, sq = 0.0;
            int count = 0;
            for (int i = 0; i < 10; ++i) {
                if (((mask >> i) & 1u) == static_cast<unsigned>(side)) {
                    sum += pts(i, 0);
                    sq += pts(i, 0) * pts(i, 0);
                    ++count;
                }
            }
            inertia += sq - sum * sum / count;
        }
        if (inertia < best) {
            best = inertia;
            best_mask = mask;
        }
    }
    RngStream km(1);
    const KMeansResult r = kmeans(pts, 2, km);
    EXPECT_NEAR(r.inertia, best, 1e-9);
    for (int i = 0; i < 10; ++i) {
        for (int j = 0; j < 10; ++j) {
            const bool same_brute = ((best_mask >> i) & 1u) == ((best_mask >> j) & 1u);
            EXPECT_EQ(r.labels[i] == r.labels[j], same_brute);
        }
    }
}

TEST(KMeans, OneClusterPerPoint) {
    RngStream rng(2);
    const Matrix pts = gaussian_matrix(6, 2, 1.0, rng);
    const KMeansResult r = kmeans(pts, 6, rng);
    EXPECT_NEAR(r.inertia, 0.0, 1e-12);
    std::vector<std::size_t> labels = r.labels;
    std::sort(labels.begin(), labels.end());
    EXPECT_EQ(std::adjacent_find(labels.begin(), labels.end()), labels.end());
}

TEST(KMeans, DuplicatedDatasetKeepsPartition) {
    RngStream rng(4);
    Matrix pts(9, 2);
    for (int i = 0; i < 9; ++i) {
        pts(i, 0) = 5.0 * (i % 3) + 0.2 * rng.normal();
        pts(i, 1) = 0.2 * rng.normal();
    }
    Matrix doubled(18, 2);
    doubled << pts, pts;
    RngStream a(8), b(8);
    const KMeansResult r1 = kmeans(pts, 3, a);
    const KMeansResult r2 = kmeans(doubled, 3, b);
    for (int i = 0; i < 9; ++i) {
        EXPECT_EQ(r2.labels[i], r2.labels[i + 9]);
        for (int j = 0; j < 9; ++j) {
            EXPECT_EQ(r1.labels[i] == r1.labels[j], r2.labels[i] == r2.labels[j]);
        }
    }
    EXPECT_NEAR(r2.inertia, 2.0 * r1.inertia, 1e-9);
}

TEST(KMeans, DeterministicAndLabelsInRange) {
    RngStream rng(6);
    const Matrix pts = gaussian_matrix(40, 3, 1.0, rng);
    RngStream a(77), b(77);
    const KMeansResult r1 = kmeans(pts, 4, a);
    const KMeansResult r2 = kmeans(pts, 4, b);
    EXPECT_EQ(r1.labels, r2.labels);
    for (auto l : r1.labels) {
        EXPECT_LT(l, 4u);
    }
    EXPECT_THROW(kmeans(pts, 41, a), ContractError);
}

TEST(GaussianMatrix, ZeroStdAndDeterminism) {
    RngStream rng(1);
    EXPECT_EQ(gaussian_matrix(3, 4, 0.0, rng).cwiseAbs().maxCoeff(), 0.0);
    RngStream a(42), b(42);
    EXPECT_EQ(gaussian_matrix(5, 5, 1.0, a), gaussian_matrix(5, 5, 1.0, b));
}

TEST(GaussianMatrix, MomentsAtScale) {
    RngStream rng(123);
    const Matrix g = gaussian_matrix(2000, 2000, 1.0, rng);
    const double mean = g.mean();
    const double var = (g.array() - mean).square().sum() / (static_cast<double>(g.size()) - 1.0);
    EXPECT_LT(std::abs(mean), 0.003);
    EXPECT_LT(std::abs(var - 1.0), 0.02);
}

TEST(RngStream, ChildrenDeterministicAndUncorrelated) {
    const RngStream root(2024);
    constexpr std::size_t draws = 10000;
    auto sequence = [&](std::size_t child) {
        RngStream s = root.child(child);
        std::vector<double> v(draws);
        for (auto& x : v) {
            x = s.normal();
        }
        return v;
    };
    EXPECT_EQ(sequence(3), sequence(3));
    std::vector<std::vector<double>> seqs;
    for (std::size_t c = 0; c < 1000; ++c) {
        seqs.push_back(sequence(c));
    }
    double worst = 0.0;
    for (std::size_t a = 0; a < 100; ++a) {
        for (std::size_t b = a + 1; b < 100; ++b) {
            worst = std::max(worst, std::abs(correlation(seqs[a], seqs[b])));
        }
    }
    for (std::size_t a = 0; a + 1 < 1000; ++a) {
        worst = std::max(worst, std::abs(correlation(seqs[a], seqs[a + 1])));
    }
    EXPECT_LT(worst, 0.05);
}

TEST(Summation, PairwiseMatchesNaiveAndStats) {
    std::vector<double> v(1000);
    std::iota(v.begin(), v.end(), 1.0);
    EXPECT_DOUBLE_EQ(pairwise_sum(v), 500500.0);
    const MeanStderr s = mean_stderr(std::vector<double>{1.0, 2.0, 3.0, 4.0});
    EXPECT_DOUBLE_EQ(s.mean, 2.5);
    EXPECT_NEAR(s.std_error, std::sqrt((5.0 / 3.0) / 4.0), 1e-15);
    EXPECT_NEAR(ols_slope(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 6}), 2.0, 1e-14);
}

TEST(Parallel, ResultIndependentOfThreadCount) {
    auto run = [](std::size_t threads) {
        set_thread_count(threads);
        std::vector<double> out(64);
        const RngStream root(9);
        parallel_for(out.size(), [&](std::size_t i) {
            RngStream c = root.child(i);
            out[i] = c.normal();
        });
        set_thread_count(0);
        return out;
    };
    EXPECT_EQ(run(1), run(4));
}

TEST(Parallel, PropagatesExceptions) {
    set_thread_count(3);
    EXPECT_THROW(parallel_for(10, [](std::size_t i) {
                     if (i == 7) {
                         throw NumericalError("boom");
                     }
                 }),
                 NumericalError);
    set_thread_count(0);
}
