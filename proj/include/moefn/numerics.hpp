#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace moefn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Raised when an iterative kernel fails to converge or produces non-finite output.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a caller violates a documented precondition.
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Throws ContractError naming `what` if any entry is NaN or infinite.
void require_finite(const Matrix& m, const std::string& what);
void require_finite(const Vector& v, const std::string& what);

/**
 * Deterministic random stream.
 *
 * A stream is fully determined by its seed. Child streams are derived from
 * (seed, index) through a SplitMix64 mixer, so experiments can hand one child to
 * each trial or sample chunk and get identical results regardless of how the
 * work is scheduled.
 */
class RngStream {
public:
    explicit RngStream(std::uint64_t seed = 0);

    RngStream child(std::uint64_t index) const;

    std::uint64_t seed() const { return seed_; }

    double normal();
    double uniform();
    /// Uniform integer in [0, n).
    std::size_t uniform_index(std::size_t n);
    /// Draws an index with probability proportional to `weights` (non-negative, positive sum).
    std::size_t categorical(std::span<const double> weights);

    std::mt19937_64& engine() { return engine_; }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

std::uint64_t splitmix64(std::uint64_t x);

struct SvdResult {
    Matrix left_vectors;
    Vector singular_values;  // non-increasing
    Matrix right_vectors;
};

/// Thin SVD, m = U diag(s) V^T.
SvdResult svd(const Matrix& m);

/// Moore-Penrose inverse. A negative `tol` selects the default
/// max(rows, cols) * eps * largest singular value.
Matrix pseudo_inverse(const Matrix& m, double tol = -1.0);

/// Minimum-norm least-squares solution of a x = b through the SVD of a.
Vector min_norm_solve(const Matrix& a, const Vector& b, double tol = -1.0);

struct SymEigResult {
    Vector values;   // descending
    Matrix vectors;  // column j pairs with values(j)
};

/// Eigen-decomposition of a symmetric matrix; throws ContractError when the
/// input is asymmetric beyond 1e-10 (scaled by max(1, max |entry|)).
SymEigResult sym_eig(const Matrix& s);

/// Symmetric square-root factor F with F F^T = s, for PSD s (tiny negative
/// eigenvalues are clipped to zero).
Matrix psd_factor(const Matrix& s);

struct KMeansResult {
    std::vector<std::size_t> labels;  // 0-based, numbered by first appearance
    Matrix centroids;                 // k x cols
    double inertia = 0.0;
};

/// Lloyd's k-means with k-means++ seeding and `restarts` independent starts;
/// the lowest-inertia run is returned. An emptied cluster is re-seeded from
/// the point farthest from its current centroid.
KMeansResult kmeans(const Matrix& points, std::size_t k, RngStream& rng, std::size_t restarts = 8,
                    std::size_t max_iterations = 300);

/// rows x cols matrix of i.i.d. N(0, std^2) entries.
Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double std, RngStream& rng);

/// Haar-distributed n x n orthogonal matrix.
Matrix haar_orthogonal(Eigen::Index n, RngStream& rng);

/// Pairwise summation; result does not depend on how callers chunk work.
double pairwise_sum(std::span<const double> values);

struct MeanStderr {
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t count = 0;
};

/// Sample mean and standard error (sample std / sqrt(n)); needs n >= 2 for stderr.
MeanStderr mean_stderr(std::span<const double> values);

/// Least-squares slope of y against x.
double ols_slope(std::span<const double> x, std::span<const double> y);

}  // namespace moefn
