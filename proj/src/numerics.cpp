#include "moefn/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace moefn {

void require_finite(const Matrix& m, const std::string& what) {
    if (!m.allFinite()) {
        throw ContractError(what + ": matrix contains non-finite entries");
    }
}

void require_finite(const Vector& v, const std::string& what) {
    if (!v.allFinite()) {
        throw ContractError(what + ": vector contains non-finite entries");
    }
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

RngStream RngStream::child(std::uint64_t index) const {
    return RngStream(splitmix64(splitmix64(seed_) ^ splitmix64(index + 0x632BE59BD9B4E019ULL)));
}

double RngStream::normal() { return normal_(engine_); }

double RngStream::uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

std::size_t RngStream::uniform_index(std::size_t n) {
    if (n == 0) {
        throw ContractError("uniform_index: n must be positive");
    }
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

std::size_t RngStream::categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0 || !std::isfinite(w)) {
            throw ContractError("categorical: weights must be finite and non-negative");
        }
        total += w;
    }
    if (!(total > 0.0)) {
        throw ContractError("categorical: weights sum to zero");
    }
    const double u = uniform() * total;
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] > 0.0) {
            last_positive = i;
        }
        acc += weights[i];
        if (u < acc && weights[i] > 0.0) {
            return i;
        }
    }
    return last_positive;
}

SvdResult svd(const Matrix& m) {
    require_finite(m, "svd");
    if (m.size() == 0) {
        return {Matrix(m.rows(), 0), Vector(0), Matrix(m.cols(), 0)};
    }
    Eigen::BDCSVD<Matrix> solver(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    SvdResult out{solver.matrixU(), solver.singularValues(), solver.matrixV()};
    if (!out.left_vectors.allFinite() || !out.singular_values.allFinite() ||
        !out.right_vectors.allFinite()) {
        throw NumericalError("svd: decomposition did not converge");
    }
    return out;
}

namespace {

double default_tolerance(const Matrix& m, const Vector& s) {
    const double top = s.size() > 0 ? s(0) : 0.0;
    return static_cast<double>(std::max(m.rows(), m.cols())) *
           std::numeric_limits<double>::epsilon() * top;
}

}  // namespace

Matrix pseudo_inverse(const Matrix& m, double tol) {
    const SvdResult d = svd(m);
    if (tol < 0.0) {
        tol = default_tolerance(m, d.singular_values);
    }
    Vector inv = Vector::Zero(d.singular_values.size());
    for (Eigen::Index i = 0; i < inv.size(); ++i) {
        if (d.singular_values(i) > tol) {
            inv(i) = 1.0 / d.singular_values(i);
        }
    }
    return d.right_vectors * inv.asDiagonal() * d.left_vectors.transpose();
}

Vector min_norm_solve(const Matrix& a, const Vector& b, double tol) {
    if (a.rows() != b.size()) {
        throw ContractError("min_norm_solve: dimension mismatch");
    }
    const SvdResult d = svd(a);
    if (tol < 0.0) {
        tol = default_tolerance(a, d.singular_values);
    }
    Vector coeff = d.left_vectors.transpose() * b;
    for (Eigen::Index i = 0; i < coeff.size(); ++i) {
        coeff(i) = d.singular_values(i) > tol ? coeff(i) / d.singular_values(i) : 0.0;
    }
    return d.right_vectors * coeff;
}

SymEigResult sym_eig(const Matrix& s) {
    if (s.rows() != s.cols()) {
        throw ContractError("sym_eig: matrix is not square");
    }
    require_finite(s, "sym_eig");
    const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
    if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
        throw ContractError("sym_eig: matrix is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> solver(s);
    if (solver.info() != Eigen::Success) {
        throw NumericalError("sym_eig: eigen-solver did not converge");
    }
    const Eigen::Index n = s.rows();
    SymEigResult out{Vector(n), Matrix(n, n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        out.values(i) = solver.eigenvalues()(n - 1 - i);
        out.vectors.col(i) = solver.eigenvectors().col(n - 1 - i);
    }
    return out;
}

Matrix psd_factor(const Matrix& s) {
    const SymEigResult e = sym_eig(s);
    Vector root = e.values.cwiseMax(0.0).cwiseSqrt();
    return e.vectors * root.asDiagonal() * e.vectors.transpose();
}

namespace {

struct LloydRun {
    std::vector<std::size_t> labels;
    Matrix centroids;
    double inertia;
};

std::size_t nearest(const Matrix& centroids, const Eigen::Ref<const Eigen::RowVectorXd>& point,
                    double& best_dist) {
    std::size_t best = 0;
    best_dist = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
        const double dist = (centroids.row(c) - point).squaredNorm();
        if (dist < best_dist) {
            best_dist = dist;
            best = static_cast<std::size_t>(c);
        }
    }
    return best;
}

Matrix plus_plus_seed(const Matrix& points, std::size_t k, RngStream& rng) {
    const auto n = static_cast<std::size_t>(points.rows());
    Matrix centroids(static_cast<Eigen::Index>(k), points.cols());
    centroids.row(0) = points.row(static_cast<Eigen::Index>(rng.uniform_index(n)));
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d =
                (points.row(static_cast<Eigen::Index>(i)) - centroids.row(static_cast<Eigen::Index>(c - 1)))
                    .squaredNorm();
            dist[i] = std::min(dist[i], d);
            total += dist[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            pick = rng.categorical(dist);
        } else {
            pick = rng.uniform_index(n);
        }
        centroids.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(pick));
    }
    return centroids;
}

LloydRun lloyd(const Matrix& points, Matrix centroids, std::size_t max_iterations) {
    const auto n = static_cast<std::size_t>(points.rows());
    const Eigen::Index k = centroids.rows();
    std::vector<std::size_t> labels(n, std::numeric_limits<std::size_t>::max());
    std::vector<double> dist(n, 0.0);
    for (std::size_t iter = 0; iter < max_iterations; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = nearest(centroids, points.row(static_cast<Eigen::Index>(i)), dist[i]);
            if (c != labels[i]) {
                labels[i] = c;
                changed = true;
            }
        }
        if (!changed && iter > 0) {
            break;
        }
        Matrix sums = Matrix::Zero(k, points.cols());
        std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
        for (std::size_t i = 0; i < n; ++i) {
            sums.row(static_cast<Eigen::Index>(labels[i])) += points.row(static_cast<Eigen::Index>(i));
            ++counts[labels[i]];
        }
        for (Eigen::Index c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
                continue;
            }
            // Empty cluster: take over the point currently worst served.
            const auto far = static_cast<std::size_t>(
                std::distance(dist.begin(), std::max_element(dist.begin(), dist.end())));
            centroids.row(c) = points.row(static_cast<Eigen::Index>(far));
            labels[far] = static_cast<std::size_t>(c);
            dist[far] = 0.0;
        }
    }
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = nearest(centroids, points.row(static_cast<Eigen::Index>(i)), dist[i]);
        inertia += dist[i];
    }
    return {std::move(labels), std::move(centroids), inertia};
}

}  // namespace

KMeansResult kmeans(const Matrix& points, std::size_t k, RngStream& rng, std::size_t restarts,
                    std::size_t max_iterations) {
    require_finite(points, "kmeans");
    const auto n = static_cast<std::size_t>(points.rows());
    if (k == 0 || k > n) {
        throw ContractError("kmeans: need 1 <= k <= rows");
    }
    restarts = std::max<std::size_t>(restarts, 1);
    LloydRun best{{}, {}, std::numeric_limits<double>::infinity()};
    for (std::size_t r = 0; r < restarts; ++r) {
        LloydRun run = lloyd(points, plus_plus_seed(points, k, rng), max_iterations);
        if (run.inertia < best.inertia) {
            best = std::move(run);
        }
    }
    // Canonical numbering: clusters ordered by first appearance.
    std::vector<std::size_t> remap(k, std::numeric_limits<std::size_t>::max());
    std::size_t next = 0;
    for (std::size_t& label : best.labels) {
        if (remap[label] == std::numeric_limits<std::size_t>::max()) {
            remap[label] = next++;
        }
        label = remap[label];
    }
    for (std::size_t c = 0; c < k; ++c) {
        if (remap[c] == std::numeric_limits<std::size_t>::max()) {
            remap[c] = next++;
        }
    }
    Matrix centroids(best.centroids.rows(), best.centroids.cols());
    for (std::size_t c = 0; c < k; ++c) {
        centroids.row(static_cast<Eigen::Index>(remap[c])) = best.centroids.row(static_cast<Eigen::Index>(c));
    }
    return {std::move(best.labels), std::move(centroids), best.inertia};
}

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double std, RngStream& rng) {
    if (std < 0.0) {
        throw ContractError("gaussian_matrix: std must be non-negative");
    }
    Matrix m(rows, cols);
    if (std == 0.0) {
        m.setZero();
        return m;
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = std * rng.normal();
        }
    }
    return m;
}

Matrix haar_orthogonal(Eigen::Index n, RngStream& rng) {
    const Matrix g = gaussian_matrix(n, n, 1.0, rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ();
    const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (r(i, i) < 0.0) {
            q.col(i) = -q.col(i);
        }
    }
    return q;
}

double pairwise_sum(std::span<const double> values) {
    if (values.size() <= 16) {
        double s = 0.0;
        for (double v : values) {
            s += v;
        }
        return s;
    }
    const std::size_t half = values.size() / 2;
    return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

MeanStderr mean_stderr(std::span<const double> values) {
    MeanStderr out;
    out.count = values.size();
    if (values.empty()) {
        return out;
    }
    out.mean = pairwise_sum(values) / static_cast<double>(values.size());
    if (values.size() < 2) {
        return out;
    }
    std::vector<double> sq(values.size());
    std::transform(values.begin(), values.end(), sq.begin(),
                   [m = out.mean](double v) { return (v - m) * (v - m); });
    const double var = pairwise_sum(sq) / static_cast<double>(values.size() - 1);
    out.std_error = std::sqrt(var / static_cast<double>(values.size()));
    return out;
}

double ols_slope(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw ContractError("ols_slope: need at least two paired points");
    }
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    if (sxx == 0.0) {
        throw ContractError("ols_slope: x values are all equal");
    }
    return sxy / sxx;
}

}  // namespace moefn
