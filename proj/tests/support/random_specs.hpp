#pragma once

#include <cmath>

#include "moefn/blockmodel.hpp"

namespace moefn::fixtures {

inline double uniform_in(RngStream& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

inline std::vector<double> random_simplex(RngStream& rng, std::size_t k) {
    std::vector<double> p(k);
    double total = 0.0;
    for (auto& v : p) {
        v = -std::log(1.0 - rng.uniform());
        total += v;
    }
    for (auto& v : p) {
        v /= total;
    }
    return p;
}

/// Covariance Q diag(eigs) Q^T with Haar Q.
inline Matrix covariance_with_spectrum(RngStream& rng, const Vector& eigs) {
    const Matrix q = haar_orthogonal(eigs.size(), rng);
    Matrix s = q * eigs.asDiagonal() * q.transpose();
    return 0.5 * (s + s.transpose());
}

struct RandomSpecOptions {
    std::size_t max_k = 4;
    Eigen::Index max_dim = 8;
    double sigma2_lo = 0.01;
    double sigma2_hi = 4.0;
    /// When positive, every covariance eigenvalue exceeds this multiple of sigma2.
    double min_snr = 0.0;
    Eigen::Index rows_per_block = 0;
};

inline BlockModelSpec random_spec(RngStream& rng, const RandomSpecOptions& opt = {}) {
    BlockModelSpec spec;
    const std::size_t k = 1 + rng.uniform_index(opt.max_k);
    spec.sigma2 = uniform_in(rng, opt.sigma2_lo, opt.sigma2_hi);
    for (std::size_t i = 0; i < k; ++i) {
        const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::size_t>(opt.max_dim)));
        spec.block_dims.push_back(d);
        spec.block_rows.push_back(opt.rows_per_block);
        Vector eigs(d);
        for (Eigen::Index e = 0; e < d; ++e) {
            eigs(e) = opt.min_snr > 0.0 ? opt.min_snr * spec.sigma2 * uniform_in(rng, 1.01, 3.0)
                                        : uniform_in(rng, 0.05, 5.0);
        }
        spec.covariances.push_back(covariance_with_spectrum(rng, eigs));
    }
    spec.beta_star = gaussian_matrix(spec.feature_dim(), 1, 1.0, rng).col(0);
    spec.expert_probs = random_simplex(rng, k);
    return spec;
}

}  // namespace moefn::fixtures
