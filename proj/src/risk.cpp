#include "moefn/risk.hpp"

#include <cmath>
#include <limits>

#include "moefn/parallel.hpp"

namespace moefn {

namespace {

using ChunkFn = std::function<void(std::size_t count, RngStream& rng, double* errors)>;

MonteCarloEstimate chunked_monte_carlo(std::size_t m, const RngStream& rng, const ChunkFn& fill) {
    if (m < 2) {
        throw ContractError("Monte-Carlo estimate needs m >= 2 samples");
    }
    std::vector<double> errors(m);
    const std::size_t chunks = (m + kMonteCarloChunk - 1) / kMonteCarloChunk;
    parallel_for(chunks, [&](std::size_t c) {
        const std::size_t begin = c * kMonteCarloChunk;
        const std::size_t count = std::min(kMonteCarloChunk, m - begin);
        RngStream child = rng.child(c);
        fill(count, child, errors.data() + begin);
    });
    const MeanStderr stats = mean_stderr(errors);
    if (!std::isfinite(stats.mean)) {
        throw NumericalError("Monte-Carlo estimate is not finite");
    }
    return {stats.mean, stats.std_error, m};
}

double predict(const CoefficientSet& coeffs, const BlockModelSpec& spec, const PopulationSample& s,
               Eigen::Index row, std::size_t expert) {
    if (coeffs.kind == EstimatorKind::dense) {
        return s.xbar.row(row).dot(coeffs.full);
    }
    return s.xbar.row(row).segment(spec.feature_offset(expert), spec.block_dims[expert]).dot(coeffs.per_block[expert]);
}

void check_dims(const CoefficientSet& coeffs, const BlockModelSpec& spec) {
    if (coeffs.full.size() != spec.feature_dim() || coeffs.per_block.size() != spec.experts()) {
        throw ContractError("coefficient set is not dimensioned for this spec");
    }
    for (std::size_t i = 0; i < spec.experts(); ++i) {
        if (coeffs.per_block[i].size() != spec.block_dims[i]) {
            throw ContractError("coefficient block " + std::to_string(i) + " has the wrong length");
        }
    }
}

// b' S (scale S + sigma2 I)^-power S b, with power 1 or 2.
double shifted_form(const Matrix& s, double scale, double sigma2, const Vector& b, int power,
                    const Matrix* outer = nullptr) {
    const Vector sb = s * b;
    Vector solved = shifted_solve(s, scale, sigma2, (outer ? *outer : s) * b);
    if (power == 2) {
        solved = shifted_solve(s, scale, sigma2, solved);
    }
    return sb.dot(solved);
}

void check_pair(const BlockModelSpec& spec, std::size_t i, std::size_t j) {
    if (i == j || i >= spec.experts() || j >= spec.experts()) {
        throw ContractError("mis-routing needs distinct valid experts i and j");
    }
}

}  // namespace

double MonteCarloEstimate::z_score(double value) const {
    const double diff = std::abs(estimate - value);
    if (std_error > 0.0) {
        return diff / std_error;
    }
    return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
}

double population_risk(const CoefficientSet& coeffs, const BlockModelSpec& spec) {
    validate(spec);
    check_dims(coeffs, spec);
    const double full_norm = coeffs.full.squaredNorm();
    double total = 0.0;
    for (std::size_t i = 0; i < spec.experts(); ++i) {
        const double p = spec.expert_probs[i];
        if (p == 0.0) {
            continue;
        }
        const Matrix& s = spec.covariances[i];
        const Vector beta = spec.block_beta(i);
        const Vector& b = coeffs.per_block[i];
        const double noise_norm = coeffs.kind == EstimatorKind::dense ? full_norm : b.squaredNorm();
        total += p * (beta.dot(s * beta) + b.dot(s * b) + spec.sigma2 * noise_norm - 2.0 * b.dot(s * beta));
    }
    return total;
}

MonteCarloEstimate monte_carlo_risk(const CoefficientSet& coeffs, const BlockModelSpec& spec, std::size_t m,
                                    const RngStream& rng, const RouteFn& router) {
    validate(spec);
    check_dims(coeffs, spec);
    return chunked_monte_carlo(m, rng, [&](std::size_t count, RngStream& child, double* errors) {
        const PopulationSample s = sample_population(spec, count, child);
        for (std::size_t r = 0; r < count; ++r) {
            const auto row = static_cast<Eigen::Index>(r);
            const std::size_t expert = router ? router(s.xbar.row(row).transpose()) : s.expert[r];
            const double err = predict(coeffs, spec, s, row, expert) - s.y(row);
            errors[r] = err * err;
        }
    });
}

MonteCarloEstimate monte_carlo_robustness_risk(const CoefficientSet& coeffs, const BlockModelSpec& spec,
                                               double sigma_o2, std::size_t m, const RngStream& rng) {
    validate(spec);
    check_dims(coeffs, spec);
    return chunked_monte_carlo(m, rng, [&](std::size_t count, RngStream& child, double* errors) {
        const PopulationSample s = perturb_population(sample_population(spec, count, child), sigma_o2, child);
        for (std::size_t r = 0; r < count; ++r) {
            const auto row = static_cast<Eigen::Index>(r);
            const double err = predict(coeffs, spec, s, row, s.expert[r]) - s.y(row);
            errors[r] = err * err;
        }
    });
}

double bayes_risk(const BlockModelSpec& spec, EstimatorKind kind) {
    validate(spec);
    if (spec.sigma2 == 0.0) {
        return 0.0;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < spec.experts(); ++i) {
        const double p = spec.expert_probs[i];
        if (p == 0.0) {
            continue;
        }
        const Matrix& s = spec.covariances[i];
        const Vector beta = spec.block_beta(i);
        const double scale = kind == EstimatorKind::dense ? p : 1.0;
        total += p * spec.sigma2 * beta.dot(s * shifted_solve(s, scale, spec.sigma2, beta));
    }
    return total;
}

double robustness_risk(const BlockModelSpec& spec, EstimatorKind kind, double sigma_o2) {
    if (!(sigma_o2 >= 0.0)) {
        throw ContractError("robustness_risk: sigma_o2 must be >= 0");
    }
    double total = bayes_risk(spec, kind);
    if (spec.sigma2 == 0.0 && sigma_o2 == 0.0) {
        return total;
    }
    for (std::size_t i = 0; i < spec.experts(); ++i) {
        const double p = spec.expert_probs[i];
        if (p == 0.0) {
            continue;
        }
        const Matrix& s = spec.covariances[i];
        const Vector beta = spec.block_beta(i);
        const double weight = kind == EstimatorKind::dense ? p * p : p;
        const double scale = kind == EstimatorKind::dense ? p : 1.0;
        total += weight * (sigma_o2 - spec.sigma2) * shifted_form(s, scale, spec.sigma2, beta, 2);
    }
    return total;
}

double misroute_risk(const BlockModelSpec& spec, std::size_t i, std::size_t j, double eta, EstimatorKind kind,
                     std::vector<std::string>* warnings) {
    validate(spec);
    check_pair(spec, i, j);
    if (!(eta > 0.0)) {
        throw ContractError("misroute_risk: eta must be > 0");
    }
    if (eta <= 1.0 && warnings) {
        warnings->push_back("eta <= 1 lies outside the mis-routing theorem's eta > 1 range");
    }
    const double s2 = spec.sigma2;
    const double eta2 = eta * eta;
    const Matrix& sj = spec.covariances[j];
    const Vector bj = spec.block_beta(j);
    if (kind == EstimatorKind::sparse) {
        return eta2 * shifted_form(sj, 1.0, s2, bj, 1);
    }
    const double pj = spec.expert_probs[j];
    const double pi = spec.expert_probs[i];
    double total = 0.0;
    if (pj > 0.0) {
        total += eta2 * pj * shifted_form(sj, pj, s2, bj, 1);
        total += s2 * eta2 * (pj * pj - pj) * shifted_form(sj, pj, s2, bj, 2);
    }
    if (pi > 0.0) {
        const Matrix& si = spec.covariances[i];
        total -= pi * shifted_form(si, pi, s2, spec.block_beta(i), 1);
    }
    for (std::size_t r = 0; r < spec.experts(); ++r) {
        const double pr = spec.expert_probs[r];
        if (r == i || r == j || pr == 0.0) {
            continue;
        }
        if (spec.block_dims[r] != spec.block_dims[j]) {
            throw ContractError("misroute_risk: the dense closed form multiplies block " + std::to_string(r) +
                                " by Sigma_j and needs d_r == d_j");
        }
        // The printed expression has Sigma_j (not Sigma_r) as the inner factor.
        total += s2 * pr * pr * shifted_form(spec.covariances[r], pr, s2, spec.block_beta(r), 2, &sj);
    }
    return total;
}

bool misroute_factor_flagged(const BlockModelSpec& spec, std::size_t i, std::size_t j) {
    if (spec.experts() <= 2) {
        return false;
    }
    for (std::size_t r = 0; r < spec.experts(); ++r) {
        if (r != i && r != j && spec.expert_probs[r] > 0.0) {
            return true;
        }
    }
    return false;
}

double misroute_risk_exact(const BlockModelSpec& spec, std::size_t i, std::size_t j, double eta,
                           EstimatorKind kind) {
    validate(spec);
    check_pair(spec, i, j);
    const Matrix& si = spec.covariances[i];
    const Matrix& sj = spec.covariances[j];
    const Vector beta_i = spec.block_beta(i);
    const double eta2 = eta * eta;
    if (kind == EstimatorKind::sparse) {
        const Vector bj = bayes_sparse(spec, j);
        return eta2 * bj.dot(sj * bj) + spec.sigma2 * bj.squaredNorm() + beta_i.dot(si * beta_i);
    }
    const CoefficientSet b = bayes_dense(spec);
    const Vector gap = b.per_block[i] - beta_i;
    const Vector& bj = b.per_block[j];
    return gap.dot(si * gap) + eta2 * bj.dot(sj * bj) + spec.sigma2 * b.full.squaredNorm();
}

MonteCarloEstimate misroute_risk_mc(const BlockModelSpec& spec, std::size_t i, std::size_t j, double eta,
                                    EstimatorKind kind, std::size_t m, const RngStream& rng) {
    validate(spec);
    check_pair(spec, i, j);
    const CoefficientSet coeffs =
        kind == EstimatorKind::dense ? bayes_dense(spec) : bayes_sparse_all(spec);
    return chunked_monte_carlo(m, rng, [&](std::size_t count, RngStream& child, double* errors) {
        const PopulationSample s = misroute_population(spec, i, j, eta, count, child);
        for (std::size_t r = 0; r < count; ++r) {
            const auto row = static_cast<Eigen::Index>(r);
            const double err = predict(coeffs, spec, s, row, s.routed[r]) - s.y(row);
            errors[r] = err * err;
        }
    });
}

double excess_risk(const CoefficientSet& coeffs, const BlockModelSpec& spec) {
    return population_risk(coeffs, spec) - bayes_risk(spec, coeffs.kind);
}

}  // namespace moefn
