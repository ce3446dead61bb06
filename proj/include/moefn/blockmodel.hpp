#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "moefn/numerics.hpp"

namespace moefn {

/// Raised by validate(); what() lists every problem, one per line.
class SpecError : public std::invalid_argument {
public:
    explicit SpecError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const { return problems_; }

private:
    std::vector<std::string> problems_;
};

/**
 * Generative description of the block-diagonal model with feature noise.
 *
 * Expert i owns the feature columns [feature_offset(i), feature_offset(i) + d_i)
 * and, in a finite design, the rows [row_offset(i), row_offset(i) + n_i).
 * Clean block features are N(0, covariances[i]); every observed coordinate
 * carries additive N(0, sigma2) noise; targets are noiseless.
 */
struct BlockModelSpec {
    std::vector<Eigen::Index> block_dims;
    std::vector<Eigen::Index> block_rows;
    double sigma2 = 0.0;
    std::vector<Matrix> covariances;
    Vector beta_star;
    std::vector<double> expert_probs;

    std::size_t experts() const { return block_dims.size(); }
    Eigen::Index feature_dim() const;
    Eigen::Index sample_count() const;
    Eigen::Index feature_offset(std::size_t i) const;
    Eigen::Index row_offset(std::size_t i) const;
    Vector block_beta(std::size_t i) const;
};

/// Every violated invariant, formatted "json.path: message".
std::vector<std::string> spec_problems(const BlockModelSpec& spec);

/// Throws SpecError if spec_problems() is non-empty.
void validate(const BlockModelSpec& spec);

/// k experts of equal size, Sigma_i = lambda2 * I, uniform p, beta* = beta_value * 1.
/// d and n must be divisible by k.
BlockModelSpec balanced_spec(std::size_t k, Eigen::Index d, Eigen::Index n, double sigma2, double lambda2,
                             double beta_value = 1.0);

struct Dataset {
    Matrix x;      // n x d, block diagonal
    Matrix noise;  // n x d
    Matrix xbar;   // x + noise
    Vector y;      // x * beta_star
    std::vector<std::size_t> row_expert;
    std::vector<Eigen::Index> feature_offsets;
    std::vector<Eigen::Index> feature_dims;

    std::size_t experts() const { return feature_dims.size(); }
    std::vector<Eigen::Index> rows_of(std::size_t expert) const;
    /// Rows routed to `expert`, restricted to its feature columns.
    Matrix block_xbar(std::size_t expert) const;
    Matrix block_x(std::size_t expert) const;
    Vector block_y(std::size_t expert) const;
};

/// Random design: rows of X_i drawn i.i.d. N(0, Sigma_i), E i.i.d. N(0, sigma2).
Dataset generate_design(const BlockModelSpec& spec, RngStream& rng);

/// Fixed design: X_i = U_i diag(spectra[i]) V_i^T with Haar-random orthonormal
/// factors, so the singular values of X_i are exactly spectra[i]. Each
/// spectrum must have min(n_i, d_i) non-negative entries.
Dataset fixed_design(const BlockModelSpec& spec, const std::vector<Vector>& spectra, RngStream& rng);

/// Population draws, one sample per row.
struct PopulationSample {
    std::vector<std::size_t> expert;  // latent z
    std::vector<std::size_t> routed;  // expert the sample is served by (== expert unless misrouted)
    Matrix x;                         // clean input, zero outside the support
    Matrix xbar;                      // x + e
    Vector y;

    std::size_t size() const { return expert.size(); }
};

PopulationSample sample_population(const BlockModelSpec& spec, std::size_t m, RngStream& rng);

/// Replaces every noise vector with a fresh N(0, sigma_o2 I) draw.
PopulationSample perturb_population(PopulationSample samples, double sigma_o2, RngStream& rng);

/// Composite inputs for expert i carrying an eta-scaled copy of an expert-j
/// input: block i holds x_i ~ N(0, Sigma_i), block j holds eta * x_j with
/// x_j ~ N(0, Sigma_j), plus full N(0, sigma2 I) noise. Target is x_i^T beta_i*;
/// the routed expert is j. Requires i != j and eta > 1.
PopulationSample misroute_population(const BlockModelSpec& spec, std::size_t i, std::size_t j, double eta,
                                     std::size_t m, RngStream& rng);

}  // namespace moefn
