#pragma once

#include <vector>

#include "moefn/blockmodel.hpp"

namespace moefn {

enum class EstimatorKind { dense, sparse };

const char* to_string(EstimatorKind kind);

/**
 * A candidate coefficient vector together with its block restrictions.
 *
 * For dense sets per_block[i] is the S_i slice of full. For sparse sets full
 * is assembled from per_block and is zero nowhere else but on the blocks.
 */
struct CoefficientSet {
    Vector full;
    std::vector<Vector> per_block;
    EstimatorKind kind = EstimatorKind::dense;
};

CoefficientSet dense_coefficients(const Vector& full, const std::vector<Eigen::Index>& offsets,
                                  const std::vector<Eigen::Index>& dims);
CoefficientSet sparse_coefficients(const std::vector<Vector>& blocks, const std::vector<Eigen::Index>& offsets);

/// Offsets and dims of a spec's blocks, for the two helpers above.
std::vector<Eigen::Index> block_offsets(const BlockModelSpec& spec);

/// beta = pinv(Xbar) Y, computed from the SVD of Xbar.
CoefficientSet min_norm_dense(const Dataset& data);

/// Block-i estimate from the rows of expert i restricted to S_i.
Vector min_norm_sparse(const Dataset& data, std::size_t i);
CoefficientSet min_norm_sparse_all(const Dataset& data);

/// Block i = p_i (p_i Sigma_i + sigma2 I)^-1 Sigma_i beta_i*.
CoefficientSet bayes_dense(const BlockModelSpec& spec);

/// (Sigma_i + sigma2 I)^-1 Sigma_i beta_i*.
Vector bayes_sparse(const BlockModelSpec& spec, std::size_t i);
CoefficientSet bayes_sparse_all(const BlockModelSpec& spec);

/// Solves (scale * sigma + shift * I) x = rhs; throws ContractError when the
/// system is singular (only possible for shift == 0 and singular sigma).
Vector shifted_solve(const Matrix& sigma, double scale, double shift, const Vector& rhs);

}  // namespace moefn
