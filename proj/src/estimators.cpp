#include "moefn/estimators.hpp"

#include <cmath>

namespace moefn {

const char* to_string(EstimatorKind kind) {
    return kind == EstimatorKind::dense ? "dense" : "sparse";
}

CoefficientSet dense_coefficients(const Vector& full, const std::vector<Eigen::Index>& offsets,
                                  const std::vector<Eigen::Index>& dims) {
    CoefficientSet out;
    out.kind = EstimatorKind::dense;
    out.full = full;
    for (std::size_t i = 0; i < dims.size(); ++i) {
        out.per_block.push_back(full.segment(offsets[i], dims[i]));
    }
    return out;
}

CoefficientSet sparse_coefficients(const std::vector<Vector>& blocks, const std::vector<Eigen::Index>& offsets) {
    CoefficientSet out;
    out.kind = EstimatorKind::sparse;
    Eigen::Index d = 0;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        d = std::max(d, offsets[i] + blocks[i].size());
    }
    out.full = Vector::Zero(d);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        out.full.segment(offsets[i], blocks[i].size()) = blocks[i];
    }
    out.per_block = blocks;
    return out;
}

std::vector<Eigen::Index> block_offsets(const BlockModelSpec& spec) {
    std::vector<Eigen::Index> offsets;
    for (std::size_t i = 0; i < spec.experts(); ++i) {
        offsets.push_back(spec.feature_offset(i));
    }
    return offsets;
}

CoefficientSet min_norm_dense(const Dataset& data) {
    return dense_coefficients(min_norm_solve(data.xbar, data.y), data.feature_offsets, data.feature_dims);
}

Vector min_norm_sparse(const Dataset& data, std::size_t i) {
    if (i >= data.experts()) {
        throw ContractError("min_norm_sparse: block " + std::to_string(i) + " does not exist");
    }
    const Matrix xb = data.block_xbar(i);
    if (xb.rows() == 0) {
        throw ContractError("min_norm_sparse: block " + std::to_string(i) + " has no rows");
    }
    return min_norm_solve(xb, data.block_y(i));
}

CoefficientSet min_norm_sparse_all(const Dataset& data) {
    std::vector<Vector> blocks;
    for (std::size_t i = 0; i < data.experts(); ++i) {
        blocks.push_back(min_norm_sparse(data, i));
    }
    return sparse_coefficients(blocks, data.feature_offsets);
}

Vector shifted_solve(const Matrix& sigma, double scale, double shift, const Vector& rhs) {
    const Matrix a = scale * sigma + shift * Matrix::Identity(sigma.rows(), sigma.cols());
    const Vector eig = sym_eig(a).values;
    const double top = eig.size() ? std::abs(eig(0)) : 0.0;
    if (eig.size() && !(eig(eig.size() - 1) > 1e-13 * std::max(top, 1.0))) {
        throw ContractError("singular system: sigma2 = 0 with a singular covariance is not supported");
    }
    return a.ldlt().solve(rhs);
}

CoefficientSet bayes_dense(const BlockModelSpec& spec) {
    validate(spec);
    Vector full = Vector::Zero(spec.feature_dim());
    for (std::size_t i = 0; i < spec.experts(); ++i) {
        const double p = spec.expert_probs[i];
        if (p == 0.0) {
            continue;
        }
        const Matrix& s = spec.covariances[i];
        full.segment(spec.feature_offset(i), spec.block_dims[i]) =
            p * shifted_solve(s, p, spec.sigma2, s * spec.block_beta(i));
    }
    return dense_coefficients(full, block_offsets(spec), spec.block_dims);
}

Vector bayes_sparse(const BlockModelSpec& spec, std::size_t i) {
    validate(spec);
    if (i >= spec.experts()) {
        throw ContractError("bayes_sparse: block " + std::to_string(i) + " does not exist");
    }
    const Matrix& s = spec.covariances[i];
    return shifted_solve(s, 1.0, spec.sigma2, s * spec.block_beta(i));
}

CoefficientSet bayes_sparse_all(const BlockModelSpec& spec) {
    std::vector<Vector> blocks;
    for (std::size_t i = 0; i < spec.experts(); ++i) {
        blocks.push_back(bayes_sparse(spec, i));
    }
    return sparse_coefficients(blocks, block_offsets(spec));
}

}  // namespace moefn
