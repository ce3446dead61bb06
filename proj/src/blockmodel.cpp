#include "moefn/blockmodel.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace moefn {

namespace {

std::string join_lines(const std::vector<std::string>& lines) {
    std::ostringstream out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        out << (i ? "\n" : "") << lines[i];
    }
    return out.str();
}

std::vector<Matrix> block_factors(const BlockModelSpec& spec) {
    std::vector<Matrix> factors;
    factors.reserve(spec.experts());
    for (const Matrix& cov : spec.covariances) {
        factors.push_back(psd_factor(cov));
    }
    return factors;
}

}  // namespace

SpecError::SpecError(std::vector<std::string> problems)
    : std::invalid_argument(join_lines(problems)), problems_(std::move(problems)) {}

Eigen::Index BlockModelSpec::feature_dim() const {
    return std::accumulate(block_dims.begin(), block_dims.end(), Eigen::Index{0});
}

Eigen::Index BlockModelSpec::sample_count() const {
    return std::accumulate(block_rows.begin(), block_rows.end(), Eigen::Index{0});
}

Eigen::Index BlockModelSpec::feature_offset(std::size_t i) const {
    return std::accumulate(block_dims.begin(), block_dims.begin() + static_cast<std::ptrdiff_t>(i),
                           Eigen::Index{0});
}

Eigen::Index BlockModelSpec::row_offset(std::size_t i) const {
    return std::accumulate(block_rows.begin(), block_rows.begin() + static_cast<std::ptrdiff_t>(i),
                           Eigen::Index{0});
}

Vector BlockModelSpec::block_beta(std::size_t i) const {
    return beta_star.segment(feature_offset(i), block_dims[i]);
}

std::vector<std::string> spec_problems(const BlockModelSpec& spec) {
    std::vector<std::string> problems;
    const std::size_t k = spec.experts();
    if (k == 0) {
        problems.emplace_back("block_dims: at least one expert is required");
        return problems;
    }
    for (std::size_t i = 0; i < k; ++i) {
        if (spec.block_dims[i] < 1) {
            problems.push_back("block_dims[" + std::to_string(i) + "]: must be >= 1");
        }
    }
    if (spec.block_rows.size() != k) {
        problems.emplace_back("block_rows: expected one entry per expert");
    } else {
        for (std::size_t i = 0; i < k; ++i) {
            if (spec.block_rows[i] < 0) {
                problems.push_back("block_rows[" + std::to_string(i) + "]: must be >= 0");
            }
        }
    }
    if (!(spec.sigma2 >= 0.0) || !std::isfinite(spec.sigma2)) {
        problems.emplace_back("sigma2: must be a finite value >= 0");
    }
    if (spec.covariances.size() != k) {
        problems.emplace_back("covariances: expected one matrix per expert");
    } else {
        for (std::size_t i = 0; i < k; ++i) {
            const Matrix& c = spec.covariances[i];
            const std::string path = "covariances[" + std::to_string(i) + "]";
            if (c.rows() != spec.block_dims[i] || c.cols() != spec.block_dims[i]) {
                problems.push_back(path + ": must be " + std::to_string(spec.block_dims[i]) + "x" +
                                   std::to_string(spec.block_dims[i]));
                continue;
            }
            if (!c.allFinite()) {
                problems.push_back(path + ": entries must be finite");
                continue;
            }
            const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
            if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
                problems.push_back(path + ": must be symmetric");
                continue;
            }
            if (sym_eig(c).values.minCoeff() < -1e-10) {
                problems.push_back(path + ": must be positive semi-definite");
            }
        }
    }
    if (spec.beta_star.size() != spec.feature_dim()) {
        problems.push_back("beta_star: length must equal sum(block_dims) = " +
                           std::to_string(spec.feature_dim()));
    } else if (!spec.beta_star.allFinite()) {
        problems.emplace_back("beta_star: entries must be finite");
    }
    if (spec.expert_probs.size() != k) {
        problems.emplace_back("expert_probs: expected one probability per expert");
    } else {
        double total = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            if (!(spec.expert_probs[i] >= 0.0)) {
                problems.push_back("expert_probs[" + std::to_string(i) + "]: must be >= 0");
            }
            total += spec.expert_probs[i];
        }
        if (std::abs(total - 1.0) > 1e-9) {
            std::ostringstream msg;
            msg << "expert_probs: must lie on the simplex (sum is " << total << ", expected 1)";
            problems.push_back(msg.str());
        }
    }
    return problems;
}

void validate(const BlockModelSpec& spec) {
    auto problems = spec_problems(spec);
    if (!problems.empty()) {
        throw SpecError(std::move(problems));
    }
}

BlockModelSpec balanced_spec(std::size_t k, Eigen::Index d, Eigen::Index n, double sigma2, double lambda2,
                             double beta_value) {
    const auto kk = static_cast<Eigen::Index>(k);
    if (k == 0 || d % kk != 0 || n % kk != 0) {
        throw ContractError("balanced_spec: d and n must be positive multiples of k");
    }
    BlockModelSpec spec;
    spec.block_dims.assign(k, d / kk);
    spec.block_rows.assign(k, n / kk);
    spec.sigma2 = sigma2;
    for (std::size_t i = 0; i < k; ++i) {
        spec.covariances.push_back(lambda2 * Matrix::Identity(d / kk, d / kk));
    }
    spec.beta_star = Vector::Constant(d, beta_value);
    spec.expert_probs.assign(k, 1.0 / static_cast<double>(k));
    return spec;
}

std::vector<Eigen::Index> Dataset::rows_of(std::size_t expert) const {
    std::vector<Eigen::Index> rows;
    for (std::size_t r = 0; r < row_expert.size(); ++r) {
        if (row_expert[r] == expert) {
            rows.push_back(static_cast<Eigen::Index>(r));
        }
    }
    return rows;
}

Matrix Dataset::block_xbar(std::size_t expert) const {
    const auto rows = rows_of(expert);
    Matrix out(static_cast<Eigen::Index>(rows.size()), feature_dims[expert]);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out.row(static_cast<Eigen::Index>(r)) = xbar.row(rows[r]).segment(feature_offsets[expert], feature_dims[expert]);
    }
    return out;
}

Matrix Dataset::block_x(std::size_t expert) const {
    const auto rows = rows_of(expert);
    Matrix out(static_cast<Eigen::Index>(rows.size()), feature_dims[expert]);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out.row(static_cast<Eigen::Index>(r)) = x.row(rows[r]).segment(feature_offsets[expert], feature_dims[expert]);
    }
    return out;
}

Vector Dataset::block_y(std::size_t expert) const {
    const auto rows = rows_of(expert);
    Vector out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out(static_cast<Eigen::Index>(r)) = y(rows[r]);
    }
    return out;
}

namespace {

Dataset empty_dataset(const BlockModelSpec& spec) {
    Dataset ds;
    const Eigen::Index n = spec.sample_count();
    const Eigen::Index d = spec.feature_dim();
    ds.x = Matrix::Zero(n, d);
    for (std::size_t i = 0; i < spec.experts(); ++i) {
        ds.feature_offsets.push_back(spec.feature_offset(i));
        ds.feature_dims.push_back(spec.block_dims[i]);
        ds.row_expert.insert(ds.row_expert.end(), static_cast<std::size_t>(spec.block_rows[i]), i);
    }
    return ds;
}

void finish_dataset(const BlockModelSpec& spec, Dataset& ds, RngStream& rng) {
    ds.noise = gaussian_matrix(ds.x.rows(), ds.x.cols(), std::sqrt(spec.sigma2), rng);
    ds.xbar = ds.x + ds.noise;
    ds.y = ds.x * spec.beta_star;
}

}  // namespace

Dataset generate_design(const BlockModelSpec& spec, RngStream& rng) {
    validate(spec);
    Dataset ds = empty_dataset(spec);
    const auto factors = block_factors(spec);
    for (std::size_t i = 0; i < spec.experts(); ++i) {
        const Matrix z = gaussian_matrix(spec.block_rows[i], spec.block_dims[i], 1.0, rng);
        ds.x.block(spec.row_offset(i), spec.feature_offset(i), spec.block_rows[i], spec.block_dims[i]) =
            z * factors[i].transpose();
    }
    finish_dataset(spec, ds, rng);
    return ds;
}

Dataset fixed_design(const BlockModelSpec& spec, const std::vector<Vector>& spectra, RngStream& rng) {
    validate(spec);
    if (spectra.size() != spec.experts()) {
        throw ContractError("fixed_design: need one spectrum per expert");
    }
    Dataset ds = empty_dataset(spec);
    for (std::size_t i = 0; i < spec.experts(); ++i) {
        const Eigen::Index rows = spec.block_rows[i];
        const Eigen::Index cols = spec.block_dims[i];
        const Eigen::Index rank = std::min(rows, cols);
        if (spectra[i].size() != rank) {
            throw ContractError("fixed_design: spectrum " + std::to_string(i) + " must have min(n_i, d_i) = " +
                                std::to_string(rank) + " entries");
        }
        if ((spectra[i].array() < 0.0).any() || !spectra[i].allFinite()) {
            throw ContractError("fixed_design: spectrum entries must be finite and non-negative");
        }
        const Matrix u = haar_orthogonal(rows, rng).leftCols(rank);
        const Matrix v = haar_orthogonal(cols, rng).leftCols(rank);
        ds.x.block(spec.row_offset(i), spec.feature_offset(i), rows, cols) =
            u * spectra[i].asDiagonal() * v.transpose();
    }
    finish_dataset(spec, ds, rng);
    return ds;
}

PopulationSample sample_population(const BlockModelSpec& spec, std::size_t m, RngStream& rng) {
    validate(spec);
    if (m < 1) {
        throw ContractError("sample_population: m must be >= 1");
    }
    const auto factors = block_factors(spec);
    const Eigen::Index d = spec.feature_dim();
    const double noise_std = std::sqrt(spec.sigma2);
    PopulationSample out;
    out.expert.resize(m);
    out.x = Matrix::Zero(static_cast<Eigen::Index>(m), d);
    out.xbar.resize(static_cast<Eigen::Index>(m), d);
    out.y.resize(static_cast<Eigen::Index>(m));
    for (std::size_t s = 0; s < m; ++s) {
        const auto row = static_cast<Eigen::Index>(s);
        const std::size_t z = rng.categorical(spec.expert_probs);
        out.expert[s] = z;
        const Eigen::Index dz = spec.block_dims[z];
        Vector g(dz);
        for (Eigen::Index c = 0; c < dz; ++c) {
            g(c) = rng.normal();
        }
        const Vector xz = factors[z] * g;
        out.x.row(row).segment(spec.feature_offset(z), dz) = xz.transpose();
        out.y(row) = xz.dot(spec.block_beta(z));
        for (Eigen::Index c = 0; c < d; ++c) {
            out.xbar(row, c) = out.x(row, c) + noise_std * rng.normal();
        }
    }
    out.routed = out.expert;
    return out;
}

PopulationSample perturb_population(PopulationSample samples, double sigma_o2, RngStream& rng) {
    if (!(sigma_o2 >= 0.0)) {
        throw ContractError("perturb_population: sigma_o2 must be >= 0");
    }
    const double std = std::sqrt(sigma_o2);
    for (Eigen::Index r = 0; r < samples.x.rows(); ++r) {
        for (Eigen::Index c = 0; c < samples.x.cols(); ++c) {
            samples.xbar(r, c) = samples.x(r, c) + std * rng.normal();
        }
    }
    return samples;
}

PopulationSample misroute_population(const BlockModelSpec& spec, std::size_t i, std::size_t j, double eta,
                                     std::size_t m, RngStream& rng) {
    validate(spec);
    if (i == j || i >= spec.experts() || j >= spec.experts()) {
        throw ContractError("misroute_population: need distinct valid experts i and j");
    }
    if (!(eta > 1.0)) {
        throw ContractError("misroute_population: eta must be > 1");
    }
    if (m < 1) {
        throw ContractError("misroute_population: m must be >= 1");
    }
    const Matrix fi = psd_factor(spec.covariances[i]);
    const Matrix fj = psd_factor(spec.covariances[j]);
    const Eigen::Index d = spec.feature_dim();
    const Eigen::Index di = spec.block_dims[i];
    const Eigen::Index dj = spec.block_dims[j];
    const Vector beta_i = spec.block_beta(i);
    const double noise_std = std::sqrt(spec.sigma2);
    PopulationSample out;
    out.expert.assign(m, i);
    out.routed.assign(m, j);
    out.x = Matrix::Zero(static_cast<Eigen::Index>(m), d);
    out.xbar.resize(static_cast<Eigen::Index>(m), d);
    out.y.resize(static_cast<Eigen::Index>(m));
    for (std::size_t s = 0; s < m; ++s) {
        const auto row = static_cast<Eigen::Index>(s);
        Vector gi(di);
        for (Eigen::Index c = 0; c < di; ++c) {
            gi(c) = rng.normal();
        }
        Vector gj(dj);
        for (Eigen::Index c = 0; c < dj; ++c) {
            gj(c) = rng.normal();
        }
        const Vector xi = fi * gi;
        out.x.row(row).segment(spec.feature_offset(i), di) = xi.transpose();
        out.x.row(row).segment(spec.feature_offset(j), dj) = (eta * (fj * gj)).transpose();
        out.y(row) = xi.dot(beta_i);
        for (Eigen::Index c = 0; c < d; ++c) {
            out.xbar(row, c) = out.x(row, c) + noise_std * rng.normal();
        }
    }
    return out;
}

}  // namespace moefn
