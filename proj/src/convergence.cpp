#include "moefn/convergence.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "moefn/parallel.hpp"

namespace moefn {

GdTrajectory gd_fit(const Matrix& xbar, const Vector& y, std::size_t max_steps, std::optional<double> step_size) {
    if (max_steps < 1) {
        throw ContractError("gd_fit: max_steps must be >= 1");
    }
    if (xbar.rows() != y.size()) {
        throw ContractError("gd_fit: Xbar and y have different row counts");
    }
    GdTrajectory out;
    out.coefficients = Vector::Zero(xbar.cols());
    const double r0 = y.norm();
    out.residual_norms.push_back(r0);
    if (r0 == 0.0) {
        out.converged = true;
        return out;
    }
    if (step_size) {
        out.step_size = *step_size;
    } else {
        const double s1 = svd(xbar).singular_values(0);
        if (s1 == 0.0) {
            throw ContractError("gd_fit: Xbar is zero, no step size can reduce the residual");
        }
        out.step_size = 1.0 / (s1 * s1);
    }
    Vector resid = -y;
    const double g0 = (xbar.transpose() * resid).norm();
    for (std::size_t t = 1; t <= max_steps; ++t) {
        const Vector grad = xbar.transpose() * resid;
        if (grad.norm() <= 1e-12 * g0) {
            out.converged = true;
            break;
        }
        out.coefficients -= out.step_size * grad;
        resid = xbar * out.coefficients - y;
        const double r = resid.norm();
        out.residual_norms.push_back(r);
        out.iterations = t;
        if (!std::isfinite(r) || r > 10.0 * r0) {
            std::ostringstream msg;
            msg << "gd_fit: diverged at step " << t << " with step size " << out.step_size;
            throw NumericalError(msg.str());
        }
        if (r < 1e-12 * r0) {
            out.converged = true;
            break;
        }
    }
    return out;
}

double bbp_singular_value(double lambda2, double sigma2, double c) {
    if (!(lambda2 >= 0.0) || !(sigma2 >= 0.0) || !(c > 0.0)) {
        throw ContractError("bbp_singular_value: need lambda2 >= 0, sigma2 >= 0, c > 0");
    }
    if (lambda2 > std::sqrt(c) * sigma2) {
        return (sigma2 + lambda2) * (c * sigma2 + lambda2) / lambda2;
    }
    const double root = 1.0 + std::sqrt(c);
    return sigma2 * root * root;
}

double spike_map(double u, double sigma2, double c) {
    return (sigma2 + u) * (c * sigma2 + u) / u;
}

namespace {

void check_assumption(double min_value, double sigma2, double c, const std::string& label,
                      std::vector<std::string>* warnings) {
    if (!warnings) {
        return;
    }
    const double threshold = std::sqrt(c) * sigma2;
    if (min_value * min_value <= threshold) {
        std::ostringstream msg;
        msg << label << ": smallest squared singular value " << min_value * min_value
            << " is not above sqrt(c) sigma2 = " << threshold;
        if (min_value > threshold) {
            msg << " (only the unsquared condition holds)";
        }
        warnings->push_back(msg.str());
    }
}

double extreme_ratio_rate(double largest, double smallest, double sigma2, double c) {
    if (!(smallest > 0.0)) {
        throw ContractError("convergence rate: smallest singular value must be positive");
    }
    const double l1 = largest * largest;
    const double lm = smallest * smallest;
    return 1.0 - spike_map(lm, sigma2, c) / spike_map(l1, sigma2, c);
}

}  // namespace

double rho_sparse(const Vector& spectrum, double sigma2, double c, std::vector<std::string>* warnings) {
    if (spectrum.size() == 0) {
        throw ContractError("rho_sparse: empty spectrum");
    }
    check_assumption(spectrum.minCoeff(), sigma2, c, "block", warnings);
    return extreme_ratio_rate(spectrum.maxCoeff(), spectrum.minCoeff(), sigma2, c);
}

double rho_dense(const std::vector<Vector>& spectra, double sigma2, double c, std::vector<std::string>* warnings) {
    if (spectra.empty()) {
        throw ContractError("rho_dense: no spectra");
    }
    double largest = 0.0;
    double smallest = std::numeric_limits<double>::infinity();
    for (const Vector& s : spectra) {
        if (s.size() == 0) {
            throw ContractError("rho_dense: empty spectrum");
        }
        largest = std::max(largest, s.maxCoeff());
        smallest = std::min(smallest, s.minCoeff());
    }
    check_assumption(smallest, sigma2, c, "dense system", warnings);
    return extreme_ratio_rate(largest, smallest, sigma2, c);
}

double empirical_rate(std::span<const double> residuals, double tail_fraction) {
    if (!(tail_fraction > 0.0 && tail_fraction < 1.0)) {
        throw ContractError("empirical_rate: tail_fraction must lie in (0, 1)");
    }
    if (residuals.size() < 21) {
        throw ContractError("empirical_rate: need at least 20 recorded steps");
    }
    const std::size_t transitions = residuals.size() - 1;
    const auto count = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(tail_fraction * transitions)));
    double log_sum = 0.0;
    for (std::size_t t = transitions - count; t < transitions; ++t) {
        if (!(residuals[t] > 0.0) || !(residuals[t + 1] > 0.0)) {
            throw ContractError("empirical_rate: residual reached zero inside the tail window; use fewer steps");
        }
        log_sum += std::log(residuals[t + 1] / residuals[t]);
    }
    const double rate = std::exp(log_sum / static_cast<double>(count));
    if (rate > 1.0 + 1e-12) {
        throw ContractError("empirical_rate: residuals are growing in the tail window");
    }
    return rate;
}

double empirical_rate(const GdTrajectory& trajectory, double tail_fraction) {
    return empirical_rate(trajectory.residual_norms, tail_fraction);
}

double svd_rate(const Matrix& m) {
    const Vector s = svd(m).singular_values;
    const double tol = static_cast<double>(std::max(m.rows(), m.cols())) * 1e-15 * s(0);
    double smallest = s(0);
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (s(i) > tol) {
            smallest = s(i);
        }
    }
    return 1.0 - (smallest * smallest) / (s(0) * s(0));
}

ConvergenceReport convergence_experiment(const BlockModelSpec& spec, const std::vector<Vector>& spectra,
                                         std::size_t steps, RngStream& rng, double tail_fraction) {
    validate(spec);
    const std::size_t k = spec.experts();
    if (spectra.size() != k) {
        throw ContractError("convergence_experiment: need one spectrum per block");
    }
    ConvergenceReport out;
    const bool balanced = std::all_of(spec.block_dims.begin(), spec.block_dims.end(),
                                      [&](auto d) { return d == spec.block_dims[0]; }) &&
                          std::all_of(spec.block_rows.begin(), spec.block_rows.end(),
                                      [&](auto n) { return n == spec.block_rows[0]; });
    if (!balanced) {
        out.warnings.emplace_back("blocks are not balanced; the rate formulas assume n_i = n/k and d_i = d/k");
    }
    const auto n = static_cast<double>(spec.sample_count());
    const double c = static_cast<double>(spec.feature_dim()) / n;
    if (!(c > 1.0)) {
        out.warnings.emplace_back("aspect ratio c = d/n is not above 1");
    }

    BlockModelSpec noisy = spec;
    noisy.sigma2 = spec.sigma2 / n;
    const Dataset ds = fixed_design(noisy, spectra, rng);

    std::vector<Matrix> block_xbar(k);
    std::vector<Vector> block_y(k);
    const double scale = std::sqrt(static_cast<double>(k));
    for (std::size_t i = 0; i < k; ++i) {
        const Eigen::Index r0 = spec.row_offset(i);
        const Eigen::Index c0 = spec.feature_offset(i);
        block_xbar[i] = ds.x.block(r0, c0, spec.block_rows[i], spec.block_dims[i]) +
                        scale * ds.noise.block(r0, c0, spec.block_rows[i], spec.block_dims[i]);
        block_y[i] = ds.y.segment(r0, spec.block_rows[i]);
    }

    SpectrumReport& sr = out.spectrum;
    sr.c = c;
    sr.sigma2 = spec.sigma2;
    sr.threshold = std::sqrt(c) * spec.sigma2;
    std::vector<double> union_pred;
    for (std::size_t i = 0; i < k; ++i) {
        const Vector& s = spectra[i];
        sr.clean.push_back(s);
        Vector pred(s.size());
        std::vector<bool> flags;
        for (Eigen::Index j = 0; j < s.size(); ++j) {
            pred(j) = bbp_singular_value(s(j) * s(j), spec.sigma2, c);
            flags.push_back(s(j) * s(j) > sr.threshold);
            union_pred.push_back(pred(j));
        }
        sr.predicted_sq.push_back(pred);
        sr.above_threshold.push_back(flags);
        std::vector<std::string> block_warnings;
        out.rho_sparse.push_back(rho_sparse(s, spec.sigma2, c, &block_warnings));
        for (auto& w : block_warnings) {
            out.warnings.push_back("block " + std::to_string(i + 1) + ": " + w);
        }
    }
    std::sort(union_pred.begin(), union_pred.end(), std::greater<>());
    sr.dense_predicted_sq = Eigen::Map<Vector>(union_pred.data(), static_cast<Eigen::Index>(union_pred.size()));
    out.rho_dense = rho_dense(spectra, spec.sigma2, c, &out.warnings);

    out.sparse_runs.resize(k);
    sr.empirical_sq.resize(k);
    out.svd_rate_sparse.resize(k);
    Vector dense_sv;
    parallel_for(k + 1, [&](std::size_t task) {
        if (task == k) {
            out.dense_run = gd_fit(ds.xbar, ds.y, steps);
            dense_sv = svd(ds.xbar).singular_values;
            return;
        }
        out.sparse_runs[task] = gd_fit(block_xbar[task], block_y[task], steps);
        sr.empirical_sq[task] = svd(block_xbar[task]).singular_values.array().square();
        out.svd_rate_sparse[task] = svd_rate(block_xbar[task]);
    });
    sr.dense_empirical_sq = dense_sv.array().square();
    out.svd_rate_dense = svd_rate(ds.xbar);
    for (std::size_t i = 0; i < k; ++i) {
        out.empirical_sparse.push_back(empirical_rate(out.sparse_runs[i], tail_fraction));
    }
    out.empirical_dense = empirical_rate(out.dense_run, tail_fraction);
    return out;
}

SpikeCheck spike_experiment(Eigen::Index rows, double c, const std::vector<double>& spikes, double sigma2,
                            RngStream& rng) {
    const auto cols = static_cast<Eigen::Index>(std::llround(c * static_cast<double>(rows)));
    const Eigen::Index rank = std::min(rows, cols);
    if (static_cast<Eigen::Index>(spikes.size()) >= rank) {
        throw ContractError("spike_experiment: too many spikes for the matrix size");
    }
    BlockModelSpec spec = balanced_spec(1, cols, rows, sigma2 / static_cast<double>(rows), 1.0);
    Vector spectrum = Vector::Zero(rank);
    SpikeCheck out;
    for (std::size_t i = 0; i < spikes.size(); ++i) {
        spectrum(static_cast<Eigen::Index>(i)) = std::sqrt(spikes[i]);
    }
    std::sort(spectrum.data(), spectrum.data() + spectrum.size(), std::greater<>());
    const Dataset ds = fixed_design(spec, {spectrum}, rng);
    const Vector s = svd(ds.xbar).singular_values;
    out.spikes = spikes;
    std::sort(out.spikes.begin(), out.spikes.end(), std::greater<>());
    for (std::size_t i = 0; i < out.spikes.size(); ++i) {
        out.predicted_sq.push_back(bbp_singular_value(out.spikes[i], sigma2, c));
        out.empirical_sq.push_back(s(static_cast<Eigen::Index>(i)) * s(static_cast<Eigen::Index>(i)));
    }
    const double root = 1.0 + std::sqrt(c);
    out.predicted_edge = sigma2 * root * root;
    const double edge = s(static_cast<Eigen::Index>(out.spikes.size()));
    out.empirical_edge = edge * edge;
    return out;
}

}  // namespace moefn
