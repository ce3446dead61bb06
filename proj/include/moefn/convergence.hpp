#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moefn/blockmodel.hpp"

namespace moefn {

struct GdTrajectory {
    double step_size = 0.0;
    std::vector<double> residual_norms;  // r_0 .. r_T
    Vector coefficients;
    std::size_t iterations = 0;
    bool converged = false;
};

/// Full-batch gradient descent on |Xbar b - y|^2 / 2 from b = 0 with a
/// constant step (default 1 / s_max(Xbar)^2). Stops when r_t < 1e-12 r_0 or
/// the gradient norm falls below 1e-12 of its initial value. Throws
/// NumericalError if r_t exceeds 10 r_0.
GdTrajectory gd_fit(const Matrix& xbar, const Vector& y, std::size_t max_steps,
                    std::optional<double> step_size = std::nullopt);

/// Limit of a squared singular value of (X + E) where X has squared singular
/// value lambda2 and E has aspect ratio c and per-entry variance sigma2 / rows:
/// (sigma2 + l)(c sigma2 + l) / l above the threshold l > sqrt(c) sigma2,
/// sigma2 (1 + sqrt(c))^2 (the bulk edge) otherwise.
double bbp_singular_value(double lambda2, double sigma2, double c);

/// Spike map f(u) = (sigma2 + u)(c sigma2 + u) / u used by the rate formulas.
double spike_map(double u, double sigma2, double c);

/// 1 - f(l_min^2) / f(l_1^2) for one block's descending clean singular values.
/// Assumption checks are appended to `warnings`.
double rho_sparse(const Vector& spectrum, double sigma2, double c, std::vector<std::string>* warnings = nullptr);

/// 1 - f(min_l l_min^2) / f(max_j l_1^2) over all blocks.
double rho_dense(const std::vector<Vector>& spectra, double sigma2, double c,
                 std::vector<std::string>* warnings = nullptr);

/// Geometric mean of r_{t+1} / r_t over the last tail_fraction of transitions.
double empirical_rate(std::span<const double> residuals, double tail_fraction = 0.25);
double empirical_rate(const GdTrajectory& trajectory, double tail_fraction = 0.25);

/// 1 - s_min^2 / s_max^2 over the non-zero singular values of m.
double svd_rate(const Matrix& m);

struct SpectrumReport {
    double c = 0.0;
    double sigma2 = 0.0;
    double threshold = 0.0;  // sqrt(c) sigma2
    std::vector<Vector> clean;             // per-block singular values
    std::vector<Vector> predicted_sq;      // bbp_singular_value of each clean value
    std::vector<Vector> empirical_sq;      // squared singular values of each noisy block
    std::vector<std::vector<bool>> above_threshold;
    Vector dense_predicted_sq;             // union of block predictions, descending
    Vector dense_empirical_sq;
};

struct ConvergenceReport {
    SpectrumReport spectrum;
    std::vector<double> rho_sparse;
    double rho_dense = 0.0;
    std::vector<double> empirical_sparse;
    double empirical_dense = 0.0;
    std::vector<double> svd_rate_sparse;
    double svd_rate_dense = 0.0;
    std::vector<GdTrajectory> sparse_runs;
    GdTrajectory dense_run;
    std::vector<std::string> warnings;
};

/// Builds a fixed design with the given clean spectra, adds noise with
/// per-entry variance sigma2 / n to the dense system and sigma2 / n_i to each
/// block (the block noise is sqrt(k) times the matching slice of the dense
/// noise), runs gd_fit on every block and on the full system, and compares
/// the measured tail rates with the closed-form ones. Violated assumptions are
/// reported in `warnings`.
ConvergenceReport convergence_experiment(const BlockModelSpec& spec, const std::vector<Vector>& spectra,
                                         std::size_t steps, RngStream& rng, double tail_fraction = 0.25);

struct SpikeCheck {
    std::vector<double> spikes;        // clean squared singular values
    std::vector<double> predicted_sq;  // bbp_singular_value per spike
    std::vector<double> empirical_sq;  // top squared singular values of the noisy matrix
    double predicted_edge = 0.0;
    double empirical_edge = 0.0;       // largest squared singular value after the spikes
};

/// rows x (c rows) matrix with the given squared spikes plus noise of per-entry
/// variance sigma2 / rows.
SpikeCheck spike_experiment(Eigen::Index rows, double c, const std::vector<double>& spikes, double sigma2,
                            RngStream& rng);

}  // namespace moefn
