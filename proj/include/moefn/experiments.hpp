#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "moefn/risk.hpp"

namespace moefn {

/// Mean and standard error of one estimator kind at one grid value.
struct SweepPoint {
    std::size_t n = 0;
    EstimatorKind kind = EstimatorKind::dense;
    double mean = 0.0;
    double std_error = 0.0;
    std::vector<double> trial_values;
};

struct SweepResult {
    std::vector<std::size_t> grid;
    std::vector<SweepPoint> dense;
    std::vector<SweepPoint> sparse;
    std::size_t trials = 0;
    std::uint64_t seed = 0;
    BlockModelSpec spec;                // block_rows as given; each grid point overrides them
    std::vector<std::string> warnings;  // grid points where some block has fewer rows than features
};

/// For each total n (split across experts by stratified_counts) and trial:
/// a fresh design, both minimum-norm estimators, and their closed-form excess
/// risks. Trial t at grid index g uses rng.child(g * trials + t).
SweepResult sample_complexity_sweep(const BlockModelSpec& spec, const std::vector<std::size_t>& n_grid,
                                    std::size_t trials, const RngStream& rng);

enum class CurveBasis {
    inverse_square,             // a / n^2
    inverse_square_and_linear,  // a / n^2 + b / n
};

const char* to_string(CurveBasis basis);

struct CurveFit {
    CurveBasis basis = CurveBasis::inverse_square;
    double a = 0.0;  // 1/n^2 coefficient
    double b = 0.0;  // 1/n coefficient (0 for the one-term basis)
    double rss = 0.0;

    double operator()(double n) const { return a / (n * n) + b / n; }
};

/// Linear least squares in the basis functions. Throws ContractError when the
/// design is rank deficient (too few distinct n) or any n is not positive.
CurveFit fit_risk_curve(const std::vector<std::pair<double, double>>& points, CurveBasis basis);

/// Least-squares slope of log y against log n; y must be positive.
double loglog_slope(const std::vector<std::pair<double, double>>& points);

/// Scalar errors-in-variables regression y = beta x, x ~ N(0, lambda2),
/// observed xbar = x + N(0, sigma2).
struct CaseStudyPoint {
    std::size_t n = 0;
    double risk_mean = 0.0;  // population risk of the OLS slope fitted on (xbar, y), averaged over trials
    double risk_std_error = 0.0;
    double bias_term = 0.0;      // sigma2 lambda2 beta^2 / (lambda2 + sigma2)
    double delta_variance = 0.0; // beta^2 lambda2 sigma2^2 / (n (lambda2 + sigma2)^2)
    double excess() const { return risk_mean - bias_term; }
};

/// Trial t at grid index g uses rng.child(g * trials + t).
std::vector<CaseStudyPoint> case_study_1d(double lambda2, double sigma2, double beta,
                                          const std::vector<std::size_t>& n_grid, std::size_t trials,
                                          const RngStream& rng);

struct RobustnessPoint {
    double sigma_o2 = 0.0;
    EstimatorKind kind = EstimatorKind::dense;
    double closed_form = 0.0;
    MonteCarloEstimate monte_carlo;
};

/// robustness_risk and its Monte-Carlo counterpart at the Bayes coefficients
/// for each test noise level and kind. Grid point g uses rng.child(g).
std::vector<RobustnessPoint> robustness_sweep(const BlockModelSpec& spec, const std::vector<double>& sigma_o2_grid,
                                              const std::vector<EstimatorKind>& kinds, std::size_t mc_samples,
                                              const RngStream& rng);

struct MisroutePoint {
    double eta = 0.0;
    EstimatorKind kind = EstimatorKind::dense;
    double closed_form = 0.0;  // NaN when the printed form does not apply (see misroute_risk)
    double exact = 0.0;        // expectation of the simulated error
    MonteCarloEstimate monte_carlo;
    std::vector<std::string> warnings;
};

/// Closed form, exact expectation and simulation of routing expert i's
/// inputs to expert j for each eta. Grid point g uses rng.child(g) for both kinds.
std::vector<MisroutePoint> misroute_sweep(const BlockModelSpec& spec, std::size_t i, std::size_t j,
                                          const std::vector<double>& eta_grid, std::size_t mc_samples,
                                          const RngStream& rng);

}  // namespace moefn
