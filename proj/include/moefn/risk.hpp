#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "moefn/estimators.hpp"

namespace moefn {

struct MonteCarloEstimate {
    double estimate = 0.0;
    double std_error = 0.0;
    std::size_t samples = 0;

    /// |estimate - value| in units of std_error (infinite when std_error is 0 and they differ).
    double z_score(double value) const;
};

struct RiskReport {
    EstimatorKind kind = EstimatorKind::dense;
    double closed_form = 0.0;
    MonteCarloEstimate monte_carlo;
    double excess = 0.0;
    std::string provenance;
};

/// Expected squared error of a linear predictor over the population:
/// sum_i p_i (b*_i' S_i b*_i + b_i' S_i b_i + sigma2 |b|^2 - 2 b_i' S_i b*_i),
/// where |b|^2 is the full norm for dense sets and |b_i|^2 for sparse sets.
double population_risk(const CoefficientSet& coeffs, const BlockModelSpec& spec);

/// Maps a noisy input to an expert index.
using RouteFn = std::function<std::size_t(const Eigen::Ref<const Vector>& xbar)>;

/// Samples per Monte-Carlo chunk. Each chunk draws from its own child stream,
/// so estimates do not depend on the thread count.
inline constexpr std::size_t kMonteCarloChunk = 4096;

/// Direct estimate of E[(f(xbar) - y)^2] over m fresh population draws. Dense
/// sets predict xbar' full; sparse sets predict xbar_{S_r}' b_r with r the true
/// expert, or router(xbar) when a router is supplied.
MonteCarloEstimate monte_carlo_risk(const CoefficientSet& coeffs, const BlockModelSpec& spec, std::size_t m,
                                    const RngStream& rng, const RouteFn& router = {});

/// As monte_carlo_risk, with every input's noise redrawn at variance sigma_o2.
MonteCarloEstimate monte_carlo_robustness_risk(const CoefficientSet& coeffs, const BlockModelSpec& spec,
                                               double sigma_o2, std::size_t m, const RngStream& rng);

/// Risk of the Bayes estimator of the given kind:
/// sparse sum_i p_i sigma2 b*_i' S_i (S_i + sigma2 I)^-1 b*_i,
/// dense  sum_i p_i sigma2 b*_i' S_i (p_i S_i + sigma2 I)^-1 b*_i.
double bayes_risk(const BlockModelSpec& spec, EstimatorKind kind);

/// Bayes risk when the test-time noise variance is sigma_o2 instead of sigma2.
double robustness_risk(const BlockModelSpec& spec, EstimatorKind kind, double sigma_o2);

/// Mis-routing risk exactly as the closed forms are printed (the dense
/// expression keeps its final Sigma_j factor, so it needs d_r == d_j for every
/// r outside {i, j} with p_r > 0). eta in (0, 1] is accepted and reported in
/// `warnings`.
double misroute_risk(const BlockModelSpec& spec, std::size_t i, std::size_t j, double eta, EstimatorKind kind,
                     std::vector<std::string>* warnings = nullptr);

/// True when the dense closed form's final sum is non-zero, i.e. its
/// Sigma_j factor actually affects the value.
bool misroute_factor_flagged(const BlockModelSpec& spec, std::size_t i, std::size_t j);

/// Exact expectation of the squared error that misroute_risk_mc samples:
/// sparse eta^2 b_j' S_j b_j + sigma2 |b_j|^2 + b*_i' S_i b*_i,
/// dense (b_i - b*_i)' S_i (b_i - b*_i) + eta^2 b_j' S_j b_j + sigma2 |b|^2.
double misroute_risk_exact(const BlockModelSpec& spec, std::size_t i, std::size_t j, double eta,
                           EstimatorKind kind);

/// Simulation of the mis-routing scenario with Bayes coefficients; the sparse
/// predictor is forced onto expert j.
MonteCarloEstimate misroute_risk_mc(const BlockModelSpec& spec, std::size_t i, std::size_t j, double eta,
                                    EstimatorKind kind, std::size_t m, const RngStream& rng);

/// population_risk(coeffs) - bayes_risk(spec, coeffs.kind).
double excess_risk(const CoefficientSet& coeffs, const BlockModelSpec& spec);

}  // namespace moefn
