#include "moefn/experiments.hpp"

#include <cmath>
#include <limits>
#include <set>

#include "moefn/parallel.hpp"
#include "moefn/router.hpp"

namespace moefn {

namespace {

void require_increasing(const std::vector<std::size_t>& grid, const char* what) {
    if (grid.empty()) {
        throw ContractError(std::string(what) + ": grid must be non-empty");
    }
    for (std::size_t g = 1; g < grid.size(); ++g) {
        if (grid[g] <= grid[g - 1]) {
            throw ContractError(std::string(what) + ": grid must be strictly increasing");
        }
    }
}

SweepPoint summarize(std::size_t n, EstimatorKind kind, std::vector<double> values) {
    SweepPoint p;
    p.n = n;
    p.kind = kind;
    const MeanStderr s = mean_stderr(values);
    p.mean = s.mean;
    p.std_error = s.std_error;
    p.trial_values = std::move(values);
    return p;
}

}  // namespace

const char* to_string(CurveBasis basis) {
    return basis == CurveBasis::inverse_square ? "a/n^2" : "a/n^2 + b/n";
}

SweepResult sample_complexity_sweep(const BlockModelSpec& spec, const std::vector<std::size_t>& n_grid,
                                    std::size_t trials, const RngStream& rng) {
    validate(spec);
    require_increasing(n_grid, "sample_complexity_sweep");
    if (trials < 1) {
        throw ContractError("sample_complexity_sweep: need at least one trial");
    }
    SweepResult out;
    out.grid = n_grid;
    out.trials = trials;
    out.seed = rng.seed();
    out.spec = spec;
    std::vector<BlockModelSpec> specs;
    for (std::size_t n : n_grid) {
        BlockModelSpec s = spec;
        s.block_rows = stratified_counts(spec.expert_probs, n);
        for (std::size_t i = 0; i < s.experts(); ++i) {
            if (s.block_rows[i] < s.block_dims[i]) {
                out.warnings.push_back("n = " + std::to_string(n) + ": block " + std::to_string(i + 1) + " has " +
                                       std::to_string(s.block_rows[i]) + " rows for " +
                                       std::to_string(s.block_dims[i]) + " features");
            }
        }
        specs.push_back(std::move(s));
    }
    const std::size_t tasks = n_grid.size() * trials;
    std::vector<double> dense(tasks), sparse(tasks);
    parallel_for(tasks, [&](std::size_t task) {
        const BlockModelSpec& s = specs[task / trials];
        RngStream local = rng.child(task);
        const Dataset ds = generate_design(s, local);
        dense[task] = excess_risk(min_norm_dense(ds), s);
        sparse[task] = excess_risk(min_norm_sparse_all(ds), s);
    });
    for (std::size_t g = 0; g < n_grid.size(); ++g) {
        const auto begin = static_cast<std::ptrdiff_t>(g * trials);
        const auto end = begin + static_cast<std::ptrdiff_t>(trials);
        out.dense.push_back(summarize(n_grid[g], EstimatorKind::dense,
                                      std::vector<double>(dense.begin() + begin, dense.begin() + end)));
        out.sparse.push_back(summarize(n_grid[g], EstimatorKind::sparse,
                                       std::vector<double>(sparse.begin() + begin, sparse.begin() + end)));
    }
    return out;
}

CurveFit fit_risk_curve(const std::vector<std::pair<double, double>>& points, CurveBasis basis) {
    const Eigen::Index terms = basis == CurveBasis::inverse_square ? 1 : 2;
    if (static_cast<Eigen::Index>(points.size()) < terms) {
        throw ContractError("fit_risk_curve: need at least as many points as basis functions");
    }
    std::set<double> distinct;
    const auto rows = static_cast<Eigen::Index>(points.size());
    Matrix design(rows, terms);
    Vector y(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto [n, value] = points[static_cast<std::size_t>(r)];
        if (!(n > 0.0) || !std::isfinite(value)) {
            throw ContractError("fit_risk_curve: n must be positive and y finite");
        }
        distinct.insert(n);
        design(r, 0) = 1.0 / (n * n);
        if (terms == 2) {
            design(r, 1) = 1.0 / n;
        }
        y(r) = value;
    }
    if (static_cast<Eigen::Index>(distinct.size()) < terms) {
        throw ContractError("fit_risk_curve: rank-deficient design (too few distinct n)");
    }
    // Column scaling keeps 1/n^2 and 1/n on comparable footing.
    const Vector scale = design.colwise().norm().transpose();
    const Matrix scaled = design * scale.cwiseInverse().asDiagonal();
    const Eigen::ColPivHouseholderQR<Matrix> qr(scaled);
    if (qr.rank() < terms) {
        throw ContractError("fit_risk_curve: rank-deficient design");
    }
    const Vector coef = qr.solve(y).cwiseQuotient(scale);
    CurveFit fit;
    fit.basis = basis;
    fit.a = coef(0);
    fit.b = terms == 2 ? coef(1) : 0.0;
    fit.rss = (design * coef - y).squaredNorm();
    return fit;
}

double loglog_slope(const std::vector<std::pair<double, double>>& points) {
    if (points.size() < 2) {
        throw ContractError("loglog_slope: need at least two points");
    }
    std::vector<double> lx, ly;
    for (const auto& [n, y] : points) {
        if (!(n > 0.0) || !(y > 0.0)) {
            throw ContractError("loglog_slope: n and y must be positive");
        }
        lx.push_back(std::log(n));
        ly.push_back(std::log(y));
    }
    return ols_slope(lx, ly);
}

std::vector<CaseStudyPoint> case_study_1d(double lambda2, double sigma2, double beta,
                                          const std::vector<std::size_t>& n_grid, std::size_t trials,
                                          const RngStream& rng) {
    require_increasing(n_grid, "case_study_1d");
    if (n_grid.front() < 2 || trials < 2) {
        throw ContractError("case_study_1d: need n >= 2 and at least two trials");
    }
    if (!(lambda2 > 0.0) || !(sigma2 >= 0.0) || !std::isfinite(beta)) {
        throw ContractError("case_study_1d: need lambda2 > 0, sigma2 >= 0 and finite beta");
    }
    const std::size_t tasks = n_grid.size() * trials;
    std::vector<double> risks(tasks);
    parallel_for(tasks, [&](std::size_t task) {
        const BlockModelSpec s =
            balanced_spec(1, 1, static_cast<Eigen::Index>(n_grid[task / trials]), sigma2, lambda2, beta);
        RngStream local = rng.child(task);
        risks[task] = population_risk(min_norm_dense(generate_design(s, local)), s);
    });
    std::vector<CaseStudyPoint> out;
    const double total = lambda2 + sigma2;
    for (std::size_t g = 0; g < n_grid.size(); ++g) {
        CaseStudyPoint p;
        p.n = n_grid[g];
        const auto begin = risks.begin() + static_cast<std::ptrdiff_t>(g * trials);
        const MeanStderr s = mean_stderr(std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(trials)));
        p.risk_mean = s.mean;
        p.risk_std_error = s.std_error;
        p.bias_term = sigma2 * lambda2 * beta * beta / total;
        p.delta_variance = beta * beta * lambda2 * sigma2 * sigma2 / (static_cast<double>(p.n) * total * total);
        out.push_back(p);
    }
    return out;
}

std::vector<RobustnessPoint> robustness_sweep(const BlockModelSpec& spec, const std::vector<double>& sigma_o2_grid,
                                              const std::vector<EstimatorKind>& kinds, std::size_t mc_samples,
                                              const RngStream& rng) {
    validate(spec);
    const CoefficientSet dense = bayes_dense(spec);
    const CoefficientSet sparse = bayes_sparse_all(spec);
    std::vector<RobustnessPoint> out;
    for (std::size_t g = 0; g < sigma_o2_grid.size(); ++g) {
        const double so2 = sigma_o2_grid[g];
        if (!(so2 >= 0.0)) {
            throw ContractError("robustness_sweep: test noise variances must be non-negative");
        }
        for (EstimatorKind kind : kinds) {
            RobustnessPoint p;
            p.sigma_o2 = so2;
            p.kind = kind;
            p.closed_form = robustness_risk(spec, kind, so2);
            if (mc_samples > 0) {
                p.monte_carlo = monte_carlo_robustness_risk(kind == EstimatorKind::dense ? dense : sparse, spec, so2,
                                                            mc_samples, rng.child(g));
            }
            out.push_back(p);
        }
    }
    return out;
}

std::vector<MisroutePoint> misroute_sweep(const BlockModelSpec& spec, std::size_t i, std::size_t j,
                                          const std::vector<double>& eta_grid, std::size_t mc_samples,
                                          const RngStream& rng) {
    validate(spec);
    std::vector<MisroutePoint> out;
    for (std::size_t g = 0; g < eta_grid.size(); ++g) {
        for (EstimatorKind kind : {EstimatorKind::sparse, EstimatorKind::dense}) {
            MisroutePoint p;
            p.eta = eta_grid[g];
            p.kind = kind;
            try {
                p.closed_form = misroute_risk(spec, i, j, p.eta, kind, &p.warnings);
            } catch (const ContractError& e) {
                if (!(p.eta > 0.0) || i >= spec.experts() || j >= spec.experts() || i == j) {
                    throw;
                }
                p.closed_form = std::numeric_limits<double>::quiet_NaN();
                p.warnings.emplace_back(e.what());
            }
            p.exact = misroute_risk_exact(spec, i, j, p.eta, kind);
            if (mc_samples > 0 && !(p.eta > 1.0)) {
                p.warnings.emplace_back("simulation skipped: the mis-routing scenario needs eta > 1");
            } else if (mc_samples > 0) {
                p.monte_carlo = misroute_risk_mc(spec, i, j, p.eta, kind, mc_samples, rng.child(g));
            }
            out.push_back(std::move(p));
        }
    }
    return out;
}

}  // namespace moefn
