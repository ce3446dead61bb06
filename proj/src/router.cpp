#include "moefn/router.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "moefn/parallel.hpp"

namespace moefn {

const char* to_string(QdaMode mode) {
    return mode == QdaMode::literal ? "literal" : "full_likelihood";
}

QdaRouter fit_qda(const Dataset& data, QdaMode mode, std::optional<double> known_sigma2) {
    const std::size_t k = data.experts();
    QdaRouter out;
    out.mode = mode;
    out.offsets = data.feature_offsets;
    out.dims = data.feature_dims;
    for (std::size_t i = 0; i < k; ++i) {
        const Matrix xb = data.block_xbar(i);
        if (xb.rows() < 1) {
            throw ContractError("fit_qda: class " + std::to_string(i + 1) + " has no samples");
        }
        Matrix c = xb.transpose() * xb / static_cast<double>(xb.rows());
        c = 0.5 * (c + c.transpose());
        SymEigResult eig = sym_eig(c);
        const double top = std::max(eig.values(0), 0.0);
        if (!(eig.values(eig.values.size() - 1) > 1e-12 * top) || top == 0.0) {
            const double trace = c.trace() / static_cast<double>(c.rows());
            c.diagonal().array() += 1e-8 * (trace > 0.0 ? trace : 1.0);
            eig = sym_eig(c);
            out.ridged.push_back(i);
        }
        out.log_dets.push_back(eig.values.array().log().sum());
        out.inverses.push_back(eig.vectors * eig.values.cwiseInverse().asDiagonal() * eig.vectors.transpose());
        out.covariances.push_back(c);
    }
    if (known_sigma2) {
        if (!(*known_sigma2 >= 0.0)) {
            throw ContractError("fit_qda: known sigma2 must be >= 0");
        }
        out.noise_variance = *known_sigma2;
    } else {
        std::vector<double> off_block;
        for (Eigen::Index r = 0; r < data.xbar.rows(); ++r) {
            const std::size_t z = data.row_expert[static_cast<std::size_t>(r)];
            for (Eigen::Index c = 0; c < data.xbar.cols(); ++c) {
                if (c < data.feature_offsets[z] || c >= data.feature_offsets[z] + data.feature_dims[z]) {
                    off_block.push_back(data.xbar(r, c) * data.xbar(r, c));
                }
            }
        }
        out.noise_variance = off_block.empty() ? 1.0 : pairwise_sum(off_block) / static_cast<double>(off_block.size());
    }
    // A zero noise estimate (noiseless data) is floored so the off-block term stays finite.
    double scale = 0.0;
    for (const Matrix& c : out.covariances) {
        scale = std::max(scale, c.trace() / static_cast<double>(c.rows()));
    }
    out.noise_variance = std::max(out.noise_variance, 1e-12 * std::max(scale, 1.0));
    return out;
}

Vector qda_scores(const QdaRouter& router, const Eigen::Ref<const Vector>& x) {
    const std::size_t k = router.classes();
    Vector scores(static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < k; ++i) {
        const Vector xs = x.segment(router.offsets[i], router.dims[i]);
        double g = -0.5 * router.log_dets[i] - 0.5 * xs.dot(router.inverses[i] * xs);
        if (router.mode == QdaMode::full_likelihood) {
            const double s2 = router.noise_variance;
            g += xs.squaredNorm() / (2.0 * s2) + 0.5 * static_cast<double>(router.dims[i]) * std::log(s2);
        }
        scores(static_cast<Eigen::Index>(i)) = g;
    }
    return scores;
}

std::size_t argmax(const Eigen::Ref<const Vector>& scores) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < scores.size(); ++i) {
        if (scores(i) > scores(best)) {
            best = i;
        }
    }
    return static_cast<std::size_t>(best);
}

std::size_t route(const QdaRouter& router, const Eigen::Ref<const Vector>& x) {
    return argmax(qda_scores(router, x));
}

std::vector<Eigen::Index> stratified_counts(const std::vector<double>& probs, std::size_t n) {
    std::vector<Eigen::Index> counts(probs.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double exact = probs[i] * static_cast<double>(n);
        const auto whole = static_cast<std::size_t>(std::floor(exact + 1e-9));
        counts[i] = static_cast<Eigen::Index>(whole);
        assigned += whole;
        remainders.emplace_back(exact - static_cast<double>(whole), i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < n && r < remainders.size(); ++r, ++assigned) {
        counts[remainders[r].second] += 1;
    }
    return counts;
}

RouterSweepResult router_sweep(const BlockModelSpec& spec, const std::vector<std::size_t>& n_grid,
                               std::size_t test_size, std::size_t trials, QdaMode mode, const RngStream& rng) {
    validate(spec);
    if (n_grid.empty() || trials < 1 || test_size < 1) {
        throw ContractError("router_sweep: need a non-empty grid, trials >= 1 and test_size >= 1");
    }
    for (std::size_t g = 1; g < n_grid.size(); ++g) {
        if (n_grid[g] <= n_grid[g - 1]) {
            throw ContractError("router_sweep: grid must be strictly increasing");
        }
    }
    RouterSweepResult out;
    out.mode = mode;
    out.test_size = test_size;
    out.trials = trials;
    std::vector<double> errors(n_grid.size() * trials);
    parallel_for(errors.size(), [&](std::size_t task) {
        const std::size_t g = task / trials;
        RngStream child = rng.child(task);
        BlockModelSpec train = spec;
        train.block_rows = stratified_counts(spec.expert_probs, n_grid[g]);
        for (std::size_t i = 0; i < spec.experts(); ++i) {
            if (train.block_rows[i] < 2) {
                throw ContractError("router_sweep: n = " + std::to_string(n_grid[g]) + " gives class " +
                                    std::to_string(i + 1) + " fewer than 2 training rows");
            }
        }
        const QdaRouter router = fit_qda(generate_design(train, child), mode);
        const PopulationSample test = sample_population(spec, test_size, child);
        std::size_t wrong = 0;
        for (std::size_t s = 0; s < test.size(); ++s) {
            wrong += route(router, test.xbar.row(static_cast<Eigen::Index>(s)).transpose()) != test.expert[s];
        }
        errors[task] = static_cast<double>(wrong) / static_cast<double>(test_size);
    });
    for (std::size_t g = 0; g < n_grid.size(); ++g) {
        RouterSweepPoint p;
        p.n = n_grid[g];
        p.trial_errors.assign(errors.begin() + static_cast<std::ptrdiff_t>(g * trials),
                              errors.begin() + static_cast<std::ptrdiff_t>((g + 1) * trials));
        const MeanStderr stats = mean_stderr(p.trial_errors);
        p.mean_error = stats.mean;
        p.std_error = stats.std_error;
        out.points.push_back(std::move(p));
    }
    return out;
}

std::vector<std::size_t> oracle_labels(const Matrix& losses) {
    if (losses.cols() < 1) {
        throw ContractError("oracle_labels: need at least one expert");
    }
    std::vector<std::size_t> labels(static_cast<std::size_t>(losses.rows()));
    for (Eigen::Index r = 0; r < losses.rows(); ++r) {
        Eigen::Index best = 0;
        for (Eigen::Index e = 1; e < losses.cols(); ++e) {
            if (losses(r, e) < losses(r, best)) {
                best = e;
            }
        }
        labels[static_cast<std::size_t>(r)] = static_cast<std::size_t>(best);
    }
    return labels;
}

Matrix squared_error_losses(const Matrix& predictions, const Vector& y) {
    if (predictions.rows() != y.size()) {
        throw ContractError("squared_error_losses: row mismatch");
    }
    return (predictions.colwise() - y).array().square().matrix();
}

Vector softmax(const Eigen::Ref<const Vector>& logits) {
    const double top = logits.maxCoeff();
    Vector e = (logits.array() - top).exp();
    return e / e.sum();
}

Vector LogisticRouter::probabilities(const Eigen::Ref<const Vector>& x) const {
    return softmax(weights * x + bias);
}

Matrix LogisticRouter::batch_probabilities(const Matrix& features) const {
    Matrix logits = (features * weights.transpose()).rowwise() + bias.transpose();
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        logits.row(r) = softmax(logits.row(r).transpose()).transpose();
    }
    return logits;
}

std::size_t LogisticRouter::predict(const Eigen::Ref<const Vector>& x) const {
    return argmax(probabilities(x));
}

namespace {

double soft_threshold(double v, double t) {
    if (v > t) {
        return v - t;
    }
    if (v < -t) {
        return v + t;
    }
    return 0.0;
}

struct LogisticState {
    Matrix weights;
    Vector bias;
};

// Mean cross-entropy plus penalties; fills the smooth-part gradient when asked.
double logistic_objective(const Matrix& x, const Matrix& onehot, const LogisticState& s, const LogisticOptions& opt,
                          Matrix* grad_w, Vector* grad_b) {
    const auto n = static_cast<double>(x.rows());
    Matrix logits = (x * s.weights.transpose()).rowwise() + s.bias.transpose();
    double ce = 0.0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double top = logits.row(r).maxCoeff();
        const double lse = top + std::log((logits.row(r).array() - top).exp().sum());
        ce += lse - logits.row(r).dot(onehot.row(r));
        logits.row(r) = (logits.row(r).array() - lse).exp();
    }
    if (grad_w) {
        const Matrix diff = (logits - onehot) / n;
        *grad_w = diff.transpose() * x + opt.l2 * s.weights;
        *grad_b = diff.colwise().sum().transpose();
    }
    return ce / n + 0.5 * opt.l2 * s.weights.squaredNorm() + opt.l1 * s.weights.cwiseAbs().sum();
}

}  // namespace

LogisticRouter fit_logistic_router(const Matrix& features, const std::vector<std::size_t>& labels,
                                   std::size_t classes, const LogisticOptions& options) {
    if (features.rows() != static_cast<Eigen::Index>(labels.size()) || labels.empty()) {
        throw ContractError("fit_logistic_router: need one label per feature row");
    }
    if (classes < 1 || !(options.l2 >= 0.0) || !(options.l1 >= 0.0) || !(options.lr > 0.0)) {
        throw ContractError("fit_logistic_router: need classes >= 1, l1, l2 >= 0 and lr > 0");
    }
    require_finite(features, "fit_logistic_router features");
    Matrix onehot = Matrix::Zero(features.rows(), static_cast<Eigen::Index>(classes));
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] >= classes) {
            throw ContractError("fit_logistic_router: label out of range");
        }
        onehot(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(labels[r])) = 1.0;
    }
    const auto k = static_cast<Eigen::Index>(classes);
    LogisticState state{Matrix::Zero(k, features.cols()), Vector::Zero(k)};
    LogisticRouter out;
    out.l2 = options.l2;
    out.l1 = options.l1;
    double lr = options.lr;
    Matrix grad_w;
    Vector grad_b;
    double objective = logistic_objective(features, onehot, state, options, &grad_w, &grad_b);
    out.objective_history.push_back(objective);
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        LogisticState next;
        double next_objective = 0.0;
        for (int attempt = 0;; ++attempt) {
            next.weights = state.weights - lr * grad_w;
            next.bias = state.bias - lr * grad_b;
            if (options.l1 > 0.0) {
                next.weights = next.weights.unaryExpr([&](double v) { return soft_threshold(v, lr * options.l1); });
            }
            next_objective = logistic_objective(features, onehot, next, options, nullptr, nullptr);
            if (next_objective <= objective || attempt >= 60) {
                break;
            }
            lr *= 0.5;
        }
        if (!std::isfinite(next_objective)) {
            throw NumericalError("fit_logistic_router: objective is not finite");
        }
        const double decrease = objective - next_objective;
        state = std::move(next);
        objective = logistic_objective(features, onehot, state, options, &grad_w, &grad_b);
        out.objective_history.push_back(objective);
        out.epochs_run = epoch + 1;
        if (decrease <= options.tolerance * std::max(1.0, std::abs(objective))) {
            break;
        }
    }
    out.weights = std::move(state.weights);
    out.bias = std::move(state.bias);
    out.final_lr = lr;
    return out;
}

std::vector<std::size_t> topk_route(const LogisticRouter& router, const Eigen::Ref<const Vector>& x, std::size_t k) {
    if (k < 1 || k > router.classes()) {
        throw ContractError("topk_route: need 1 <= K <= number of experts");
    }
    const Vector p = router.probabilities(x);
    std::vector<std::size_t> order(router.classes());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return p(static_cast<Eigen::Index>(a)) > p(static_cast<Eigen::Index>(b));
    });
    order.resize(k);
    return order;
}

}  // namespace moefn
