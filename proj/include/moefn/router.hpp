#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "moefn/blockmodel.hpp"

namespace moefn {

enum class QdaMode {
    literal,          // -1/2 log|C_i| - 1/2 x_S' C_i^-1 x_S
    full_likelihood,  // adds the off-block noise likelihood
};

const char* to_string(QdaMode mode);

/// Gaussian class-conditional router over known per-class feature sets.
struct QdaRouter {
    QdaMode mode = QdaMode::full_likelihood;
    std::vector<Eigen::Index> offsets;
    std::vector<Eigen::Index> dims;
    std::vector<Matrix> covariances;
    std::vector<Matrix> inverses;
    std::vector<double> log_dets;
    double noise_variance = 1.0;
    std::vector<std::size_t> ridged;  // classes whose covariance needed the ridge

    std::size_t classes() const { return dims.size(); }
};

/// C_i = X_i' X_i / n_i over the rows labelled i restricted to S_i (no mean
/// subtraction). The noise variance is the mean squared off-block entry unless
/// `known_sigma2` is given. Every class needs at least one row. Singular C_i get 1e-8 trace/d_i added to the
/// diagonal and are listed in `ridged`.
QdaRouter fit_qda(const Dataset& data, QdaMode mode = QdaMode::full_likelihood,
                  std::optional<double> known_sigma2 = std::nullopt);

Vector qda_scores(const QdaRouter& router, const Eigen::Ref<const Vector>& x);

/// Argmax of qda_scores; ties go to the smallest index.
std::size_t route(const QdaRouter& router, const Eigen::Ref<const Vector>& x);

/// Index of the largest entry; ties go to the smallest index.
std::size_t argmax(const Eigen::Ref<const Vector>& scores);

struct RouterSweepPoint {
    std::size_t n = 0;
    double mean_error = 0.0;
    double std_error = 0.0;
    std::vector<double> trial_errors;
};

struct RouterSweepResult {
    QdaMode mode = QdaMode::full_likelihood;
    std::size_t test_size = 0;
    std::size_t trials = 0;
    std::vector<RouterSweepPoint> points;
};

/// Per-class training counts for a total of n: floor(n p_i), with the
/// remainder given to the largest fractional parts (ties to smaller index).
std::vector<Eigen::Index> stratified_counts(const std::vector<double>& probs, std::size_t n);

/// For each n: fit on a stratified design of n rows, measure the 0-1 routing
/// error on test_size fresh population draws, repeat over trials.
RouterSweepResult router_sweep(const BlockModelSpec& spec, const std::vector<std::size_t>& n_grid,
                               std::size_t test_size, std::size_t trials, QdaMode mode, const RngStream& rng);

/// Row-wise argmin of a samples x experts loss matrix; ties go to the smallest index.
std::vector<std::size_t> oracle_labels(const Matrix& losses);

/// losses(s, e) = (predictions(s, e) - y(s))^2.
Matrix squared_error_losses(const Matrix& predictions, const Vector& y);

/// Multinomial logistic regression, k x d weights plus k biases.
struct LogisticRouter {
    Matrix weights;
    Vector bias;
    double l2 = 0.0;
    double l1 = 0.0;
    std::size_t epochs_run = 0;
    double final_lr = 0.0;
    std::vector<double> objective_history;

    std::size_t classes() const { return static_cast<std::size_t>(weights.rows()); }
    Vector probabilities(const Eigen::Ref<const Vector>& x) const;
    Matrix batch_probabilities(const Matrix& features) const;  // rows x classes
    std::size_t predict(const Eigen::Ref<const Vector>& x) const;
};

struct LogisticOptions {
    double l2 = 0.0;
    double l1 = 0.0;
    std::size_t epochs = 500;
    double lr = 0.5;
    double tolerance = 1e-10;  // stop when the relative objective decrease falls below this
};

/// Full-batch gradient descent from zero on mean cross-entropy + l2/2 |W|^2
/// (+ l1 |W|_1 through proximal soft-thresholding). A step that increases the
/// objective is undone and the learning rate halved. Biases are not penalized.
LogisticRouter fit_logistic_router(const Matrix& features, const std::vector<std::size_t>& labels,
                                   std::size_t classes, const LogisticOptions& options = {});

/// The K experts with the largest router probabilities, most probable first;
/// ties go to the smaller index.
std::vector<std::size_t> topk_route(const LogisticRouter& router, const Eigen::Ref<const Vector>& x, std::size_t k);

/// Numerically stable softmax.
Vector softmax(const Eigen::Ref<const Vector>& logits);

}  // namespace moefn
