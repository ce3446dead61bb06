#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "moefn/numerics.hpp"

namespace moefn {

/// Tokens x features activations with optional per-token class labels (0-based).
struct ActivationMatrix {
    Matrix values;
    std::optional<std::vector<std::size_t>> labels;

    Eigen::Index tokens() const { return values.rows(); }
    Eigen::Index features() const { return values.cols(); }
    /// 1 + largest label, or 0 without labels.
    std::size_t classes() const;
};

/// Throws ContractError on non-finite values or a label count that does not match the rows.
void validate_activations(const ActivationMatrix& acts);

/// Between-class over within-class variance per feature, with population
/// within-class variances and the denominator floored at 1e-12. Classes with
/// no rows are ignored; at least two must be present.
Vector fisher_scores(const ActivationMatrix& acts);

/// Cosine similarity between feature columns, optionally after subtracting
/// each column's mean. Zero-norm columns have similarity 0 to everything; the
/// diagonal is 1.
Matrix cosine_similarity(const Matrix& values, bool centered = true);

struct AffinityResult {
    Matrix affinity;
    Vector fisher;               // empty when the Fisher term was not used
    bool fisher_weighted = false;
};

/// S_ij exp(-|FS(i) - FS(j)|) with unit diagonal. Without labels the plain
/// cosine similarity is returned and `fisher_weighted` is false.
AffinityResult constrained_affinity(const ActivationMatrix& acts, bool centered = true);

/// The same combination for a precomputed similarity matrix.
Matrix constrained_affinity(const Matrix& similarity, const Vector& fisher);

/// Normalized spectral clustering into m groups: (A+1)/2 if A has negative
/// entries, top-m eigenvectors of D^-1/2 A D^-1/2 with unit rows, then k-means.
/// Zero-degree nodes go to the nearest centroid. Labels are 0-based and
/// numbered by first appearance.
std::vector<std::size_t> spectral_cluster(const Matrix& affinity, std::size_t m, RngStream& rng);

/// Sets the floor(sparsity * entries) smallest-magnitude entries to zero
/// (ties broken by position). sparsity must lie in [0, 1).
Matrix magnitude_prune(const Matrix& values, double sparsity);

/// Per column, average-rank percentiles of |value| in [0, 1]:
/// (rank - 1) / (tokens - 1), and 0.5 for a single token.
Matrix column_percentiles(const Matrix& values);

/// Each token goes to the module with the highest mean percentile over its
/// features; ties go to the smallest module id.
std::vector<std::size_t> assign_tokens(const Matrix& values, const std::vector<std::size_t>& feature_labels);

struct ClusterAssignment {
    std::vector<std::size_t> feature_labels;
    std::vector<std::size_t> token_labels;
    std::vector<Eigen::Index> feature_order;  // column permutation, grouped by module
    std::vector<Eigen::Index> token_order;    // row permutation, grouped by module
};

/// Stable sort of indices by label.
std::vector<Eigen::Index> order_by_label(const std::vector<std::size_t>& labels);

struct HeatmapData {
    Matrix percentiles;  // reordered
    std::vector<Eigen::Index> row_order;
    std::vector<Eigen::Index> col_order;
    std::vector<Eigen::Index> row_boundaries;  // cumulative module sizes, starting at 0
    std::vector<Eigen::Index> col_boundaries;
    std::vector<std::size_t> sorted_row_labels;
    std::vector<std::size_t> sorted_col_labels;
    std::size_t modules = 0;

    /// Mean percentile of cells whose row and column modules agree, and of the rest.
    double in_block_mean() const;
    double off_block_mean() const;
};

HeatmapData heatmap_data(const Matrix& values, const std::vector<std::size_t>& feature_labels,
                         const std::vector<std::size_t>& token_labels);

struct ModularStructure {
    ClusterAssignment assignment;
    HeatmapData heatmap;
    double achieved_sparsity = 0.0;
    bool fisher_weighted = false;
};

/// Prune, cluster features, assign tokens and build the percentile heatmap.
ModularStructure modular_structure(const ActivationMatrix& acts, std::size_t modules, double sparsity,
                                   RngStream& rng, bool centered = true);

double adjusted_rand_index(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);

/// Planted feature blocks: feature j in block b is sqrt(rho) z_b + sqrt(1 - rho) e_j
/// plus `offset`, so within-block correlation is rho and cross-block correlation 0.
/// Columns are block-contiguous.
struct PlantedActivations {
    ActivationMatrix acts;
    std::vector<std::size_t> feature_blocks;
    std::vector<std::size_t> token_blocks;  // empty when tokens have no planted module
};

PlantedActivations correlated_block_activations(Eigen::Index tokens, std::size_t blocks,
                                                Eigen::Index features_per_block, double rho, double offset,
                                                RngStream& rng);

/// Each token activates one block (uniformly): its features are `level` + g
/// with g ~ N(0, I), every other feature is N(0, background^2). The label is
/// the argmax over classes of the active block's linear score W_b g, with W_b
/// fixed per block.
struct BlockTaskOptions {
    std::size_t blocks = 4;
    Eigen::Index features_per_block = 8;
    std::size_t classes = 2;
    double level = 2.0;
    double background = 0.1;
};

struct BlockTask {
    PlantedActivations train;
    PlantedActivations test;
};

/// The score weights depend only on the seed of `rng`'s first child, so train
/// and test share them.
BlockTask block_activation_task(Eigen::Index train_tokens, Eigen::Index test_tokens, const BlockTaskOptions& options,
                                RngStream& rng);

/// Weighted-F1 of predictions against labels (weights = class support).
double weighted_f1(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& predicted,
                   std::size_t classes);

double accuracy(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& predicted);

/// True when the largest class is more than 1.5 times the smallest present one.
bool is_imbalanced(const std::vector<std::size_t>& labels, std::size_t classes);

struct ProbeConfig {
    std::size_t experts = 4;
    std::size_t top_k = 2;
    std::vector<double> noise_grid{0.2, 0.5, 1.0, 2.0};
    std::vector<double> l2_grid{1e-3, 1e-2, 1e-1};
    std::vector<double> l1_grid{1e-4, 1e-3, 1e-2, 3e-2};
    double validation_fraction = 0.2;
    std::size_t epochs = 300;
    bool centered = true;
};

struct ProbeDropRow {
    double sigma = 0.0;
    double moe_noisy = 0.0;
    double global_noisy = 0.0;
    double moe_drop = 0.0;
    double global_drop = 0.0;
};

struct ProbeReport {
    std::string metric;  // "accuracy" or "weighted_f1"
    double moe_clean = 0.0;
    double global_clean = 0.0;
    std::vector<ProbeDropRow> rows;
    std::vector<std::size_t> cluster_sizes;
    std::size_t merged_clusters = 0;
    double chosen_l2 = 0.0;
    double chosen_l1 = 0.0;
};

/// Fisher-constrained feature clusters, one L2 logistic probe per cluster,
/// oracle expert labels from the per-sample negative log-likelihood, a
/// logistic router on all features, and top-K averaging of expert class
/// probabilities, against a single L1 logistic probe on all features.
/// Both are trained on clean data; regularization strengths are chosen by
/// clean accuracy on a held-out tail of the training rows. Test features get
/// N(0, sigma^2) noise per grid point. Clustering uses rng.child(0) and the
/// noise for grid point g uses rng.child(g + 1).
ProbeReport probe_robustness(const ActivationMatrix& train, const ActivationMatrix& test, const ProbeConfig& config,
                             RngStream& rng);

/// Published drop for comparison only: Lasso vs MoE (E=8, K=6) at sigma 2.0 on AG News.
struct ReferenceDrop {
    const char* dataset;
    double sigma;
    double lasso_drop;
    double moe_drop;
    std::size_t experts;
    std::size_t top_k;
};

inline constexpr ReferenceDrop kReferenceDrop{"AG News", 2.0, 0.3166, 0.2580, 8, 6};

}  // namespace moefn
