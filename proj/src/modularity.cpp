#include "moefn/modularity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "moefn/router.hpp"

namespace moefn {

namespace {

constexpr double kFisherFloor = 1e-12;

std::vector<std::size_t> renumber_by_first_appearance(const std::vector<std::size_t>& labels) {
    std::map<std::size_t, std::size_t> ids;
    std::vector<std::size_t> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto [it, inserted] = ids.try_emplace(labels[i], ids.size());
        out[i] = it->second;
    }
    return out;
}

std::size_t label_count(const std::vector<std::size_t>& labels) {
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
}

Matrix select_columns(const Matrix& m, const std::vector<Eigen::Index>& cols) {
    Matrix out(m.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) {
        out.col(static_cast<Eigen::Index>(c)) = m.col(cols[c]);
    }
    return out;
}

Matrix select_rows(const Matrix& m, Eigen::Index begin, Eigen::Index count) { return m.middleRows(begin, count); }

std::vector<std::size_t> argmax_rows(const Matrix& probs) {
    std::vector<std::size_t> out(static_cast<std::size_t>(probs.rows()));
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        out[static_cast<std::size_t>(r)] = argmax(probs.row(r).transpose());
    }
    return out;
}

// Experts, router and top-K over a fixed feature partition.
struct MoeProbe {
    std::vector<std::vector<Eigen::Index>> groups;
    std::vector<LogisticRouter> experts;
    LogisticRouter router;
    std::size_t top_k = 1;
    std::size_t classes = 0;

    Matrix probabilities(const Matrix& x) const {
        std::vector<Matrix> expert_probs;
        expert_probs.reserve(experts.size());
        for (std::size_t e = 0; e < experts.size(); ++e) {
            expert_probs.push_back(experts[e].batch_probabilities(select_columns(x, groups[e])));
        }
        Matrix out = Matrix::Zero(x.rows(), static_cast<Eigen::Index>(classes));
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            for (std::size_t e : topk_route(router, x.row(r).transpose(), top_k)) {
                out.row(r) += expert_probs[e].row(r);
            }
        }
        return out / static_cast<double>(top_k);
    }
};

MoeProbe fit_moe_probe(const Matrix& x, const std::vector<std::size_t>& labels, std::size_t classes,
                       const std::vector<std::vector<Eigen::Index>>& groups, double l2, std::size_t top_k,
                       std::size_t epochs) {
    MoeProbe probe;
    probe.groups = groups;
    probe.classes = classes;
    probe.top_k = std::min(top_k, groups.size());
    LogisticOptions expert_opts;
    expert_opts.l2 = l2;
    expert_opts.epochs = epochs;
    Matrix losses(x.rows(), static_cast<Eigen::Index>(groups.size()));
    for (std::size_t e = 0; e < groups.size(); ++e) {
        const Matrix sub = select_columns(x, groups[e]);
        probe.experts.push_back(fit_logistic_router(sub, labels, classes, expert_opts));
        const Matrix p = probe.experts.back().batch_probabilities(sub);
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const double q = p(r, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(r)]));
            losses(r, static_cast<Eigen::Index>(e)) = -std::log(std::max(q, 1e-300));
        }
    }
    LogisticOptions router_opts;
    router_opts.l2 = 1e-3;
    router_opts.epochs = epochs;
    probe.router = fit_logistic_router(x, oracle_labels(losses), groups.size(), router_opts);
    return probe;
}

double score(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& predicted, std::size_t classes,
             bool weighted) {
    return weighted ? weighted_f1(truth, predicted, classes) : accuracy(truth, predicted);
}

}  // namespace

std::size_t ActivationMatrix::classes() const { return labels ? label_count(*labels) : 0; }

void validate_activations(const ActivationMatrix& acts) {
    require_finite(acts.values, "activations");
    if (acts.labels && acts.labels->size() != static_cast<std::size_t>(acts.tokens())) {
        throw ContractError("activations: " + std::to_string(acts.labels->size()) + " labels for " +
                            std::to_string(acts.tokens()) + " rows");
    }
}

Vector fisher_scores(const ActivationMatrix& acts) {
    validate_activations(acts);
    if (!acts.labels) {
        throw ContractError("fisher_scores: labels required");
    }
    const std::vector<std::size_t>& labels = *acts.labels;
    const std::size_t classes = acts.classes();
    std::vector<double> counts(classes, 0.0);
    for (std::size_t l : labels) {
        counts[l] += 1.0;
    }
    if (std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0.0; }) < 2) {
        throw ContractError("fisher_scores: need at least two classes with rows");
    }
    const Eigen::Index d = acts.features();
    const auto k = static_cast<Eigen::Index>(classes);
    Matrix sums = Matrix::Zero(k, d);
    for (std::size_t r = 0; r < labels.size(); ++r) {
        sums.row(static_cast<Eigen::Index>(labels[r])) += acts.values.row(static_cast<Eigen::Index>(r));
    }
    Matrix means = Matrix::Zero(k, d);
    for (Eigen::Index c = 0; c < k; ++c) {
        if (counts[static_cast<std::size_t>(c)] > 0.0) {
            means.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
        }
    }
    const Eigen::RowVectorXd global = acts.values.colwise().mean();
    Eigen::RowVectorXd within = Eigen::RowVectorXd::Zero(d);
    for (std::size_t r = 0; r < labels.size(); ++r) {
        within += (acts.values.row(static_cast<Eigen::Index>(r)) - means.row(static_cast<Eigen::Index>(labels[r])))
                      .array()
                      .square()
                      .matrix();
    }
    Eigen::RowVectorXd between = Eigen::RowVectorXd::Zero(d);
    for (Eigen::Index c = 0; c < k; ++c) {
        const double n_c = counts[static_cast<std::size_t>(c)];
        if (n_c > 0.0) {
            between += n_c * (means.row(c) - global).array().square().matrix();
        }
    }
    // sum_c n_c sigma^2_{j,c} with population variances is the pooled sum of squares.
    Vector out(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        out(j) = between(j) / std::max(within(j), kFisherFloor);
    }
    return out;
}

Matrix cosine_similarity(const Matrix& values, bool centered) {
    require_finite(values, "cosine_similarity input");
    Matrix c = values;
    if (centered && values.rows() > 0) {
        c.rowwise() -= values.colwise().mean();
    }
    const Eigen::Index d = values.cols();
    Vector norms(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const double scale = values.col(j).cwiseAbs().maxCoeff();
        const double n = c.col(j).norm();
        // Centering a constant column can leave rounding residue; treat it as zero.
        norms(j) = n <= 1e-12 * scale * std::sqrt(static_cast<double>(values.rows())) ? 0.0 : n;
    }
    Matrix s = c.transpose() * c;
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
            s(i, j) = (norms(i) == 0.0 || norms(j) == 0.0) ? 0.0 : s(i, j) / (norms(i) * norms(j));
        }
    }
    s = (0.5 * (s + s.transpose())).eval();
    s = s.cwiseMax(-1.0).cwiseMin(1.0);
    s.diagonal().setOnes();
    return s;
}

Matrix constrained_affinity(const Matrix& similarity, const Vector& fisher) {
    if (similarity.rows() != similarity.cols() || similarity.rows() != fisher.size()) {
        throw ContractError("constrained_affinity: similarity must be square with one Fisher score per feature");
    }
    Matrix a(similarity.rows(), similarity.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            a(i, j) = similarity(i, j) * std::exp(-std::abs(fisher(i) - fisher(j)));
        }
    }
    a.diagonal().setOnes();
    return a;
}

AffinityResult constrained_affinity(const ActivationMatrix& acts, bool centered) {
    validate_activations(acts);
    AffinityResult out;
    const Matrix s = cosine_similarity(acts.values, centered);
    if (!acts.labels) {
        out.affinity = s;
        return out;
    }
    out.fisher = fisher_scores(acts);
    out.affinity = constrained_affinity(s, out.fisher);
    out.fisher_weighted = true;
    return out;
}

std::vector<std::size_t> spectral_cluster(const Matrix& affinity, std::size_t m, RngStream& rng) {
    const Eigen::Index n = affinity.rows();
    if (affinity.cols() != n || n == 0) {
        throw ContractError("spectral_cluster: affinity must be square and non-empty");
    }
    if (m < 1 || m > static_cast<std::size_t>(n)) {
        throw ContractError("spectral_cluster: need 1 <= m <= features");
    }
    require_finite(affinity, "spectral_cluster affinity");
    if ((affinity - affinity.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
        throw ContractError("spectral_cluster: affinity must be symmetric");
    }
    Matrix a = affinity;
    if (a.minCoeff() < 0.0) {
        a = (a.array() + 1.0) / 2.0;
    }
    const Vector degree = a.rowwise().sum();
    std::vector<Eigen::Index> active;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (degree(i) > 0.0) {
            active.push_back(i);
        }
    }
    std::vector<std::size_t> labels(static_cast<std::size_t>(n), 0);
    if (active.empty()) {
        return labels;
    }
    const auto na = static_cast<Eigen::Index>(active.size());
    Matrix normalized(na, na);
    for (Eigen::Index i = 0; i < na; ++i) {
        for (Eigen::Index j = 0; j < na; ++j) {
            normalized(i, j) = a(active[i], active[j]) / std::sqrt(degree(active[i]) * degree(active[j]));
        }
    }
    const std::size_t groups = std::min<std::size_t>(m, active.size());
    const SymEigResult eig = sym_eig(0.5 * (normalized + normalized.transpose()));
    Matrix embed = eig.vectors.leftCols(static_cast<Eigen::Index>(groups));
    for (Eigen::Index i = 0; i < na; ++i) {
        const double norm = embed.row(i).norm();
        if (norm > 0.0) {
            embed.row(i) /= norm;
        }
    }
    const KMeansResult km = kmeans(embed, groups, rng);
    for (Eigen::Index i = 0; i < na; ++i) {
        labels[static_cast<std::size_t>(active[i])] = km.labels[static_cast<std::size_t>(i)];
    }
    if (active.size() < static_cast<std::size_t>(n)) {
        // An isolated node embeds at the origin; its nearest centroid is the shortest one.
        Eigen::Index nearest = 0;
        km.centroids.rowwise().squaredNorm().minCoeff(&nearest);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!(degree(i) > 0.0)) {
                labels[static_cast<std::size_t>(i)] = static_cast<std::size_t>(nearest);
            }
        }
    }
    return renumber_by_first_appearance(labels);
}

Matrix magnitude_prune(const Matrix& values, double sparsity) {
    if (!(sparsity >= 0.0 && sparsity < 1.0)) {
        throw ContractError("magnitude_prune: sparsity must lie in [0, 1)");
    }
    require_finite(values, "magnitude_prune input");
    const Eigen::Index total = values.size();
    const auto count = static_cast<Eigen::Index>(std::floor(sparsity * static_cast<double>(total) + 1e-9));
    std::vector<Eigen::Index> order(static_cast<std::size_t>(total));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return std::abs(values.data()[a]) < std::abs(values.data()[b]);
    });
    Matrix out = values;
    for (Eigen::Index i = 0; i < count; ++i) {
        out.data()[order[static_cast<std::size_t>(i)]] = 0.0;
    }
    return out;
}

Matrix column_percentiles(const Matrix& values) {
    const Eigen::Index t = values.rows();
    Matrix out(t, values.cols());
    std::vector<Eigen::Index> order(static_cast<std::size_t>(t));
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
            return std::abs(values(a, j)) < std::abs(values(b, j));
        });
        std::size_t start = 0;
        while (start < order.size()) {
            std::size_t stop = start + 1;
            const double v = std::abs(values(order[start], j));
            while (stop < order.size() && std::abs(values(order[stop], j)) == v) {
                ++stop;
            }
            // Average 1-based rank of the tie group.
            const double rank = 0.5 * static_cast<double>(start + 1 + stop);
            const double pct = t > 1 ? (rank - 1.0) / static_cast<double>(t - 1) : 0.5;
            for (std::size_t s = start; s < stop; ++s) {
                out(order[s], j) = pct;
            }
            start = stop;
        }
    }
    return out;
}

std::vector<std::size_t> assign_tokens(const Matrix& values, const std::vector<std::size_t>& feature_labels) {
    if (feature_labels.size() != static_cast<std::size_t>(values.cols())) {
        throw ContractError("assign_tokens: need one label per feature");
    }
    const std::size_t modules = label_count(feature_labels);
    const Matrix pct = column_percentiles(values);
    Matrix sums = Matrix::Zero(values.rows(), static_cast<Eigen::Index>(modules));
    std::vector<double> sizes(modules, 0.0);
    for (std::size_t j = 0; j < feature_labels.size(); ++j) {
        sums.col(static_cast<Eigen::Index>(feature_labels[j])) += pct.col(static_cast<Eigen::Index>(j));
        sizes[feature_labels[j]] += 1.0;
    }
    std::vector<std::size_t> out(static_cast<std::size_t>(values.rows()), 0);
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t m = 0; m < modules; ++m) {
            if (sizes[m] == 0.0) {
                continue;
            }
            const double mean = sums(r, static_cast<Eigen::Index>(m)) / sizes[m];
            if (mean > best) {
                best = mean;
                out[static_cast<std::size_t>(r)] = m;
            }
        }
    }
    return out;
}

std::vector<Eigen::Index> order_by_label(const std::vector<std::size_t>& labels) {
    std::vector<Eigen::Index> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return labels[static_cast<std::size_t>(a)] < labels[static_cast<std::size_t>(b)];
    });
    return order;
}

namespace {

std::vector<Eigen::Index> boundaries(const std::vector<std::size_t>& sorted, std::size_t modules) {
    std::vector<Eigen::Index> out(modules + 1, 0);
    for (std::size_t l : sorted) {
        ++out[l + 1];
    }
    std::partial_sum(out.begin(), out.end(), out.begin());
    return out;
}

double block_mean(const HeatmapData& h, bool in_block) {
    std::vector<double> cells;
    for (Eigen::Index r = 0; r < h.percentiles.rows(); ++r) {
        for (Eigen::Index c = 0; c < h.percentiles.cols(); ++c) {
            if ((h.sorted_row_labels[static_cast<std::size_t>(r)] == h.sorted_col_labels[static_cast<std::size_t>(c)]) ==
                in_block) {
                cells.push_back(h.percentiles(r, c));
            }
        }
    }
    if (cells.empty()) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    return pairwise_sum(cells) / static_cast<double>(cells.size());
}

}  // namespace

double HeatmapData::in_block_mean() const { return block_mean(*this, true); }
double HeatmapData::off_block_mean() const { return block_mean(*this, false); }

HeatmapData heatmap_data(const Matrix& values, const std::vector<std::size_t>& feature_labels,
                         const std::vector<std::size_t>& token_labels) {
    if (feature_labels.size() != static_cast<std::size_t>(values.cols()) ||
        token_labels.size() != static_cast<std::size_t>(values.rows())) {
        throw ContractError("heatmap_data: need one label per feature and per token");
    }
    HeatmapData h;
    h.modules = std::max(label_count(feature_labels), label_count(token_labels));
    h.row_order = order_by_label(token_labels);
    h.col_order = order_by_label(feature_labels);
    const Matrix pct = column_percentiles(values);
    h.percentiles.resize(values.rows(), values.cols());
    for (std::size_t r = 0; r < h.row_order.size(); ++r) {
        for (std::size_t c = 0; c < h.col_order.size(); ++c) {
            h.percentiles(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                pct(h.row_order[r], h.col_order[c]);
        }
    }
    for (Eigen::Index r : h.row_order) {
        h.sorted_row_labels.push_back(token_labels[static_cast<std::size_t>(r)]);
    }
    for (Eigen::Index c : h.col_order) {
        h.sorted_col_labels.push_back(feature_labels[static_cast<std::size_t>(c)]);
    }
    h.row_boundaries = boundaries(h.sorted_row_labels, h.modules);
    h.col_boundaries = boundaries(h.sorted_col_labels, h.modules);
    return h;
}

ModularStructure modular_structure(const ActivationMatrix& acts, std::size_t modules, double sparsity,
                                   RngStream& rng, bool centered) {
    validate_activations(acts);
    ModularStructure out;
    ActivationMatrix pruned{magnitude_prune(acts.values, sparsity), acts.labels};
    const Eigen::Index zeros = (pruned.values.array() == 0.0).count();
    out.achieved_sparsity =
        acts.values.size() == 0 ? 0.0 : static_cast<double>(zeros) / static_cast<double>(acts.values.size());
    const AffinityResult aff = constrained_affinity(pruned, centered);
    out.fisher_weighted = aff.fisher_weighted;
    ClusterAssignment& a = out.assignment;
    a.feature_labels = spectral_cluster(aff.affinity, modules, rng);
    a.token_labels = assign_tokens(pruned.values, a.feature_labels);
    a.feature_order = order_by_label(a.feature_labels);
    a.token_order = order_by_label(a.token_labels);
    out.heatmap = heatmap_data(pruned.values, a.feature_labels, a.token_labels);
    return out;
}

double adjusted_rand_index(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    if (a.size() != b.size()) {
        throw ContractError("adjusted_rand_index: labelings differ in length");
    }
    const std::size_t n = a.size();
    if (n < 2) {
        return 1.0;
    }
    std::map<std::pair<std::size_t, std::size_t>, double> table;
    std::map<std::size_t, double> rows, cols;
    for (std::size_t i = 0; i < n; ++i) {
        table[{a[i], b[i]}] += 1.0;
        rows[a[i]] += 1.0;
        cols[b[i]] += 1.0;
    }
    auto pairs = [](double x) { return 0.5 * x * (x - 1.0); };
    double index = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (const auto& [key, count] : table) {
        index += pairs(count);
    }
    for (const auto& [key, count] : rows) {
        sum_a += pairs(count);
    }
    for (const auto& [key, count] : cols) {
        sum_b += pairs(count);
    }
    const double expected = sum_a * sum_b / pairs(static_cast<double>(n));
    const double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) {
        return 1.0;
    }
    return (index - expected) / (max_index - expected);
}

PlantedActivations correlated_block_activations(Eigen::Index tokens, std::size_t blocks,
                                                Eigen::Index features_per_block, double rho, double offset,
                                                RngStream& rng) {
    if (tokens < 1 || blocks < 1 || features_per_block < 1 || !(rho >= 0.0 && rho <= 1.0)) {
        throw ContractError("correlated_block_activations: need positive sizes and rho in [0, 1]");
    }
    const Eigen::Index d = static_cast<Eigen::Index>(blocks) * features_per_block;
    PlantedActivations out;
    out.acts.values.resize(tokens, d);
    const double shared = std::sqrt(rho);
    const double own = std::sqrt(1.0 - rho);
    for (Eigen::Index t = 0; t < tokens; ++t) {
        for (std::size_t b = 0; b < blocks; ++b) {
            const double z = rng.normal();
            for (Eigen::Index j = 0; j < features_per_block; ++j) {
                out.acts.values(t, static_cast<Eigen::Index>(b) * features_per_block + j) =
                    offset + shared * z + own * rng.normal();
            }
        }
    }
    for (Eigen::Index j = 0; j < d; ++j) {
        out.feature_blocks.push_back(static_cast<std::size_t>(j / features_per_block));
    }
    return out;
}

namespace {

PlantedActivations draw_block_task(Eigen::Index tokens, const BlockTaskOptions& o, const std::vector<Matrix>& weights,
                                   RngStream& rng) {
    const Eigen::Index db = o.features_per_block;
    PlantedActivations out;
    out.acts.values.resize(tokens, static_cast<Eigen::Index>(o.blocks) * db);
    std::vector<std::size_t> labels(static_cast<std::size_t>(tokens));
    for (Eigen::Index j = 0; j < out.acts.values.cols(); ++j) {
        out.feature_blocks.push_back(static_cast<std::size_t>(j / db));
    }
    for (Eigen::Index t = 0; t < tokens; ++t) {
        const std::size_t active = rng.uniform_index(o.blocks);
        out.token_blocks.push_back(active);
        Vector g(db);
        for (std::size_t b = 0; b < o.blocks; ++b) {
            for (Eigen::Index j = 0; j < db; ++j) {
                const double v = rng.normal();
                if (b == active) {
                    g(j) = v;
                    out.acts.values(t, static_cast<Eigen::Index>(b) * db + j) = o.level + v;
                } else {
                    out.acts.values(t, static_cast<Eigen::Index>(b) * db + j) = o.background * v;
                }
            }
        }
        labels[static_cast<std::size_t>(t)] = argmax(weights[active] * g);
    }
    out.acts.labels = std::move(labels);
    return out;
}

}  // namespace

BlockTask block_activation_task(Eigen::Index train_tokens, Eigen::Index test_tokens, const BlockTaskOptions& options,
                                RngStream& rng) {
    if (options.blocks < 1 || options.features_per_block < 1 || options.classes < 2 || train_tokens < 1 ||
        test_tokens < 1) {
        throw ContractError("block_activation_task: need positive sizes and at least two classes");
    }
    RngStream weight_rng = rng.child(0);
    std::vector<Matrix> weights;
    for (std::size_t b = 0; b < options.blocks; ++b) {
        weights.push_back(
            gaussian_matrix(static_cast<Eigen::Index>(options.classes), options.features_per_block, 1.0, weight_rng));
    }
    RngStream train_rng = rng.child(1);
    RngStream test_rng = rng.child(2);
    BlockTask task;
    task.train = draw_block_task(train_tokens, options, weights, train_rng);
    task.test = draw_block_task(test_tokens, options, weights, test_rng);
    return task;
}

double accuracy(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& predicted) {
    if (truth.size() != predicted.size() || truth.empty()) {
        throw ContractError("accuracy: need equal, non-empty label lists");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        hits += truth[i] == predicted[i];
    }
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double weighted_f1(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& predicted,
                   std::size_t classes) {
    if (truth.size() != predicted.size() || truth.empty()) {
        throw ContractError("weighted_f1: need equal, non-empty label lists");
    }
    std::vector<double> tp(classes, 0.0), fp(classes, 0.0), fn(classes, 0.0), support(classes, 0.0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] >= classes || predicted[i] >= classes) {
            throw ContractError("weighted_f1: label out of range");
        }
        support[truth[i]] += 1.0;
        if (truth[i] == predicted[i]) {
            tp[truth[i]] += 1.0;
        } else {
            fp[predicted[i]] += 1.0;
            fn[truth[i]] += 1.0;
        }
    }
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
        const double denom = 2.0 * tp[c] + fp[c] + fn[c];
        const double f1 = denom > 0.0 ? 2.0 * tp[c] / denom : 0.0;
        total += support[c] * f1;
    }
    return total / static_cast<double>(truth.size());
}

bool is_imbalanced(const std::vector<std::size_t>& labels, std::size_t classes) {
    std::vector<double> counts(classes, 0.0);
    for (std::size_t l : labels) {
        counts[l] += 1.0;
    }
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (double c : counts) {
        if (c > 0.0) {
            lo = std::min(lo, c);
            hi = std::max(hi, c);
        }
    }
    return hi > 1.5 * lo;
}

ProbeReport probe_robustness(const ActivationMatrix& train, const ActivationMatrix& test, const ProbeConfig& config,
                             RngStream& rng) {
    validate_activations(train);
    validate_activations(test);
    if (!train.labels || !test.labels) {
        throw ContractError("probe_robustness: train and test activations need labels");
    }
    if (train.features() != test.features()) {
        throw ContractError("probe_robustness: train and test feature counts differ");
    }
    if (config.experts < 1 || config.experts > static_cast<std::size_t>(train.features()) || config.top_k < 1) {
        throw ContractError("probe_robustness: need 1 <= experts <= features and top_k >= 1");
    }
    if (config.l2_grid.empty() || config.l1_grid.empty()) {
        throw ContractError("probe_robustness: regularization grids must be non-empty");
    }
    for (double s : config.noise_grid) {
        if (!(s >= 0.0)) {
            throw ContractError("probe_robustness: noise levels must be non-negative");
        }
    }
    if (!(config.validation_fraction > 0.0 && config.validation_fraction < 1.0)) {
        throw ContractError("probe_robustness: validation_fraction must lie in (0, 1)");
    }
    const std::size_t classes = std::max(train.classes(), test.classes());
    const Eigen::Index n = train.tokens();
    const auto n_val = static_cast<Eigen::Index>(std::floor(config.validation_fraction * static_cast<double>(n)));
    const Eigen::Index n_fit = n - n_val;
    if (n_val < 1 || n_fit < 2) {
        throw ContractError("probe_robustness: too few training rows for the validation split");
    }
    const std::vector<std::size_t>& all_labels = *train.labels;
    const std::vector<std::size_t> fit_labels(all_labels.begin(), all_labels.begin() + n_fit);
    const std::vector<std::size_t> val_labels(all_labels.begin() + n_fit, all_labels.end());
    const Matrix fit_x = select_rows(train.values, 0, n_fit);
    const Matrix val_x = select_rows(train.values, n_fit, n_val);

    ProbeReport report;
    const bool weighted = is_imbalanced(all_labels, classes);
    report.metric = weighted ? "weighted_f1" : "accuracy";

    // Feature clusters from the clean training split.
    ActivationMatrix fit_acts{fit_x, fit_labels};
    RngStream cluster_rng = rng.child(0);
    const AffinityResult aff = constrained_affinity(fit_acts, config.centered);
    const std::vector<std::size_t> feature_labels = spectral_cluster(aff.affinity, config.experts, cluster_rng);
    const std::size_t groups_found = label_count(feature_labels);
    report.merged_clusters = config.experts - groups_found;
    std::vector<std::vector<Eigen::Index>> groups(groups_found);
    for (std::size_t j = 0; j < feature_labels.size(); ++j) {
        groups[feature_labels[j]].push_back(static_cast<Eigen::Index>(j));
    }
    for (const auto& g : groups) {
        report.cluster_sizes.push_back(g.size());
    }

    double best_moe = -1.0;
    MoeProbe moe;
    for (double l2 : config.l2_grid) {
        MoeProbe candidate = fit_moe_probe(fit_x, fit_labels, classes, groups, l2, config.top_k, config.epochs);
        const double s = score(val_labels, argmax_rows(candidate.probabilities(val_x)), classes, weighted);
        if (s > best_moe) {
            best_moe = s;
            moe = std::move(candidate);
            report.chosen_l2 = l2;
        }
    }
    double best_global = -1.0;
    LogisticRouter global;
    for (double l1 : config.l1_grid) {
        LogisticOptions opts;
        opts.l1 = l1;
        opts.epochs = config.epochs;
        LogisticRouter candidate = fit_logistic_router(fit_x, fit_labels, classes, opts);
        const double s = score(val_labels, argmax_rows(candidate.batch_probabilities(val_x)), classes, weighted);
        if (s > best_global) {
            best_global = s;
            global = std::move(candidate);
            report.chosen_l1 = l1;
        }
    }

    const std::vector<std::size_t>& test_labels = *test.labels;
    auto evaluate = [&](const Matrix& x, double* moe_score, double* global_score) {
        *moe_score = score(test_labels, argmax_rows(moe.probabilities(x)), classes, weighted);
        *global_score = score(test_labels, argmax_rows(global.batch_probabilities(x)), classes, weighted);
    };
    evaluate(test.values, &report.moe_clean, &report.global_clean);
    for (std::size_t g = 0; g < config.noise_grid.size(); ++g) {
        ProbeDropRow row;
        row.sigma = config.noise_grid[g];
        RngStream noise_rng = rng.child(1 + g);
        const Matrix noisy =
            row.sigma == 0.0 ? test.values
                             : Matrix(test.values + gaussian_matrix(test.tokens(), test.features(), row.sigma, noise_rng));
        evaluate(noisy, &row.moe_noisy, &row.global_noisy);
        row.moe_drop = report.moe_clean - row.moe_noisy;
        row.global_drop = report.global_clean - row.global_noisy;
        report.rows.push_back(row);
    }
    return report;
}

}  // namespace moefn
