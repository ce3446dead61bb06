#include "moefn/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>

#include "moefn/activation_io.hpp"
#include "moefn/config.hpp"
#include "moefn/convergence.hpp"
#include "moefn/estimators.hpp"
#include "moefn/experiments.hpp"
#include "moefn/parallel.hpp"
#include "moefn/risk.hpp"
#include "moefn/router.hpp"
#include "moefn/svg_plot.hpp"

namespace moefn::cli {

using nlohmann::json;

namespace {

struct Options {
    std::string config;
    std::string preset;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::string out;
    std::string format;
    std::string plot;
    std::string labels;
    std::string activations;
    std::string test_activations;
};

/// Everything a subcommand needs after option parsing.
struct Context {
    const Options& opts;
    RunConfig cfg;
    std::uint64_t seed = 0;
    std::ostream& out;
    std::ostream& err;
};

std::string fmt(double v) {
    if (std::isnan(v)) {
        return "";
    }
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

json mc_json(const MonteCarloEstimate& mc) {
    if (mc.samples == 0) {
        return nullptr;
    }
    return {{"estimate", mc.estimate}, {"std_error", mc.std_error}, {"samples", mc.samples}};
}

json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        rows.push_back(std::vector<double>(m.cols()));
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            rows.back()[static_cast<std::size_t>(c)] = m(r, c);
        }
    }
    return rows;
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

std::vector<std::size_t> one_based(const std::vector<std::size_t>& labels) {
    std::vector<std::size_t> out(labels);
    for (auto& l : out) {
        ++l;
    }
    return out;
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f || !(f << text)) {
        throw ConfigError({path + ": cannot write file"});
    }
}

bool wants_csv(const Options& o) {
    if (!o.format.empty()) {
        return o.format == "csv";
    }
    return o.out.size() >= 4 && o.out.compare(o.out.size() - 4, 4, ".csv") == 0;
}

void emit(Context& ctx, const std::string& command, json body, const std::string& csv) {
    std::string text;
    if (wants_csv(ctx.opts)) {
        text = csv;
    } else {
        json doc{{"command", command}, {"seed", ctx.seed}};
        doc.update(body);
        text = doc.dump(2) + "\n";
    }
    if (ctx.opts.out.empty()) {
        ctx.out << text;
    } else {
        write_file(ctx.opts.out, text);
    }
}

void emit_plot(const Context& ctx, const std::string& svg) {
    if (!ctx.opts.plot.empty()) {
        write_file(ctx.opts.plot, svg);
    }
}

void warn_all(Context& ctx, const std::vector<std::string>& warnings) {
    for (const auto& w : warnings) {
        ctx.err << "warning: " << w << "\n";
    }
}

// ---------------------------------------------------------------- risk

void cmd_risk(Context& ctx) {
    const BlockModelSpec& spec = ctx.cfg.model_for(ctx.cfg.risk.model, "risk");
    const double sparse = bayes_risk(spec, EstimatorKind::sparse);
    const double dense = bayes_risk(spec, EstimatorKind::dense);
    const RngStream rng(ctx.seed);
    MonteCarloEstimate mc_sparse, mc_dense;
    if (ctx.cfg.risk.mc_samples > 0) {
        mc_sparse = monte_carlo_risk(bayes_sparse_all(spec), spec, ctx.cfg.risk.mc_samples, rng.child(0));
        mc_dense = monte_carlo_risk(bayes_dense(spec), spec, ctx.cfg.risk.mc_samples, rng.child(1));
    }
    json body{{"spec", spec_to_json(spec)},
              {"bayes_risk_sparse", sparse},
              {"bayes_risk_dense", dense},
              {"ordering_holds", sparse <= dense + 1e-10},
              {"monte_carlo", {{"sparse", mc_json(mc_sparse)}, {"dense", mc_json(mc_dense)}}}};
    std::string csv = "kind,closed_form,mc_estimate,mc_stderr,mc_samples\n";
    for (const auto& [name, cf, mc] : {std::tuple{"sparse", sparse, mc_sparse}, std::tuple{"dense", dense, mc_dense}}) {
        csv += std::string(name) + "," + fmt(cf) + "," + (mc.samples ? fmt(mc.estimate) : "") + "," +
               (mc.samples ? fmt(mc.std_error) : "") + "," + std::to_string(mc.samples) + "\n";
    }
    emit(ctx, "risk", body, csv);
}

// ---------------------------------------------------------------- robustness

void cmd_robustness(Context& ctx) {
    const RobustnessSection& sec = ctx.cfg.robustness;
    const BlockModelSpec& spec = ctx.cfg.model_for(sec.model, "robustness");
    const auto pts = robustness_sweep(spec, sec.sigma_o2, {EstimatorKind::dense, EstimatorKind::sparse},
                                      sec.mc_samples, RngStream(ctx.seed));
    double min_eig = std::numeric_limits<double>::infinity();
    for (const Matrix& c : spec.covariances) {
        min_eig = std::min(min_eig, sym_eig(c).values.minCoeff());
    }
    json rows = json::array();
    std::string csv = "sigma_o2,kind,closed_form,mc_estimate,mc_stderr\n";
    PlotSeries dense{"dense", {}, {}, {}}, sparse{"sparse", {}, {}, {}};
    for (std::size_t p = 0; p < pts.size(); p += 2) {
        const RobustnessPoint& d = pts[p];
        const RobustnessPoint& s = pts[p + 1];
        rows.push_back({{"sigma_o2", d.sigma_o2},
                        {"dense", {{"closed_form", d.closed_form}, {"monte_carlo", mc_json(d.monte_carlo)}}},
                        {"sparse", {{"closed_form", s.closed_form}, {"monte_carlo", mc_json(s.monte_carlo)}}},
                        {"sufficient_condition", min_eig > 4.0 * spec.sigma2 && d.sigma_o2 > spec.sigma2},
                        {"ordering_holds", s.closed_form <= d.closed_form + 1e-10}});
        for (const RobustnessPoint* r : {&d, &s}) {
            const bool mc = r->monte_carlo.samples > 0;
            csv += fmt(r->sigma_o2) + "," + to_string(r->kind) + "," + fmt(r->closed_form) + "," +
                   (mc ? fmt(r->monte_carlo.estimate) : "") + "," + (mc ? fmt(r->monte_carlo.std_error) : "") + "\n";
        }
        dense.x.push_back(d.sigma_o2);
        dense.y.push_back(d.closed_form);
        sparse.x.push_back(s.sigma_o2);
        sparse.y.push_back(s.closed_form);
    }
    emit(ctx, "robustness",
         {{"spec", spec_to_json(spec)}, {"min_covariance_eigenvalue", min_eig}, {"points", rows}}, csv);
    emit_plot(ctx, line_plot_svg({dense, sparse}, {"Risk under test-time noise", "test noise variance",
                                                   "risk at Bayes coefficients", false, false}));
}

// ---------------------------------------------------------------- misroute

void cmd_misroute(Context& ctx) {
    const MisrouteSection& sec = ctx.cfg.misroute;
    const BlockModelSpec& spec = ctx.cfg.model_for(sec.model, "misroute");
    for (const auto& [name, idx] : {std::pair{"misroute.from", sec.from}, std::pair{"misroute.to", sec.to}}) {
        if (idx >= spec.experts()) {
            throw ConfigError({std::string(name) + ": expert " + std::to_string(idx + 1) + " does not exist (model has " +
                               std::to_string(spec.experts()) + ")"});
        }
    }
    const auto pts = misroute_sweep(spec, sec.from, sec.to, sec.eta, sec.mc_samples, RngStream(ctx.seed));
    json rows = json::array();
    std::string csv = "eta,kind,closed_form,exact,mc_estimate,mc_stderr\n";
    PlotSeries dense{"dense", {}, {}, {}}, sparse{"sparse", {}, {}, {}};
    for (const MisroutePoint& p : pts) {
        warn_all(ctx, p.warnings);
        rows.push_back({{"eta", p.eta},
                        {"kind", to_string(p.kind)},
                        {"closed_form", std::isnan(p.closed_form) ? json(nullptr) : json(p.closed_form)},
                        {"exact", p.exact},
                        {"monte_carlo", mc_json(p.monte_carlo)},
                        {"warnings", p.warnings}});
        const bool mc = p.monte_carlo.samples > 0;
        csv += fmt(p.eta) + "," + to_string(p.kind) + "," + fmt(p.closed_form) + "," + fmt(p.exact) + "," +
               (mc ? fmt(p.monte_carlo.estimate) : "") + "," + (mc ? fmt(p.monte_carlo.std_error) : "") + "\n";
        PlotSeries& s = p.kind == EstimatorKind::dense ? dense : sparse;
        s.x.push_back(p.eta);
        s.y.push_back(p.exact);
    }
    emit(ctx, "misroute",
         {{"spec", spec_to_json(spec)},
          {"from", sec.from + 1},
          {"to", sec.to + 1},
          {"dense_factor_flagged", misroute_factor_flagged(spec, sec.from, sec.to)},
          {"points", rows}},
         csv);
    emit_plot(ctx, line_plot_svg({dense, sparse}, {"Risk when inputs are sent to the wrong expert", "eta",
                                                   "expected squared error", false, true}));
}

// ---------------------------------------------------------------- convergence

std::vector<Vector> convergence_spectra(const ConvergenceSection& sec, const BlockModelSpec& spec) {
    if (!sec.spectra.empty()) {
        if (sec.spectra.size() != spec.experts()) {
            throw ConfigError({"convergence.spectra: expected one spectrum per expert (" +
                               std::to_string(spec.experts()) + "), got " + std::to_string(sec.spectra.size())});
        }
        for (std::size_t i = 0; i < spec.experts(); ++i) {
            const Eigen::Index len = std::min(spec.block_rows[i], spec.block_dims[i]);
            if (sec.spectra[i].size() != len) {
                throw ConfigError({"convergence.spectra[" + std::to_string(i) + "]: expected " + std::to_string(len) +
                                   " singular values (min of rows and dims)"});
            }
        }
        return sec.spectra;
    }
    std::vector<Vector> out;
    for (std::size_t i = 0; i < spec.experts(); ++i) {
        const Eigen::Index len = std::min(spec.block_rows[i], spec.block_dims[i]);
        out.push_back(len == 1 ? Vector::Constant(1, sec.spectrum_high)
                               : Vector(Vector::LinSpaced(len, sec.spectrum_high, sec.spectrum_low)));
    }
    return out;
}

PlotSeries residual_series(const std::string& name, const std::vector<double>& residuals) {
    PlotSeries s{name, {}, {}, {}};
    const std::size_t stride = std::max<std::size_t>(1, residuals.size() / 400);
    for (std::size_t t = 0; t < residuals.size(); t += stride) {
        if (residuals[t] > 0.0) {
            s.x.push_back(static_cast<double>(t));
            s.y.push_back(residuals[t]);
        }
    }
    return s;
}

void cmd_convergence(Context& ctx) {
    const ConvergenceSection& sec = ctx.cfg.convergence;
    const BlockModelSpec& spec = ctx.cfg.model_for(sec.model, "convergence");
    const std::vector<Vector> spectra = convergence_spectra(sec, spec);
    RngStream rng(ctx.seed);
    const ConvergenceReport r = convergence_experiment(spec, spectra, sec.steps, rng, sec.tail);
    warn_all(ctx, r.warnings);
    json blocks = json::array();
    std::string csv = "system,rho_formula,rho_empirical,rho_svd,iterations\n";
    for (std::size_t i = 0; i < r.rho_sparse.size(); ++i) {
        blocks.push_back({{"expert", i + 1},
                          {"rho_formula", r.rho_sparse[i]},
                          {"rho_empirical", r.empirical_sparse[i]},
                          {"rho_svd", r.svd_rate_sparse[i]},
                          {"iterations", r.sparse_runs[i].iterations},
                          {"clean_singular_values", to_std(r.spectrum.clean[i])},
                          {"predicted_sq", to_std(r.spectrum.predicted_sq[i])},
                          {"empirical_sq", to_std(r.spectrum.empirical_sq[i])}});
        csv += "sparse" + std::to_string(i + 1) + "," + fmt(r.rho_sparse[i]) + "," + fmt(r.empirical_sparse[i]) + "," +
               fmt(r.svd_rate_sparse[i]) + "," + std::to_string(r.sparse_runs[i].iterations) + "\n";
    }
    csv += "dense," + fmt(r.rho_dense) + "," + fmt(r.empirical_dense) + "," + fmt(r.svd_rate_dense) + "," +
           std::to_string(r.dense_run.iterations) + "\n";
    json body{{"spec", spec_to_json(spec)},
              {"c", r.spectrum.c},
              {"threshold", r.spectrum.threshold},
              {"steps", sec.steps},
              {"tail", sec.tail},
              {"sparse", blocks},
              {"dense",
               {{"rho_formula", r.rho_dense},
                {"rho_empirical", r.empirical_dense},
                {"rho_svd", r.svd_rate_dense},
                {"iterations", r.dense_run.iterations},
                {"predicted_sq", to_std(r.spectrum.dense_predicted_sq)},
                {"empirical_sq", to_std(r.spectrum.dense_empirical_sq)}}},
              {"warnings", r.warnings}};
    emit(ctx, "convergence", body, csv);
    std::vector<PlotSeries> series;
    for (std::size_t i = 0; i < r.sparse_runs.size(); ++i) {
        series.push_back(residual_series("expert " + std::to_string(i + 1), r.sparse_runs[i].residual_norms));
    }
    series.push_back(residual_series("dense", r.dense_run.residual_norms));
    emit_plot(ctx, line_plot_svg(series, {"Gradient descent residuals", "iteration", "residual norm", false, true}));
}

// ---------------------------------------------------------------- router

json qda_json(const QdaRouter& q) {
    json covs = json::array();
    for (const Matrix& c : q.covariances) {
        covs.push_back(matrix_json(c));
    }
    std::vector<std::size_t> offsets, dims;
    for (std::size_t i = 0; i < q.classes(); ++i) {
        offsets.push_back(static_cast<std::size_t>(q.offsets[i]));
        dims.push_back(static_cast<std::size_t>(q.dims[i]));
    }
    return {{"mode", to_string(q.mode)},  {"offsets", offsets},
            {"dims", dims},               {"covariances", covs},
            {"log_dets", q.log_dets},     {"noise_variance", q.noise_variance},
            {"ridged", one_based(q.ridged)}};
}

void cmd_router(Context& ctx) {
    const RouterSection& sec = ctx.cfg.router;
    const BlockModelSpec& spec = ctx.cfg.model_for(sec.model, "router");
    const RngStream root(ctx.seed);
    const RouterSweepResult res = router_sweep(spec, sec.n_grid, sec.test_size, sec.trials, sec.mode, root.child(0));
    RngStream fit_rng = root.child(1);
    const QdaRouter fitted = fit_qda(generate_design(spec, fit_rng), sec.mode);
    json pts = json::array();
    std::string csv = "n,mean_error,stderr\n";
    PlotSeries s{"QDA " + std::string(to_string(sec.mode)), {}, {}, {}};
    for (const RouterSweepPoint& p : res.points) {
        pts.push_back({{"n", p.n}, {"mean_error", p.mean_error}, {"std_error", p.std_error},
                       {"trial_errors", p.trial_errors}});
        csv += std::to_string(p.n) + "," + fmt(p.mean_error) + "," + fmt(p.std_error) + "\n";
        s.x.push_back(static_cast<double>(p.n));
        s.y.push_back(p.mean_error);
        s.y_error.push_back(p.std_error);
    }
    emit(ctx, "router",
         {{"spec", spec_to_json(spec)},
          {"mode", to_string(sec.mode)},
          {"test_size", sec.test_size},
          {"trials", sec.trials},
          {"points", pts},
          {"fitted_router", qda_json(fitted)}},
         csv);
    emit_plot(ctx, line_plot_svg({s}, {"Routing error vs training size", "n", "test error", true, false}));
}

// ---------------------------------------------------------------- sweep

json fit_json(const std::vector<std::pair<double, double>>& pts, CurveBasis basis) {
    try {
        const CurveFit f = fit_risk_curve(pts, basis);
        return {{"a", f.a}, {"b", f.b}, {"rss", f.rss}};
    } catch (const ContractError&) {
        return nullptr;
    }
}

json slope_json(const std::vector<std::pair<double, double>>& pts) {
    try {
        return loglog_slope(pts);
    } catch (const ContractError&) {
        return nullptr;
    }
}

void cmd_sweep(Context& ctx) {
    const SweepSection& sec = ctx.cfg.sweep;
    const BlockModelSpec& base = ctx.cfg.model_for(sec.model, "sweep");
    const bool has_variants = !sec.variants.empty();
    std::vector<std::optional<SweepVariant>> variants;
    if (has_variants) {
        variants.assign(sec.variants.begin(), sec.variants.end());
    } else {
        variants.emplace_back();
    }
    const RngStream root(ctx.seed);
    json out = json::array();
    std::string csv = has_variants ? "sigma2,lambda2,n,kind,mean_excess,stderr\n" : "n,kind,mean_excess,stderr\n";
    std::vector<PlotSeries> series;
    for (std::size_t v = 0; v < variants.size(); ++v) {
        BlockModelSpec spec = base;
        std::string prefix, label;
        if (variants[v]) {
            spec.sigma2 = variants[v]->sigma2;
            for (std::size_t i = 0; i < spec.experts(); ++i) {
                spec.covariances[i] = variants[v]->lambda2 * Matrix::Identity(spec.block_dims[i], spec.block_dims[i]);
            }
            validate(spec);
            prefix = fmt(variants[v]->sigma2) + "," + fmt(variants[v]->lambda2) + ",";
            label = " (s2=" + fmt(variants[v]->sigma2) + ", l2=" + fmt(variants[v]->lambda2) + ")";
        }
        const SweepResult r = sample_complexity_sweep(spec, sec.n_grid, sec.trials, has_variants ? root.child(v) : root);
        warn_all(ctx, r.warnings);
        json points = json::array();
        json fits, slopes;
        bool ordering = true;
        for (const auto* kind_points : {&r.dense, &r.sparse}) {
            std::vector<std::pair<double, double>> curve;
            PlotSeries s{std::string(to_string(kind_points->front().kind)) + label, {}, {}, {}};
            for (const SweepPoint& p : *kind_points) {
                points.push_back({{"n", p.n}, {"kind", to_string(p.kind)}, {"mean_excess", p.mean},
                                  {"std_error", p.std_error}, {"trial_values", p.trial_values}});
                csv += prefix + std::to_string(p.n) + "," + to_string(p.kind) + "," + fmt(p.mean) + "," +
                       fmt(p.std_error) + "\n";
                curve.emplace_back(static_cast<double>(p.n), p.mean);
                s.x.push_back(static_cast<double>(p.n));
                s.y.push_back(p.mean);
                s.y_error.push_back(p.std_error);
            }
            const char* name = to_string(kind_points->front().kind);
            fits[name] = {{to_string(CurveBasis::inverse_square), fit_json(curve, CurveBasis::inverse_square)},
                          {to_string(CurveBasis::inverse_square_and_linear),
                           fit_json(curve, CurveBasis::inverse_square_and_linear)}};
            slopes[name] = slope_json(curve);
            series.push_back(std::move(s));
        }
        for (std::size_t g = 0; g < r.grid.size(); ++g) {
            ordering = ordering && r.sparse[g].mean <= r.dense[g].mean;
        }
        json entry{{"spec", spec_to_json(spec)}, {"trials", r.trials}, {"points", points},
                   {"fits", fits},               {"loglog_slopes", slopes}, {"ordering_holds", ordering},
                   {"warnings", r.warnings}};
        if (variants[v]) {
            entry["sigma2"] = variants[v]->sigma2;
            entry["lambda2"] = variants[v]->lambda2;
        }
        out.push_back(entry);
    }
    emit(ctx, "sweep sample-complexity", {{"n_grid", sec.n_grid}, {"variants", out}}, csv);
    emit_plot(ctx, line_plot_svg(series, {"Excess risk vs sample size", "n", "mean excess risk", true, true}));
}

// ---------------------------------------------------------------- case study

void cmd_case_study(Context& ctx) {
    const CaseStudySection& sec = ctx.cfg.case_study;
    const auto pts = case_study_1d(sec.lambda2, sec.sigma2, sec.beta, sec.n_grid, sec.trials, RngStream(ctx.seed));
    json rows = json::array();
    std::string csv = "n,risk_mean,risk_stderr,bias_term,excess,delta_variance\n";
    PlotSeries s{"risk minus bias term", {}, {}, {}}, dv{"delta-method variance", {}, {}, {}};
    bool positive = true, decreasing = true;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const CaseStudyPoint& p = pts[i];
        rows.push_back({{"n", p.n}, {"risk_mean", p.risk_mean}, {"risk_std_error", p.risk_std_error},
                        {"bias_term", p.bias_term}, {"excess", p.excess()}, {"delta_variance", p.delta_variance}});
        csv += std::to_string(p.n) + "," + fmt(p.risk_mean) + "," + fmt(p.risk_std_error) + "," + fmt(p.bias_term) +
               "," + fmt(p.excess()) + "," + fmt(p.delta_variance) + "\n";
        positive = positive && p.excess() > 0.0;
        decreasing = decreasing && (i == 0 || p.excess() < pts[i - 1].excess());
        s.x.push_back(static_cast<double>(p.n));
        s.y.push_back(p.excess());
        s.y_error.push_back(p.risk_std_error);
        dv.x.push_back(static_cast<double>(p.n));
        dv.y.push_back(p.delta_variance);
    }
    emit(ctx, "case-study",
         {{"lambda2", sec.lambda2},
          {"sigma2", sec.sigma2},
          {"beta", sec.beta},
          {"trials", sec.trials},
          {"points", rows},
          {"excess_positive", positive},
          {"excess_decreasing", decreasing}},
         csv);
    emit_plot(ctx, line_plot_svg({s, dv}, {"One-dimensional case study", "n", "risk - bias term", true, true}));
}

// ---------------------------------------------------------------- activations

struct LoadedActivations {
    ActivationMatrix acts;
    std::vector<std::size_t> planted_features;  // empty for files
    ActivationMatrix test;                      // probe only
};

ActivationSource effective_source(const Context& ctx, ActivationSource src) {
    if (!ctx.opts.activations.empty()) {
        src.kind = ActivationSource::Kind::file;
        src.path = ctx.opts.activations;
    }
    if (!ctx.opts.test_activations.empty()) {
        src.test_path = ctx.opts.test_activations;
    }
    if (!ctx.opts.labels.empty()) {
        src.labels_inline = ctx.opts.labels == "inline";
    }
    return src;
}

LoadedActivations load_source(const ActivationSource& src, RngStream rng) {
    LoadedActivations out;
    switch (src.kind) {
        case ActivationSource::Kind::file:
            out.acts = read_activations(src.path, src.labels_inline);
            break;
        case ActivationSource::Kind::correlated: {
            PlantedActivations p =
                correlated_block_activations(src.tokens, src.blocks, src.features_per_block, src.rho, src.offset, rng);
            out.acts = std::move(p.acts);
            out.planted_features = std::move(p.feature_blocks);
            break;
        }
        case ActivationSource::Kind::block_task: {
            BlockTask t = block_activation_task(src.tokens, src.test_tokens, src.task, rng);
            out.acts = std::move(t.train.acts);
            out.test = std::move(t.test.acts);
            out.planted_features = std::move(t.train.feature_blocks);
            break;
        }
    }
    return out;
}

json structure_json(const ModularStructure& m, const std::vector<std::size_t>& planted) {
    std::vector<std::size_t> sizes(m.heatmap.modules, 0);
    for (std::size_t l : m.assignment.feature_labels) {
        ++sizes[l];
    }
    json j{{"feature_labels", one_based(m.assignment.feature_labels)},
           {"token_labels", one_based(m.assignment.token_labels)},
           {"module_sizes", sizes},
           {"achieved_sparsity", m.achieved_sparsity},
           {"fisher_weighted", m.fisher_weighted},
           {"in_block_mean", m.heatmap.in_block_mean()},
           {"off_block_mean", m.heatmap.off_block_mean()}};
    j["planted_ari"] = planted.empty() ? json(nullptr) : json(adjusted_rand_index(m.assignment.feature_labels, planted));
    return j;
}

void cmd_cluster(Context& ctx) {
    const ClusterSection& sec = ctx.cfg.cluster;
    const RngStream root(ctx.seed);
    const LoadedActivations data = load_source(effective_source(ctx, sec.source), root.child(0));
    RngStream rng = root.child(1);
    const ModularStructure m = modular_structure(data.acts, sec.modules, sec.sparsity, rng, sec.centered);
    std::string csv = "feature,module\n";
    for (std::size_t f = 0; f < m.assignment.feature_labels.size(); ++f) {
        csv += std::to_string(f + 1) + "," + std::to_string(m.assignment.feature_labels[f] + 1) + "\n";
    }
    json body = structure_json(m, data.planted_features);
    body["modules"] = sec.modules;
    body["sparsity"] = sec.sparsity;
    body["tokens"] = data.acts.tokens();
    body["features"] = data.acts.features();
    emit(ctx, "cluster", body, csv);
    emit_plot(ctx, heatmap_svg(m.heatmap.percentiles, m.heatmap.row_boundaries, m.heatmap.col_boundaries,
                               "Activation percentiles by module"));
}

std::string suffixed_path(const std::string& path, const std::string& suffix) {
    const auto slash = path.find_last_of('/');
    const auto dot = path.find_last_of('.');
    if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) {
        return path + suffix;
    }
    return path.substr(0, dot) + suffix + path.substr(dot);
}

void cmd_heatmap(Context& ctx) {
    const HeatmapSection& sec = ctx.cfg.heatmap;
    const RngStream root(ctx.seed);
    const LoadedActivations data = load_source(effective_source(ctx, sec.source), root.child(0));
    json rows = json::array();
    std::string csv = "sparsity,achieved_sparsity,in_block_mean,off_block_mean\n";
    for (std::size_t s = 0; s < sec.sparsities.size(); ++s) {
        // Each sparsity level is clustered on its own; modules are not aligned across levels.
        RngStream rng = root.child(1 + s);
        const ModularStructure m = modular_structure(data.acts, sec.modules, sec.sparsities[s], rng, sec.centered);
        json j = structure_json(m, data.planted_features);
        j["sparsity"] = sec.sparsities[s];
        rows.push_back(j);
        csv += fmt(sec.sparsities[s]) + "," + fmt(m.achieved_sparsity) + "," + fmt(m.heatmap.in_block_mean()) + "," +
               fmt(m.heatmap.off_block_mean()) + "\n";
        if (!ctx.opts.plot.empty()) {
            char tag[32];
            std::snprintf(tag, sizeof tag, "_sparsity%.2f", sec.sparsities[s]);
            const std::string path = sec.sparsities.size() == 1 ? ctx.opts.plot : suffixed_path(ctx.opts.plot, tag);
            char title[64];
            std::snprintf(title, sizeof title, "Activation percentiles, sparsity %.2f", sec.sparsities[s]);
            write_file(path, heatmap_svg(m.heatmap.percentiles, m.heatmap.row_boundaries, m.heatmap.col_boundaries,
                                         title));
        }
    }
    emit(ctx, "heatmap",
         {{"modules", sec.modules}, {"tokens", data.acts.tokens()}, {"features", data.acts.features()}, {"levels", rows}},
         csv);
}

// ---------------------------------------------------------------- probe

json probe_report_json(const ProbeReport& r) {
    json rows = json::array();
    for (const ProbeDropRow& d : r.rows) {
        rows.push_back({{"sigma", d.sigma}, {"moe_noisy", d.moe_noisy}, {"global_noisy", d.global_noisy},
                        {"moe_drop", d.moe_drop}, {"global_drop", d.global_drop}});
    }
    return {{"metric", r.metric},           {"moe_clean", r.moe_clean},
            {"global_clean", r.global_clean}, {"rows", rows},
            {"cluster_sizes", r.cluster_sizes}, {"merged_clusters", r.merged_clusters},
            {"chosen_l2", r.chosen_l2},     {"chosen_l1", r.chosen_l1}};
}

void cmd_probe(Context& ctx) {
    const ProbeSection& sec = ctx.cfg.probe;
    const ActivationSource src = effective_source(ctx, sec.source);
    std::vector<ProbeReport> reports;
    std::vector<std::uint64_t> seeds;
    if (src.kind == ActivationSource::Kind::file) {
        if (src.test_path.empty()) {
            throw ConfigError({"probe.source.test: a test activation file is required"});
        }
        if (!src.labels_inline) {
            throw ConfigError({"probe.source.labels_inline: probe files need inline labels (--labels inline)"});
        }
        const ActivationMatrix train = read_activations(src.path, true);
        const ActivationMatrix test = read_activations(src.test_path, true);
        RngStream rng(ctx.seed);
        reports.push_back(probe_robustness(train, test, sec.probe, rng));
        seeds.push_back(ctx.seed);
    } else {
        for (std::size_t q = 0; q < sec.seeds; ++q) {
            RngStream rng(ctx.seed + q);
            const BlockTask task = block_activation_task(src.tokens, src.test_tokens, src.task, rng);
            RngStream probe_rng = rng.child(9);
            reports.push_back(probe_robustness(task.train.acts, task.test.acts, sec.probe, probe_rng));
            seeds.push_back(ctx.seed + q);
        }
    }
    json per_seed = json::array();
    for (std::size_t q = 0; q < reports.size(); ++q) {
        json j = probe_report_json(reports[q]);
        j["seed"] = seeds[q];
        per_seed.push_back(j);
    }
    json mean = json::array();
    std::string csv = "sigma,moe_drop,moe_stderr,global_drop,global_stderr\n";
    PlotSeries moe{"MoE probe", {}, {}, {}}, global{"global L1 probe", {}, {}, {}};
    bool direction = true;
    for (std::size_t g = 0; g < sec.probe.noise_grid.size(); ++g) {
        std::vector<double> m, l;
        for (const ProbeReport& r : reports) {
            m.push_back(r.rows[g].moe_drop);
            l.push_back(r.rows[g].global_drop);
        }
        const MeanStderr ms = mean_stderr(m), ls = mean_stderr(l);
        const double sigma = sec.probe.noise_grid[g];
        mean.push_back({{"sigma", sigma}, {"moe_drop", ms.mean}, {"moe_std_error", ms.std_error},
                        {"global_drop", ls.mean}, {"global_std_error", ls.std_error}});
        csv += fmt(sigma) + "," + fmt(ms.mean) + "," + fmt(ms.std_error) + "," + fmt(ls.mean) + "," +
               fmt(ls.std_error) + "\n";
        if (g + 1 == sec.probe.noise_grid.size()) {
            direction = ms.mean <= ls.mean;
        }
        moe.x.push_back(sigma);
        moe.y.push_back(ms.mean);
        moe.y_error.push_back(ms.std_error);
        global.x.push_back(sigma);
        global.y.push_back(ls.mean);
        global.y_error.push_back(ls.std_error);
    }
    emit(ctx, "probe",
         {{"experts", sec.probe.experts},
          {"top_k", sec.probe.top_k},
          {"seeds", per_seed},
          {"mean_drop", mean},
          {"moe_more_robust_at_largest_sigma", direction},
          {"published_reference",
           {{"dataset", kReferenceDrop.dataset},
            {"sigma", kReferenceDrop.sigma},
            {"lasso_drop", kReferenceDrop.lasso_drop},
            {"moe_drop", kReferenceDrop.moe_drop},
            {"experts", kReferenceDrop.experts},
            {"top_k", kReferenceDrop.top_k}}}},
         csv);
    emit_plot(ctx, line_plot_svg({moe, global}, {"Performance drop under activation noise", "noise sigma",
                                                 "clean minus noisy score", false, false}));
}

// ---------------------------------------------------------------- validate

void cmd_validate(Context& ctx, const JsonDocument& doc) {
    const auto problems = config_problems(doc);
    if (!problems.empty()) {
        std::vector<std::string> named;
        for (const auto& p : problems) {
            named.push_back(doc.source + ": " + p);
        }
        throw ConfigError(named);
    }
    ctx.out << doc.source << ": ok\n";
}

void add_common(CLI::App* sub, Options& o, bool activations) {
    auto* cfg = sub->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--preset", o.preset, "Built-in configuration: desk or paper")
        ->check(CLI::IsMember({"desk", "paper"}))
        ->excludes(cfg);
    if (sub->get_name() == "validate") {
        return;
    }
    sub->add_option("--seed", o.seed, "Random seed (overrides the config; default 0)");
    sub->add_option("--threads", o.threads, "Worker threads; falls back to MOEFN_THREADS, then 1");
    sub->add_option("--out", o.out, "Result file; stdout when omitted");
    sub->add_option("--format", o.format, "json or csv (default: from the --out extension, else json)")
        ->check(CLI::IsMember({"json", "csv"}));
    sub->add_option("--plot", o.plot, "Also write an SVG plot to this path");
    if (activations) {
        sub->add_option("--activations", o.activations, "Activation file (CSV or MOEACT1 binary)");
        sub->add_option("--test-activations", o.test_activations, "Held-out activation file (probe)");
        sub->add_option("--labels", o.labels, "inline: the last CSV column holds 1-based labels")
            ->check(CLI::IsMember({"inline", "none"}));
    }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Sparse versus dense linear estimators under feature noise: closed forms, simulations and sweeps."};
    app.name("moefn");
    app.require_subcommand(1);
    Options o;

    struct Command {
        const char* name;
        const char* help;
        bool activations;
        void (*fn)(Context&);
    };
    const Command commands[] = {
        {"risk", "Bayes risks of the per-expert (sparse) and single (dense) linear estimators with a Monte Carlo check; "
                 "reproduces the sparse <= dense generalization ordering.",
         false, cmd_risk},
        {"robustness", "Risk of the Bayes estimators when test inputs carry extra noise of variance sigma_o2; "
                       "reproduces the perturbation-robustness comparison.",
         false, cmd_robustness},
        {"misroute", "Risk when an expert receives an eta-scaled input meant for another expert; reproduces the "
                     "mis-routing comparison and its Monte Carlo check.",
         false, cmd_misroute},
        {"convergence", "Gradient descent on a fixed design: per-expert and dense convergence rates against the "
                        "spiked-spectrum predictions; reproduces the faster-convergence result and residual curves.",
         false, cmd_convergence},
        {"router", "Training-size sweep of the QDA router's test error; reproduces near-perfect routing.", false,
         cmd_router},
        {"case-study", "One-dimensional errors-in-variables example: empirical risk minus the bias term, with the "
                       "delta-method variance.",
         false, cmd_case_study},
        {"cluster", "Fisher-weighted spectral clustering of activation features into modules.", true, cmd_cluster},
        {"heatmap", "Percentile heatmaps of pruned activations ordered by module, one per sparsity level; "
                    "reproduces the block-diagonal structure figure at synthetic scale.",
         true, cmd_heatmap},
        {"probe", "MoE probe (clustered experts, logistic router, top-K) versus a global L1 probe under activation "
                  "noise; reproduces the direction of the probe robustness table on synthetic data.",
         true, cmd_probe},
    };
    std::vector<std::pair<CLI::App*, const Command*>> subs;
    for (const Command& c : commands) {
        CLI::App* sub = app.add_subcommand(c.name, c.help);
        add_common(sub, o, c.activations);
        subs.emplace_back(sub, &c);
    }
    CLI::App* sweep = app.add_subcommand("sweep", "Sample-complexity sweeps.");
    sweep->require_subcommand(1);
    CLI::App* sample = sweep->add_subcommand(
        "sample-complexity",
        "Excess risk of the min-norm sparse and dense estimators over a grid of n, with 1/n^2 and 1/n^2 + 1/n "
        "curve fits and log-log slopes; reproduces the sample-complexity figure and table at desk scale.");
    add_common(sample, o, false);
    const Command sweep_cmd{"sweep sample-complexity", "", false, cmd_sweep};
    subs.emplace_back(sample, &sweep_cmd);
    CLI::App* validate_cmd = app.add_subcommand("validate", "Check a configuration file and list every problem.");
    add_common(validate_cmd, o, false);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            std::ostringstream help_out, help_err;
            app.exit(e, help_out, help_err);
            out << help_out.str();
            return kExitOk;
        }
        std::ostringstream o_out, o_err;
        app.exit(e, o_out, o_err);
        err << o_err.str() << o_out.str();
        return kExitConfig;
    }

    try {
        JsonDocument doc;
        if (!o.config.empty()) {
            doc = load_json_file(o.config);
        } else if (!o.preset.empty()) {
            doc = preset_document(o.preset);
        } else {
            doc = parse_json_document("{}", "defaults");
        }
        if (validate_cmd->parsed()) {
            if (o.config.empty() && o.preset.empty()) {
                throw ConfigError({"validate: give --config or --preset"});
            }
            Context ctx{o, {}, 0, out, err};
            cmd_validate(ctx, doc);
            return kExitOk;
        }
        Context ctx{o, parse_run_config(doc), 0, out, err};
        ctx.seed = o.seed.value_or(ctx.cfg.seed.value_or(0));
        set_thread_count(o.threads.value_or(ctx.cfg.threads.value_or(0)));
        for (const auto& [sub, cmd] : subs) {
            if (sub->parsed()) {
                cmd->fn(ctx);
                return kExitOk;
            }
        }
        err << "error: no subcommand\n";
        return kExitConfig;
    } catch (const ConfigError& e) {
        for (const auto& p : e.problems()) {
            err << "error: " << p << "\n";
        }
        return kExitConfig;
    } catch (const SpecError& e) {
        for (const auto& p : e.problems()) {
            err << "error: model." << p << "\n";
        }
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        err << "failure: " << e.what() << "\n";
        return kExitNumerical;
    }
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace moefn::cli
