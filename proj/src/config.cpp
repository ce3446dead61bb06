#include "moefn/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "moefn/presets.hpp"

namespace moefn {

using nlohmann::json;

namespace {

std::string join_lines(const std::vector<std::string>& problems) {
    std::string out;
    for (const std::string& p : problems) {
        out += (out.empty() ? "" : "\n") + p;
    }
    return out;
}

std::string child_path(const std::string& parent, const std::string& key) {
    return parent.empty() ? key : parent + "." + key;
}

std::string index_path(const std::string& parent, std::size_t i) { return parent + "[" + std::to_string(i) + "]"; }

// Records the starting line of every value (and object key) in already
// validated JSON text.
class LineIndexer {
public:
    LineIndexer(const std::string& text, std::map<std::string, int>& lines) : text_(text), lines_(lines) {}

    void run() {
        skip_ws();
        value("");
    }

private:
    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
            if (text_[pos_] == '\n') {
                ++line_;
            }
            ++pos_;
        }
    }

    std::string string_token() {
        std::string out;
        ++pos_;  // opening quote
        while (pos_ < text_.size() && text_[pos_] != '"') {
            if (text_[pos_] == '\\') {
                ++pos_;
            }
            if (pos_ < text_.size()) {
                out += text_[pos_++];
            }
        }
        ++pos_;  // closing quote
        return out;
    }

    void value(const std::string& path) {
        lines_.try_emplace(path, line_);
        if (pos_ >= text_.size()) {
            return;
        }
        const char c = text_[pos_];
        if (c == '{') {
            ++pos_;
            skip_ws();
            while (pos_ < text_.size() && text_[pos_] != '}') {
                const int key_line = line_;
                const std::string key = child_path(path, string_token());
                lines_.try_emplace(key, key_line);
                skip_ws();
                ++pos_;  // colon
                skip_ws();
                value(key);
                skip_ws();
                if (pos_ < text_.size() && text_[pos_] == ',') {
                    ++pos_;
                    skip_ws();
                }
            }
            ++pos_;
        } else if (c == '[') {
            ++pos_;
            skip_ws();
            std::size_t i = 0;
            while (pos_ < text_.size() && text_[pos_] != ']') {
                value(index_path(path, i++));
                skip_ws();
                if (pos_ < text_.size() && text_[pos_] == ',') {
                    ++pos_;
                    skip_ws();
                }
            }
            ++pos_;
        } else if (c == '"') {
            string_token();
        } else {
            while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) &&
                   text_[pos_] != ',' && text_[pos_] != ']' && text_[pos_] != '}') {
                ++pos_;
            }
        }
    }

    const std::string& text_;
    std::map<std::string, int>& lines_;
    std::size_t pos_ = 0;
    int line_ = 1;
};

// Collects schema problems while reading values into typed fields.
class Reader {
public:
    explicit Reader(const JsonDocument& doc) : doc_(doc) {}

    std::vector<std::string> problems;

    void fail(const std::string& path, const std::string& message) {
        problems.push_back((path.empty() ? std::string("(root)") : path) + " (line " +
                           std::to_string(doc_.line_of(path)) + "): " + message);
    }

    bool object(const json& j, const std::string& path, const std::set<std::string>& allowed) {
        if (!j.is_object()) {
            fail(path, "must be an object");
            return false;
        }
        for (const auto& [key, value] : j.items()) {
            if (!allowed.count(key)) {
                fail(child_path(path, key), "unknown key");
            }
        }
        return true;
    }

    const json* field(const json& obj, const std::string& path, const char* key, bool required = false) {
        const auto it = obj.find(key);
        if (it == obj.end()) {
            if (required) {
                fail(path, std::string("missing required key \"") + key + "\"");
            }
            return nullptr;
        }
        return &*it;
    }

    // Numeric reads return false (after recording a problem) when the value is unusable.
    bool number(const json& j, const std::string& path, double& out) {
        if (!j.is_number()) {
            fail(path, "must be a number");
            return false;
        }
        out = j.get<double>();
        if (!std::isfinite(out)) {
            fail(path, "must be finite");
            return false;
        }
        return true;
    }

    bool count(const json& j, const std::string& path, std::size_t& out, std::size_t min_value) {
        if (!j.is_number_integer() || (j.is_number_integer() && j.get<std::int64_t>() < 0 && !j.is_number_unsigned())) {
            fail(path, "must be a non-negative integer");
            return false;
        }
        const auto v = j.get<std::uint64_t>();
        if (v < min_value) {
            fail(path, "must be >= " + std::to_string(min_value));
            return false;
        }
        out = static_cast<std::size_t>(v);
        return true;
    }

    void read_double(const json& obj, const std::string& path, const char* key, double& out,
                     const std::function<const char*(double)>& check = {}, bool required = false) {
        const json* j = field(obj, path, key, required);
        double v = 0.0;
        if (j && number(*j, child_path(path, key), v)) {
            if (check) {
                if (const char* msg = check(v)) {
                    fail(child_path(path, key), msg);
                    return;
                }
            }
            out = v;
        }
    }

    void read_count(const json& obj, const std::string& path, const char* key, std::size_t& out,
                    std::size_t min_value = 0, bool required = false) {
        const json* j = field(obj, path, key, required);
        std::size_t v = 0;
        if (j && count(*j, child_path(path, key), v, min_value)) {
            out = v;
        }
    }

    void read_index(const json& obj, const std::string& path, const char* key, Eigen::Index& out,
                    std::size_t min_value = 0) {
        std::size_t v = static_cast<std::size_t>(out);
        read_count(obj, path, key, v, min_value);
        out = static_cast<Eigen::Index>(v);
    }

    void read_bool(const json& obj, const std::string& path, const char* key, bool& out) {
        if (const json* j = field(obj, path, key)) {
            if (!j->is_boolean()) {
                fail(child_path(path, key), "must be true or false");
            } else {
                out = j->get<bool>();
            }
        }
    }

    void read_string(const json& obj, const std::string& path, const char* key, std::string& out,
                     bool required = false) {
        if (const json* j = field(obj, path, key, required)) {
            if (!j->is_string() || j->get<std::string>().empty()) {
                fail(child_path(path, key), "must be a non-empty string");
            } else {
                out = j->get<std::string>();
            }
        }
    }

    void read_double_list(const json& obj, const std::string& path, const char* key, std::vector<double>& out,
                          const std::function<const char*(double)>& check = {}) {
        const json* j = field(obj, path, key);
        if (!j) {
            return;
        }
        const std::string p = child_path(path, key);
        if (!j->is_array() || j->empty()) {
            fail(p, "must be a non-empty array of numbers");
            return;
        }
        std::vector<double> values;
        bool ok = true;
        for (std::size_t i = 0; i < j->size(); ++i) {
            double v = 0.0;
            if (!number((*j)[i], index_path(p, i), v)) {
                ok = false;
                continue;
            }
            if (check) {
                if (const char* msg = check(v)) {
                    fail(index_path(p, i), msg);
                    ok = false;
                }
            }
            values.push_back(v);
        }
        if (ok) {
            out = std::move(values);
        }
    }

    void read_grid(const json& obj, const std::string& path, const char* key, std::vector<std::size_t>& out,
                   std::size_t min_value) {
        const json* j = field(obj, path, key);
        if (!j) {
            return;
        }
        const std::string p = child_path(path, key);
        if (!j->is_array() || j->empty()) {
            fail(p, "must be a non-empty array of integers");
            return;
        }
        std::vector<std::size_t> values;
        bool ok = true;
        for (std::size_t i = 0; i < j->size(); ++i) {
            std::size_t v = 0;
            if (!count((*j)[i], index_path(p, i), v, min_value)) {
                ok = false;
                continue;
            }
            if (!values.empty() && v <= values.back()) {
                fail(index_path(p, i), "grid must be strictly increasing");
                ok = false;
            }
            values.push_back(v);
        }
        if (ok) {
            out = std::move(values);
        }
    }

    std::optional<Matrix> matrix(const json& j, const std::string& path) {
        if (!j.is_array() || j.empty() || !j[0].is_array()) {
            fail(path, "must be a non-empty array of rows");
            return std::nullopt;
        }
        const std::size_t cols = j[0].size();
        Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
        bool ok = true;
        for (std::size_t r = 0; r < j.size(); ++r) {
            const std::string rp = index_path(path, r);
            if (!j[r].is_array() || j[r].size() != cols) {
                fail(rp, "every row must be an array of length " + std::to_string(cols));
                ok = false;
                continue;
            }
            for (std::size_t c = 0; c < cols; ++c) {
                double v = 0.0;
                if (number(j[r][c], index_path(rp, c), v)) {
                    m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
                } else {
                    ok = false;
                }
            }
        }
        return ok ? std::optional<Matrix>(m) : std::nullopt;
    }

private:
    const JsonDocument& doc_;
};

const char* non_negative(double v) { return v >= 0.0 ? nullptr : "must be >= 0"; }
const char* positive(double v) { return v > 0.0 ? nullptr : "must be > 0"; }

// Maps "field[i]: message" from spec_problems onto the document path.
void report_spec_problems(Reader& r, const std::string& path, const BlockModelSpec& spec, bool shorthand) {
    for (const std::string& p : spec_problems(spec)) {
        const auto colon = p.find(": ");
        std::string field = colon == std::string::npos ? std::string() : p.substr(0, colon);
        const std::string message = colon == std::string::npos ? p : p.substr(colon + 2);
        if (shorthand) {
            const std::string base = field.substr(0, field.find('['));
            field = base == "covariances" ? "lambda2" : base == "beta_star" ? "beta" : base;
        }
        r.fail(field.empty() ? path : child_path(path, field), message);
    }
}

std::optional<BlockModelSpec> read_model(Reader& r, const json& j, const std::string& path) {
    static const std::set<std::string> shorthand_keys{"experts", "feature_dim", "rows", "sigma2", "lambda2", "beta"};
    static const std::set<std::string> explicit_keys{"block_dims", "block_rows", "sigma2",
                                                     "covariances", "beta_star", "expert_probs"};
    if (!j.is_object()) {
        r.fail(path, "must be an object");
        return std::nullopt;
    }
    const bool shorthand = j.contains("experts") || j.contains("lambda2");
    const std::size_t before = r.problems.size();
    if (shorthand) {
        if (!r.object(j, path, shorthand_keys)) {
            return std::nullopt;
        }
        std::size_t experts = 0, dim = 0, rows = 0;
        double sigma2 = 0.0, lambda2 = 0.0, beta = 1.0;
        r.read_count(j, path, "experts", experts, 1, true);
        r.read_count(j, path, "feature_dim", dim, 1, true);
        r.read_count(j, path, "rows", rows, 0, true);
        r.read_double(j, path, "sigma2", sigma2, {}, true);
        r.read_double(j, path, "lambda2", lambda2, {}, true);
        r.read_double(j, path, "beta", beta);
        if (r.problems.size() != before) {
            return std::nullopt;
        }
        if (dim % experts != 0) {
            r.fail(child_path(path, "feature_dim"), "must be a multiple of experts");
        }
        if (rows % experts != 0) {
            r.fail(child_path(path, "rows"), "must be a multiple of experts");
        }
        if (r.problems.size() != before) {
            return std::nullopt;
        }
        BlockModelSpec spec = balanced_spec(experts, static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(rows),
                                            sigma2, lambda2, beta);
        report_spec_problems(r, path, spec, true);
        return r.problems.size() == before ? std::optional<BlockModelSpec>(spec) : std::nullopt;
    }
    if (!r.object(j, path, explicit_keys)) {
        return std::nullopt;
    }
    BlockModelSpec spec;
    auto read_dims = [&](const char* key, std::vector<Eigen::Index>& out, std::size_t min_value) {
        const json* f = r.field(j, path, key, true);
        if (!f) {
            return;
        }
        const std::string p = child_path(path, key);
        if (!f->is_array() || f->empty()) {
            r.fail(p, "must be a non-empty array of integers");
            return;
        }
        for (std::size_t i = 0; i < f->size(); ++i) {
            std::size_t v = 0;
            if (r.count((*f)[i], index_path(p, i), v, min_value)) {
                out.push_back(static_cast<Eigen::Index>(v));
            }
        }
    };
    read_dims("block_dims", spec.block_dims, 1);
    read_dims("block_rows", spec.block_rows, 0);
    spec.sigma2 = std::numeric_limits<double>::quiet_NaN();
    r.read_double(j, path, "sigma2", spec.sigma2, {}, true);
    if (const json* f = r.field(j, path, "covariances", true)) {
        const std::string p = child_path(path, "covariances");
        if (!f->is_array()) {
            r.fail(p, "must be an array with one entry per expert");
        } else {
            for (std::size_t i = 0; i < f->size(); ++i) {
                const json& c = (*f)[i];
                if (c.is_number()) {
                    // A number means that multiple of the identity.
                    const Eigen::Index d = i < spec.block_dims.size() ? spec.block_dims[i] : 1;
                    double v = 0.0;
                    if (r.number(c, index_path(p, i), v)) {
                        spec.covariances.push_back(v * Matrix::Identity(d, d));
                    }
                } else if (auto m = r.matrix(c, index_path(p, i))) {
                    spec.covariances.push_back(*m);
                }
            }
        }
    }
    if (const json* f = r.field(j, path, "beta_star", true)) {
        const std::string p = child_path(path, "beta_star");
        if (f->is_number()) {
            double v = 0.0;
            if (r.number(*f, p, v)) {
                spec.beta_star = Vector::Constant(spec.feature_dim(), v);
            }
        } else if (f->is_array()) {
            spec.beta_star.resize(static_cast<Eigen::Index>(f->size()));
            for (std::size_t i = 0; i < f->size(); ++i) {
                double v = 0.0;
                if (r.number((*f)[i], index_path(p, i), v)) {
                    spec.beta_star(static_cast<Eigen::Index>(i)) = v;
                }
            }
        } else {
            r.fail(p, "must be a number or an array of numbers");
        }
    }
    if (const json* f = r.field(j, path, "expert_probs")) {
        const std::string p = child_path(path, "expert_probs");
        if (!f->is_array()) {
            r.fail(p, "must be an array of numbers");
        } else {
            for (std::size_t i = 0; i < f->size(); ++i) {
                double v = 0.0;
                if (r.number((*f)[i], index_path(p, i), v)) {
                    spec.expert_probs.push_back(v);
                }
            }
        }
    } else {
        spec.expert_probs.assign(spec.block_dims.size(), 1.0 / static_cast<double>(std::max<std::size_t>(1, spec.block_dims.size())));
    }
    if (r.problems.size() != before) {
        return std::nullopt;
    }
    report_spec_problems(r, path, spec, false);
    return r.problems.size() == before ? std::optional<BlockModelSpec>(spec) : std::nullopt;
}

void read_source(Reader& r, const json& obj, const std::string& path, ActivationSource& src, bool probe) {
    const json* j = r.field(obj, path, "source");
    if (!j) {
        if (probe) {
            src.kind = ActivationSource::Kind::block_task;
        }
        return;
    }
    const std::string p = child_path(path, "source");
    if (!r.object(*j, p,
                  {"kind", "path", "train", "test", "labels_inline", "tokens", "test_tokens", "blocks",
                   "features_per_block", "rho", "offset", "level", "background", "classes"})) {
        return;
    }
    std::string kind = probe ? "block_task" : "correlated";
    r.read_string(*j, p, "kind", kind);
    if (kind == "file") {
        src.kind = ActivationSource::Kind::file;
        if (probe) {
            r.read_string(*j, p, "train", src.path, true);
            r.read_string(*j, p, "test", src.test_path, true);
        } else {
            r.read_string(*j, p, "path", src.path, true);
        }
        r.read_bool(*j, p, "labels_inline", src.labels_inline);
        return;
    }
    if (kind == "correlated") {
        src.kind = ActivationSource::Kind::correlated;
    } else if (kind == "block_task") {
        src.kind = ActivationSource::Kind::block_task;
    } else {
        r.fail(child_path(p, "kind"), "must be \"file\", \"correlated\" or \"block_task\"");
        return;
    }
    r.read_index(*j, p, "tokens", src.tokens, 2);
    r.read_index(*j, p, "test_tokens", src.test_tokens, 1);
    r.read_count(*j, p, "blocks", src.blocks, 1);
    r.read_index(*j, p, "features_per_block", src.features_per_block, 1);
    r.read_double(*j, p, "rho", src.rho, [](double v) -> const char* {
        return v >= 0.0 && v <= 1.0 ? nullptr : "must lie in [0, 1]";
    });
    r.read_double(*j, p, "offset", src.offset);
    r.read_double(*j, p, "level", src.task.level);
    r.read_double(*j, p, "background", src.task.background, non_negative);
    r.read_count(*j, p, "classes", src.task.classes, 2);
    src.task.blocks = src.blocks;
    src.task.features_per_block = src.features_per_block;
}

void read_section_model(Reader& r, const json& obj, const std::string& path, std::optional<BlockModelSpec>& out) {
    if (const json* m = r.field(obj, path, "model")) {
        out = read_model(r, *m, child_path(path, "model"));
    }
}

RunConfig read_config(Reader& r, const JsonDocument& doc) {
    RunConfig cfg;
    const json& root = doc.value;
    if (!r.object(root, "",
                  {"seed", "threads", "model", "risk", "robustness", "misroute", "convergence", "router", "sweep",
                   "case_study", "cluster", "heatmap", "probe", "description"})) {
        return cfg;
    }
    if (const json* j = r.field(root, "", "description"); j && !j->is_string()) {
        r.fail("description", "must be a string");
    }
    if (root.contains("seed")) {
        std::size_t seed = 0;
        if (r.count(root["seed"], "seed", seed, 0)) {
            cfg.seed = seed;
        }
    }
    if (root.contains("threads")) {
        std::size_t threads = 0;
        if (r.count(root["threads"], "threads", threads, 0)) {
            cfg.threads = threads;
        }
    }
    if (root.contains("model")) {
        cfg.model = read_model(r, root["model"], "model");
    }
    if (const json* j = r.field(root, "", "risk"); j && r.object(*j, "risk", {"model", "mc_samples"})) {
        read_section_model(r, *j, "risk", cfg.risk.model);
        r.read_count(*j, "risk", "mc_samples", cfg.risk.mc_samples, 0);
    }
    if (const json* j = r.field(root, "", "robustness");
        j && r.object(*j, "robustness", {"model", "sigma_o2", "mc_samples"})) {
        read_section_model(r, *j, "robustness", cfg.robustness.model);
        r.read_double_list(*j, "robustness", "sigma_o2", cfg.robustness.sigma_o2, non_negative);
        r.read_count(*j, "robustness", "mc_samples", cfg.robustness.mc_samples, 0);
    }
    if (const json* j = r.field(root, "", "misroute");
        j && r.object(*j, "misroute", {"model", "from", "to", "eta", "mc_samples"})) {
        read_section_model(r, *j, "misroute", cfg.misroute.model);
        std::size_t from = cfg.misroute.from + 1, to = cfg.misroute.to + 1;
        r.read_count(*j, "misroute", "from", from, 1);
        r.read_count(*j, "misroute", "to", to, 1);
        if (from == to) {
            r.fail("misroute.to", "must differ from misroute.from");
        }
        cfg.misroute.from = from - 1;
        cfg.misroute.to = to - 1;
        r.read_double_list(*j, "misroute", "eta", cfg.misroute.eta, positive);
        r.read_count(*j, "misroute", "mc_samples", cfg.misroute.mc_samples, 0);
    }
    if (const json* j = r.field(root, "", "convergence");
        j && r.object(*j, "convergence", {"model", "spectra", "spectrum_high", "spectrum_low", "steps", "tail"})) {
        ConvergenceSection& c = cfg.convergence;
        read_section_model(r, *j, "convergence", c.model);
        if (const json* s = r.field(*j, "convergence", "spectra")) {
            if (!s->is_array() || s->empty()) {
                r.fail("convergence.spectra", "must be an array with one spectrum per expert");
            } else {
                for (std::size_t i = 0; i < s->size(); ++i) {
                    std::vector<double> values;
                    json wrapper{{"values", (*s)[i]}};
                    const std::string p = index_path("convergence.spectra", i);
                    if (!(*s)[i].is_array() || (*s)[i].empty()) {
                        r.fail(p, "must be a non-empty array of singular values");
                        continue;
                    }
                    for (std::size_t v = 0; v < (*s)[i].size(); ++v) {
                        double x = 0.0;
                        if (r.number((*s)[i][v], index_path(p, v), x)) {
                            if (!(x > 0.0)) {
                                r.fail(index_path(p, v), "must be > 0");
                            }
                            values.push_back(x);
                        }
                    }
                    c.spectra.push_back(Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size())));
                }
            }
        }
        r.read_double(*j, "convergence", "spectrum_high", c.spectrum_high, positive);
        r.read_double(*j, "convergence", "spectrum_low", c.spectrum_low, positive);
        if (c.spectrum_low > c.spectrum_high) {
            r.fail("convergence.spectrum_low", "must not exceed spectrum_high");
        }
        r.read_count(*j, "convergence", "steps", c.steps, 20);
        r.read_double(*j, "convergence", "tail", c.tail, [](double v) -> const char* {
            return v > 0.0 && v <= 1.0 ? nullptr : "must lie in (0, 1]";
        });
    }
    if (const json* j = r.field(root, "", "router");
        j && r.object(*j, "router", {"model", "n_grid", "test_size", "trials", "mode"})) {
        read_section_model(r, *j, "router", cfg.router.model);
        r.read_grid(*j, "router", "n_grid", cfg.router.n_grid, 1);
        r.read_count(*j, "router", "test_size", cfg.router.test_size, 1);
        r.read_count(*j, "router", "trials", cfg.router.trials, 1);
        std::string mode = to_string(cfg.router.mode);
        r.read_string(*j, "router", "mode", mode);
        if (mode == "literal") {
            cfg.router.mode = QdaMode::literal;
        } else if (mode == "full_likelihood") {
            cfg.router.mode = QdaMode::full_likelihood;
        } else {
            r.fail("router.mode", "must be \"literal\" or \"full_likelihood\"");
        }
    }
    if (const json* j = r.field(root, "", "sweep");
        j && r.object(*j, "sweep", {"model", "n_grid", "trials", "variants"})) {
        read_section_model(r, *j, "sweep", cfg.sweep.model);
        r.read_grid(*j, "sweep", "n_grid", cfg.sweep.n_grid, 1);
        r.read_count(*j, "sweep", "trials", cfg.sweep.trials, 2);
        if (const json* v = r.field(*j, "sweep", "variants")) {
            if (!v->is_array() || v->empty()) {
                r.fail("sweep.variants", "must be a non-empty array of {sigma2, lambda2} objects");
            } else {
                for (std::size_t i = 0; i < v->size(); ++i) {
                    const std::string p = index_path("sweep.variants", i);
                    SweepVariant sv;
                    if (r.object((*v)[i], p, {"sigma2", "lambda2"})) {
                        r.read_double((*v)[i], p, "sigma2", sv.sigma2, non_negative, true);
                        r.read_double((*v)[i], p, "lambda2", sv.lambda2, positive, true);
                    }
                    cfg.sweep.variants.push_back(sv);
                }
            }
        }
    }
    if (const json* j = r.field(root, "", "case_study");
        j && r.object(*j, "case_study", {"lambda2", "sigma2", "beta", "n_grid", "trials"})) {
        CaseStudySection& c = cfg.case_study;
        r.read_double(*j, "case_study", "lambda2", c.lambda2, positive);
        r.read_double(*j, "case_study", "sigma2", c.sigma2, non_negative);
        r.read_double(*j, "case_study", "beta", c.beta);
        r.read_grid(*j, "case_study", "n_grid", c.n_grid, 2);
        r.read_count(*j, "case_study", "trials", c.trials, 2);
    }
    if (const json* j = r.field(root, "", "cluster");
        j && r.object(*j, "cluster", {"source", "modules", "sparsity", "centered"})) {
        read_source(r, *j, "cluster", cfg.cluster.source, false);
        r.read_count(*j, "cluster", "modules", cfg.cluster.modules, 1);
        r.read_double(*j, "cluster", "sparsity", cfg.cluster.sparsity, [](double v) -> const char* {
            return v >= 0.0 && v < 1.0 ? nullptr : "must lie in [0, 1)";
        });
        r.read_bool(*j, "cluster", "centered", cfg.cluster.centered);
    }
    if (const json* j = r.field(root, "", "heatmap");
        j && r.object(*j, "heatmap", {"source", "modules", "sparsities", "centered"})) {
        read_source(r, *j, "heatmap", cfg.heatmap.source, false);
        r.read_count(*j, "heatmap", "modules", cfg.heatmap.modules, 1);
        r.read_double_list(*j, "heatmap", "sparsities", cfg.heatmap.sparsities, [](double v) -> const char* {
            return v >= 0.0 && v < 1.0 ? nullptr : "must lie in [0, 1)";
        });
        r.read_bool(*j, "heatmap", "centered", cfg.heatmap.centered);
    }
    if (const json* j = r.field(root, "", "probe");
        j && r.object(*j, "probe",
                      {"source", "experts", "top_k", "noise_grid", "l2_grid", "l1_grid", "validation_fraction",
                       "epochs", "centered", "seeds"})) {
        ProbeSection& p = cfg.probe;
        read_source(r, *j, "probe", p.source, true);
        if (p.source.kind == ActivationSource::Kind::correlated) {
            r.fail("probe.source.kind", "probe needs labelled data: use \"block_task\" or \"file\"");
        }
        r.read_count(*j, "probe", "experts", p.probe.experts, 1);
        r.read_count(*j, "probe", "top_k", p.probe.top_k, 1);
        if (p.probe.top_k > p.probe.experts) {
            r.fail("probe.top_k", "must not exceed probe.experts");
        }
        r.read_double_list(*j, "probe", "noise_grid", p.probe.noise_grid, non_negative);
        r.read_double_list(*j, "probe", "l2_grid", p.probe.l2_grid, non_negative);
        r.read_double_list(*j, "probe", "l1_grid", p.probe.l1_grid, non_negative);
        r.read_double(*j, "probe", "validation_fraction", p.probe.validation_fraction, [](double v) -> const char* {
            return v > 0.0 && v < 1.0 ? nullptr : "must lie in (0, 1)";
        });
        r.read_count(*j, "probe", "epochs", p.probe.epochs, 1);
        r.read_bool(*j, "probe", "centered", p.probe.centered);
        r.read_count(*j, "probe", "seeds", p.seeds, 1);
        if (p.seeds > 1 && p.source.kind == ActivationSource::Kind::file) {
            r.fail("probe.seeds", "repeated seeds need a synthetic source");
        }
    }
    return cfg;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error(join_lines(problems)), problems_(std::move(problems)) {}

int JsonDocument::line_of(const std::string& path) const {
    std::string p = path;
    while (true) {
        if (const auto it = lines.find(p); it != lines.end()) {
            return it->second;
        }
        if (p.empty()) {
            return 1;
        }
        const auto cut = p.find_last_of(".[");
        p = cut == std::string::npos ? std::string() : p.substr(0, cut);
    }
}

JsonDocument parse_json_document(const std::string& text, const std::string& source) {
    JsonDocument doc;
    doc.source = source;
    try {
        doc.value = json::parse(text);
    } catch (const json::parse_error& e) {
        const std::size_t byte = std::min<std::size_t>(e.byte, text.size());
        const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte == 0 ? 0 : byte - 1), '\n');
        std::string what = e.what();
        // nlohmann prefixes "[json.exception.parse_error.101] parse error at line L, column C: "
        if (const auto colon = what.find(": "); colon != std::string::npos) {
            what = what.substr(colon + 2);
        }
        throw ConfigError({source + " (line " + std::to_string(line) + "): invalid JSON: " + what});
    }
    LineIndexer(text, doc.lines).run();
    return doc;
}

JsonDocument load_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError({path + ": cannot open file"});
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_json_document(buf.str(), path);
}

std::vector<std::string> config_problems(const JsonDocument& doc) {
    Reader r(doc);
    read_config(r, doc);
    return r.problems;
}

RunConfig parse_run_config(const JsonDocument& doc) {
    Reader r(doc);
    RunConfig cfg = read_config(r, doc);
    if (!r.problems.empty()) {
        std::vector<std::string> named;
        for (const std::string& p : r.problems) {
            named.push_back(doc.source + ": " + p);
        }
        throw ConfigError(std::move(named));
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) { return parse_run_config(load_json_file(path)); }

JsonDocument preset_document(const std::string& name) {
    const auto text = preset_text(name);
    if (!text) {
        throw ConfigError({"unknown preset \"" + name + "\" (expected \"desk\" or \"paper\")"});
    }
    return parse_json_document(std::string(*text), "preset " + name);
}

RunConfig preset_config(const std::string& name) { return parse_run_config(preset_document(name)); }

const BlockModelSpec& RunConfig::model_for(const std::optional<BlockModelSpec>& section_model,
                                           const std::string& section) const {
    if (section_model) {
        return *section_model;
    }
    if (model) {
        return *model;
    }
    throw ConfigError({section + ": no model given (add \"model\" at the top level or inside \"" + section + "\")"});
}

json spec_to_json(const BlockModelSpec& spec) {
    json j;
    j["block_dims"] = spec.block_dims;
    j["block_rows"] = spec.block_rows;
    j["sigma2"] = spec.sigma2;
    json covs = json::array();
    for (const Matrix& c : spec.covariances) {
        json rows = json::array();
        for (Eigen::Index r = 0; r < c.rows(); ++r) {
            json row = json::array();
            for (Eigen::Index col = 0; col < c.cols(); ++col) {
                row.push_back(c(r, col));
            }
            rows.push_back(row);
        }
        covs.push_back(rows);
    }
    j["covariances"] = covs;
    j["beta_star"] = std::vector<double>(spec.beta_star.data(), spec.beta_star.data() + spec.beta_star.size());
    j["expert_probs"] = spec.expert_probs;
    return j;
}

}  // namespace moefn
