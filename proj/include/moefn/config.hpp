#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "moefn/blockmodel.hpp"
#include "moefn/modularity.hpp"
#include "moefn/router.hpp"

namespace moefn {

/// Unreadable or schema-violating configuration. Each problem reads
/// "json.path (line N): message".
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const { return problems_; }

private:
    std::vector<std::string> problems_;
};

/// Parsed JSON plus the source line of every value, keyed by path
/// ("model.covariances[0]", "" for the root).
struct JsonDocument {
    nlohmann::json value;
    std::map<std::string, int> lines;
    std::string source;

    /// Line of `path`, or of its closest recorded ancestor.
    int line_of(const std::string& path) const;
};

JsonDocument parse_json_document(const std::string& text, const std::string& source);
JsonDocument load_json_file(const std::string& path);

/// Where cluster, heatmap and probe runs get activations.
struct ActivationSource {
    enum class Kind { file, correlated, block_task };
    Kind kind = Kind::correlated;
    std::string path;        // file: activations (probe: training activations)
    std::string test_path;   // probe with files: test activations
    bool labels_inline = false;
    Eigen::Index tokens = 200;
    Eigen::Index test_tokens = 1000;
    std::size_t blocks = 4;
    Eigen::Index features_per_block = 8;
    double rho = 0.9;
    double offset = 0.0;
    BlockTaskOptions task;
};

struct RiskSection {
    std::optional<BlockModelSpec> model;
    std::size_t mc_samples = 100000;
};

struct RobustnessSection {
    std::optional<BlockModelSpec> model;
    std::vector<double> sigma_o2{1.0, 2.0, 4.0};
    std::size_t mc_samples = 100000;
};

struct MisrouteSection {
    std::optional<BlockModelSpec> model;
    std::size_t from = 0;  // 0-based; 1-based in the file
    std::size_t to = 1;
    std::vector<double> eta{1.5, 2.0, 3.0};
    std::size_t mc_samples = 100000;
};

struct ConvergenceSection {
    std::optional<BlockModelSpec> model;
    /// Per-block clean singular values; empty means a linear ramp from
    /// spectrum_high down to spectrum_low of length min(n_i, d_i).
    std::vector<Vector> spectra;
    double spectrum_high = 4.0;
    double spectrum_low = 2.0;
    std::size_t steps = 4000;
    double tail = 0.25;
};

struct RouterSection {
    std::optional<BlockModelSpec> model;
    std::vector<std::size_t> n_grid{40, 80, 200, 800};
    std::size_t test_size = 2000;
    std::size_t trials = 5;
    QdaMode mode = QdaMode::full_likelihood;
};

struct SweepVariant {
    double sigma2 = 1.0;
    double lambda2 = 8.0;
};

struct SweepSection {
    std::optional<BlockModelSpec> model;
    std::vector<std::size_t> n_grid{200, 400, 800, 1600};
    std::size_t trials = 20;
    std::vector<SweepVariant> variants;  // empty: the model as given
};

struct CaseStudySection {
    double lambda2 = 8.0;
    double sigma2 = 1.0;
    double beta = 1.0;
    std::vector<std::size_t> n_grid{50, 100, 200, 400};
    std::size_t trials = 200;
};

struct ClusterSection {
    ActivationSource source;
    std::size_t modules = 4;
    double sparsity = 0.0;
    bool centered = true;
};

struct HeatmapSection {
    ActivationSource source;
    std::size_t modules = 4;
    std::vector<double> sparsities{0.0, 0.4, 0.7};
    bool centered = true;
};

struct ProbeSection {
    ActivationSource source;
    ProbeConfig probe;
    std::size_t seeds = 1;
};

struct RunConfig {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::optional<BlockModelSpec> model;
    RiskSection risk;
    RobustnessSection robustness;
    MisrouteSection misroute;
    ConvergenceSection convergence;
    RouterSection router;
    SweepSection sweep;
    CaseStudySection case_study;
    ClusterSection cluster;
    HeatmapSection heatmap;
    ProbeSection probe;

    /// The section's own model if present, else the top-level one; throws
    /// ConfigError naming the section when neither exists.
    const BlockModelSpec& model_for(const std::optional<BlockModelSpec>& section_model,
                                    const std::string& section) const;
};

/// Every schema problem in the document (unknown keys, types, ranges, model
/// invariants), each with its JSON path and line.
std::vector<std::string> config_problems(const JsonDocument& doc);

/// Throws ConfigError listing every problem.
RunConfig parse_run_config(const JsonDocument& doc);

RunConfig load_run_config(const std::string& path);

/// Built-in "desk" or "paper" preset; throws ConfigError for unknown names.
RunConfig preset_config(const std::string& name);
JsonDocument preset_document(const std::string& name);

/// Explicit-form JSON for a model (block_dims, block_rows, sigma2,
/// covariances, beta_star, expert_probs).
nlohmann::json spec_to_json(const BlockModelSpec& spec);

}  // namespace moefn
