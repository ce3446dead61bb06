#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "moefn/activation_io.hpp"
#include "moefn/config.hpp"
#include "moefn/svg_plot.hpp"

using namespace moefn;

namespace {

std::vector<std::string> problems_of(const std::string& text) {
    return config_problems(parse_json_document(text, "test.json"));
}

bool any_contains(const std::vector<std::string>& v, const std::string& needle) {
    for (const auto& s : v) {
        if (s.find(needle) != std::string::npos) {
            return true;
        }
    }
    return false;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("moefn_test_" + name)).string();
}

const char* kExplicit = R"({
  "model": {
    "block_dims": [1, 2],
    "block_rows": [3, 3],
    "sigma2": 0.5,
    "covariances": [[[2.0]], 3.0],
    "beta_star": [1.0, 2.0, 3.0],
    "expert_probs": [0.5, 0.5]
  }
})";

}  // namespace

TEST(ConfigSchema, PresetsValidate) {
    for (const char* name : {"desk", "paper"}) {
        EXPECT_TRUE(config_problems(preset_document(name)).empty()) << name;
        EXPECT_NO_THROW(preset_config(name));
    }
    EXPECT_THROW(preset_config("laptop"), ConfigError);
}

TEST(ConfigSchema, ShippedExampleValidates) {
    EXPECT_NO_THROW(load_run_config(MOEFN_SOURCE_DIR "/configs/examples/spec.json"));
}

TEST(ConfigSchema, DeskPresetMatchesDocumentedScale) {
    const RunConfig cfg = preset_config("desk");
    ASSERT_TRUE(cfg.model);
    EXPECT_EQ(cfg.model->experts(), 20u);
    EXPECT_EQ(cfg.model->feature_dim(), 20);
    EXPECT_EQ(cfg.sweep.n_grid, (std::vector<std::size_t>{200, 400, 800, 1600}));
    EXPECT_EQ(cfg.sweep.trials, 20u);
    const RunConfig paper = preset_config("paper");
    EXPECT_EQ(paper.model->experts(), 100u);
    ASSERT_EQ(paper.sweep.variants.size(), 4u);
    EXPECT_EQ(paper.sweep.variants[3].sigma2, 4.0);
    EXPECT_EQ(paper.sweep.variants[3].lambda2, 16.0);
}

TEST(ConfigSchema, NegativeSigma2IsNamed) {
    const auto p = problems_of(R"({"model": {"experts": 2, "feature_dim": 2, "rows": 2,
                                              "sigma2": -1, "lambda2": 1}})");
    ASSERT_FALSE(p.empty());
    EXPECT_TRUE(any_contains(p, "model.sigma2 (line 2)"));
}

TEST(ConfigSchema, ProbabilitiesOffSimplex) {
    std::string text = kExplicit;
    text.replace(text.find("[0.5, 0.5]"), 10, "[0.5, 0.4]");
    const auto p = problems_of(text);
    ASSERT_FALSE(p.empty());
    EXPECT_TRUE(any_contains(p, "expert_probs"));
    EXPECT_TRUE(any_contains(p, "sum"));
}

TEST(ConfigSchema, ExplicitModelParses) {
    const RunConfig cfg = parse_run_config(parse_json_document(kExplicit, "x"));
    ASSERT_TRUE(cfg.model);
    EXPECT_EQ(cfg.model->covariances[1], 3.0 * Matrix::Identity(2, 2));
    EXPECT_EQ(cfg.model->beta_star(2), 3.0);
}

TEST(ConfigSchema, IndefiniteCovarianceRejected) {
    std::string text = kExplicit;
    text.replace(text.find("[[2.0]]"), 7, "[[-2.0]]");
    EXPECT_TRUE(any_contains(problems_of(text), "covariances[0]"));
}

TEST(ConfigSchema, UnknownKeysRejectedWithLines) {
    const auto p = problems_of("{\n  \"seed\": 1,\n  \"sweep\": {\n    \"trails\": 3\n  },\n  \"colour\": 2\n}");
    ASSERT_EQ(p.size(), 2u);
    EXPECT_TRUE(any_contains(p, "sweep.trails (line 4): unknown key"));
    EXPECT_TRUE(any_contains(p, "colour (line 6): unknown key"));
}

TEST(ConfigSchema, AllProblemsListedIndividually) {
    const auto p = problems_of(R"({"seed": -3, "sweep": {"n_grid": [400, 200], "trials": 1},
                                  "probe": {"top_k": 9}})");
    EXPECT_EQ(p.size(), 4u);
    EXPECT_TRUE(any_contains(p, "sweep.n_grid[1]"));
}

TEST(ConfigSchema, InvalidJsonReportsLine) {
    try {
        parse_json_document("{\n\"a\": 1,\n\"b\": }\n", "bad.json");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("bad.json (line 3)"), std::string::npos) << e.what();
    }
}

TEST(ConfigSchema, MissingFile) { EXPECT_THROW(load_run_config("/nonexistent/cfg.json"), ConfigError); }

TEST(ConfigSchema, ShorthandDivisibility) {
    EXPECT_TRUE(any_contains(
        problems_of(R"({"model": {"experts": 3, "feature_dim": 4, "rows": 3, "sigma2": 1, "lambda2": 1}})"),
        "model.feature_dim"));
}

TEST(ConfigSchema, SectionModelFallsBackToTopLevel) {
    const RunConfig cfg = parse_run_config(parse_json_document(
        R"({"model": {"experts": 2, "feature_dim": 2, "rows": 2, "sigma2": 1, "lambda2": 1},
            "router": {"model": {"experts": 4, "feature_dim": 8, "rows": 8, "sigma2": 1, "lambda2": 1}}})",
        "x"));
    EXPECT_EQ(cfg.model_for(cfg.risk.model, "risk").experts(), 2u);
    EXPECT_EQ(cfg.model_for(cfg.router.model, "router").experts(), 4u);
    EXPECT_THROW(RunConfig().model_for(std::nullopt, "risk"), ConfigError);
}

TEST(ConfigSchema, SpecJsonRoundTrip) {
    const RunConfig cfg = parse_run_config(parse_json_document(kExplicit, "x"));
    nlohmann::json doc;
    doc["model"] = spec_to_json(*cfg.model);
    const RunConfig again = parse_run_config(parse_json_document(doc.dump(2), "y"));
    EXPECT_EQ(again.model->covariances[0], cfg.model->covariances[0]);
    EXPECT_EQ(again.model->beta_star, cfg.model->beta_star);
    EXPECT_EQ(again.model->block_rows, cfg.model->block_rows);
}

TEST(ActivationIo, CsvWithHeaderAndLabels) {
    const std::string path = temp_path("acts.csv");
    std::ofstream(path) << "a,b,label\n1.5,2,1\n-3,4e-1,2\n\n";
    const ActivationMatrix acts = read_activations(path, true);
    ASSERT_EQ(acts.tokens(), 2);
    ASSERT_EQ(acts.features(), 2);
    EXPECT_EQ(acts.values(1, 1), 0.4);
    EXPECT_EQ(*acts.labels, (std::vector<std::size_t>{0, 1}));
    const ActivationMatrix plain = read_activations(path, false);
    EXPECT_EQ(plain.features(), 3);
    EXPECT_FALSE(plain.labels);
    std::remove(path.c_str());
}

TEST(ActivationIo, CsvRoundTripIsExact) {
    RngStream rng(3);
    ActivationMatrix acts;
    acts.values = Matrix::NullaryExpr(5, 3, [&] { return rng.normal(); });
    acts.labels = std::vector<std::size_t>{0, 2, 1, 1, 0};
    const std::string path = temp_path("rt.csv");
    write_activations_csv(path, acts);
    const ActivationMatrix back = read_activations(path, true);
    EXPECT_EQ(back.values, acts.values);
    EXPECT_EQ(back.labels, acts.labels);
    std::remove(path.c_str());
}

TEST(ActivationIo, BinaryLayoutAndRoundTrip) {
    Matrix m(2, 3);
    m << 1, 2, 3, 4, 5, -6.25;
    const std::string path = temp_path("acts.bin");
    write_activations_binary(path, m);
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    ASSERT_EQ(bytes.size(), 7u + 8u + 6u * 8u);
    EXPECT_EQ(bytes.substr(0, 7), "MOEACT1");
    EXPECT_EQ(static_cast<unsigned char>(bytes[7]), 2u);
    EXPECT_EQ(static_cast<unsigned char>(bytes[11]), 3u);
    // 1.0 is 0x3FF0000000000000, stored little-endian.
    EXPECT_EQ(static_cast<unsigned char>(bytes[15 + 7]), 0x3Fu);
    EXPECT_EQ(static_cast<unsigned char>(bytes[15 + 6]), 0xF0u);
    EXPECT_EQ(read_activations(path, false).values, m);
    EXPECT_THROW(read_activations(path, true), ConfigError);
    std::remove(path.c_str());
}

TEST(ActivationIo, MalformedFilesAreConfigErrors) {
    const std::string path = temp_path("bad.csv");
    std::ofstream(path) << "1,2\n3\n";
    EXPECT_THROW(read_activations(path, false), ConfigError);
    std::ofstream(path) << "1,2,0\n";
    EXPECT_THROW(read_activations(path, true), ConfigError);
    std::ofstream(path, std::ios::binary) << "MOEACT1\x02";
    EXPECT_THROW(read_activations(path, false), ConfigError);
    std::remove(path.c_str());
    EXPECT_THROW(read_activations(path, false), ConfigError);
}

TEST(SvgPlot, LinePlotIsWellFormed) {
    const std::string svg = line_plot_svg({{"dense <a>", {1, 10, 100}, {1, 0.1, 0.01}, {0.1, 0.01, 0.001}},
                                           {"sparse", {1, 10, 100}, {0.5, 0.0, 0.005}, {}}},
                                          {"risk", "n", "excess", true, true});
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
    EXPECT_NE(svg.find("dense &lt;a&gt;"), std::string::npos);
    EXPECT_EQ(svg.find("nan"), std::string::npos);
    EXPECT_THROW(line_plot_svg({{"x", {1, 2}, {1}, {}}}, {}), ContractError);
}

TEST(SvgPlot, HeatmapDownsamples) {
    const Matrix v = Matrix::Constant(300, 10, 0.5);
    const std::string svg = heatmap_svg(v, {0, 150, 300}, {0, 5, 10}, "h", 100);
    std::size_t cells = 0;
    for (std::size_t at = svg.find("<rect x="); at != std::string::npos; at = svg.find("<rect x=", at + 1)) {
        ++cells;
    }
    EXPECT_EQ(cells, 100u * 10u);
    EXPECT_NE(svg.find("rgb(128,128,128)"), std::string::npos);
}
