#pragma once

#include <string>
#include <vector>

#include "moefn/numerics.hpp"

namespace moefn {

struct PlotSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> y_error;  // optional half-widths, drawn as vertical bars
};

struct PlotOptions {
    std::string title;
    std::string x_label;
    std::string y_label;
    bool log_x = false;
    bool log_y = false;
    int width = 640;
    int height = 420;
};

/// Standalone SVG line plot with markers, axes, ticks and a legend. On log
/// axes non-positive points are skipped.
std::string line_plot_svg(const std::vector<PlotSeries>& series, const PlotOptions& options);

/// Grayscale heatmap of values in [0, 1] (darker = larger) with module
/// boundaries drawn as lines. Cells are downsampled by block averaging when
/// the matrix exceeds max_cells along either side.
std::string heatmap_svg(const Matrix& values, const std::vector<Eigen::Index>& row_boundaries,
                        const std::vector<Eigen::Index>& col_boundaries, const std::string& title,
                        Eigen::Index max_cells = 200);

/// Escapes &, <, >, " for SVG text.
std::string xml_escape(const std::string& text);

}  // namespace moefn
