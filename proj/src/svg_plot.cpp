#include "moefn/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace moefn {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

struct Axis {
    double lo = 0.0;
    double hi = 1.0;
    bool log = false;

    double unit(double v) const {
        const double t = log ? std::log10(v) : v;
        return hi > lo ? (t - lo) / (hi - lo) : 0.5;
    }

    std::vector<double> ticks() const {
        std::vector<double> out;
        if (log) {
            for (double e = std::floor(lo); e <= std::ceil(hi) + 1e-9; e += 1.0) {
                if (e >= lo - 1e-9 && e <= hi + 1e-9) {
                    out.push_back(std::pow(10.0, e));
                }
            }
            if (out.size() < 2) {
                out = {std::pow(10.0, lo), std::pow(10.0, hi)};
            }
            return out;
        }
        const double span = hi - lo;
        if (!(span > 0.0)) {
            return {lo};
        }
        const double raw = span / 5.0;
        const double mag = std::pow(10.0, std::floor(std::log10(raw)));
        double step = mag;
        for (double m : {1.0, 2.0, 5.0, 10.0}) {
            if (m * mag >= raw) {
                step = m * mag;
                break;
            }
        }
        for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * step; t += step) {
            out.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
        }
        return out;
    }
};

Axis make_axis(const std::vector<double>& values, bool log) {
    Axis a;
    a.log = log;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (double v : values) {
        if (!std::isfinite(v) || (log && !(v > 0.0))) {
            continue;
        }
        const double t = log ? std::log10(v) : v;
        lo = std::min(lo, t);
        hi = std::max(hi, t);
    }
    if (!std::isfinite(lo)) {
        lo = 0.0;
        hi = 1.0;
    }
    if (hi == lo) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    a.lo = lo - pad;
    a.hi = hi + pad;
    return a;
}

}  // namespace

std::string xml_escape(const std::string& text) {
    std::string out;
    for (char c : text) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string line_plot_svg(const std::vector<PlotSeries>& series, const PlotOptions& options) {
    const double left = 70, right = 20, top = 40, bottom = 55;
    const double w = options.width, h = options.height;
    const double pw = w - left - right, ph = h - top - bottom;
    std::vector<double> xs, ys;
    for (const PlotSeries& s : series) {
        if (s.x.size() != s.y.size() || (!s.y_error.empty() && s.y_error.size() != s.y.size())) {
            throw ContractError("line_plot_svg: series '" + s.name + "' has mismatched lengths");
        }
        xs.insert(xs.end(), s.x.begin(), s.x.end());
        for (std::size_t i = 0; i < s.y.size(); ++i) {
            const double e = s.y_error.empty() ? 0.0 : s.y_error[i];
            ys.push_back(s.y[i] - e);
            ys.push_back(s.y[i] + e);
            ys.push_back(s.y[i]);
        }
    }
    const Axis ax = make_axis(xs, options.log_x);
    const Axis ay = make_axis(ys, options.log_y);
    auto px = [&](double v) { return left + pw * ax.unit(v); };
    auto py = [&](double v) { return top + ph * (1.0 - ay.unit(v)); };
    auto ok = [&](double x, double y) {
        return std::isfinite(x) && std::isfinite(y) && (!options.log_x || x > 0.0) && (!options.log_y || y > 0.0);
    };

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << options.width << "\" height=\"" << options.height
        << "\" viewBox=\"0 0 " << options.width << ' ' << options.height << "\" font-family=\"sans-serif\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << num(w / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
        << xml_escape(options.title) << "</text>\n";
    out << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (double t : ax.ticks()) {
        const double x = px(t);
        out << "<line x1=\"" << num(x) << "\" y1=\"" << num(top + ph) << "\" x2=\"" << num(x) << "\" y2=\""
            << num(top + ph + 5) << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << num(x) << "\" y=\"" << num(top + ph + 18) << "\" text-anchor=\"middle\" font-size=\"11\">"
            << tick_label(t) << "</text>\n";
    }
    for (double t : ay.ticks()) {
        const double y = py(t);
        out << "<line x1=\"" << num(left - 5) << "\" y1=\"" << num(y) << "\" x2=\"" << num(left) << "\" y2=\"" << num(y)
            << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << num(left - 8) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\" font-size=\"11\">"
            << tick_label(t) << "</text>\n";
    }
    out << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(h - 12) << "\" text-anchor=\"middle\" font-size=\"13\">"
        << xml_escape(options.x_label) << "</text>\n";
    out << "<text transform=\"translate(16 " << num(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\" "
        << "font-size=\"13\">" << xml_escape(options.y_label) << "</text>\n";

    for (std::size_t s = 0; s < series.size(); ++s) {
        const PlotSeries& ser = series[s];
        const char* color = kPalette[s % std::size(kPalette)];
        std::string path;
        for (std::size_t i = 0; i < ser.x.size(); ++i) {
            if (!ok(ser.x[i], ser.y[i])) {
                continue;
            }
            path += (path.empty() ? "M" : " L") + num(px(ser.x[i])) + ' ' + num(py(ser.y[i]));
        }
        if (!path.empty()) {
            out << "<path d=\"" << path << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\"/>\n";
        }
        for (std::size_t i = 0; i < ser.x.size(); ++i) {
            if (!ok(ser.x[i], ser.y[i])) {
                continue;
            }
            if (!ser.y_error.empty() && ser.y_error[i] > 0.0) {
                const double lo = ser.y[i] - ser.y_error[i];
                const double hi = ser.y[i] + ser.y_error[i];
                if (!options.log_y || lo > 0.0) {
                    out << "<line x1=\"" << num(px(ser.x[i])) << "\" y1=\"" << num(py(lo)) << "\" x2=\""
                        << num(px(ser.x[i])) << "\" y2=\"" << num(py(hi)) << "\" stroke=\"" << color << "\"/>\n";
                }
            }
            out << "<circle cx=\"" << num(px(ser.x[i])) << "\" cy=\"" << num(py(ser.y[i])) << "\" r=\"3\" fill=\""
                << color << "\"/>\n";
        }
        const double ly = top + 16 + 18 * static_cast<double>(s);
        out << "<line x1=\"" << num(left + pw - 130) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(left + pw - 110)
            << "\" y2=\"" << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << num(left + pw - 104) << "\" y=\"" << num(ly + 4) << "\" font-size=\"12\">"
            << xml_escape(ser.name) << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

std::string heatmap_svg(const Matrix& values, const std::vector<Eigen::Index>& row_boundaries,
                        const std::vector<Eigen::Index>& col_boundaries, const std::string& title,
                        Eigen::Index max_cells) {
    if (values.size() == 0 || max_cells < 1) {
        throw ContractError("heatmap_svg: need a non-empty matrix and max_cells >= 1");
    }
    const Eigen::Index rows = std::min(values.rows(), max_cells);
    const Eigen::Index cols = std::min(values.cols(), max_cells);
    const double size = 520.0;
    const double cell_w = size / static_cast<double>(cols);
    const double cell_h = size / static_cast<double>(rows);
    const double left = 20, top = 40;
    auto range = [](Eigen::Index i, Eigen::Index n, Eigen::Index total) {
        return std::pair{i * total / n, std::max((i + 1) * total / n, i * total / n + 1)};
    };
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(size + 2 * left) << "\" height=\""
        << num(size + top + 20) << "\" font-family=\"sans-serif\" shape-rendering=\"crispEdges\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << num(left + size / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
        << xml_escape(title) << "</text>\n";
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto [r0, r1] = range(r, rows, values.rows());
        for (Eigen::Index c = 0; c < cols; ++c) {
            const auto [c0, c1] = range(c, cols, values.cols());
            const double v = std::clamp(values.block(r0, c0, r1 - r0, c1 - c0).mean(), 0.0, 1.0);
            const int shade = static_cast<int>(std::lround(255.0 * (1.0 - v)));
            out << "<rect x=\"" << num(left + c * cell_w) << "\" y=\"" << num(top + r * cell_h) << "\" width=\""
                << num(cell_w + 0.05) << "\" height=\"" << num(cell_h + 0.05) << "\" fill=\"rgb(" << shade << ','
                << shade << ',' << shade << ")\"/>\n";
        }
    }
    for (Eigen::Index b : row_boundaries) {
        const double y = top + size * static_cast<double>(b) / static_cast<double>(values.rows());
        out << "<line x1=\"" << num(left) << "\" y1=\"" << num(y) << "\" x2=\"" << num(left + size) << "\" y2=\""
            << num(y) << "\" stroke=\"#d62728\" stroke-width=\"1\"/>\n";
    }
    for (Eigen::Index b : col_boundaries) {
        const double x = left + size * static_cast<double>(b) / static_cast<double>(values.cols());
        out << "<line x1=\"" << num(x) << "\" y1=\"" << num(top) << "\" x2=\"" << num(x) << "\" y2=\""
            << num(top + size) << "\" stroke=\"#d62728\" stroke-width=\"1\"/>\n";
    }
    out << "</svg>\n";
    return out.str();
}

}  // namespace moefn
