#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "unlearn/csv.hpp"
#include "unlearn/errors.hpp"

namespace unlearn {

// Hand-rolled SVG plots: enough for 2-D sample scatters and lambda
// trajectories, deterministic byte-for-byte.

struct ScatterSeries {
    std::string label;
    std::string color;  // e.g. "#1f77b4"
    std::vector<std::pair<double, double>> points;
};

namespace detail_svg {

constexpr int kWidth = 640, kHeight = 480, kMargin = 48;

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

struct AxisMap {
    double x_min, x_max, y_min, y_max;

    double px(double x) const {
        return kMargin + (x - x_min) / (x_max - x_min) * (kWidth - 2 * kMargin);
    }
    double py(double y) const {
        return kHeight - kMargin - (y - y_min) / (y_max - y_min) * (kHeight - 2 * kMargin);
    }
};

inline void header(std::ofstream& out, const std::string& title) {
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
        << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"16\">" << title << "</text>\n";
}

inline void axes(std::ofstream& out, const AxisMap& m) {
    out << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\""
        << kWidth - 2 * kMargin << "\" height=\"" << kHeight - 2 * kMargin
        << "\" fill=\"none\" stroke=\"#888\"/>\n";
    out << "<text x=\"" << kMargin << "\" y=\"" << kHeight - kMargin + 16
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << num(m.x_min) << "</text>\n";
    out << "<text x=\"" << kWidth - kMargin << "\" y=\"" << kHeight - kMargin + 16
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << num(m.x_max)
        << "</text>\n";
    out << "<text x=\"" << kMargin - 4 << "\" y=\"" << kHeight - kMargin
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << num(m.y_min)
        << "</text>\n";
    out << "<text x=\"" << kMargin - 4 << "\" y=\"" << kMargin + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << num(m.y_max)
        << "</text>\n";
}

}  // namespace detail_svg

inline void write_scatter_svg(const std::string& path, const std::string& title,
                              const std::vector<ScatterSeries>& series) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("write_scatter_svg: cannot open " + path);
    double x_min = 1e300, x_max = -1e300, y_min = 1e300, y_max = -1e300;
    for (const auto& s : series) {
        for (const auto& [x, y] : s.points) {
            x_min = std::min(x_min, x);
            x_max = std::max(x_max, x);
            y_min = std::min(y_min, y);
            y_max = std::max(y_max, y);
        }
    }
    if (x_min > x_max) {
        x_min = y_min = -1.0;
        x_max = y_max = 1.0;
    }
    const double pad_x = 0.05 * std::max(1e-9, x_max - x_min);
    const double pad_y = 0.05 * std::max(1e-9, y_max - y_min);
    detail_svg::AxisMap m{x_min - pad_x, x_max + pad_x, y_min - pad_y, y_max + pad_y};
    detail_svg::header(out, title);
    detail_svg::axes(out, m);
    int legend_y = detail_svg::kMargin + 14;
    for (const auto& s : series) {
        for (const auto& [x, y] : s.points) {
            out << "<circle cx=\"" << detail_svg::num(m.px(x)) << "\" cy=\""
                << detail_svg::num(m.py(y)) << "\" r=\"2\" fill=\"" << s.color
                << "\" fill-opacity=\"0.6\"/>\n";
        }
        out << "<text x=\"" << detail_svg::kWidth - detail_svg::kMargin - 4 << "\" y=\""
            << legend_y << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
            << "font-size=\"12\" fill=\"" << s.color << "\">" << s.label << "</text>\n";
        legend_y += 16;
    }
    out << "</svg>\n";
}

struct LineSeries {
    std::string label;
    std::string color;
    std::vector<double> ys;  // x is the index
};

inline void write_line_svg(const std::string& path, const std::string& title,
                           const std::vector<LineSeries>& series) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("write_line_svg: cannot open " + path);
    double y_min = 1e300, y_max = -1e300;
    std::size_t n = 1;
    for (const auto& s : series) {
        n = std::max(n, s.ys.size());
        for (double y : s.ys) {
            y_min = std::min(y_min, y);
            y_max = std::max(y_max, y);
        }
    }
    if (y_min > y_max) {
        y_min = 0.0;
        y_max = 1.0;
    }
    if (y_max - y_min < 1e-12) {
        y_min -= 0.5;
        y_max += 0.5;
    }
    detail_svg::AxisMap m{0.0, double(n > 1 ? n - 1 : 1), y_min, y_max};
    detail_svg::header(out, title);
    detail_svg::axes(out, m);
    int legend_y = detail_svg::kMargin + 14;
    for (const auto& s : series) {
        out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" "
            << "points=\"";
        for (std::size_t i = 0; i < s.ys.size(); ++i) {
            if (i) out << ' ';
            out << detail_svg::num(m.px(double(i))) << ',' << detail_svg::num(m.py(s.ys[i]));
        }
        out << "\"/>\n";
        out << "<text x=\"" << detail_svg::kWidth - detail_svg::kMargin - 4 << "\" y=\""
            << legend_y << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
            << "font-size=\"12\" fill=\"" << s.color << "\">" << s.label << "</text>\n";
        legend_y += 16;
    }
    out << "</svg>\n";
}

}  // namespace unlearn
