// Minimal csv -> SVG line chart for loss and validation curves. Output is a
// pure function of the inputs: fixed canvas, fixed palette, fixed number
// formatting, legend entries from the file names.
#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "jetjepa/common.hpp"

namespace jetjepa {

struct Series {
    std::string name;
    std::vector<double> step;
    std::vector<double> value;
};

inline Series load_series(const std::string& path, const std::string& column) {
    std::ifstream in(path);
    if (!in) fail(path + ": cannot open csv");
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), path + ": empty csv");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::vector<std::string> cols;
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) cols.push_back(cell);

    int step_col = -1, val_col = -1;
    for (size_t i = 0; i < cols.size(); ++i) {
        if (cols[i] == "step") step_col = static_cast<int>(i);
        if (!column.empty() && cols[i] == column) val_col = static_cast<int>(i);
    }
    require(step_col >= 0, path + ": no 'step' column");
    if (column.empty()) { // default: first non-step column
        for (size_t i = 0; i < cols.size(); ++i)
            if (static_cast<int>(i) != step_col) {
                val_col = static_cast<int>(i);
                break;
            }
    }
    require(val_col >= 0, path + ": no '" + column + "' column");

    Series s;
    const size_t slash = path.find_last_of('/');
    s.name = slash == std::string::npos ? path : path.substr(slash + 1);
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::vector<std::string> cells;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        require(cells.size() == cols.size(),
                path + ":" + std::to_string(line_no) + ": column count mismatch");
        try {
            s.step.push_back(std::stod(cells[static_cast<size_t>(step_col)]));
            s.value.push_back(std::stod(cells[static_cast<size_t>(val_col)]));
        } catch (const std::exception&) {
            fail(path + ":" + std::to_string(line_no) + ": bad numeric cell");
        }
    }
    require(!s.step.empty(), path + ": no data rows");
    return s;
}

inline std::string render_svg(const std::vector<Series>& series) {
    require(!series.empty(), "plot: no series");
    const int width = 800, height = 500;
    const double ml = 70, mr = 20, mt = 20, mb = 60;

    double x_lo = series[0].step[0], x_hi = x_lo, y_lo = series[0].value[0], y_hi = y_lo;
    for (const auto& s : series) {
        for (double v : s.step) {
            x_lo = std::min(x_lo, v);
            x_hi = std::max(x_hi, v);
        }
        for (double v : s.value) {
            y_lo = std::min(y_lo, v);
            y_hi = std::max(y_hi, v);
        }
    }
    if (x_hi == x_lo) x_hi = x_lo + 1.0;
    if (y_hi == y_lo) y_hi = y_lo + 1.0;

    auto sx = [&](double x) { return ml + (x - x_lo) / (x_hi - x_lo) * (width - ml - mr); };
    auto sy = [&](double y) { return height - mb - (y - y_lo) / (y_hi - y_lo) * (height - mt - mb); };
    auto f2 = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.2f", v);
        return std::string(buf);
    };
    auto fg = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.6g", v);
        return std::string(buf);
    };

    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"500\" "
           "viewBox=\"0 0 800 500\">\n";
    svg += "<rect width=\"800\" height=\"500\" fill=\"white\"/>\n";
    svg += "<line x1=\"" + f2(ml) + "\" y1=\"" + f2(height - mb) + "\" x2=\"" + f2(width - mr) +
           "\" y2=\"" + f2(height - mb) + "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + f2(ml) + "\" y1=\"" + f2(mt) + "\" x2=\"" + f2(ml) + "\" y2=\"" +
           f2(height - mb) + "\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + f2(ml) + "\" y=\"" + f2(height - mb + 20) +
           "\" font-size=\"12\" text-anchor=\"middle\">" + fg(x_lo) + "</text>\n";
    svg += "<text x=\"" + f2(width - mr) + "\" y=\"" + f2(height - mb + 20) +
           "\" font-size=\"12\" text-anchor=\"middle\">" + fg(x_hi) + "</text>\n";
    svg += "<text x=\"" + f2(ml - 8) + "\" y=\"" + f2(height - mb) +
           "\" font-size=\"12\" text-anchor=\"end\">" + fg(y_lo) + "</text>\n";
    svg += "<text x=\"" + f2(ml - 8) + "\" y=\"" + f2(mt + 10) +
           "\" font-size=\"12\" text-anchor=\"end\">" + fg(y_hi) + "</text>\n";

    for (size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = palette[si % 8];
        std::string points;
        for (size_t i = 0; i < s.step.size(); ++i) {
            if (i) points += ' ';
            points += f2(sx(s.step[i])) + "," + f2(sy(s.value[i]));
        }
        svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" +
               points + "\"/>\n";
        const double ly = mt + 16.0 * static_cast<double>(si) + 10.0;
        svg += "<line x1=\"" + f2(width - mr - 160) + "\" y1=\"" + f2(ly - 4) + "\" x2=\"" +
               f2(width - mr - 140) + "\" y2=\"" + f2(ly - 4) + "\" stroke=\"" + color +
               "\" stroke-width=\"3\"/>\n";
        svg += "<text x=\"" + f2(width - mr - 134) + "\" y=\"" + f2(ly) +
               "\" font-size=\"12\">" + s.name + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

inline void plot_csvs(const std::vector<std::string>& paths, const std::string& column,
                      const std::string& out_path) {
    std::vector<Series> series;
    series.reserve(paths.size());
    for (const auto& p : paths) series.push_back(load_series(p, column));
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) fail(out_path + ": cannot open file for writing");
    const std::string svg = render_svg(series);
    out.write(svg.data(), static_cast<std::streamsize>(svg.size()));
    if (!out) fail(out_path + ": write failed");
}

} // namespace jetjepa
