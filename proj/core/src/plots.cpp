#include "bulkspace/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace bulkspace {

namespace {

const char* kPalette[] = {
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
};
constexpr size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

constexpr double kW = 860.0, kH = 520.0;
constexpr double kML = 72.0, kMR = 26.0, kMT = 46.0, kMB = 58.0;

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return std::string(buf);
}

std::string fmt_tick(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return std::string(buf);
}

std::string escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
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

std::string group_label(const json& rec, const std::string& key) {
    if (key.empty()) return "";
    auto it = rec.find(key);
    if (it == rec.end()) return "";
    if (it->is_string()) return it->get<std::string>();
    return it->dump();
}

double fit_slope(const std::vector<std::pair<double, double>>& pts) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(pts.size());
    for (const auto& [x, y] : pts) {
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double denom = n * sxx - sx * sx;
    return denom == 0.0 ? 0.0 : (n * sxy - sx * sy) / denom;
}

void render_one(const std::vector<json>& records, const std::string& experiment,
                const PlotSpec& spec, const std::string& out_dir) {
    bool metric_seen = false;
    std::map<std::string, std::vector<std::pair<double, double>>> series;
    for (const json& rec : records) {
        auto sit = rec.find("summary");
        if (sit != rec.end() && sit->is_boolean() && sit->get<bool>()) continue;
        auto mit = rec.find(spec.metric);
        if (mit == rec.end()) continue;
        metric_seen = true;
        if (!mit->is_number()) continue;
        const double y = mit->get<double>();
        if (!std::isfinite(y)) continue;
        if (spec.log_y && y <= 0.0) continue;
        auto st = rec.find("step");
        if (st == rec.end() || !st->is_number()) continue;
        const double x = st->get<double>();
        series[group_label(rec, spec.group_key)].emplace_back(x, y);
    }
    if (!metric_seen) {
        throw ConfigError("plot: metric '" + spec.metric + "' not present in metrics");
    }
    size_t total_pts = 0;
    for (const auto& [label, pts] : series) total_pts += pts.size();
    if (total_pts == 0) {
        throw ConfigError("plot: metric '" + spec.metric + "' has no plottable points");
    }

    double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
    bool first = true;
    for (const auto& [label, pts] : series) {
        for (const auto& [x, y] : pts) {
            const double yy = spec.log_y ? std::log10(y) : y;
            if (first) {
                xmin = xmax = x;
                ymin = ymax = yy;
                first = false;
            } else {
                xmin = std::min(xmin, x);
                xmax = std::max(xmax, x);
                ymin = std::min(ymin, yy);
                ymax = std::max(ymax, yy);
            }
        }
    }
    if (xmax == xmin) {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if (ymax == ymin) {
        const double pad = spec.log_y ? 0.5 : std::max(0.5, std::abs(ymax) * 0.1);
        ymin -= pad;
        ymax += pad;
    } else {
        const double pad = (ymax - ymin) * 0.05;
        ymin -= pad;
        ymax += pad;
    }

    const double pw = kW - kML - kMR;
    const double ph = kH - kMT - kMB;
    auto px = [&](double x) { return kML + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) {
        const double yy = spec.log_y ? std::log10(y) : y;
        return kMT + (1.0 - (yy - ymin) / (ymax - ymin)) * ph;
    };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(kW) << "\" height=\""
        << fmt(kH) << "\" viewBox=\"0 0 " << fmt(kW) << " " << fmt(kH) << "\">\n";
    svg << "<rect width=\"" << fmt(kW) << "\" height=\"" << fmt(kH)
        << "\" fill=\"#ffffff\"/>\n";
    svg << "<text x=\"" << fmt(kW / 2) << "\" y=\"24\" text-anchor=\"middle\" "
        << "font-family=\"monospace\" font-size=\"15\" fill=\"#222222\">"
        << escape(experiment + ": " + spec.metric) << "</text>\n";

    for (int i = 0; i <= 4; ++i) {
        const double fx = xmin + (xmax - xmin) * i / 4.0;
        const double gx = px(fx);
        svg << "<line x1=\"" << fmt(gx) << "\" y1=\"" << fmt(kMT) << "\" x2=\"" << fmt(gx)
            << "\" y2=\"" << fmt(kMT + ph) << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
        svg << "<text x=\"" << fmt(gx) << "\" y=\"" << fmt(kMT + ph + 18)
            << "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"12\" "
            << "fill=\"#444444\">" << fmt_tick(fx) << "</text>\n";

        const double fy = ymin + (ymax - ymin) * i / 4.0;
        const double gy = kMT + (1.0 - static_cast<double>(i) / 4.0) * ph;
        const double label_val = spec.log_y ? std::pow(10.0, fy) : fy;
        svg << "<line x1=\"" << fmt(kML) << "\" y1=\"" << fmt(gy) << "\" x2=\"" << fmt(kML + pw)
            << "\" y2=\"" << fmt(gy) << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
        svg << "<text x=\"" << fmt(kML - 6) << "\" y=\"" << fmt(gy + 4)
            << "\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"12\" "
            << "fill=\"#444444\">" << fmt_tick(label_val) << "</text>\n";
    }
    svg << "<rect x=\"" << fmt(kML) << "\" y=\"" << fmt(kMT) << "\" width=\"" << fmt(pw)
        << "\" height=\"" << fmt(ph)
        << "\" fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
    svg << "<text x=\"" << fmt(kML + pw / 2) << "\" y=\"" << fmt(kH - 16)
        << "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"13\" "
        << "fill=\"#333333\">step</text>\n";
    svg << "<text x=\"18\" y=\"" << fmt(kMT + ph / 2)
        << "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"13\" "
        << "fill=\"#333333\" transform=\"rotate(-90 18 " << fmt(kMT + ph / 2) << ")\">"
        << escape(spec.metric) << (spec.log_y ? " (log)" : "") << "</text>\n";

    size_t idx = 0;
    for (const auto& [label, pts] : series) {
        if (pts.empty()) {
            ++idx;
            continue;
        }
        const char* color = kPalette[idx % kPaletteSize];
        svg << "<polyline fill=\"none\" stroke=\"" << color
            << "\" stroke-width=\"1.6\" points=\"";
        for (const auto& [x, y] : pts) {
            svg << fmt(px(x)) << "," << fmt(py(y)) << " ";
        }
        svg << "\"/>\n";
        ++idx;
    }

    const bool legend = series.size() > 1 || (series.size() == 1 && !series.begin()->first.empty());
    if (legend) {
        double ly = kMT + 14.0;
        idx = 0;
        for (const auto& [label, pts] : series) {
            const char* color = kPalette[idx % kPaletteSize];
            const double lx = kML + pw - 150.0;
            svg << "<line x1=\"" << fmt(lx) << "\" y1=\"" << fmt(ly - 4) << "\" x2=\""
                << fmt(lx + 20) << "\" y2=\"" << fmt(ly - 4) << "\" stroke=\"" << color
                << "\" stroke-width=\"2\"/>\n";
            svg << "<text x=\"" << fmt(lx + 26) << "\" y=\"" << fmt(ly)
                << "\" font-family=\"monospace\" font-size=\"12\" fill=\"#333333\">"
                << escape(label.empty() ? spec.metric : label) << "</text>\n";
            ly += 16.0;
            ++idx;
        }
    }

    if (spec.fit_range && !series.empty()) {
        std::vector<std::pair<double, double>> fit_pts;
        for (const auto& [x, y] : series.begin()->second) {
            if (x >= static_cast<double>(spec.fit_range->first) &&
                x <= static_cast<double>(spec.fit_range->second) && y > 0.0) {
                fit_pts.emplace_back(x, std::log(y));
            }
        }
        if (fit_pts.size() >= 2) {
            const double slope = fit_slope(fit_pts);
            svg << "<text x=\"" << fmt(kML) << "\" y=\"" << fmt(kH - 2)
                << "\" font-family=\"monospace\" font-size=\"12\" fill=\"#555555\">"
                << "ln-slope over steps [" << spec.fit_range->first << ", "
                << spec.fit_range->second << "]: " << fmt(slope) << " per step</text>\n";
        }
    }

    svg << "</svg>\n";

    const std::filesystem::path out =
        std::filesystem::path(out_dir) / (experiment + "_" + spec.metric + ".svg");
    std::ofstream f(out);
    if (!f) throw IoError("cannot open plot file for writing: " + out.string());
    f << svg.str();
    if (!f) throw IoError("write failed on plot file: " + out.string());
}

} // namespace

void emit_plots(const std::vector<json>& records, const std::string& experiment,
                const std::vector<PlotSpec>& specs, const std::string& out_dir) {
    if (records.empty()) throw ConfigError("plot: metrics are empty");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create plot directory: " + out_dir);
    for (const PlotSpec& spec : specs) render_one(records, experiment, spec, out_dir);
}

void emit_plots_from_file(const std::string& metrics_path, const std::string& experiment,
                          const std::vector<PlotSpec>& specs, const std::string& out_dir) {
    emit_plots(read_metrics(metrics_path), experiment, specs, out_dir);
}

} // namespace bulkspace
