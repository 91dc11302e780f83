#pragma once

// Minimal self-contained SVG line charts (polylines, optional shaded band,
// optional log10 y axis, horizontal reference lines).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace tailsgd {

struct SvgSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> lower;  // optional band, same length as y
    std::vector<double> upper;
};

struct SvgReference {
    std::string label;
    double y;
};

struct SvgChart {
    std::string title;
    std::string x_label;
    std::string y_label;
    bool log_y = false;
    std::vector<SvgSeries> series;
    std::vector<SvgReference> references;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
    std::string out;
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

inline std::string svg_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string tick_text(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

}  // namespace detail

inline std::string render_svg(const SvgChart& chart) {
    constexpr double W = 720, H = 440, left = 80, right = 20, top = 40, bottom = 60;
    const double pw = W - left - right, ph = H - top - bottom;
    const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    // Log scale drops nonpositive values instead of failing.
    const auto ty = [&](double v) -> std::optional<double> {
        if (!std::isfinite(v)) return std::nullopt;
        if (chart.log_y) {
            if (v <= 0.0) return std::nullopt;
            return std::log10(v);
        }
        return v;
    };

    double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
    const auto take_y = [&](double v) {
        if (const auto t = ty(v)) {
            ymin = std::min(ymin, *t);
            ymax = std::max(ymax, *t);
        }
    };
    for (const auto& s : chart.series) {
        for (double v : s.x) {
            xmin = std::min(xmin, v);
            xmax = std::max(xmax, v);
        }
        for (double v : s.y) take_y(v);
        for (double v : s.lower) take_y(v);
        for (double v : s.upper) take_y(v);
    }
    for (const auto& r : chart.references) take_y(r.y);
    if (!(xmin <= xmax)) xmin = 0, xmax = 1;
    if (!(ymin <= ymax)) ymin = 0, ymax = 1;
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymin -= 0.5, ymax += 0.5;

    const auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
    const auto py = [&](double t) { return top + (ymax - t) / (ymax - ymin) * ph; };

    std::ostringstream o;
    o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << ' ' << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
      << detail::xml_escape(chart.title) << "</text>\n"
      << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";

    for (int k = 0; k <= 4; ++k) {
        const double xv = xmin + (xmax - xmin) * k / 4.0;
        const double yt = ymin + (ymax - ymin) * k / 4.0;
        const double yv = chart.log_y ? std::pow(10.0, yt) : yt;
        o << "<text x=\"" << detail::svg_num(px(xv)) << "\" y=\"" << H - bottom + 18
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << detail::tick_text(xv)
          << "</text>\n"
          << "<text x=\"" << left - 6 << "\" y=\"" << detail::svg_num(py(yt) + 4)
          << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << detail::tick_text(yv)
          << "</text>\n";
    }
    o << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 16
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" << detail::xml_escape(chart.x_label)
      << "</text>\n"
      << "<text x=\"18\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\""
      << " transform=\"rotate(-90 18 " << top + ph / 2 << ")\">" << detail::xml_escape(chart.y_label) << "</text>\n";

    for (std::size_t si = 0; si < chart.series.size(); ++si) {
        const auto& s = chart.series[si];
        const char* color = palette[si % std::size(palette)];
        if (!s.lower.empty() && s.lower.size() == s.y.size() && s.upper.size() == s.y.size()) {
            std::string pts;
            for (std::size_t k = 0; k < s.x.size(); ++k)
                if (const auto t = ty(s.upper[k])) pts += detail::svg_num(px(s.x[k])) + "," + detail::svg_num(py(*t)) + " ";
            for (std::size_t k = s.x.size(); k-- > 0;)
                if (const auto t = ty(s.lower[k])) pts += detail::svg_num(px(s.x[k])) + "," + detail::svg_num(py(*t)) + " ";
            o << "<polygon points=\"" << pts << "\" fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
        }
        std::string pts;
        for (std::size_t k = 0; k < s.x.size(); ++k)
            if (const auto t = ty(s.y[k])) pts += detail::svg_num(px(s.x[k])) + "," + detail::svg_num(py(*t)) + " ";
        o << "<polyline points=\"" << pts << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"/>\n"
          << "<text x=\"" << left + 10 << "\" y=\"" << top + 16 + 16 * si << "\" font-family=\"sans-serif\" font-size=\"12\""
          << " fill=\"" << color << "\">" << detail::xml_escape(s.label) << "</text>\n";
    }
    for (const auto& r : chart.references) {
        const auto t = ty(r.y);
        if (!t) continue;
        o << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << detail::svg_num(py(*t)) << "\" y2=\""
          << detail::svg_num(py(*t)) << "\" stroke=\"gray\" stroke-dasharray=\"6,4\"/>\n"
          << "<text x=\"" << left + pw - 4 << "\" y=\"" << detail::svg_num(py(*t) - 4)
          << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"gray\">"
          << detail::xml_escape(r.label) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

}  // namespace tailsgd
