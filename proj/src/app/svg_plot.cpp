#include "quantformer/app/svg_plot.hpp"

#include "quantformer/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

namespace quantformer::app {

namespace {

constexpr double kWidth = 800.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 60.0;
constexpr double kRight = 20.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 50.0;
constexpr int kTicks = 5;

std::string fixed(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

} // namespace

void write_line_plot(const std::vector<PlotSeries>& series, const std::vector<std::string>& x_labels,
                     const std::string& title, std::ostream& out) {
    if (series.empty()) throw ContractError("line plot without series");
    const std::size_t n = series.front().values.size();
    for (const auto& s : series) {
        if (s.values.size() != n) throw ContractError("line plot series differ in length");
    }
    if (!x_labels.empty() && x_labels.size() != n) throw ContractError("line plot labels differ in length");

    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& s : series) {
        for (double v : s.values) {
            if (!std::isfinite(v)) continue;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (!std::isfinite(lo)) {
        lo = 0.0;
        hi = 1.0;
    }
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double plot_w = kWidth - kLeft - kRight;
    const double plot_h = kHeight - kTop - kBottom;
    auto x_at = [&](std::size_t i) { return kLeft + (n <= 1 ? 0.0 : plot_w * static_cast<double>(i) / static_cast<double>(n - 1)); };
    auto y_at = [&](double v) { return kTop + plot_h * (hi - v) / (hi - lo); };

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
        << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
        << "</text>\n";
    out << "<g stroke=\"#ccc\">\n";
    for (int k = 0; k <= kTicks; ++k) {
        const double v = lo + (hi - lo) * k / kTicks;
        const double y = y_at(v);
        out << "<line x1=\"" << kLeft << "\" y1=\"" << fixed(y) << "\" x2=\"" << kWidth - kRight << "\" y2=\""
            << fixed(y) << "\"/>\n";
    }
    out << "</g>\n<g text-anchor=\"end\">\n";
    for (int k = 0; k <= kTicks; ++k) {
        const double v = lo + (hi - lo) * k / kTicks;
        out << "<text x=\"" << kLeft - 6 << "\" y=\"" << fixed(y_at(v) + 4) << "\">" << fixed(v, 3) << "</text>\n";
    }
    out << "</g>\n";
    if (!x_labels.empty()) {
        const std::size_t step = std::max<std::size_t>(1, n / 6);
        out << "<g text-anchor=\"middle\">\n";
        for (std::size_t i = 0; i < n; i += step) {
            out << "<text x=\"" << fixed(x_at(i)) << "\" y=\"" << kHeight - kBottom + 18 << "\">"
                << escape(x_labels[i]) << "</text>\n";
        }
        out << "</g>\n";
    }
    for (const auto& s : series) {
        out << "<polyline fill=\"none\" stroke=\"" << escape(s.color) << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < n; ++i) {
            if (i) out << ' ';
            out << fixed(x_at(i)) << ',' << fixed(y_at(s.values[i]));
        }
        out << "\"/>\n";
    }
    for (std::size_t k = 0; k < series.size(); ++k) {
        const double y = kTop + 14.0 * static_cast<double>(k);
        out << "<line x1=\"" << kLeft + 10 << "\" y1=\"" << y << "\" x2=\"" << kLeft + 30 << "\" y2=\"" << y
            << "\" stroke=\"" << escape(series[k].color) << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << kLeft + 36 << "\" y=\"" << y + 4 << "\">" << escape(series[k].label) << "</text>\n";
    }
    out << "</svg>\n";
}

} // namespace quantformer::app
