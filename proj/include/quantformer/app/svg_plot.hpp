#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace quantformer::app {

struct PlotSeries {
    std::string label;
    std::string color;
    std::vector<double> values;
};

/// Static line chart of one or more equally long series.
void write_line_plot(const std::vector<PlotSeries>& series, const std::vector<std::string>& x_labels,
                     const std::string& title, std::ostream& out);

} // namespace quantformer::app
