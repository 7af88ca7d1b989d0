#include "quantformer/labeling.hpp"

#include "quantformer/errors.hpp"

#include <algorithm>
#include <cmath>

namespace quantformer {

namespace {

// Psi = k/n sits exactly on printed boundaries such as 0.6; phi and xi carry
// rounding error, so boundary comparisons allow this slack.
constexpr double kBoundaryTolerance = 1e-9;

} // namespace

double boundary_term(int bins, double fraction) {
    if (bins < 2) throw SchemeError("label scheme needs at least 2 bins");
    if (!(fraction > 0.0) || !std::isfinite(fraction)) {
        throw SchemeError("bin fraction must be a finite number > 0");
    }
    const double rho = static_cast<double>(bins);
    if (fraction * rho > 1.0 + 1e-12) {
        throw SchemeError("bin fraction * bin count exceeds 1 (" + std::to_string(fraction) +
                          " * " + std::to_string(bins) + ")");
    }
    // phi * (1/phi - rho) / (rho - 1) == (1 - phi*rho) / (rho - 1); this form is
    // exact whenever 1/phi is an integer, the usual case.
    const double xi = fraction * (1.0 / fraction - rho) / (rho - 1.0);
    return xi < 0.0 ? 0.0 : xi;
}

void LabelScheme::validate() const {
    if (bins < 3) throw SchemeError("label scheme needs at least 3 bins, got " + std::to_string(bins));
    (void)boundary();
}

std::optional<std::size_t> LabelVector::active_bin() const {
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] == 1.0) return i;
    }
    return std::nullopt;
}

double empirical_quantile(std::span<const double> values, double x) {
    if (values.empty()) throw ContractError("empirical_quantile of an empty list");
    std::size_t at_or_below = 0;
    bool present = false;
    for (double v : values) {
        if (v <= x) ++at_or_below;
        if (v == x) present = true;
    }
    if (!present) throw ContractError("empirical_quantile: value is not a member of the list");
    return static_cast<double>(at_or_below) / static_cast<double>(values.size());
}

std::vector<double> empirical_quantiles(std::span<const double> values) {
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> out;
    out.reserve(values.size());
    const double n = static_cast<double>(values.size());
    for (double v : values) {
        const auto count = std::upper_bound(sorted.begin(), sorted.end(), v) - sorted.begin();
        out.push_back(static_cast<double>(count) / n);
    }
    return out;
}

LabelVector assign_label(double psi, const LabelScheme& scheme) {
    if (!(psi > 0.0) || psi > 1.0 + kBoundaryTolerance) {
        throw ContractError("assign_label: quantile must lie in (0, 1]");
    }
    const double phi = scheme.fraction;
    const double xi = scheme.boundary();
    LabelVector label{std::vector<double>(static_cast<std::size_t>(scheme.bins), 0.0)};
    if (psi >= 1.0 - kBoundaryTolerance) {
        label.y.back() = 1.0;
        return label;
    }
    for (int i = 1; i <= scheme.bins; ++i) {
        const double lo = (i - 1) * (phi + xi);
        const double hi = i * phi + (i - 1) * xi;
        if (psi > lo + kBoundaryTolerance && psi <= hi + kBoundaryTolerance) {
            label.y[static_cast<std::size_t>(i - 1)] = 1.0;
            break;
        }
    }
    return label;
}

std::vector<LabeledSection> labeled_sections(const PeriodSeries& series, std::size_t first,
                                             std::size_t last) {
    std::vector<LabeledSection> out;
    for (std::size_t t = first; t <= last && t < series.period_count(); ++t) {
        auto section = normalized_section(series, t);
        if (!section) continue;
        LabeledSection ls{std::move(*section), {}};
        ls.next_returns.reserve(ls.section.windows.size());
        for (const auto& w : ls.section.windows) {
            ls.next_returns.push_back(series.return_at(w.ticker, t + 1));
        }
        out.push_back(std::move(ls));
    }
    return out;
}

std::vector<LabeledSection> labeled_sections(const PeriodSeries& series) {
    if (series.period_count() < 2) return {};
    return labeled_sections(series, 0, series.period_count() - 2);
}

DatasetReport build_dataset(const std::vector<LabeledSection>& sections, const LabelScheme& scheme) {
    scheme.validate();
    DatasetReport report;
    for (const auto& ls : sections) {
        if (ls.next_returns.size() != ls.section.windows.size()) {
            throw ContractError("labeled section: next returns not aligned with windows");
        }
        std::vector<std::size_t> members;
        std::vector<double> returns;
        for (std::size_t i = 0; i < ls.next_returns.size(); ++i) {
            if (ls.next_returns[i]) {
                members.push_back(i);
                returns.push_back(*ls.next_returns[i]);
            } else {
                ++report.missing_next_return;
            }
        }
        if (members.empty()) continue;
        ++report.sections;
        const auto psi = empirical_quantiles(returns);
        for (std::size_t k = 0; k < members.size(); ++k) {
            const auto& w = ls.section.windows[members[k]];
            LabelVector label = assign_label(psi[k], scheme);
            if (label.is_null()) {
                if (!scheme.include_null) {
                    ++report.null_dropped;
                    continue;
                }
                ++report.null_retained;
            }
            report.samples.push_back(
                LabeledSample{w.ticker, ls.section.decision_time, w.features, std::move(label),
                              returns[k]});
        }
    }
    return report;
}

} // namespace quantformer
