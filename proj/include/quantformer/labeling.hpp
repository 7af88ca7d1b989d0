#pragma once

#include "quantformer/market_data.hpp"
#include "quantformer/tensor.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace quantformer {

/// Width of the gap between consecutive bins, (1 - phi*rho)/(rho - 1).
/// Throws SchemeError when phi*rho > 1, rho < 2 or phi <= 0.
double boundary_term(int bins, double fraction);

/// rho bins of width phi separated by gaps of width xi; together they tile [0, 1].
struct LabelScheme {
    int bins = 3;
    double fraction = 0.2;
    bool include_null = false;

    double boundary() const { return boundary_term(bins, fraction); }
    /// Throws SchemeError on rho < 3, phi <= 0 or phi*rho > 1.
    void validate() const;
};

/// One-hot (or all-zero for the gaps) target of length rho.
struct LabelVector {
    std::vector<double> y;

    std::optional<std::size_t> active_bin() const;
    bool is_null() const { return !active_bin().has_value(); }
};

/// Fraction of `values` that are <= x. Throws ContractError when x is not an
/// element of `values`.
double empirical_quantile(std::span<const double> values, double x);

/// empirical_quantile of every element, O(n log n).
std::vector<double> empirical_quantiles(std::span<const double> values);

/// Bin i (1-based) is active when (i-1)(phi+xi) < psi <= i*phi + (i-1)*xi.
LabelVector assign_label(double psi, const LabelScheme& scheme);

struct LabeledSample {
    std::string ticker;
    std::size_t decision_time = 0;
    Tensor features; // normalized 20 x 2
    LabelVector target;
    double next_return = 0.0;
};

/// A normalized cross-section paired with each window's return over the next period.
struct LabeledSection {
    CrossSection section;
    std::vector<std::optional<double>> next_returns; // aligned with section.windows
};

struct DatasetReport {
    std::vector<LabeledSample> samples;
    std::size_t sections = 0;
    std::size_t missing_next_return = 0;
    std::size_t null_dropped = 0;
    std::size_t null_retained = 0;
};

/// Normalized sections at every decision time in [first, last] that have at
/// least two complete windows, each paired with r at t+1.
std::vector<LabeledSection> labeled_sections(const PeriodSeries& series, std::size_t first,
                                             std::size_t last);
std::vector<LabeledSection> labeled_sections(const PeriodSeries& series);

DatasetReport build_dataset(const std::vector<LabeledSection>& sections, const LabelScheme& scheme);

} // namespace quantformer
