#pragma once

#include "quantformer/tensor.hpp"

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace quantformer {

using Date = std::chrono::year_month_day;

/// Parses YYYY-MM-DD. Returns nullopt on malformed or impossible dates.
std::optional<Date> parse_iso_date(std::string_view text);
std::string format_iso_date(Date d);

struct DailyBar {
    std::string ticker;
    Date date;
    double close_adj = 0.0;
    double turnover_rate = 0.0;
};

/// Daily bars grouped by ticker, each group sorted by date.
struct Panel {
    std::map<std::string, std::vector<DailyBar>> bars;

    std::size_t bar_count() const;
};

enum class Frequency { Monthly, Weekly, Daily };

Frequency parse_frequency(std::string_view name);
std::string_view to_string(Frequency f);
int periods_per_year(Frequency f);

/// One stock at one period. `r` and `v` are NaN when the period is invalid.
struct PeriodRecord {
    std::string ticker;
    std::size_t period_index = 0;
    double r = 0.0;
    double v = 0.0;
    bool valid = false;
};

/// Per-ticker period records aligned to a shared market calendar: the sorted
/// set of periods in which at least one ticker traded. Every ticker has one
/// record per calendar period.
struct PeriodSeries {
    Frequency frequency = Frequency::Monthly;
    std::vector<std::string> period_labels;
    std::map<std::string, std::vector<PeriodRecord>> records;

    std::size_t period_count() const noexcept { return period_labels.size(); }
    /// r at `period` for `ticker`, when that record exists and is valid.
    std::optional<double> return_at(const std::string& ticker, std::size_t period) const;
};

inline constexpr std::size_t kWindowLength = 20;
inline constexpr std::size_t kFeatureCount = 2;

/// 20 x 2 matrix of (r, v) rows for one stock, oldest row first.
struct FeatureWindow {
    std::string ticker;
    std::size_t decision_time = 0;
    Tensor features;
    bool complete = false;
};

struct CrossSection {
    std::size_t decision_time = 0;
    std::vector<FeatureWindow> windows;
    bool normalized = false;
};

/// Reads the `ticker,date,close_adj,turnover_rate` CSV schema.
Panel ingest_daily_csv(const std::filesystem::path& path);
Panel parse_daily_csv(std::istream& in);
void write_daily_csv(const Panel& panel, std::ostream& out);

PeriodSeries aggregate_period(const Panel& panel, Frequency frequency);

/// Windows for every ticker whose 20 records ending at `t` are all valid.
std::vector<FeatureWindow> build_windows(const PeriodSeries& series, std::size_t t);

/// Cross-stock Z-score of every (time step, feature) slice, population std.
/// Zero-variance slices map to 0.
CrossSection normalize_cross_section(const CrossSection& section);

/// build_windows + normalize, or nullopt when fewer than two stocks qualify.
std::optional<CrossSection> normalized_section(const PeriodSeries& series, std::size_t t);

void write_period_csv(const PeriodSeries& series, std::ostream& out);
PeriodSeries read_period_csv(std::istream& in);

} // namespace quantformer
