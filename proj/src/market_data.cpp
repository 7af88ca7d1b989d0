#include "quantformer/market_data.hpp"

#include "quantformer/errors.hpp"
#include "quantformer/text_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

namespace quantformer {

namespace chr = std::chrono;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct PeriodKey {
    long long key;
    std::string label;
};

std::string two_digits(unsigned v) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "%02u", v);
    return buf;
}

PeriodKey period_of(Date d, Frequency f) {
    const int y = static_cast<int>(d.year());
    const unsigned m = static_cast<unsigned>(d.month());
    switch (f) {
    case Frequency::Monthly:
        return {static_cast<long long>(y) * 12 + (m - 1), std::to_string(y) + "-" + two_digits(m)};
    case Frequency::Weekly: {
        const chr::sys_days day{d};
        const unsigned iso_wd = chr::weekday{day}.iso_encoding();
        const chr::sys_days monday = day - chr::days{iso_wd - 1};
        const chr::sys_days thursday = monday + chr::days{3};
        const chr::year iso_year = chr::year_month_day{thursday}.year();
        const chr::sys_days jan1{iso_year / chr::January / 1};
        const auto week = static_cast<unsigned>((thursday - jan1).count() / 7 + 1);
        return {monday.time_since_epoch().count(),
                std::to_string(static_cast<int>(iso_year)) + "-W" + two_digits(week)};
    }
    case Frequency::Daily:
        return {chr::sys_days{d}.time_since_epoch().count(), format_iso_date(d)};
    }
    throw ConfigError("unknown frequency");
}

} // namespace

std::optional<Date> parse_iso_date(std::string_view text) {
    text = trim(text);
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
    const auto y = parse_integer(text.substr(0, 4));
    const auto m = parse_integer(text.substr(5, 2));
    const auto d = parse_integer(text.substr(8, 2));
    if (!y || !m || !d) return std::nullopt;
    const Date date{chr::year{static_cast<int>(*y)}, chr::month{static_cast<unsigned>(*m)},
                    chr::day{static_cast<unsigned>(*d)}};
    if (!date.ok()) return std::nullopt;
    return date;
}

std::string format_iso_date(Date d) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(d.year()),
                  static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
    return buf;
}

std::size_t Panel::bar_count() const {
    std::size_t n = 0;
    for (const auto& [_, series] : bars) n += series.size();
    return n;
}

Frequency parse_frequency(std::string_view name) {
    if (name == "monthly") return Frequency::Monthly;
    if (name == "weekly") return Frequency::Weekly;
    if (name == "daily") return Frequency::Daily;
    throw ConfigError("unknown frequency '" + std::string(name) +
                      "' (expected monthly, weekly or daily)");
}

std::string_view to_string(Frequency f) {
    switch (f) {
    case Frequency::Monthly: return "monthly";
    case Frequency::Weekly: return "weekly";
    case Frequency::Daily: return "daily";
    }
    return "unknown";
}

int periods_per_year(Frequency f) {
    switch (f) {
    case Frequency::Monthly: return 12;
    case Frequency::Weekly: return 52;
    case Frequency::Daily: return 252;
    }
    return 0;
}

std::optional<double> PeriodSeries::return_at(const std::string& ticker, std::size_t period) const {
    const auto it = records.find(ticker);
    if (it == records.end() || period >= it->second.size()) return std::nullopt;
    const PeriodRecord& rec = it->second[period];
    if (!rec.valid) return std::nullopt;
    return rec.r;
}

Panel parse_daily_csv(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw ParseError(1, "missing header");
    ++line_no;
    if (trim(line) != "ticker,date,close_adj,turnover_rate") {
        throw ParseError(line_no, "header must be 'ticker,date,close_adj,turnover_rate'");
    }

    Panel panel;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split_fields(trim(line));
        if (fields.size() != 4) {
            throw ParseError(line_no, "expected 4 fields, found " + std::to_string(fields.size()));
        }
        DailyBar bar;
        bar.ticker = std::string(trim(fields[0]));
        if (bar.ticker.empty()) throw ParseError(line_no, "empty ticker");
        const auto date = parse_iso_date(fields[1]);
        if (!date) throw ParseError(line_no, "bad date '" + std::string(fields[1]) + "'");
        bar.date = *date;
        const auto close = parse_double(fields[2]);
        if (!close || !std::isfinite(*close) || *close <= 0.0) {
            throw ParseError(line_no, "close_adj must be a finite number > 0");
        }
        bar.close_adj = *close;
        const auto turnover = parse_double(fields[3]);
        if (!turnover || !std::isfinite(*turnover) || *turnover < 0.0) {
            throw ParseError(line_no, "turnover_rate must be a finite number >= 0");
        }
        bar.turnover_rate = *turnover;
        panel.bars[bar.ticker].push_back(std::move(bar));
    }

    for (auto& [ticker, series] : panel.bars) {
        std::stable_sort(series.begin(), series.end(),
                         [](const DailyBar& a, const DailyBar& b) { return a.date < b.date; });
        for (std::size_t i = 1; i < series.size(); ++i) {
            if (series[i].date == series[i - 1].date) {
                throw DataError("duplicate bar for " + ticker + " on " +
                                format_iso_date(series[i].date));
            }
        }
    }
    return panel;
}

Panel ingest_daily_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return parse_daily_csv(in);
}

void write_daily_csv(const Panel& panel, std::ostream& out) {
    out << "ticker,date,close_adj,turnover_rate\n";
    for (const auto& [ticker, series] : panel.bars) {
        for (const auto& bar : series) {
            out << ticker << ',' << format_iso_date(bar.date) << ',' << format_double(bar.close_adj)
                << ',' << format_double(bar.turnover_rate) << '\n';
        }
    }
}

PeriodSeries aggregate_period(const Panel& panel, Frequency frequency) {
    if (panel.bars.empty()) throw DataError("aggregate_period: empty panel");

    std::map<long long, std::string> calendar;
    for (const auto& [_, series] : panel.bars) {
        for (const auto& bar : series) {
            auto key = period_of(bar.date, frequency);
            calendar.emplace(key.key, std::move(key.label));
        }
    }
    std::map<long long, std::size_t> index_of;
    PeriodSeries out;
    out.frequency = frequency;
    for (const auto& [key, label] : calendar) {
        index_of.emplace(key, out.period_labels.size());
        out.period_labels.push_back(label);
    }

    const std::size_t n_periods = out.period_labels.size();
    for (const auto& [ticker, series] : panel.bars) {
        std::vector<PeriodRecord> recs(n_periods);
        for (std::size_t p = 0; p < n_periods; ++p) {
            recs[p] = PeriodRecord{ticker, p, kNaN, kNaN, false};
        }
        std::vector<double> last_close(n_periods, kNaN);
        std::vector<double> turnover(n_periods, 0.0);
        std::vector<bool> traded(n_periods, false);
        for (const auto& bar : series) {
            const std::size_t p = index_of.at(period_of(bar.date, frequency).key);
            traded[p] = true;
            last_close[p] = bar.close_adj;
            turnover[p] += bar.turnover_rate;
        }
        double prev_close = kNaN;
        for (std::size_t p = 0; p < n_periods; ++p) {
            if (!traded[p]) continue;
            if (!std::isnan(prev_close)) {
                recs[p].r = (last_close[p] - prev_close) / prev_close;
                recs[p].v = turnover[p];
                recs[p].valid = true;
            }
            prev_close = last_close[p];
        }
        out.records.emplace(ticker, std::move(recs));
    }
    return out;
}

std::vector<FeatureWindow> build_windows(const PeriodSeries& series, std::size_t t) {
    std::vector<FeatureWindow> out;
    if (t + 1 < kWindowLength || t >= series.period_count()) return out;
    const std::size_t first = t + 1 - kWindowLength;
    for (const auto& [ticker, recs] : series.records) {
        bool complete = true;
        for (std::size_t p = first; p <= t; ++p) {
            if (!recs[p].valid) {
                complete = false;
                break;
            }
        }
        if (!complete) continue;
        Tensor x(kWindowLength, kFeatureCount);
        for (std::size_t m = 0; m < kWindowLength; ++m) {
            x(m, 0) = recs[first + m].r;
            x(m, 1) = recs[first + m].v;
        }
        out.push_back(FeatureWindow{ticker, t, std::move(x), true});
    }
    return out;
}

CrossSection normalize_cross_section(const CrossSection& section) {
    const std::size_t n = section.windows.size();
    if (n < 2) {
        throw DegenerateSectionError("cross-section at t=" + std::to_string(section.decision_time) +
                                     " has " + std::to_string(n) + " stocks; need at least 2");
    }
    CrossSection out = section;
    const std::size_t rows = section.windows.front().features.rows();
    const std::size_t cols = section.windows.front().features.cols();
    for (const auto& w : section.windows) {
        if (w.features.rows() != rows || w.features.cols() != cols) {
            throw ContractError("cross-section windows differ in shape");
        }
    }
    const double count = static_cast<double>(n);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            double mean = 0.0;
            double lo = std::numeric_limits<double>::infinity();
            double hi = -lo;
            for (const auto& w : section.windows) {
                const double x = w.features(r, c);
                mean += x;
                lo = std::min(lo, x);
                hi = std::max(hi, x);
            }
            mean /= count;
            double var = 0.0;
            for (const auto& w : section.windows) {
                const double dev = w.features(r, c) - mean;
                var += dev * dev;
            }
            const double sd = std::sqrt(var / count);
            // Constant slice (up to rounding of the mean) maps to 0.
            const bool degenerate =
                hi - lo <= 1e-12 * std::max(std::abs(hi), std::abs(lo)) || sd == 0.0;
            for (auto& w : out.windows) {
                double& x = w.features(r, c);
                x = degenerate ? 0.0 : (x - mean) / sd;
            }
        }
    }
    out.normalized = true;
    return out;
}

std::optional<CrossSection> normalized_section(const PeriodSeries& series, std::size_t t) {
    CrossSection section{t, build_windows(series, t), false};
    if (section.windows.size() < 2) return std::nullopt;
    return normalize_cross_section(section);
}

void write_period_csv(const PeriodSeries& series, std::ostream& out) {
    out << "# frequency=" << to_string(series.frequency) << '\n';
    out << "ticker,period_index,period_label,r,v,valid\n";
    for (const auto& [ticker, recs] : series.records) {
        for (const auto& rec : recs) {
            out << ticker << ',' << rec.period_index << ',' << series.period_labels[rec.period_index]
                << ',' << format_double(rec.r) << ',' << format_double(rec.v) << ','
                << (rec.valid ? 1 : 0) << '\n';
        }
    }
}

PeriodSeries read_period_csv(std::istream& in) {
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line) || trim(line).rfind("# frequency=", 0) != 0) {
        throw ParseError(line_no, "period store must start with '# frequency=<name>'");
    }
    PeriodSeries series;
    series.frequency = parse_frequency(trim(line).substr(12));
    ++line_no;
    if (!std::getline(in, line) || trim(line) != "ticker,period_index,period_label,r,v,valid") {
        throw ParseError(line_no, "bad period store header");
    }
    std::map<std::size_t, std::string> labels;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto f = split_fields(trim(line));
        if (f.size() != 6) throw ParseError(line_no, "expected 6 fields");
        const auto idx = parse_integer(f[1]);
        const auto r = parse_double(f[3]);
        const auto v = parse_double(f[4]);
        const auto valid = parse_integer(f[5]);
        if (!idx || *idx < 0 || !r || !v || !valid) throw ParseError(line_no, "malformed record");
        PeriodRecord rec{std::string(f[0]), static_cast<std::size_t>(*idx), *r, *v, *valid != 0};
        labels[rec.period_index] = std::string(f[2]);
        auto& recs = series.records[rec.ticker];
        if (rec.period_index != recs.size()) {
            throw ParseError(line_no, "period indices must be contiguous per ticker");
        }
        recs.push_back(std::move(rec));
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto it = labels.find(i);
        if (it == labels.end()) throw DataError("period store has a gap at index " + std::to_string(i));
        series.period_labels.push_back(it->second);
    }
    for (const auto& [ticker, recs] : series.records) {
        if (recs.size() != series.period_labels.size()) {
            throw DataError("ticker " + ticker + " does not cover every period");
        }
    }
    return series;
}

} // namespace quantformer
