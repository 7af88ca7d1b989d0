#include "quantformer/metrics.hpp"

#include "quantformer/errors.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace quantformer {

namespace {

// One-sided 99% normal quantile.
constexpr double kZ99 = 2.3263478740408408;

void require_nonempty(std::span<const double> x, const char* what) {
    if (x.empty()) throw ContractError(std::string(what) + " of an empty series");
}

double per_period_rf(double risk_free_rate, int periods_per_year) {
    return risk_free_rate / static_cast<double>(periods_per_year);
}

void check_ppy(int periods_per_year) {
    if (periods_per_year <= 0) throw ContractError("periods_per_year must be positive");
}

} // namespace

double sample_mean(std::span<const double> x) {
    require_nonempty(x, "mean");
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
}

double sample_covariance(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ContractError("covariance of series with different lengths");
    if (x.size() < 2) throw ContractError("covariance needs at least two observations");
    const bool flat_x = std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
    const bool flat_y = std::all_of(y.begin(), y.end(), [&](double v) { return v == y.front(); });
    if (flat_x || flat_y) return 0.0;
    const double mx = sample_mean(x);
    const double my = sample_mean(y);
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - mx) * (y[i] - my);
    return s / static_cast<double>(x.size() - 1);
}

double sample_std(std::span<const double> x) { return std::sqrt(sample_covariance(x, x)); }

double annualized_return(std::span<const double> returns, int periods_per_year) {
    require_nonempty(returns, "annualized return");
    check_ppy(periods_per_year);
    double growth = 1.0;
    for (double r : returns) growth *= 1.0 + r;
    if (!(growth > 0.0)) throw UndefinedMetricError("annualized return of a wiped-out portfolio");
    return std::pow(growth, static_cast<double>(periods_per_year) / static_cast<double>(returns.size())) -
           1.0;
}

double annual_excess_return(const ReturnSeries& series) {
    if (series.portfolio.size() != series.benchmark.size()) {
        throw ContractError("portfolio and benchmark series differ in length");
    }
    return annualized_return(series.portfolio, series.periods_per_year) -
           annualized_return(series.benchmark, series.periods_per_year);
}

double sharpe(std::span<const double> returns, int periods_per_year, double risk_free_rate) {
    check_ppy(periods_per_year);
    const double sd = sample_std(returns);
    if (sd == 0.0) throw UndefinedMetricError("Sharpe ratio of a zero-variance series");
    const double ppy = static_cast<double>(periods_per_year);
    return (sample_mean(returns) * ppy - risk_free_rate) / (sd * std::sqrt(ppy));
}

AlphaBeta alpha_beta(const ReturnSeries& series) {
    check_ppy(series.periods_per_year);
    const double var_m = sample_covariance(series.benchmark, series.benchmark);
    if (var_m == 0.0) throw UndefinedMetricError("beta against a zero-variance benchmark");
    const double beta = sample_covariance(series.portfolio, series.benchmark) / var_m;
    const double ppy = static_cast<double>(series.periods_per_year);
    const double rf = series.risk_free_rate;
    const double excess_p = sample_mean(series.portfolio) * ppy - rf;
    const double excess_m = sample_mean(series.benchmark) * ppy - rf;
    return {excess_p - beta * excess_m, beta};
}

std::vector<double> turnover_series(const std::vector<std::vector<double>>& weights) {
    if (weights.size() < 2) throw ContractError("turnover needs at least two weight snapshots");
    std::vector<double> out;
    out.reserve(weights.size() - 1);
    for (std::size_t t = 1; t < weights.size(); ++t) {
        if (weights[t].size() != weights[t - 1].size()) {
            throw ContractError("weight snapshots differ in length");
        }
        double s = 0.0;
        for (std::size_t n = 0; n < weights[t].size(); ++n) s += std::abs(weights[t][n] - weights[t - 1][n]);
        out.push_back(0.5 * s);
    }
    return out;
}

double mean_turnover(const std::vector<std::vector<double>>& weights) {
    return sample_mean(turnover_series(weights));
}

double win_rate(std::span<const double> returns) {
    require_nonempty(returns, "win rate");
    const auto wins = std::count_if(returns.begin(), returns.end(), [](double r) { return r > 0.0; });
    return static_cast<double>(wins) / static_cast<double>(returns.size());
}

double max_drawdown(std::span<const double> values) {
    require_nonempty(values, "max drawdown");
    double peak = values.front();
    double worst = 0.0;
    for (double v : values) {
        if (!(v > 0.0)) throw ContractError("max drawdown needs positive equity values");
        peak = std::max(peak, v);
        worst = std::max(worst, (peak - v) / peak);
    }
    return worst;
}

double downside_deviation(std::span<const double> returns, int periods_per_year, double risk_free_rate) {
    require_nonempty(returns, "downside deviation");
    check_ppy(periods_per_year);
    const double floor = per_period_rf(risk_free_rate, periods_per_year);
    double s = 0.0;
    for (double r : returns) {
        const double d = std::min(0.0, r - floor);
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(returns.size()));
}

double sortino(std::span<const double> returns, int periods_per_year, double risk_free_rate) {
    const double dd = downside_deviation(returns, periods_per_year, risk_free_rate);
    if (dd == 0.0) throw UndefinedMetricError("Sortino ratio without downside observations");
    const double ppy = static_cast<double>(periods_per_year);
    return (sample_mean(returns) * ppy - risk_free_rate) / (dd * std::sqrt(ppy));
}

double value_at_risk_99(std::span<const double> returns, VarMethod method, std::ostream* warning) {
    require_nonempty(returns, "value at risk");
    if (returns.size() < 100 && warning) {
        *warning << "warning: VaR99 from " << returns.size() << " observations (fewer than 100)\n";
    }
    if (method == VarMethod::Parametric) {
        const double sd = returns.size() < 2 ? 0.0 : sample_std(returns);
        return -sample_mean(returns) + kZ99 * sd;
    }
    std::vector<double> losses;
    losses.reserve(returns.size());
    for (double r : returns) losses.push_back(-r);
    std::sort(losses.begin(), losses.end());
    // Smallest loss l with #{L > l} <= 1% of T.
    const std::size_t tail = returns.size() / 100;
    return losses[losses.size() - 1 - tail];
}

VarMethod parse_var_method(const std::string& name) {
    if (name == "historical") return VarMethod::Historical;
    if (name == "parametric") return VarMethod::Parametric;
    throw ConfigError("var_method must be 'historical' or 'parametric', got '" + name + "'");
}

double volatility(std::span<const double> returns, int periods_per_year) {
    check_ppy(periods_per_year);
    return sample_std(returns) * std::sqrt(static_cast<double>(periods_per_year));
}

MetricsReport evaluate_metrics(const ReturnSeries& series, std::span<const double> equity_values,
                               const std::vector<std::vector<double>>& weights_history,
                               VarMethod var_method, std::ostream* warning) {
    MetricsReport r;
    auto attempt = [&](std::optional<double>& slot, auto&& fn) {
        try {
            slot = fn();
        } catch (const UndefinedMetricError& e) {
            if (warning) *warning << "warning: " << e.what() << '\n';
        } catch (const ContractError& e) {
            if (warning) *warning << "warning: " << e.what() << '\n';
        }
    };
    const auto& p = series.portfolio;
    const int ppy = series.periods_per_year;
    const double rf = series.risk_free_rate;
    attempt(r.ar, [&] { return annualized_return(p, ppy); });
    attempt(r.aer, [&] { return annual_excess_return(series); });
    attempt(r.tr, [&] { return mean_turnover(weights_history); });
    attempt(r.wr, [&] { return win_rate(p); });
    attempt(r.sr, [&] { return sharpe(p, ppy, rf); });
    std::optional<double> alpha_slot;
    attempt(r.beta, [&] {
        const AlphaBeta ab = alpha_beta(series);
        alpha_slot = ab.alpha;
        return ab.beta;
    });
    r.alpha = alpha_slot;
    attempt(r.md, [&] { return max_drawdown(equity_values); });
    attempt(r.sigma, [&] { return volatility(p, ppy); });
    attempt(r.sortino, [&] { return sortino(p, ppy, rf); });
    attempt(r.var99, [&] { return value_at_risk_99(p, var_method, warning); });
    return r;
}

namespace {

const std::pair<const char*, std::optional<double> MetricsReport::*> kFields[] = {
    {"AR", &MetricsReport::ar},       {"AER", &MetricsReport::aer},
    {"TR", &MetricsReport::tr},       {"WR", &MetricsReport::wr},
    {"SR", &MetricsReport::sr},       {"Alpha", &MetricsReport::alpha},
    {"Beta", &MetricsReport::beta},   {"MD", &MetricsReport::md},
    {"Sigma", &MetricsReport::sigma}, {"Sortino", &MetricsReport::sortino},
    {"VaR99", &MetricsReport::var99},
};

} // namespace

void to_json(nlohmann::json& j, const MetricsReport& r) {
    j = nlohmann::json::object();
    for (const auto& [key, member] : kFields) {
        const auto& v = r.*member;
        j[key] = v && std::isfinite(*v) ? nlohmann::json(*v) : nlohmann::json(nullptr);
    }
}

void from_json(const nlohmann::json& j, MetricsReport& r) {
    for (const auto& [key, member] : kFields) {
        if (!j.contains(key)) throw DataError(std::string("metrics report lacks key ") + key);
        const auto& v = j.at(key);
        if (v.is_null()) {
            (r.*member).reset();
        } else if (v.is_number()) {
            r.*member = v.get<double>();
        } else {
            throw DataError(std::string("metrics report key ") + key + " is not a number");
        }
    }
}

} // namespace quantformer
