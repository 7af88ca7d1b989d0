#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace quantformer {

/// Portfolio and benchmark simple returns per period, with the annualized
/// risk-free rate.
struct ReturnSeries {
    std::vector<double> portfolio;
    std::vector<double> benchmark;
    int periods_per_year = 12;
    double risk_free_rate = 0.0;
};

double sample_mean(std::span<const double> x);
/// T-1 denominator. Exactly 0 for a constant series.
double sample_std(std::span<const double> x);
double sample_covariance(std::span<const double> x, std::span<const double> y);

double annualized_return(std::span<const double> returns, int periods_per_year);
double annual_excess_return(const ReturnSeries& series);

/// Throws UndefinedMetricError on zero variance.
double sharpe(std::span<const double> returns, int periods_per_year, double risk_free_rate);

struct AlphaBeta {
    double alpha = 0.0;
    double beta = 0.0;
};
/// Throws UndefinedMetricError when the benchmark has zero variance.
AlphaBeta alpha_beta(const ReturnSeries& series);

/// Half the L1 distance between consecutive snapshots; one entry per step.
std::vector<double> turnover_series(const std::vector<std::vector<double>>& weights);
double mean_turnover(const std::vector<std::vector<double>>& weights);

double win_rate(std::span<const double> returns);
double max_drawdown(std::span<const double> values);

/// Root mean square of the negative per-period excess returns, over all T.
double downside_deviation(std::span<const double> returns, int periods_per_year, double risk_free_rate);
/// Throws UndefinedMetricError when no period falls below the risk-free rate.
double sortino(std::span<const double> returns, int periods_per_year, double risk_free_rate);

enum class VarMethod { Historical, Parametric };
/// 99% value at risk of the per-period loss -D, as a positive loss magnitude.
/// Writes a warning when fewer than 100 observations are given.
double value_at_risk_99(std::span<const double> returns, VarMethod method = VarMethod::Historical,
                        std::ostream* warning = nullptr);
VarMethod parse_var_method(const std::string& name);

/// Annualized sample standard deviation.
double volatility(std::span<const double> returns, int periods_per_year);

/// Undefined metrics are left empty and serialize as null.
struct MetricsReport {
    std::optional<double> ar, aer, tr, wr, sr, alpha, beta, md, sigma, sortino, var99;
};

MetricsReport evaluate_metrics(const ReturnSeries& series, std::span<const double> equity_values,
                               const std::vector<std::vector<double>>& weights_history,
                               VarMethod var_method = VarMethod::Historical,
                               std::ostream* warning = nullptr);

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

} // namespace quantformer
