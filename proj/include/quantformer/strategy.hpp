#pragma once

#include "quantformer/labeling.hpp"
#include "quantformer/market_data.hpp"
#include "quantformer/model.hpp"

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace quantformer {

struct StrategyConfig {
    /// Phi: which sorted bins are bought. Bin 1 holds the stocks with the lowest
    /// predicted probability of landing in the lowest-return group.
    std::vector<int> selection{1, 0, 0};
    double fee_rate = 0.003;
    double initial_cash = 1.0;
    bool require_persistence = false;

    /// b, the number of selected bins.
    std::size_t selected_bins() const;
    /// Throws ConfigError unless Phi is 0/1 of length `bins` with 1 <= b < bins,
    /// fee_rate >= 0 and initial_cash > 0.
    void validate(int bins) const;

    friend bool operator==(const StrategyConfig&, const StrategyConfig&) = default;
};

void to_json(nlohmann::json& j, const StrategyConfig& c);
void from_json(const nlohmann::json& j, StrategyConfig& c);

/// Bins the first-component probabilities of a section (one row per stock)
/// with the labeling scheme's phi/xi layout.
std::vector<LabelVector> sort_label(const Tensor& probabilities, const LabelScheme& scheme);
std::vector<LabelVector> sort_label(std::span<const PredictionDistribution> predictions,
                                    const LabelScheme& scheme);

/// Equal weights over the stocks whose label hits Phi. An empty LabelVector
/// marks a stock that is not tradable this period. `previous` may be empty.
std::vector<double> compute_weights(std::span<const LabelVector> previous,
                                    std::span<const LabelVector> current,
                                    const StrategyConfig& config);

/// State right after a step: value and the weights as drifted by the returns.
struct PortfolioState {
    double value = 1.0;
    std::vector<double> weights;
    bool ruined = false;
};

/// Rebalances to `target` (fee on traded notional against the drifted
/// weights), then applies `returns`; cash earns nothing.
PortfolioState step_portfolio(const PortfolioState& state, std::span<const double> target,
                              std::span<const double> returns, double fee_rate);

struct EquityPoint {
    std::string timestamp;
    double value = 0.0;
    double period_return = 0.0;
    double turnover = 0.0;
    std::vector<double> weights; // target weights held over the period
};

/// points[0] is the initial all-cash state; later points are one per traded period.
struct EquityCurve {
    std::vector<std::string> tickers;
    std::vector<EquityPoint> points;
    bool ruined = false;

    std::vector<double> values() const;
    std::vector<double> returns() const;
    std::vector<double> turnover() const;
    std::vector<std::vector<double>> weights_history() const;
};

/// Maps a normalized cross-section to a (stocks x classes) probability matrix.
using Predictor = std::function<Tensor(const CrossSection&)>;

Predictor model_predictor(const ModelParameters& params, const ModelConfig& config);
/// Cheats with the realized next returns: higher return, lower first component.
Predictor oracle_predictor(const PeriodSeries& series, std::size_t classes);

/// Decisions at every t in [first, last]; the weights chosen at t earn the
/// returns of period t+1. Throws GapError when a decision time has no
/// normalized cross-section, ContractError if last + 1 is out of range.
EquityCurve run_backtest(const PeriodSeries& series, std::size_t first, std::size_t last,
                         const Predictor& predictor, const LabelScheme& scheme,
                         const StrategyConfig& config);

/// Equal weight across every stock of each section, same fee and timing.
EquityCurve uniform_benchmark(const PeriodSeries& series, std::size_t first, std::size_t last,
                              const StrategyConfig& config);

/// `timestamp,value,period_return,turnover`; the first row is the initial state.
void write_equity_csv(const EquityCurve& curve, std::ostream& out);
/// `timestamp,<ticker>...`, target weights per row.
void write_weights_csv(const EquityCurve& curve, std::ostream& out);
/// Rebuilds a curve from the two CSVs above.
EquityCurve read_equity_csv(std::istream& equity, std::istream& weights);

} // namespace quantformer
