#pragma once

#include "quantformer/market_data.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace quantformer {

struct SyntheticSpec {
    std::uint64_t seed = 1;
    std::size_t stocks = 50;
    std::size_t periods = 120; // return periods; one seed period precedes them
    Frequency frequency = Frequency::Monthly;
    double drift = 0.005;
    double volatility = 0.08;
    double signal_strength = 1.0;
    std::string signal_rule = "turnover";
    double turnover_level = 0.1;
    double turnover_dispersion = 0.5; // cross-stock spread of log turnover
    double turnover_noise = 0.1;      // period-to-period spread of log turnover

    /// Throws ConfigError on N < 2, T < 25, s outside [0,1] or an unknown rule.
    void validate() const;

    friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);

struct SyntheticUniverse {
    Panel panel;
    std::vector<std::string> tickers;
    /// [period][stock], period 0 is the seed period (its return is unused).
    std::vector<std::vector<double>> returns;
    std::vector<std::vector<double>> turnover;
    /// Rank score that ordered the returns of each period (period 0 empty).
    std::vector<std::vector<double>> scores;
};

/// Per period, N return draws are handed out in the order of
/// s * z(log v at t-1) + (1 - s) * noise, so at s = 1 the rank of r_t equals
/// the rank of the previous turnover. Daily bars (business days from
/// 2010-01-04) aggregate back to these period values.
SyntheticUniverse generate_universe(const SyntheticSpec& spec);

/// Rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

} // namespace quantformer
