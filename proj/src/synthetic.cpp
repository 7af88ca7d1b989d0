#include "quantformer/synthetic.hpp"

#include "quantformer/errors.hpp"
#include "quantformer/json_util.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace quantformer {

namespace {

using std::chrono::sys_days;

constexpr double kReturnFloor = -0.95;

long period_key(sys_days day, Frequency f) {
    const std::chrono::year_month_day ymd{day};
    switch (f) {
    case Frequency::Monthly:
        return static_cast<int>(ymd.year()) * 12 + static_cast<long>(static_cast<unsigned>(ymd.month())) - 1;
    case Frequency::Weekly: {
        const std::chrono::weekday wd{day};
        const auto back = (wd.c_encoding() + 6) % 7; // days since Monday
        return (day - std::chrono::days{back}).time_since_epoch().count();
    }
    case Frequency::Daily:
        return day.time_since_epoch().count();
    }
    return 0;
}

/// Business days grouped by period, `count` groups starting at 2010-01-04.
std::vector<std::vector<sys_days>> business_calendar(std::size_t count, Frequency f) {
    std::vector<std::vector<sys_days>> groups;
    sys_days day{std::chrono::year{2010} / std::chrono::January / 4};
    long current = 0;
    while (true) {
        const std::chrono::weekday wd{day};
        if (wd != std::chrono::Saturday && wd != std::chrono::Sunday) {
            const long key = period_key(day, f);
            if (groups.empty() || key != current) {
                if (groups.size() == count) break;
                groups.emplace_back();
                current = key;
            }
            groups.back().push_back(day);
        }
        day += std::chrono::days{1};
    }
    return groups;
}

std::vector<double> zscore(std::span<const double> x) {
    const double n = static_cast<double>(x.size());
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / n);
    std::vector<double> z(x.size(), 0.0);
    if (sd > 0.0) {
        for (std::size_t i = 0; i < x.size(); ++i) z[i] = (x[i] - mean) / sd;
    }
    return z;
}

std::vector<double> average_ranks(std::span<const double> x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

} // namespace

void SyntheticSpec::validate() const {
    if (stocks < 2) throw ConfigError("synthetic.stocks must be >= 2");
    if (periods < 25) throw ConfigError("synthetic.periods must be >= 25");
    if (!(signal_strength >= 0.0 && signal_strength <= 1.0)) {
        throw ConfigError("synthetic.signal_strength must lie in [0, 1]");
    }
    if (signal_rule != "turnover") {
        throw ConfigError("synthetic.signal_rule '" + signal_rule + "' is unknown (supported: turnover)");
    }
    if (!(volatility >= 0.0)) throw ConfigError("synthetic.volatility must be >= 0");
    if (!std::isfinite(drift)) throw ConfigError("synthetic.drift must be finite");
    if (!(turnover_level > 0.0)) throw ConfigError("synthetic.turnover_level must be > 0");
    if (!(turnover_dispersion >= 0.0) || !(turnover_noise >= 0.0)) {
        throw ConfigError("synthetic turnover spreads must be >= 0");
    }
}

void to_json(nlohmann::json& j, const SyntheticSpec& s) {
    j = nlohmann::json{{"seed", s.seed},
                       {"stocks", s.stocks},
                       {"periods", s.periods},
                       {"frequency", std::string(to_string(s.frequency))},
                       {"drift", s.drift},
                       {"volatility", s.volatility},
                       {"signal_strength", s.signal_strength},
                       {"signal_rule", s.signal_rule},
                       {"turnover_level", s.turnover_level},
                       {"turnover_dispersion", s.turnover_dispersion},
                       {"turnover_noise", s.turnover_noise}};
}

void from_json(const nlohmann::json& j, SyntheticSpec& s) {
    if (!j.is_object()) throw ConfigError("synthetic spec must be a JSON object");
    auto count = [&](const char* key, std::size_t& field) {
        if (!j.contains(key)) return;
        if (!is_count(j.at(key))) throw ConfigError(std::string("synthetic.") + key + " must be an integer >= 0");
        field = j.at(key).get<std::size_t>();
    };
    auto real = [&](const char* key, double& field) {
        if (!j.contains(key)) return;
        if (!j.at(key).is_number()) throw ConfigError(std::string("synthetic.") + key + " must be a number");
        field = j.at(key).get<double>();
    };
    if (j.contains("seed")) {
        if (!is_count(j.at("seed"))) throw ConfigError("synthetic.seed must be an integer >= 0");
        s.seed = j.at("seed").get<std::uint64_t>();
    }
    count("stocks", s.stocks);
    count("periods", s.periods);
    if (j.contains("frequency")) {
        if (!j.at("frequency").is_string()) throw ConfigError("synthetic.frequency must be a string");
        s.frequency = parse_frequency(j.at("frequency").get<std::string>());
    }
    real("drift", s.drift);
    real("volatility", s.volatility);
    real("signal_strength", s.signal_strength);
    if (j.contains("signal_rule")) {
        if (!j.at("signal_rule").is_string()) throw ConfigError("synthetic.signal_rule must be a string");
        s.signal_rule = j.at("signal_rule").get<std::string>();
    }
    real("turnover_level", s.turnover_level);
    real("turnover_dispersion", s.turnover_dispersion);
    real("turnover_noise", s.turnover_noise);
    s.validate();
}

SyntheticUniverse generate_universe(const SyntheticSpec& spec) {
    spec.validate();
    const std::size_t n = spec.stocks;
    const std::size_t periods = spec.periods + 1;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    SyntheticUniverse u;
    const std::size_t width = std::to_string(n).size();
    for (std::size_t i = 0; i < n; ++i) {
        std::string id = std::to_string(i + 1);
        u.tickers.push_back("S" + std::string(width - id.size(), '0') + id);
    }

    std::vector<double> log_base(n);
    std::vector<double> close(n);
    for (std::size_t i = 0; i < n; ++i) {
        log_base[i] = std::log(spec.turnover_level) + spec.turnover_dispersion * normal(rng);
        close[i] = 10.0 * std::exp(0.3 * normal(rng));
    }
    auto draw_turnover = [&] {
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = std::exp(log_base[i] + spec.turnover_noise * normal(rng));
        return v;
    };

    u.returns.assign(periods, std::vector<double>(n, 0.0));
    u.scores.assign(periods, {});
    u.turnover.push_back(draw_turnover());
    for (std::size_t t = 1; t < periods; ++t) {
        std::vector<double> log_prev(n);
        for (std::size_t i = 0; i < n; ++i) log_prev[i] = std::log(u.turnover[t - 1][i]);
        const auto z = zscore(log_prev);
        auto& score = u.scores[t];
        score.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            score[i] = spec.signal_strength * z[i] + (1.0 - spec.signal_strength) * normal(rng);
        }
        std::vector<double> draws(n);
        for (double& d : draws) d = std::max(kReturnFloor, spec.drift + spec.volatility * normal(rng));
        std::sort(draws.begin(), draws.end());
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
        for (std::size_t k = 0; k < n; ++k) u.returns[t][order[k]] = draws[k];
        u.turnover.push_back(draw_turnover());
    }

    const auto calendar = business_calendar(periods, spec.frequency);
    for (std::size_t i = 0; i < n; ++i) {
        auto& bars = u.panel.bars[u.tickers[i]];
        const auto& seed_day = calendar[0].back();
        bars.push_back(DailyBar{u.tickers[i], Date{seed_day}, close[i], u.turnover[0][i]});
        for (std::size_t t = 1; t < periods; ++t) {
            const auto& days = calendar[t];
            const std::size_t m = days.size();
            const double start = close[i];
            const double target_log = std::log1p(u.returns[t][i]);
            const double daily_sd = spec.volatility / std::sqrt(static_cast<double>(m));
            std::vector<double> wiggle(m);
            for (double& w : wiggle) w = daily_sd * normal(rng);
            const double mean_wiggle = std::accumulate(wiggle.begin(), wiggle.end(), 0.0) / static_cast<double>(m);
            double path = 0.0;
            for (std::size_t d = 0; d < m; ++d) {
                path += target_log / static_cast<double>(m) + wiggle[d] - mean_wiggle;
                const double c = d + 1 == m ? start * (1.0 + u.returns[t][i]) : start * std::exp(path);
                bars.push_back(DailyBar{u.tickers[i], Date{days[d]}, c, u.turnover[t][i] / static_cast<double>(m)});
            }
            close[i] = start * (1.0 + u.returns[t][i]);
        }
    }
    return u;
}

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw ContractError("spearman needs two equal series of length >= 2");
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    const double mean = (static_cast<double>(x.size()) + 1.0) / 2.0;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (rx[i] - mean) * (ry[i] - mean);
        sxx += (rx[i] - mean) * (rx[i] - mean);
        syy += (ry[i] - mean) * (ry[i] - mean);
    }
    if (sxx == 0.0 || syy == 0.0) throw UndefinedMetricError("spearman of a constant series");
    return sxy / std::sqrt(sxx * syy);
}

} // namespace quantformer
