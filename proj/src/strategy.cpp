#include "quantformer/strategy.hpp"

#include "quantformer/errors.hpp"
#include "quantformer/text_io.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>

namespace quantformer {

namespace {

constexpr double kWeightSlack = 1e-12;

using TargetRule = std::function<std::vector<double>(const CrossSection&,
                                                     const std::map<std::string, std::size_t>&)>;

EquityCurve simulate(const PeriodSeries& series, std::size_t first, std::size_t last,
                     const StrategyConfig& config, const TargetRule& rule) {
    if (first > last) throw ContractError("backtest range is empty");
    if (last + 1 >= series.period_count()) {
        throw ContractError("backtest decision " + std::to_string(last) +
                            " has no following period to realize");
    }
    EquityCurve curve;
    std::map<std::string, std::size_t> index;
    for (const auto& [ticker, recs] : series.records) {
        index.emplace(ticker, curve.tickers.size());
        curve.tickers.push_back(ticker);
    }
    const std::size_t n = curve.tickers.size();
    PortfolioState state{config.initial_cash, std::vector<double>(n, 0.0), false};
    curve.points.push_back(
        EquityPoint{series.period_labels[first], state.value, 0.0, 0.0, std::vector<double>(n, 0.0)});

    for (std::size_t t = first; t <= last; ++t) {
        const auto section = normalized_section(series, t);
        if (!section) {
            throw GapError("no tradable cross-section at period " + std::to_string(t) + " (" +
                           series.period_labels[t] + ")");
        }
        const std::vector<double> target = rule(*section, index);
        std::vector<double> realized(n, 0.0);
        for (std::size_t k = 0; k < n; ++k) {
            if (const auto r = series.return_at(curve.tickers[k], t + 1)) realized[k] = *r;
        }
        const auto& prev = curve.points.back().weights;
        double turnover = 0.0;
        for (std::size_t k = 0; k < n; ++k) turnover += std::abs(target[k] - prev[k]);
        turnover *= 0.5;

        const double before = state.value;
        state = step_portfolio(state, target, realized, config.fee_rate);
        curve.points.push_back(EquityPoint{series.period_labels[t + 1], state.value,
                                           state.value / before - 1.0, turnover, target});
        if (state.ruined) {
            curve.ruined = true;
            break;
        }
    }
    return curve;
}

} // namespace

std::size_t StrategyConfig::selected_bins() const {
    return static_cast<std::size_t>(std::count(selection.begin(), selection.end(), 1));
}

void StrategyConfig::validate(int bins) const {
    if (static_cast<int>(selection.size()) != bins) {
        throw ConfigError("strategy.phi must have one entry per label bin (" + std::to_string(bins) +
                          "), got " + std::to_string(selection.size()));
    }
    for (int s : selection) {
        if (s != 0 && s != 1) throw ConfigError("strategy.phi entries must be 0 or 1");
    }
    const std::size_t b = selected_bins();
    if (b < 1 || b >= selection.size()) {
        throw ConfigError("strategy.phi must select between 1 and " + std::to_string(bins - 1) + " bins");
    }
    if (!(fee_rate >= 0.0) || !std::isfinite(fee_rate)) throw ConfigError("strategy.fee_rate must be >= 0");
    if (!(initial_cash > 0.0) || !std::isfinite(initial_cash)) {
        throw ConfigError("strategy.initial_cash must be > 0");
    }
}

void to_json(nlohmann::json& j, const StrategyConfig& c) {
    j = nlohmann::json{{"phi", c.selection},
                       {"fee_rate", c.fee_rate},
                       {"initial_cash", c.initial_cash},
                       {"require_persistence", c.require_persistence}};
}

void from_json(const nlohmann::json& j, StrategyConfig& c) {
    if (!j.is_object()) throw ConfigError("strategy config must be a JSON object");
    if (j.contains("phi")) {
        if (!j.at("phi").is_array()) throw ConfigError("strategy.phi must be an array of 0/1");
        c.selection.clear();
        for (const auto& e : j.at("phi")) {
            if (!e.is_number_integer()) throw ConfigError("strategy.phi must be an array of 0/1");
            c.selection.push_back(e.get<int>());
        }
    }
    auto real = [&](const char* key, double& field) {
        if (!j.contains(key)) return;
        if (!j.at(key).is_number()) throw ConfigError(std::string("strategy.") + key + " must be a number");
        field = j.at(key).get<double>();
    };
    real("fee_rate", c.fee_rate);
    real("initial_cash", c.initial_cash);
    if (j.contains("require_persistence")) {
        if (!j.at("require_persistence").is_boolean()) {
            throw ConfigError("strategy.require_persistence must be a boolean");
        }
        c.require_persistence = j.at("require_persistence").get<bool>();
    }
}

std::vector<LabelVector> sort_label(const Tensor& probabilities, const LabelScheme& scheme) {
    if (probabilities.rows() == 0) throw ContractError("sort_label of an empty section");
    if (probabilities.cols() != static_cast<std::size_t>(scheme.bins)) {
        throw ContractError("sort_label: prediction width does not match the label scheme");
    }
    std::vector<double> first(probabilities.rows());
    for (std::size_t i = 0; i < first.size(); ++i) first[i] = probabilities(i, 0);
    std::vector<LabelVector> out;
    out.reserve(first.size());
    for (double psi : empirical_quantiles(first)) out.push_back(assign_label(psi, scheme));
    return out;
}

std::vector<LabelVector> sort_label(std::span<const PredictionDistribution> predictions,
                                    const LabelScheme& scheme) {
    std::vector<std::vector<double>> rows;
    rows.reserve(predictions.size());
    for (const auto& p : predictions) rows.push_back(p.probabilities);
    if (rows.empty()) throw ContractError("sort_label of an empty section");
    return sort_label(Tensor::from_rows(rows), scheme);
}

std::vector<double> compute_weights(std::span<const LabelVector> previous,
                                    std::span<const LabelVector> current,
                                    const StrategyConfig& config) {
    if (!previous.empty() && previous.size() != current.size()) {
        throw ContractError("compute_weights: previous and current labels differ in length");
    }
    auto picked = [&](const LabelVector& label) {
        if (label.y.empty()) return 0.0;
        if (label.y.size() != config.selection.size()) {
            throw ContractError("compute_weights: label width does not match phi");
        }
        double s = 0.0;
        for (std::size_t i = 0; i < label.y.size(); ++i) s += config.selection[i] * label.y[i];
        return s;
    };
    std::vector<double> w(current.size(), 0.0);
    double total = 0.0;
    for (std::size_t n = 0; n < current.size(); ++n) {
        double s = picked(current[n]);
        if (config.require_persistence && !previous.empty()) s *= picked(previous[n]);
        w[n] = s;
        total += s;
    }
    if (total > 0.0) {
        for (double& x : w) x /= total;
    }
    return w;
}

PortfolioState step_portfolio(const PortfolioState& state, std::span<const double> target,
                              std::span<const double> returns, double fee_rate) {
    const std::size_t n = state.weights.size();
    if (target.size() != n || returns.size() != n) {
        throw ContractError("step_portfolio: weights and returns must cover the same stocks");
    }
    if (state.ruined) throw ContractError("step_portfolio on a ruined portfolio");
    if (!(fee_rate >= 0.0)) throw ContractError("step_portfolio: negative fee rate");
    double invested = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (target[k] < 0.0) throw ContractError("step_portfolio: negative weight");
        if (!(returns[k] > -1.0) || !std::isfinite(returns[k])) {
            throw ContractError("step_portfolio: returns must be finite and > -1");
        }
        invested += target[k];
    }
    if (invested > 1.0 + kWeightSlack) throw ContractError("step_portfolio: weights sum above 1");

    double traded = 0.0;
    for (std::size_t k = 0; k < n; ++k) traded += std::abs(target[k] - state.weights[k]);
    const double after_fee = state.value - fee_rate * traded * state.value;

    double gross = 1.0 - invested;
    for (std::size_t k = 0; k < n; ++k) gross += target[k] * (1.0 + returns[k]);

    PortfolioState next{after_fee * gross, std::vector<double>(n, 0.0), false};
    if (!(next.value > 0.0)) {
        next.ruined = true;
        return next;
    }
    for (std::size_t k = 0; k < n; ++k) next.weights[k] = target[k] * (1.0 + returns[k]) / gross;
    return next;
}

std::vector<double> EquityCurve::values() const {
    std::vector<double> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(p.value);
    return out;
}

std::vector<double> EquityCurve::returns() const {
    std::vector<double> out;
    for (std::size_t i = 1; i < points.size(); ++i) out.push_back(points[i].period_return);
    return out;
}

std::vector<double> EquityCurve::turnover() const {
    std::vector<double> out;
    for (std::size_t i = 1; i < points.size(); ++i) out.push_back(points[i].turnover);
    return out;
}

std::vector<std::vector<double>> EquityCurve::weights_history() const {
    std::vector<std::vector<double>> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(p.weights);
    return out;
}

Predictor model_predictor(const ModelParameters& params, const ModelConfig& config) {
    return [params, config](const CrossSection& section) {
        std::vector<Tensor> windows;
        windows.reserve(section.windows.size());
        for (const auto& w : section.windows) windows.push_back(w.features);
        return forward_batch(windows, params, config);
    };
}

Predictor oracle_predictor(const PeriodSeries& series, std::size_t classes) {
    if (classes < 2) throw ContractError("oracle_predictor needs at least two classes");
    return [&series, classes](const CrossSection& section) {
        const std::size_t n = section.windows.size();
        std::vector<std::size_t> known;
        std::vector<double> next;
        for (std::size_t i = 0; i < n; ++i) {
            if (const auto r = series.return_at(section.windows[i].ticker, section.decision_time + 1)) {
                known.push_back(i);
                next.push_back(*r);
            }
        }
        std::vector<double> first(n, 1.0);
        if (!next.empty()) {
            const auto psi = empirical_quantiles(next);
            for (std::size_t k = 0; k < known.size(); ++k) first[known[k]] = 1.0 - psi[k];
        }
        Tensor probs(n, classes);
        const double rest = 1.0 / static_cast<double>(classes - 1);
        for (std::size_t i = 0; i < n; ++i) {
            probs(i, 0) = first[i];
            for (std::size_t c = 1; c < classes; ++c) probs(i, c) = (1.0 - first[i]) * rest;
        }
        return probs;
    };
}

EquityCurve run_backtest(const PeriodSeries& series, std::size_t first, std::size_t last,
                         const Predictor& predictor, const LabelScheme& scheme,
                         const StrategyConfig& config) {
    scheme.validate();
    config.validate(scheme.bins);
    std::vector<LabelVector> previous;
    return simulate(series, first, last, config,
                    [&](const CrossSection& section, const std::map<std::string, std::size_t>& index) {
                        const Tensor probs = predictor(section);
                        if (probs.rows() != section.windows.size()) {
                            throw ContractError("predictor returned the wrong number of rows");
                        }
                        const auto sorted = sort_label(probs, scheme);
                        std::vector<LabelVector> current(index.size());
                        for (std::size_t i = 0; i < sorted.size(); ++i) {
                            current[index.at(section.windows[i].ticker)] = sorted[i];
                        }
                        auto w = compute_weights(previous, current, config);
                        previous = std::move(current);
                        return w;
                    });
}

EquityCurve uniform_benchmark(const PeriodSeries& series, std::size_t first, std::size_t last,
                              const StrategyConfig& config) {
    return simulate(series, first, last, config,
                    [](const CrossSection& section, const std::map<std::string, std::size_t>& index) {
                        std::vector<double> w(index.size(), 0.0);
                        const double share = 1.0 / static_cast<double>(section.windows.size());
                        for (const auto& win : section.windows) w[index.at(win.ticker)] = share;
                        return w;
                    });
}

void write_equity_csv(const EquityCurve& curve, std::ostream& out) {
    out << "timestamp,value,period_return,turnover\n";
    for (const auto& p : curve.points) {
        out << p.timestamp << ',' << format_double(p.value) << ',' << format_double(p.period_return)
            << ',' << format_double(p.turnover) << '\n';
    }
}

void write_weights_csv(const EquityCurve& curve, std::ostream& out) {
    out << "timestamp";
    for (const auto& t : curve.tickers) out << ',' << t;
    out << '\n';
    for (const auto& p : curve.points) {
        out << p.timestamp;
        for (double w : p.weights) out << ',' << format_double(w);
        out << '\n';
    }
}

EquityCurve read_equity_csv(std::istream& equity, std::istream& weights) {
    EquityCurve curve;
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(equity, line) || trim(line) != "timestamp,value,period_return,turnover") {
        throw ParseError(line_no, "bad equity header");
    }
    while (std::getline(equity, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto f = split_fields(trim(line));
        if (f.size() != 4) throw ParseError(line_no, "expected 4 fields");
        const auto value = parse_double(f[1]);
        const auto ret = parse_double(f[2]);
        const auto tr = parse_double(f[3]);
        if (!value || !ret || !tr) throw ParseError(line_no, "malformed equity row");
        if (!curve.points.empty() && std::string(f[0]) <= curve.points.back().timestamp) {
            throw ParseError(line_no, "timestamps must be strictly increasing");
        }
        curve.points.push_back(EquityPoint{std::string(f[0]), *value, *ret, *tr, {}});
    }
    if (curve.points.empty()) throw DataError("equity file has no rows");

    line_no = 1;
    if (!std::getline(weights, line)) throw ParseError(line_no, "missing weights header");
    const auto header = split_fields(trim(line));
    if (header.empty() || header[0] != "timestamp") throw ParseError(line_no, "bad weights header");
    for (std::size_t i = 1; i < header.size(); ++i) curve.tickers.emplace_back(header[i]);
    std::size_t row = 0;
    while (std::getline(weights, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto f = split_fields(trim(line));
        if (f.size() != header.size()) throw ParseError(line_no, "weights row width differs from header");
        if (row >= curve.points.size() || f[0] != curve.points[row].timestamp) {
            throw DataError("weights rows do not line up with the equity rows");
        }
        auto& w = curve.points[row].weights;
        for (std::size_t i = 1; i < f.size(); ++i) {
            const auto x = parse_double(f[i]);
            if (!x) throw ParseError(line_no, "malformed weight");
            w.push_back(*x);
        }
        ++row;
    }
    if (row != curve.points.size()) throw DataError("weights file has fewer rows than the equity file");
    const double last = curve.points.back().value;
    curve.ruined = !(last > 0.0);
    return curve;
}

} // namespace quantformer
