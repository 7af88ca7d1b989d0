#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "quantformer/errors.hpp"
#include "quantformer/metrics.hpp"
#include "quantformer/strategy.hpp"
#include "quantformer/synthetic.hpp"
#include "accounting_scenario.hpp"
#include "test_support.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

using namespace quantformer;
using quantformer::testing::first_column;
using quantformer::testing::make_series;
using quantformer::testing::hand_equity;
using quantformer::testing::scripted_predictor;
using quantformer::testing::two_stock_series;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

LabelVector label(std::size_t bins, std::optional<std::size_t> active) {
    LabelVector l{std::vector<double>(bins, 0.0)};
    if (active) l.y[*active] = 1.0;
    return l;
}

StrategyConfig config_with(std::vector<int> phi, double fee = 0.0, double cash = 1.0) {
    StrategyConfig c;
    c.selection = std::move(phi);
    c.fee_rate = fee;
    c.initial_cash = cash;
    return c;
}

} // namespace

TEST_CASE("sort label: five distinct predictions fill five bins") {
    const auto labels = sort_label(first_column({0.5, 0.1, 0.3, 0.2, 0.4}, 5), LabelScheme{5, 0.2, false});
    std::vector<std::size_t> bins;
    for (const auto& l : labels) bins.push_back(l.active_bin().value());
    CHECK(bins == std::vector<std::size_t>{4, 0, 2, 1, 3});
}

TEST_CASE("sort label: ties all land in the top bin") {
    for (const auto& l : sort_label(first_column({0.3, 0.3, 0.3, 0.3}), LabelScheme{})) {
        CHECK(l.active_bin() == 2u);
    }
    CHECK_THROWS_AS(sort_label(Tensor(0, 3), LabelScheme{}), ContractError);
    CHECK_THROWS_AS(sort_label(Tensor(4, 5), LabelScheme{}), ContractError);
}

TEST_CASE("sort label: 100 random predictions match a brute-force ranking") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> p(100);
    for (double& x : p) x = u(rng);
    const auto labels = sort_label(first_column(p), LabelScheme{3, 0.2, false});
    for (std::size_t i = 0; i < p.size(); ++i) {
        std::size_t rank = 0;
        for (double q : p) rank += q <= p[i] ? 1 : 0;
        std::optional<std::size_t> expected;
        if (rank <= 20) expected = 0;
        else if (rank > 40 && rank <= 60) expected = 1;
        else if (rank > 80) expected = 2;
        CHECK(labels[i].active_bin() == expected);
    }
}

TEST_CASE("sort label: prediction distributions overload") {
    std::vector<PredictionDistribution> preds{{{0.1, 0.45, 0.45}}, {{0.9, 0.05, 0.05}}};
    const auto labels = sort_label(preds, LabelScheme{});
    CHECK(labels[0].active_bin() == 1u);
    CHECK(labels[1].active_bin() == 2u);
}

TEST_CASE("weights: selected stocks share equally, none means cash") {
    const auto c = config_with({1, 0, 0});
    const std::vector<LabelVector> one{label(3, 0), label(3, 1), label(3, 2), label(3, {}), label(3, 2)};
    CHECK(compute_weights({}, one, c) == std::vector<double>{1, 0, 0, 0, 0});
    const std::vector<LabelVector> two{label(3, 0), label(3, 1), label(3, 0)};
    CHECK(compute_weights({}, two, c) == std::vector<double>{0.5, 0, 0.5});
    const std::vector<LabelVector> none{label(3, 1), label(3, 2)};
    CHECK(compute_weights({}, none, c) == std::vector<double>{0, 0});
    const std::vector<LabelVector> absent{label(3, 0), LabelVector{}};
    CHECK(compute_weights({}, absent, c) == std::vector<double>{1, 0});
}

TEST_CASE("weights: persistence keeps only stocks selected twice in a row") {
    auto c = config_with({1, 1, 0});
    c.require_persistence = true;
    const std::vector<LabelVector> prev{label(3, 0), label(3, 2), label(3, 1), LabelVector{}};
    const std::vector<LabelVector> curr{label(3, 1), label(3, 0), label(3, 0), label(3, 0)};
    CHECK(compute_weights(prev, curr, c) == std::vector<double>{0.5, 0, 0.5, 0});
    CHECK(compute_weights({}, curr, c) == std::vector<double>{0.25, 0.25, 0.25, 0.25});
}

TEST_CASE("strategy config: validation and JSON") {
    CHECK_NOTHROW(config_with({0, 1, 0}).validate(3));
    CHECK_THROWS_AS(config_with({1, 1, 1}).validate(3), ConfigError);
    CHECK_THROWS_AS(config_with({0, 0, 0}).validate(3), ConfigError);
    CHECK_THROWS_AS(config_with({1, 0}).validate(3), ConfigError);
    CHECK_THROWS_AS(config_with({2, 0, 0}).validate(3), ConfigError);
    CHECK_THROWS_AS(config_with({1, 0, 0}, -0.1).validate(3), ConfigError);
    CHECK_THROWS_AS(config_with({1, 0, 0}, 0.0, 0.0).validate(3), ConfigError);
    auto c = config_with({0, 1, 1, 0, 0}, 0.002, 100.0);
    c.require_persistence = true;
    CHECK(nlohmann::json(c).get<StrategyConfig>() == c);
    CHECK(c.selected_bins() == 2);
}

TEST_CASE("step: held stock return flows into value") {
    const PortfolioState s{100.0, {1.0, 0.0}, false};
    const std::vector<double> w{1.0, 0.0}, r{0.10, -0.3};
    const PortfolioState next = step_portfolio(s, w, r, 0.0);
    CHECK(next.value == doctest::Approx(110.0).epsilon(1e-15));
    CHECK(next.weights == std::vector<double>{1.0, 0.0});
}

TEST_CASE("step: first allocation from cash pays the fee on traded notional") {
    const PortfolioState s{100.0, {0.0, 0.0}, false};
    const std::vector<double> w{1.0, 0.0}, zero{0.0, 0.0};
    CHECK(step_portfolio(s, w, zero, 0.003).value == doctest::Approx(99.7).epsilon(1e-15));
}

TEST_CASE("step: identity step and cash earn nothing") {
    const PortfolioState s{42.0, {0.25, 0.25}, false};
    const std::vector<double> w{0.25, 0.25}, zero{0.0, 0.0};
    CHECK(step_portfolio(s, w, zero, 0.003).value == 42.0);
    const std::vector<double> none{0.0, 0.0}, r{0.5, 0.5};
    const PortfolioState cash{42.0, {0.0, 0.0}, false};
    CHECK(step_portfolio(cash, none, r, 0.003).value == 42.0);
}

TEST_CASE("step: weights drift with returns and rebalancing trades the drift") {
    const PortfolioState s{1.0, {0.0, 0.0}, false};
    const std::vector<double> half{0.5, 0.5}, r{0.1, -0.1};
    const PortfolioState a = step_portfolio(s, half, r, 0.0);
    CHECK(a.value == doctest::Approx(1.0));
    CHECK(a.weights[0] == doctest::Approx(0.55));
    CHECK(a.weights[1] == doctest::Approx(0.45));
    const std::vector<double> zero{0.0, 0.0};
    const PortfolioState b = step_portfolio(a, half, zero, 0.01);
    CHECK(b.value == doctest::Approx(1.0 - 0.01 * 0.1).epsilon(1e-14));
}

TEST_CASE("step: contract violations and ruin") {
    const PortfolioState s{1.0, {0.0, 0.0}, false};
    const std::vector<double> ok{0.5, 0.5}, zero{0.0, 0.0};
    CHECK_THROWS_AS(step_portfolio(s, std::vector<double>{-0.1, 0.5}, zero, 0.0), ContractError);
    CHECK_THROWS_AS(step_portfolio(s, std::vector<double>{0.7, 0.5}, zero, 0.0), ContractError);
    CHECK_THROWS_AS(step_portfolio(s, ok, std::vector<double>{-1.0, 0.0}, 0.0), ContractError);
    CHECK_THROWS_AS(step_portfolio(s, ok, std::vector<double>{0.0}, 0.0), ContractError);
    const PortfolioState held{1.0, {1.0, 0.0}, false};
    const std::vector<double> flip{0.0, 1.0};
    CHECK(step_portfolio(held, flip, zero, 0.5).ruined);
}

TEST_CASE("backtest: two stocks, three periods match the hand account") {
    const PeriodSeries s = two_stock_series();
    for (double fee : {0.0, 0.003}) {
        const EquityCurve c =
            run_backtest(s, 20, 22, scripted_predictor(), LabelScheme{}, config_with({0, 1, 0}, fee));
        REQUIRE(c.points.size() == 4);
        CHECK(std::abs(c.points.back().value / hand_equity(fee) - 1.0) <= 1e-12);
        CHECK(c.points[1].weights == std::vector<double>{1, 0});
        CHECK(c.points[2].weights == std::vector<double>{0, 1});
        CHECK(c.points[3].weights == std::vector<double>{0, 0});
        CHECK(c.turnover() == std::vector<double>{0.5, 1.0, 0.5});
        CHECK(c.points[0].timestamp == s.period_labels[20]);
        CHECK(c.points[3].timestamp == s.period_labels[23]);
    }
    CHECK(hand_equity(0.0) == doctest::Approx(1.32));
}

TEST_CASE("backtest: uniform predictions tie into the top bin") {
    SyntheticSpec spec;
    spec.stocks = 12;
    spec.periods = 30;
    const PeriodSeries s = aggregate_period(generate_universe(spec).panel, Frequency::Monthly);
    const Predictor flat = [](const CrossSection& x) { return Tensor(x.windows.size(), 3, 1.0 / 3.0); };
    const EquityCurve bottom = run_backtest(s, 20, 28, flat, LabelScheme{}, config_with({1, 0, 0}, 0.003));
    for (const auto& p : bottom.points) CHECK(p.value == 1.0);
    const EquityCurve top = run_backtest(s, 20, 28, flat, LabelScheme{}, config_with({0, 0, 1}, 0.003));
    const EquityCurve uniform = uniform_benchmark(s, 20, 28, config_with({0, 0, 1}, 0.003));
    CHECK(top.values() == uniform.values());
}

TEST_CASE("backtest: weights are nonnegative and sum to 0 or 1 every period") {
    SyntheticSpec spec;
    spec.stocks = 25;
    spec.periods = 40;
    const PeriodSeries s = aggregate_period(generate_universe(spec).panel, Frequency::Monthly);
    const EquityCurve c = run_backtest(s, 20, 38, oracle_predictor(s, 3), LabelScheme{}, config_with({1, 0, 0}, 0.003));
    for (const auto& p : c.points) {
        double sum = 0.0;
        for (double w : p.weights) {
            CHECK(w >= 0.0);
            sum += w;
        }
        CHECK((std::abs(sum) <= 1e-12 || std::abs(sum - 1.0) <= 1e-12));
    }
    CHECK(turnover_series(c.weights_history()) == c.turnover());
}

TEST_CASE("backtest: oracle beats the uniform benchmark on planted data") {
    SyntheticSpec spec;
    spec.stocks = 30;
    spec.periods = 50;
    spec.signal_strength = 0.0;
    const PeriodSeries s = aggregate_period(generate_universe(spec).panel, Frequency::Monthly);
    const auto cfg = config_with({1, 0, 0}, 0.003);
    const EquityCurve oracle = run_backtest(s, 20, 48, oracle_predictor(s, 3), LabelScheme{}, cfg);
    const EquityCurve uniform = uniform_benchmark(s, 20, 48, cfg);
    CHECK(oracle.points.back().value > uniform.points.back().value);
}

TEST_CASE("backtest: a decision time without a section is a gap error") {
    std::vector<std::vector<double>> r(3, std::vector<double>(26, 0.01)), v = r;
    for (auto& row : r) row[0] = kNaN;
    r[0][15] = kNaN; // two of three tickers miss t=21..
    r[1][15] = kNaN;
    const PeriodSeries s = make_series(r, v);
    try {
        uniform_benchmark(s, 20, 24, config_with({1, 0, 0}));
        FAIL("expected GapError");
    } catch (const GapError& e) {
        CHECK(std::string(e.what()).find("period 20") != std::string::npos);
    }
    CHECK_THROWS_AS(uniform_benchmark(s, 20, 25, config_with({1, 0, 0})), ContractError);
}

TEST_CASE("equity and weights csv round trip") {
    const PeriodSeries s = two_stock_series();
    const EquityCurve c = run_backtest(s, 20, 22, scripted_predictor(), LabelScheme{}, config_with({0, 1, 0}, 0.003));
    std::stringstream eq, w;
    write_equity_csv(c, eq);
    write_weights_csv(c, w);
    CHECK(eq.str().rfind("timestamp,value,period_return,turnover\n", 0) == 0);
    CHECK(w.str().rfind("timestamp,T100,T101\n", 0) == 0);
    const EquityCurve back = read_equity_csv(eq, w);
    CHECK(back.tickers == c.tickers);
    CHECK(back.values() == c.values());
    CHECK(back.returns() == c.returns());
    CHECK(back.weights_history() == c.weights_history());
    CHECK(back.turnover() == c.turnover());
}

TEST_CASE("equity csv: out-of-order timestamps are rejected") {
    std::istringstream eq("timestamp,value,period_return,turnover\n2020-02,1,0,0\n2020-01,1,0,0\n");
    std::istringstream w("timestamp,A\n2020-02,0\n2020-01,0\n");
    CHECK_THROWS_AS(read_equity_csv(eq, w), ParseError);
}
