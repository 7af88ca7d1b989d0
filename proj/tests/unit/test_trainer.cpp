#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "quantformer/errors.hpp"
#include "quantformer/synthetic.hpp"
#include "quantformer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

using namespace quantformer;

namespace {

std::vector<LabeledSample> planted_samples(std::size_t stocks, std::size_t periods, std::uint64_t seed = 4) {
    SyntheticSpec spec;
    spec.seed = seed;
    spec.stocks = stocks;
    spec.periods = periods;
    const PeriodSeries series = aggregate_period(generate_universe(spec).panel, Frequency::Monthly);
    return build_dataset(labeled_sections(series), LabelScheme{}).samples;
}

const std::vector<LabeledSample>& shared_samples() {
    static const auto samples = planted_samples(20, 40);
    return samples;
}

ModelConfig tiny_model() {
    ModelConfig c = ModelConfig::make(4, 2, 1, 3);
    c.seed = 3;
    return c;
}

TrainConfig quick_train(std::size_t epochs = 3) {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = 32;
    t.learning_rate = 0.01;
    return t;
}

} // namespace

TEST_CASE("split: partition by decision time with warnings for empty sides") {
    const auto& samples = shared_samples();
    std::set<std::size_t> times;
    for (const auto& s : samples) times.insert(s.decision_time);
    const std::size_t last = *times.rbegin();

    std::ostringstream warn;
    const TimeSplit all = split_by_time(samples, last, &warn);
    CHECK(all.test.empty());
    CHECK(all.train.size() == samples.size());
    CHECK(warn.str().find("no test samples") != std::string::npos);

    const std::size_t cutoff = 30;
    const TimeSplit mixed = split_by_time(samples, cutoff);
    CHECK(mixed.train.size() + mixed.test.size() == samples.size());
    std::size_t max_train = 0, min_test = 1000;
    for (const auto& s : mixed.train) max_train = std::max(max_train, s.decision_time);
    for (const auto& s : mixed.test) min_test = std::min(min_test, s.decision_time);
    CHECK(max_train <= cutoff);
    CHECK(min_test > cutoff);
}

TEST_CASE("split: 120 synthetic periods cut at 100 keep only earlier decisions") {
    const auto samples = planted_samples(10, 120, 8);
    const TimeSplit s = split_by_time(samples, 100);
    // Decisions run 20..119; each keeps 6 of 10 stocks (two bins of 2, top bin of 2).
    std::size_t expected = 0;
    for (const auto& x : samples) expected += x.decision_time <= 100 ? 1 : 0;
    CHECK(s.train.size() == expected);
    CHECK(s.train.size() == (100 - 20 + 1) * 6);
}

TEST_CASE("train: zero learning rate leaves parameters untouched") {
    TrainConfig t = quick_train();
    t.learning_rate = 0.0;
    const ModelConfig m = tiny_model();
    const TrainResult r = train(shared_samples(), m, t);
    CHECK(r.params == ModelParameters::initialize(m));
    REQUIRE(r.loss_history.size() == 3);
    CHECK(r.loss_history[0] == doctest::Approx(r.loss_history[1]).epsilon(1e-14));
    CHECK(r.loss_history[1] == doctest::Approx(r.loss_history[2]).epsilon(1e-14));
}

TEST_CASE("train: planted signal lowers the loss and every entry is finite") {
    const TrainResult r = train(shared_samples(), tiny_model(), quick_train(8));
    REQUIRE(r.loss_history.size() == 8);
    for (double l : r.loss_history) CHECK(std::isfinite(l));
    CHECK(r.loss_history.back() < r.loss_history.front());
}

TEST_CASE("train: identical seeds give identical histories and parameters") {
    const TrainResult a = train(shared_samples(), tiny_model(), quick_train());
    const TrainResult b = train(shared_samples(), tiny_model(), quick_train());
    CHECK(a.loss_history == b.loss_history);
    CHECK(a.params == b.params);
    TrainConfig other = quick_train();
    other.shuffle_seed = 99;
    CHECK(train(shared_samples(), tiny_model(), other).loss_history != a.loss_history);
}

TEST_CASE("train: a sample past the cutoff aborts the run") {
    TrainConfig t = quick_train(1);
    t.cutoff = 25;
    CHECK_THROWS_AS(train(shared_samples(), tiny_model(), t), ContractError);
    t.cutoff = 1000;
    CHECK_NOTHROW(train(shared_samples(), tiny_model(), t));
}

TEST_CASE("train: divergence names the epoch") {
    const ModelConfig m = tiny_model();
    ModelParameters p = ModelParameters::initialize(m);
    p.at("head.bias")[0] = std::numeric_limits<double>::infinity();
    try {
        train_from(shared_samples(), p, m, quick_train(2));
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("epoch 0") != std::string::npos);
    }
}

TEST_CASE("train: empty set and bad config are rejected") {
    CHECK_THROWS_AS(train({}, tiny_model(), quick_train()), ContractError);
    TrainConfig t = quick_train();
    t.epochs = 0;
    CHECK_THROWS_AS(train(shared_samples(), tiny_model(), t), ConfigError);
    CHECK_THROWS_AS(nlohmann::json({{"batch_size", 0}}).get<TrainConfig>(), ConfigError);
    CHECK_THROWS_AS(nlohmann::json({{"learning_rate", -1.0}}).get<TrainConfig>(), ConfigError);
}

TEST_CASE("train config: JSON round trip") {
    TrainConfig t = quick_train(11);
    t.shuffle_seed = 123;
    t.cutoff = 44;
    const TrainConfig back = nlohmann::json(t).get<TrainConfig>();
    CHECK(back == t);
    const TrainConfig defaults = nlohmann::json::object().get<TrainConfig>();
    CHECK(defaults.epochs == 50);
    CHECK(defaults.batch_size == 64);
    CHECK(defaults.learning_rate == 0.001);
}

TEST_CASE("loss history csv") {
    std::ostringstream out;
    write_loss_history_csv({0.5, 0.25}, out);
    CHECK(out.str() == "epoch,mean_mse\n1,0.5\n2,0.25\n");
}

TEST_CASE("evaluation: MSE and accuracy agree with direct forward passes") {
    const ModelConfig m = tiny_model();
    const ModelParameters p = ModelParameters::initialize(m);
    const auto& samples = shared_samples();
    double mse = 0.0;
    std::size_t hits = 0, labeled = 0;
    for (const auto& s : samples) {
        const auto probs = forward(s.features, p, m).probabilities;
        for (std::size_t c = 0; c < 3; ++c) mse += (probs[c] - s.target.y[c]) * (probs[c] - s.target.y[c]);
        if (const auto bin = s.target.active_bin()) {
            ++labeled;
            const auto best = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
            hits += best == *bin ? 1 : 0;
        }
    }
    CHECK(evaluate_mse(samples, p, m) == doctest::Approx(mse / static_cast<double>(samples.size())).epsilon(1e-12));
    CHECK(bin_accuracy(samples, p, m) == doctest::Approx(static_cast<double>(hits) / static_cast<double>(labeled)));
}

TEST_CASE("grid: default grid spans d, H and L") {
    const auto grid = default_grid(Candidate{tiny_model(), quick_train()});
    REQUIRE(grid.size() == 8);
    std::set<std::tuple<std::size_t, std::size_t, std::size_t>> combos;
    for (const auto& c : grid) {
        combos.insert({c.model.d, c.model.heads, c.model.layers});
        CHECK(c.model.ffn_width == 4 * c.model.d);
        CHECK(c.model.classes == 3);
    }
    CHECK(combos.size() == 8);
    CHECK(combos.count({16, 16, 6}) == 1);
    CHECK(combos.count({8, 4, 2}) == 1);
}

TEST_CASE("grid: single candidate comes back unchanged") {
    const Candidate c{tiny_model(), quick_train()};
    const auto r = grid_search({c}, shared_samples(), shared_samples());
    CHECK(r.best_index == 0);
    CHECK(r.best.model == c.model);
    CHECK(r.best.train == c.train);
}

TEST_CASE("grid: a learning candidate beats a frozen one, ties go first") {
    const TimeSplit parts = validation_split(shared_samples());
    CHECK_FALSE(parts.test.empty());
    Candidate frozen{tiny_model(), quick_train(6)};
    frozen.train.learning_rate = 0.0;
    Candidate learning{tiny_model(), quick_train(6)};
    const auto r = grid_search({frozen, learning}, parts.train, parts.test);
    CHECK(r.best_index == 1);
    REQUIRE(r.validation_mse.size() == 2);
    CHECK(r.validation_mse[1] < r.validation_mse[0]);

    const auto tie = grid_search({learning, learning}, parts.train, parts.test);
    CHECK(tie.best_index == 0);
    CHECK(tie.validation_mse[0] == tie.validation_mse[1]);
}

TEST_CASE("validation split: trailing tenth of decision times") {
    const auto& samples = shared_samples();
    std::set<std::size_t> times;
    for (const auto& s : samples) times.insert(s.decision_time);
    const TimeSplit parts = validation_split(samples);
    std::set<std::size_t> val_times;
    for (const auto& s : parts.test) val_times.insert(s.decision_time);
    CHECK(val_times.size() == std::max<std::size_t>(1, times.size() / 10));
    CHECK(*val_times.begin() > parts.train.back().decision_time);
}
