#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "quantformer/errors.hpp"
#include "quantformer/model.hpp"
#include "test_support.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

using namespace quantformer;
using quantformer::testing::central_difference;
using quantformer::testing::max_relative_error;
using quantformer::testing::random_tensor;

namespace {

ModelConfig small_config(Pooling pooling = Pooling::Mean) {
    ModelConfig c = ModelConfig::make(4, 2, 1, 3);
    c.pooling = pooling;
    c.seed = 99;
    return c;
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& order) {
    Tensor out(x.rows(), x.cols());
    for (std::size_t r = 0; r < order.size(); ++r) {
        std::copy(x.row(order[r]).begin(), x.row(order[r]).end(), out.row(r).begin());
    }
    return out;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

} // namespace

TEST_CASE("embed: zero input gives the bias on every row") {
    const ModelConfig config = ModelConfig::make(5, 1, 1, 3);
    ModelParameters params = ModelParameters::initialize(config);
    params.at("embed.bias") = Tensor::row_vector({0.1, -0.2, 0.3, 0.4, -0.5});
    const Tensor out = embed(Tensor(20, 2), params);
    CHECK(out.rows() == 20);
    CHECK(out.cols() == 5);
    for (std::size_t r = 0; r < 20; ++r) {
        for (std::size_t c = 0; c < 5; ++c) CHECK(out(r, c) == params.at("embed.bias")[c]);
    }
}

TEST_CASE("embed: zero weights and bias annihilate any input") {
    const ModelConfig config = ModelConfig::make(16, 1, 1, 3);
    ModelParameters params = ModelParameters::initialize(config);
    params.at("embed.weight").fill(0.0);
    params.at("embed.bias").fill(0.0);
    std::mt19937_64 rng(1);
    const Tensor out = embed(random_tensor(20, 2, rng), params);
    CHECK(out.rows() == 20);
    CHECK(out.cols() == 16);
    for (double v : out.values()) CHECK(v == 0.0);
    CHECK_THROWS_AS(embed(Tensor(20, 3), params), ContractError);
}

TEST_CASE("attention: zero value projections give a zero output") {
    ModelConfig config = ModelConfig::make(8, 4, 1, 3);
    ModelParameters params = ModelParameters::initialize(config);
    for (std::size_t h = 0; h < config.heads; ++h) params.at(value_name(0, h)).fill(0.0);
    std::mt19937_64 rng(2);
    const Tensor out = multi_head_attention(random_tensor(20, 8, rng), params, config, 0);
    for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("attention: 16 heads of width 3 concatenate to 48 and project back to 16") {
    const ModelConfig config = ModelConfig::make(16, 16, 1, 3);
    const ModelParameters params = ModelParameters::initialize(config);
    CHECK(config.head_dim == 3);
    CHECK(params.at(block_name(0, "out.weight")).rows() == 48);
    CHECK(params.at(block_name(0, "out.weight")).cols() == 16);
    CHECK(params.at(query_name(0, 15)).rows() == 16);
    CHECK(params.at(query_name(0, 15)).cols() == 3);
    std::mt19937_64 rng(3);
    const Tensor out = multi_head_attention(random_tensor(20, 16, rng), params, config, 0);
    CHECK(out.rows() == 20);
    CHECK(out.cols() == 16);
}

TEST_CASE("attention: identical input rows give identical output rows") {
    const ModelConfig config = ModelConfig::make(6, 3, 1, 3);
    const ModelParameters params = ModelParameters::initialize(config);
    std::mt19937_64 rng(4);
    const Tensor token = random_tensor(1, 6, rng);
    Tensor x(20, 6);
    for (std::size_t r = 0; r < 20; ++r) std::copy(token.values().begin(), token.values().end(), x.row(r).begin());
    const Tensor out = multi_head_attention(x, params, config, 0);
    // With equal tokens attention is uniform, so each row is v(token) W^O.
    Tensor heads(1, config.heads * config.head_dim);
    for (std::size_t h = 0; h < config.heads; ++h) {
        const Tensor v = matmul(token, params.at(value_name(0, h)));
        for (std::size_t c = 0; c < config.head_dim; ++c) heads[h * config.head_dim + c] = v[c];
    }
    const Tensor expected = matmul(heads, params.at(block_name(0, "out.weight")));
    for (std::size_t r = 0; r < 20; ++r) {
        for (std::size_t c = 0; c < 6; ++c) {
            CHECK(out(r, c) == out(0, c));
            CHECK(std::abs(out(r, c) - expected[c]) <= 1e-12);
        }
    }
}

TEST_CASE("forward: outputs are probability vectors for 1000 random inputs") {
    const ModelConfig config = ModelConfig::make(8, 2, 2, 3);
    const ModelParameters params = ModelParameters::initialize(config);
    std::mt19937_64 rng(5);
    std::vector<Tensor> windows;
    for (int i = 0; i < 1000; ++i) windows.push_back(random_tensor(20, 2, rng, 2.0));
    const Tensor probs = forward_batch(windows, params, config);
    REQUIRE(probs.rows() == 1000);
    REQUIRE(probs.cols() == 3);
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        double total = 0.0;
        for (double p : probs.row(r)) {
            CHECK(p >= 0.0);
            total += p;
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
    }
}

TEST_CASE("forward: batch of N windows gives N x rho output matching single evaluation") {
    const ModelConfig config = ModelConfig::make(8, 2, 1, 5);
    const ModelParameters params = ModelParameters::initialize(config);
    std::mt19937_64 rng(6);
    std::vector<Tensor> windows;
    for (int i = 0; i < 7; ++i) windows.push_back(random_tensor(20, 2, rng));
    const Tensor probs = forward_batch(windows, params, config);
    CHECK(probs.rows() == 7);
    CHECK(probs.cols() == 5);
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const auto single = forward(windows[i], params, config);
        for (std::size_t c = 0; c < 5; ++c) CHECK(std::abs(single.probabilities[c] - probs(i, c)) <= 1e-14);
    }
}

TEST_CASE("forward: mean pooling is invariant to permuting the 20 time steps") {
    const ModelConfig config = ModelConfig::make(8, 4, 2, 3);
    const ModelParameters params = ModelParameters::initialize(config);
    std::mt19937_64 rng(7);
    std::vector<std::size_t> order(20);
    std::iota(order.begin(), order.end(), 0);
    for (int trial = 0; trial < 30; ++trial) {
        const Tensor x = random_tensor(20, 2, rng);
        std::shuffle(order.begin(), order.end(), rng);
        const auto a = forward(x, params, config).probabilities;
        const auto b = forward(permute_rows(x, order), params, config).probabilities;
        CHECK(max_abs_diff(a, b) <= 1e-10);
    }
}

TEST_CASE("forward: last-step pooling is sensitive to order") {
    ModelConfig config = ModelConfig::make(8, 4, 2, 3);
    config.pooling = Pooling::Last;
    const ModelParameters params = ModelParameters::initialize(config);
    std::mt19937_64 rng(8);
    std::vector<std::size_t> order(20);
    std::iota(order.begin(), order.end(), 0);
    std::swap(order[0], order[19]);
    const Tensor x = random_tensor(20, 2, rng);
    const auto a = forward(x, params, config).probabilities;
    const auto b = forward(permute_rows(x, order), params, config).probabilities;
    CHECK(max_abs_diff(a, b) > 1e-6);
}

TEST_CASE("forward: same seed and input give bit-identical output") {
    const ModelConfig config = ModelConfig::make(8, 2, 2, 3);
    const ModelParameters a = ModelParameters::initialize(config);
    const ModelParameters b = ModelParameters::initialize(config);
    CHECK(a == b);
    std::mt19937_64 rng(9);
    const Tensor x = random_tensor(20, 2, rng);
    CHECK(forward(x, a, config).probabilities == forward(x, b, config).probabilities);
    ModelConfig other = config;
    other.seed = config.seed + 1;
    CHECK_FALSE(ModelParameters::initialize(other) == a);
}

TEST_CASE("forward: non-finite activations name the failing stage") {
    const ModelConfig config = ModelConfig::make(4, 1, 2, 3);
    ModelParameters params = ModelParameters::initialize(config);
    params.at(block_name(1, "ffn2.weight")).fill(1e308);
    params.at(block_name(1, "ffn1.bias")).fill(1e308);
    std::mt19937_64 rng(10);
    try {
        (void)forward(random_tensor(20, 2, rng), params, config);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("block 1") != std::string::npos);
    }
    Tensor bad(20, 2);
    bad(3, 1) = std::nan("");
    CHECK_THROWS_AS(forward(bad, ModelParameters::initialize(config), config), InvalidInputError);
}

TEST_CASE("mse_loss examples") {
    const Tensor y = Tensor::from_rows({{0, 1, 0}, {1, 0, 0}});
    CHECK(mse_loss(y, y) == 0.0);
    CHECK(mse_loss(Tensor::from_rows({{1, 0, 0}}), Tensor::from_rows({{0, 1, 0}})) == 2.0);
    CHECK(mse_loss(Tensor::from_rows({{1, 0, 0}, {1, 0, 0}}), Tensor::from_rows({{0, 1, 0}, {1, 0, 0}})) ==
          1.0);
    CHECK_THROWS_AS(mse_loss(Tensor(0, 3), Tensor(0, 3)), ContractError);
    CHECK_THROWS_AS(mse_loss(Tensor(1, 3), Tensor(1, 2)), ContractError);
}

namespace {

void check_full_gradient(const ModelConfig& config, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const ModelParameters params = ModelParameters::initialize(config);
    std::vector<Tensor> windows;
    for (int i = 0; i < 8; ++i) windows.push_back(random_tensor(20, 2, rng));
    Tensor targets(8, config.classes);
    for (std::size_t i = 0; i < 8; ++i) targets(i, i % config.classes) = 1.0;

    const auto analytic = loss_and_gradients(windows, targets, params, config);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto f = [&](const Tensor& x) {
            ModelParameters probe = params;
            probe.tensors()[k] = x;
            return mse_loss(forward_batch(windows, probe, config), targets);
        };
        const Tensor numeric = central_difference(f, params.tensors()[k]);
        CAPTURE(params.names()[k]);
        CHECK(max_relative_error(analytic.gradients[k], numeric) <= 1e-4);
    }
}

} // namespace

TEST_CASE("full-network gradients match finite differences (d=4, H=2, L=1)") {
    check_full_gradient(small_config(Pooling::Mean), 11);
    check_full_gradient(small_config(Pooling::Last), 12);
}

TEST_CASE("gradients without residual/norm and with sqrt(head_dim) scaling") {
    ModelConfig config = small_config();
    config.use_residual_norm = false;
    config.attention_scale = AttentionScale::SqrtHeadWidth;
    check_full_gradient(config, 13);
}

TEST_CASE("checkpoint round trip is bit exact") {
    ModelConfig config = ModelConfig::make(8, 2, 2, 5);
    config.pooling = Pooling::Last;
    config.seed = 1234567;
    ModelParameters params = ModelParameters::initialize(config);
    params.tensors()[0][0] = 0.1 + 0.2; // a value without a short decimal form
    params.tensors()[0][1] = 5e-324;
    std::stringstream buf;
    save_checkpoint(buf, config, params);
    const auto [cfg, loaded] = load_checkpoint(buf);
    CHECK(cfg == config);
    CHECK(loaded == params);
    std::mt19937_64 rng(14);
    const Tensor x = random_tensor(20, 2, rng);
    CHECK(forward(x, loaded, cfg).probabilities == forward(x, params, config).probabilities);
}

TEST_CASE("checkpoint rejects mismatched content") {
    std::stringstream junk("{\"format\":\"something-else\"}");
    CHECK_THROWS_AS(load_checkpoint(junk), DataError);

    const ModelConfig config = ModelConfig::make(4, 1, 1, 3);
    std::stringstream buf;
    save_checkpoint(buf, config, ModelParameters::initialize(config));
    auto j = nlohmann::json::parse(buf.str());
    j["parameters"][0]["shape"] = {3, 4};
    j["parameters"][0]["data"] = std::vector<double>(12, 0.0);
    std::stringstream tampered(j.dump());
    CHECK_THROWS_AS(load_checkpoint(tampered), DataError);
}

TEST_CASE("model config JSON defaults and validation") {
    const auto c = nlohmann::json{{"d", 8}, {"heads", 2}, {"classes", 5}}.get<ModelConfig>();
    CHECK(c.head_dim == 5);
    CHECK(c.ffn_width == 32);
    CHECK(c.layers == 6);
    CHECK_THROWS_AS((nlohmann::json{{"d", 0}}.get<ModelConfig>()), ConfigError);
    CHECK_THROWS_AS((nlohmann::json{{"pooling", "max"}}.get<ModelConfig>()), ConfigError);
}
