#include "quantformer/model.hpp"

#include "quantformer/errors.hpp"
#include "quantformer/json_util.hpp"
#include "quantformer/market_data.hpp"

#include <cmath>
#include <fstream>
#include <random>

namespace quantformer {

namespace {

constexpr std::string_view kCheckpointFormat = "quantformer-checkpoint";
constexpr int kCheckpointVersion = 1;

void require_finite(const Tape& tape, Var v, const std::string& where) {
    if (!tape.value(v).all_finite()) throw NumericError("non-finite activation in " + where);
}

Tensor xavier(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor t(fan_in, fan_out);
    for (double& v : t.values()) v = dist(rng);
    return t;
}

// Records the attention sublayer of one block on x (rows = batch*20).
Var record_attention(Tape& tape, Var x, const std::vector<Var>& p, const ModelParameters& params,
                     const ModelConfig& config, std::size_t block) {
    std::vector<Var> heads;
    heads.reserve(config.heads);
    for (std::size_t h = 0; h < config.heads; ++h) {
        const Var q = tape.matmul(x, p[params.index_of(query_name(block, h))]);
        const Var k = tape.matmul(x, p[params.index_of(key_name(block, h))]);
        const Var v = tape.matmul(x, p[params.index_of(value_name(block, h))]);
        heads.push_back(tape.attention(q, k, v, kWindowLength, config.attention_divisor()));
    }
    const Var joined = heads.size() == 1 ? heads.front() : tape.concat_cols(heads);
    return tape.matmul(joined, p[params.index_of(block_name(block, "out.weight"))]);
}

Var record_embedding(Tape& tape, Var x, const std::vector<Var>& p, const ModelParameters& params) {
    return tape.add_row(tape.matmul(x, p[params.index_of("embed.weight")]),
                        p[params.index_of("embed.bias")]);
}

std::vector<Var> constant_params(Tape& tape, const ModelParameters& params) {
    std::vector<Var> out;
    out.reserve(params.size());
    for (const auto& t : params.tensors()) out.push_back(tape.constant(t));
    return out;
}

std::string_view to_string(AttentionScale s) {
    return s == AttentionScale::SqrtModelWidth ? "sqrt_d" : "sqrt_head_dim";
}

std::string_view to_string(Pooling p) { return p == Pooling::Mean ? "mean" : "last"; }

} // namespace

ModelConfig ModelConfig::make(std::size_t d, std::size_t heads, std::size_t layers,
                              std::size_t classes) {
    ModelConfig c;
    c.d = d;
    c.heads = heads;
    c.layers = layers;
    c.classes = classes;
    c.head_dim = classes;
    c.ffn_width = 4 * d;
    return c;
}

double ModelConfig::attention_divisor() const {
    return std::sqrt(static_cast<double>(
        attention_scale == AttentionScale::SqrtModelWidth ? d : head_dim));
}

void ModelConfig::validate() const {
    const auto check = [](std::size_t v, const char* name) {
        if (v == 0) throw ConfigError(std::string("model.") + name + " must be >= 1");
    };
    check(d, "d");
    check(heads, "heads");
    check(layers, "layers");
    check(classes, "classes");
    check(head_dim, "head_dim");
    check(ffn_width, "ffn_width");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"d", c.d},
                       {"heads", c.heads},
                       {"layers", c.layers},
                       {"classes", c.classes},
                       {"head_dim", c.head_dim},
                       {"ffn_width", c.ffn_width},
                       {"attention_scale", to_string(c.attention_scale)},
                       {"pooling", to_string(c.pooling)},
                       {"use_residual_norm", c.use_residual_norm},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    auto count = [&](const char* key, std::size_t& field) {
        if (!j.contains(key)) return;
        const auto& v = j.at(key);
        if (!v.is_number_integer() || v.get<long long>() < 1) {
            throw ConfigError(std::string("model.") + key + " must be an integer >= 1");
        }
        field = v.get<std::size_t>();
    };
    count("d", c.d);
    count("heads", c.heads);
    count("layers", c.layers);
    count("classes", c.classes);
    c.head_dim = c.classes;
    c.ffn_width = 4 * c.d;
    count("head_dim", c.head_dim);
    count("ffn_width", c.ffn_width);
    if (j.contains("attention_scale")) {
        const auto s = j.at("attention_scale").get<std::string>();
        if (s == "sqrt_d") {
            c.attention_scale = AttentionScale::SqrtModelWidth;
        } else if (s == "sqrt_head_dim") {
            c.attention_scale = AttentionScale::SqrtHeadWidth;
        } else {
            throw ConfigError("model.attention_scale must be 'sqrt_d' or 'sqrt_head_dim'");
        }
    }
    if (j.contains("pooling")) {
        const auto s = j.at("pooling").get<std::string>();
        if (s == "mean") {
            c.pooling = Pooling::Mean;
        } else if (s == "last") {
            c.pooling = Pooling::Last;
        } else {
            throw ConfigError("model.pooling must be 'mean' or 'last'");
        }
    }
    if (j.contains("use_residual_norm")) {
        if (!j.at("use_residual_norm").is_boolean()) {
            throw ConfigError("model.use_residual_norm must be a boolean");
        }
        c.use_residual_norm = j.at("use_residual_norm").get<bool>();
    }
    if (j.contains("seed")) {
        if (!is_count(j.at("seed"))) throw ConfigError("model.seed must be >= 0");
        c.seed = j.at("seed").get<std::uint64_t>();
    }
}

std::string query_name(std::size_t block, std::size_t head) {
    return block_name(block, "head" + std::to_string(head) + ".query");
}
std::string key_name(std::size_t block, std::size_t head) {
    return block_name(block, "head" + std::to_string(head) + ".key");
}
std::string value_name(std::size_t block, std::size_t head) {
    return block_name(block, "head" + std::to_string(head) + ".value");
}
std::string block_name(std::size_t block, std::string_view part) {
    return "block" + std::to_string(block) + "." + std::string(part);
}

void ModelParameters::add(std::string name, Tensor value) {
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(value));
}

std::size_t ModelParameters::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
        if (names_[i] == name) return i;
    }
    throw ContractError("no parameter named '" + std::string(name) + "'");
}

std::size_t ModelParameters::scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
}

ModelParameters ModelParameters::initialize(const ModelConfig& config) {
    config.validate();
    std::mt19937_64 rng(config.seed);
    const std::size_t d = config.d;
    ModelParameters p;
    p.add("embed.weight", xavier(kFeatureCount, d, rng));
    p.add("embed.bias", Tensor(1, d));
    for (std::size_t b = 0; b < config.layers; ++b) {
        for (std::size_t h = 0; h < config.heads; ++h) {
            p.add(query_name(b, h), xavier(d, config.head_dim, rng));
            p.add(key_name(b, h), xavier(d, config.head_dim, rng));
            p.add(value_name(b, h), xavier(d, config.head_dim, rng));
        }
        p.add(block_name(b, "out.weight"), xavier(config.heads * config.head_dim, d, rng));
        if (config.use_residual_norm) {
            p.add(block_name(b, "norm1.gain"), Tensor(1, d, 1.0));
            p.add(block_name(b, "norm1.bias"), Tensor(1, d));
        }
        p.add(block_name(b, "ffn1.weight"), xavier(d, config.ffn_width, rng));
        p.add(block_name(b, "ffn1.bias"), Tensor(1, config.ffn_width));
        p.add(block_name(b, "ffn2.weight"), xavier(config.ffn_width, d, rng));
        p.add(block_name(b, "ffn2.bias"), Tensor(1, d));
        if (config.use_residual_norm) {
            p.add(block_name(b, "norm2.gain"), Tensor(1, d, 1.0));
            p.add(block_name(b, "norm2.bias"), Tensor(1, d));
        }
    }
    p.add("head.weight", xavier(d, config.classes, rng));
    p.add("head.bias", Tensor(1, config.classes));
    return p;
}

Tensor stack_windows(std::span<const Tensor> windows) {
    Tensor out(windows.size() * kWindowLength, kFeatureCount);
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const Tensor& w = windows[i];
        if (w.rows() != kWindowLength || w.cols() != kFeatureCount) {
            throw ContractError("input window must be 20x2, got " + std::to_string(w.rows()) + "x" +
                                std::to_string(w.cols()));
        }
        std::copy(w.values().begin(), w.values().end(),
                  out.values().begin() + static_cast<std::ptrdiff_t>(i * w.size()));
    }
    return out;
}

ForwardPass record_forward(Tape& tape, const Tensor& inputs, const ModelParameters& params,
                           const ModelConfig& config) {
    config.validate();
    if (inputs.cols() != kFeatureCount || inputs.rows() == 0 || inputs.rows() % kWindowLength != 0) {
        throw ContractError("forward expects (batch*20) x 2 inputs");
    }
    if (!inputs.all_finite()) throw InvalidInputError("forward: input window is not finite");

    ForwardPass pass;
    pass.params.reserve(params.size());
    for (const auto& t : params.tensors()) pass.params.push_back(tape.leaf(t));
    const auto& p = pass.params;
    auto at = [&](const std::string& name) { return p[params.index_of(name)]; };

    Var x = record_embedding(tape, tape.constant(inputs), p, params);
    require_finite(tape, x, "embedding");
    for (std::size_t b = 0; b < config.layers; ++b) {
        const Var attn = record_attention(tape, x, p, params, config, b);
        x = config.use_residual_norm
                ? tape.layer_norm_rows(tape.add(x, attn), at(block_name(b, "norm1.gain")),
                                       at(block_name(b, "norm1.bias")))
                : attn;
        const Var hidden = tape.relu(
            tape.add_row(tape.matmul(x, at(block_name(b, "ffn1.weight"))), at(block_name(b, "ffn1.bias"))));
        const Var ffn = tape.add_row(tape.matmul(hidden, at(block_name(b, "ffn2.weight"))),
                                     at(block_name(b, "ffn2.bias")));
        x = config.use_residual_norm
                ? tape.layer_norm_rows(tape.add(x, ffn), at(block_name(b, "norm2.gain")),
                                       at(block_name(b, "norm2.bias")))
                : ffn;
        require_finite(tape, x, "block " + std::to_string(b));
    }
    const Var pooled = config.pooling == Pooling::Mean ? tape.segment_mean(x, kWindowLength)
                                                       : tape.segment_last(x, kWindowLength);
    const Var logits = tape.add_row(tape.matmul(pooled, at("head.weight")), at("head.bias"));
    require_finite(tape, logits, "output head");
    pass.probabilities = tape.softmax_rows(logits);
    return pass;
}

Tensor embed(const Tensor& window, const ModelParameters& params) {
    if (window.cols() != kFeatureCount) throw ContractError("embed expects 2 feature columns");
    if (!window.all_finite()) throw InvalidInputError("embed: input is not finite");
    Tape tape;
    const auto p = constant_params(tape, params);
    return tape.value(record_embedding(tape, tape.constant(window), p, params));
}

Tensor multi_head_attention(const Tensor& embedded, const ModelParameters& params,
                            const ModelConfig& config, std::size_t block) {
    if (block >= config.layers) throw ContractError("attention block index out of range");
    if (embedded.cols() != config.d || embedded.rows() % kWindowLength != 0) {
        throw ContractError("multi_head_attention expects (k*20) x d input");
    }
    Tape tape;
    const auto p = constant_params(tape, params);
    return tape.value(record_attention(tape, tape.constant(embedded), p, params, config, block));
}

Tensor forward_batch(std::span<const Tensor> windows, const ModelParameters& params,
                     const ModelConfig& config) {
    if (windows.empty()) return Tensor(0, config.classes);
    Tape tape;
    const auto pass = record_forward(tape, stack_windows(windows), params, config);
    return tape.value(pass.probabilities);
}

PredictionDistribution forward(const Tensor& window, const ModelParameters& params,
                               const ModelConfig& config) {
    const Tensor probs = forward_batch(std::span<const Tensor>(&window, 1), params, config);
    return PredictionDistribution{{probs.values().begin(), probs.values().end()}};
}

double mse_loss(const Tensor& predicted, const Tensor& target) {
    if (!predicted.same_shape(target)) throw ContractError("mse_loss: shape mismatch");
    if (predicted.rows() == 0) throw ContractError("mse_loss: empty batch");
    double total = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const double diff = target[i] - predicted[i];
        total += diff * diff;
    }
    return total / static_cast<double>(predicted.rows());
}

LossAndGradients loss_and_gradients(std::span<const Tensor> windows, const Tensor& targets,
                                    const ModelParameters& params, const ModelConfig& config) {
    if (windows.empty()) throw ContractError("loss_and_gradients: empty batch");
    if (targets.rows() != windows.size() || targets.cols() != config.classes) {
        throw ContractError("loss_and_gradients: targets must be batch x classes");
    }
    Tape tape;
    const auto pass = record_forward(tape, stack_windows(windows), params, config);
    const Var loss = tape.mse(pass.probabilities, tape.constant(targets));
    const Gradients grads = tape.backward(loss);
    LossAndGradients out;
    out.loss = tape.value(loss)[0];
    out.gradients.reserve(pass.params.size());
    for (Var v : pass.params) out.gradients.push_back(grads[v]);
    return out;
}

void save_checkpoint(std::ostream& out, const ModelConfig& config, const ModelParameters& params) {
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    j["version"] = kCheckpointVersion;
    j["config"] = config;
    auto& tensors = j["parameters"];
    tensors = nlohmann::json::array();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor& t = params.tensors()[i];
        tensors.push_back({{"name", params.names()[i]},
                           {"shape", {t.rows(), t.cols()}},
                           {"data", std::vector<double>(t.values().begin(), t.values().end())}});
    }
    out << j.dump() << '\n';
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const ModelParameters& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    save_checkpoint(out, config, params);
}

std::pair<ModelConfig, ModelParameters> load_checkpoint(std::istream& in) {
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint is not valid JSON: ") + e.what());
    }
    if (j.value("format", "") != kCheckpointFormat) throw DataError("not a quantformer checkpoint");
    if (j.value("version", 0) != kCheckpointVersion) {
        throw DataError("unsupported checkpoint version " + j.value("version", nlohmann::json()).dump());
    }
    const ModelConfig config = j.at("config").get<ModelConfig>();
    const ModelParameters expected = ModelParameters::initialize(config);
    ModelParameters params;
    for (const auto& entry : j.at("parameters")) {
        const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        if (shape.size() != 2) throw DataError("checkpoint tensor shape must have 2 dims");
        params.add(entry.at("name").get<std::string>(),
                   Tensor(shape[0], shape[1], entry.at("data").get<std::vector<double>>()));
    }
    if (params.names() != expected.names()) {
        throw DataError("checkpoint parameter list does not match its config");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params.tensors()[i].same_shape(expected.tensors()[i])) {
            throw DataError("checkpoint tensor " + params.names()[i] + " has the wrong shape");
        }
    }
    return {config, std::move(params)};
}

std::pair<ModelConfig, ModelParameters> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PrerequisiteError("missing checkpoint " + path.string());
    return load_checkpoint(in);
}

} // namespace quantformer
