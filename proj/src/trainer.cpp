#include "quantformer/trainer.hpp"

#include "quantformer/errors.hpp"
#include "quantformer/json_util.hpp"
#include "quantformer/text_io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

namespace quantformer {

namespace {

constexpr std::size_t kEvalChunk = 256;

// Fisher-Yates driven by raw engine output so the permutation does not depend
// on the standard library's distribution implementation.
void shuffle_indices(std::vector<std::size_t>& idx, std::uint64_t seed, std::uint64_t epoch) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
    std::mt19937_64 rng(seq);
    for (std::size_t i = idx.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(idx[i - 1], idx[j]);
    }
}

template <typename Fn>
void for_each_chunk(const std::vector<LabeledSample>& samples, std::size_t chunk, Fn&& fn) {
    for (std::size_t start = 0; start < samples.size(); start += chunk) {
        const std::size_t end = std::min(samples.size(), start + chunk);
        std::vector<Tensor> windows;
        windows.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) windows.push_back(samples[i].features);
        fn(start, end, windows);
    }
}

} // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("train.learning_rate must be a finite number >= 0");
    }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"learning_rate", c.learning_rate},
                       {"beta1", c.beta1},
                       {"beta2", c.beta2},
                       {"epsilon", c.epsilon},
                       {"shuffle_seed", c.shuffle_seed}};
    if (c.cutoff) j["cutoff"] = *c.cutoff;
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    auto count = [&](const char* key, std::size_t& field) {
        if (!j.contains(key)) return;
        if (!j.at(key).is_number_integer() || j.at(key).get<long long>() < 1) {
            throw ConfigError(std::string("train.") + key + " must be an integer >= 1");
        }
        field = j.at(key).get<std::size_t>();
    };
    auto real = [&](const char* key, double& field) {
        if (!j.contains(key)) return;
        if (!j.at(key).is_number()) throw ConfigError(std::string("train.") + key + " must be a number");
        field = j.at(key).get<double>();
    };
    count("epochs", c.epochs);
    count("batch_size", c.batch_size);
    real("learning_rate", c.learning_rate);
    real("beta1", c.beta1);
    real("beta2", c.beta2);
    real("epsilon", c.epsilon);
    if (j.contains("shuffle_seed")) {
        if (!is_count(j.at("shuffle_seed"))) throw ConfigError("train.shuffle_seed must be >= 0");
        c.shuffle_seed = j.at("shuffle_seed").get<std::uint64_t>();
    }
    if (j.contains("cutoff") && !j.at("cutoff").is_null()) {
        if (!is_count(j.at("cutoff"))) throw ConfigError("train.cutoff must be >= 0");
        c.cutoff = j.at("cutoff").get<std::size_t>();
    }
    c.validate();
}

TimeSplit split_by_time(const std::vector<LabeledSample>& samples, std::size_t cutoff,
                        std::ostream* warning) {
    TimeSplit split;
    for (const auto& s : samples) {
        (s.decision_time <= cutoff ? split.train : split.test).push_back(s);
    }
    if (warning) {
        if (split.train.empty()) *warning << "warning: no training samples at or before t=" << cutoff << '\n';
        if (split.test.empty()) *warning << "warning: no test samples after t=" << cutoff << '\n';
    }
    return split;
}

Tensor target_matrix(const std::vector<LabeledSample>& samples, std::size_t classes) {
    Tensor y(samples.size(), classes);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].target.y.size() != classes) {
            throw ContractError("sample label width does not match the model's class count");
        }
        std::copy(samples[i].target.y.begin(), samples[i].target.y.end(), y.row(i).begin());
    }
    return y;
}

TrainResult train(const std::vector<LabeledSample>& samples, const ModelConfig& model,
                  const TrainConfig& config) {
    return train_from(samples, ModelParameters::initialize(model), model, config);
}

TrainResult train_from(const std::vector<LabeledSample>& samples, ModelParameters initial,
                       const ModelConfig& model, const TrainConfig& config) {
    config.validate();
    model.validate();
    if (samples.empty()) throw ContractError("train: empty training set");

    TrainResult result{std::move(initial), {}};
    AdamState adam(result.params.tensors(), config.adam());
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle_indices(order, config.shuffle_seed, epoch);
        double weighted_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<Tensor> windows;
            Tensor targets(end - start, model.classes);
            windows.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const LabeledSample& s = samples[order[i]];
                if (config.cutoff && s.decision_time > *config.cutoff) {
                    throw ContractError("look-ahead: sample at t=" + std::to_string(s.decision_time) +
                                        " is past the training cutoff " +
                                        std::to_string(*config.cutoff));
                }
                if (s.target.y.size() != model.classes) {
                    throw ContractError("sample label width does not match the model's class count");
                }
                windows.push_back(s.features);
                std::copy(s.target.y.begin(), s.target.y.end(), targets.row(i - start).begin());
            }
            LossAndGradients lg;
            try {
                lg = loss_and_gradients(windows, targets, result.params, model);
            } catch (const NumericError& e) {
                throw NumericError("training diverged in epoch " + std::to_string(epoch) + ": " +
                                   e.what());
            }
            if (!std::isfinite(lg.loss)) {
                throw NumericError("training diverged in epoch " + std::to_string(epoch) +
                                   ": loss is not finite");
            }
            weighted_loss += lg.loss * static_cast<double>(end - start);
            adam.step(result.params.tensors(), lg.gradients);
        }
        result.loss_history.push_back(weighted_loss / static_cast<double>(samples.size()));
    }
    return result;
}

double evaluate_mse(const std::vector<LabeledSample>& samples, const ModelParameters& params,
                    const ModelConfig& model) {
    if (samples.empty()) throw ContractError("evaluate_mse: empty sample set");
    double total = 0.0;
    for_each_chunk(samples, kEvalChunk, [&](std::size_t start, std::size_t end, const auto& windows) {
        const Tensor probs = forward_batch(windows, params, model);
        for (std::size_t i = start; i < end; ++i) {
            const auto& y = samples[i].target.y;
            for (std::size_t c = 0; c < model.classes; ++c) {
                const double diff = y[c] - probs(i - start, c);
                total += diff * diff;
            }
        }
    });
    return total / static_cast<double>(samples.size());
}

double bin_accuracy(const std::vector<LabeledSample>& samples, const ModelParameters& params,
                    const ModelConfig& model) {
    std::size_t labeled = 0;
    std::size_t hits = 0;
    for_each_chunk(samples, kEvalChunk, [&](std::size_t start, std::size_t end, const auto& windows) {
        const Tensor probs = forward_batch(windows, params, model);
        for (std::size_t i = start; i < end; ++i) {
            const auto bin = samples[i].target.active_bin();
            if (!bin) continue;
            ++labeled;
            const auto row = probs.row(i - start);
            const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
            if (best == *bin) ++hits;
        }
    });
    if (labeled == 0) throw ContractError("bin_accuracy: no labeled samples");
    return static_cast<double>(hits) / static_cast<double>(labeled);
}

void write_loss_history_csv(const std::vector<double>& history, std::ostream& out) {
    out << "epoch,mean_mse\n";
    for (std::size_t i = 0; i < history.size(); ++i) {
        out << (i + 1) << ',' << format_double(history[i]) << '\n';
    }
}

std::vector<Candidate> default_grid(const Candidate& base) {
    std::vector<Candidate> grid;
    for (std::size_t d : {8, 16}) {
        for (std::size_t heads : {4, 16}) {
            for (std::size_t layers : {2, 6}) {
                Candidate c = base;
                c.model.d = d;
                c.model.heads = heads;
                c.model.layers = layers;
                c.model.ffn_width = 4 * d;
                grid.push_back(c);
            }
        }
    }
    return grid;
}

GridSearchResult grid_search(const std::vector<Candidate>& candidates,
                             const std::vector<LabeledSample>& train_part,
                             const std::vector<LabeledSample>& validation) {
    if (candidates.empty()) throw ContractError("grid_search: no candidates");
    GridSearchResult result;
    result.best = candidates.front();
    if (candidates.size() == 1) {
        return result;
    }
    double best_mse = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto& c = candidates[i];
        const TrainResult trained = train(train_part, c.model, c.train);
        const double mse = evaluate_mse(validation, trained.params, c.model);
        result.validation_mse.push_back(mse);
        if (mse < best_mse) {
            best_mse = mse;
            result.best_index = i;
            result.best = c;
        }
    }
    return result;
}

TimeSplit validation_split(const std::vector<LabeledSample>& samples) {
    std::set<std::size_t> times;
    for (const auto& s : samples) times.insert(s.decision_time);
    if (times.size() < 2) throw ContractError("validation_split needs at least two decision times");
    const std::size_t n_val = std::max<std::size_t>(1, times.size() / 10);
    auto it = times.end();
    std::advance(it, -static_cast<std::ptrdiff_t>(n_val + 1));
    return split_by_time(samples, *it);
}

} // namespace quantformer
