#pragma once

#include "quantformer/adam.hpp"
#include "quantformer/labeling.hpp"
#include "quantformer/model.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include <json.hpp>

namespace quantformer {

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 64;
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t shuffle_seed = 7;
    /// Last decision time allowed in the training set; nullopt = no audit.
    std::optional<std::size_t> cutoff;

    AdamHyperParams adam() const { return {learning_rate, beta1, beta2, epsilon}; }
    /// Throws ConfigError on epochs or batch_size of 0 or a negative learning rate.
    void validate() const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TimeSplit {
    std::vector<LabeledSample> train;
    std::vector<LabeledSample> test;
};

/// train = decision_time <= cutoff, test = the rest. An empty side is allowed
/// and reported through `warning` when a stream is given.
TimeSplit split_by_time(const std::vector<LabeledSample>& samples, std::size_t cutoff,
                        std::ostream* warning = nullptr);

struct TrainResult {
    ModelParameters params;
    std::vector<double> loss_history; // per-epoch mean MSE
};

/// Mini-batch Adam on the MSE loss. Batches are reshuffled every epoch from a
/// seed derived from (shuffle_seed, epoch). Throws NumericError naming the
/// epoch when the loss stops being finite, and ContractError if a sample
/// later than `config.cutoff` reaches an update.
TrainResult train(const std::vector<LabeledSample>& samples, const ModelConfig& model,
                  const TrainConfig& config);

/// Same as train() but starting from given parameters.
TrainResult train_from(const std::vector<LabeledSample>& samples, ModelParameters initial,
                       const ModelConfig& model, const TrainConfig& config);

/// Mean MSE of the model over `samples`.
double evaluate_mse(const std::vector<LabeledSample>& samples, const ModelParameters& params,
                    const ModelConfig& model);

/// Fraction of labeled (non-null) samples whose argmax prediction hits the label bin.
double bin_accuracy(const std::vector<LabeledSample>& samples, const ModelParameters& params,
                    const ModelConfig& model);

void write_loss_history_csv(const std::vector<double>& history, std::ostream& out);

struct Candidate {
    ModelConfig model;
    TrainConfig train;
};

/// Model grid over d in {8,16}, H in {4,16}, L in {2,6} around `base`.
std::vector<Candidate> default_grid(const Candidate& base);

struct GridSearchResult {
    std::size_t best_index = 0;
    Candidate best;
    std::vector<double> validation_mse; // one per candidate
};

/// Trains every candidate on `train_part` and keeps the one with the lowest
/// MSE on `validation`; ties go to the earlier candidate.
GridSearchResult grid_search(const std::vector<Candidate>& candidates,
                             const std::vector<LabeledSample>& train_part,
                             const std::vector<LabeledSample>& validation);

/// Splits a training set into (fit, validation) with validation = the
/// trailing 10% of distinct decision times (at least one).
TimeSplit validation_split(const std::vector<LabeledSample>& samples);

Tensor target_matrix(const std::vector<LabeledSample>& samples, std::size_t classes);

} // namespace quantformer
