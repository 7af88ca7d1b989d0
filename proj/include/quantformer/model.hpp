#pragma once

#include "quantformer/tape.hpp"
#include "quantformer/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace quantformer {

enum class AttentionScale { SqrtModelWidth, SqrtHeadWidth };
enum class Pooling { Mean, Last };

struct ModelConfig {
    std::size_t d = 16;          // hidden width
    std::size_t heads = 16;
    std::size_t layers = 6;
    std::size_t classes = 3;     // rho
    std::size_t head_dim = 3;    // per-head projection width
    std::size_t ffn_width = 64;
    AttentionScale attention_scale = AttentionScale::SqrtModelWidth;
    Pooling pooling = Pooling::Mean;
    bool use_residual_norm = true;
    std::uint64_t seed = 42;

    /// head_dim = classes and ffn_width = 4d.
    static ModelConfig make(std::size_t d, std::size_t heads, std::size_t layers,
                            std::size_t classes);

    double attention_divisor() const;
    /// Throws ConfigError when any width or count is zero.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
/// Missing keys keep their defaults; head_dim and ffn_width default to
/// classes and 4d when absent.
void from_json(const nlohmann::json& j, ModelConfig& c);

/// All trainable tensors in a fixed order with stable names.
class ModelParameters {
public:
    /// Seeded uniform init in +-sqrt(6/(fan_in+fan_out)); zero biases, unit norm gains.
    static ModelParameters initialize(const ModelConfig& config);

    std::vector<Tensor>& tensors() noexcept { return tensors_; }
    const std::vector<Tensor>& tensors() const noexcept { return tensors_; }
    const std::vector<std::string>& names() const noexcept { return names_; }
    std::size_t size() const noexcept { return tensors_.size(); }
    std::size_t index_of(std::string_view name) const;
    Tensor& at(std::string_view name) { return tensors_[index_of(name)]; }
    const Tensor& at(std::string_view name) const { return tensors_[index_of(name)]; }
    std::size_t scalar_count() const;

    void add(std::string name, Tensor value);

    friend bool operator==(const ModelParameters&, const ModelParameters&) = default;

private:
    std::vector<std::string> names_;
    std::vector<Tensor> tensors_;
};

std::string query_name(std::size_t block, std::size_t head);
std::string key_name(std::size_t block, std::size_t head);
std::string value_name(std::size_t block, std::size_t head);
std::string block_name(std::size_t block, std::string_view part);

struct PredictionDistribution {
    std::vector<double> probabilities;
};

/// Forward graph of a batch recorded on a tape.
struct ForwardPass {
    std::vector<Var> params; // aligned with ModelParameters::tensors()
    Var probabilities;       // batch x classes
};

/// Records the network on `tape`. `inputs` stacks the batch's 20 x 2 windows
/// into (batch*20) x 2. Throws NumericError naming the block when an
/// activation becomes non-finite.
ForwardPass record_forward(Tape& tape, const Tensor& inputs, const ModelParameters& params,
                           const ModelConfig& config);

Tensor stack_windows(std::span<const Tensor> windows);

Tensor embed(const Tensor& window, const ModelParameters& params);
Tensor multi_head_attention(const Tensor& embedded, const ModelParameters& params,
                            const ModelConfig& config, std::size_t block);
PredictionDistribution forward(const Tensor& window, const ModelParameters& params,
                               const ModelConfig& config);
/// batch x classes probabilities.
Tensor forward_batch(std::span<const Tensor> windows, const ModelParameters& params,
                     const ModelConfig& config);

/// (1/N) sum ||y - yhat||^2 over rows.
double mse_loss(const Tensor& predicted, const Tensor& target);

struct LossAndGradients {
    double loss = 0.0;
    std::vector<Tensor> gradients; // aligned with ModelParameters::tensors()
};

LossAndGradients loss_and_gradients(std::span<const Tensor> windows, const Tensor& targets,
                                    const ModelParameters& params, const ModelConfig& config);

// Checkpoint container: JSON with the config and every tensor's shape and data.
void save_checkpoint(std::ostream& out, const ModelConfig& config, const ModelParameters& params);
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const ModelParameters& params);
std::pair<ModelConfig, ModelParameters> load_checkpoint(std::istream& in);
std::pair<ModelConfig, ModelParameters> load_checkpoint(const std::filesystem::path& path);

} // namespace quantformer
