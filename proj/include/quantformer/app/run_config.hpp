#pragma once

#include "quantformer/labeling.hpp"
#include "quantformer/market_data.hpp"
#include "quantformer/metrics.hpp"
#include "quantformer/model.hpp"
#include "quantformer/strategy.hpp"
#include "quantformer/synthetic.hpp"
#include "quantformer/trainer.hpp"

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

namespace quantformer::app {

struct RunConfig {
    std::string name;
    std::filesystem::path output_dir = "quantformer_out";
    /// Daily bar CSV; when absent the synthetic stage output is used.
    std::optional<std::filesystem::path> data_path;
    std::optional<SyntheticSpec> synthetic;
    Frequency frequency = Frequency::Monthly;
    LabelScheme label;
    ModelConfig model;
    TrainConfig train;
    StrategyConfig strategy;
    double risk_free_rate = 0.0;
    /// Optional `timestamp,return` CSV; the uniform-weight benchmark otherwise.
    std::optional<std::filesystem::path> benchmark_path;
    VarMethod var_method = VarMethod::Historical;
    /// Last training decision time. Default: the first (1 - test_fraction)
    /// share of the decision times.
    std::optional<std::size_t> cutoff;
    double test_fraction = 0.2;
    bool grid_search = false;
};

/// Parses and validates; relative paths resolve against `base_dir`.
/// Throws ConfigError naming the offending field.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// Fully expanded config, stable across equivalent inputs.
nlohmann::json canonical_json(const RunConfig& c);
std::string config_hash(const RunConfig& c);

} // namespace quantformer::app
