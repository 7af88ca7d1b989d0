#include "quantformer/app/run_config.hpp"

#include "quantformer/errors.hpp"
#include "quantformer/json_util.hpp"
#include "quantformer/text_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

namespace quantformer::app {

namespace {

const std::set<std::string> kKnownKeys = {
    "name",  "output_dir", "data",           "synthetic",  "frequency",     "label",
    "model", "train",      "strategy",       "risk_free_rate", "benchmark", "var_method",
    "cutoff", "test_fraction", "grid_search"};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

std::string string_field(const nlohmann::json& j, const char* key) {
    if (!j.at(key).is_string()) throw ConfigError(std::string(key) + " must be a string");
    return j.at(key).get<std::string>();
}

LabelScheme parse_label(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("label must be a JSON object");
    LabelScheme s;
    if (j.contains("bins")) {
        if (!j.at("bins").is_number_integer()) throw ConfigError("label.bins must be an integer");
        s.bins = j.at("bins").get<int>();
    }
    if (j.contains("fraction")) {
        if (!j.at("fraction").is_number()) throw ConfigError("label.fraction must be a number");
        s.fraction = j.at("fraction").get<double>();
    }
    if (j.contains("include_null")) {
        if (!j.at("include_null").is_boolean()) throw ConfigError("label.include_null must be a boolean");
        s.include_null = j.at("include_null").get<bool>();
    }
    try {
        s.validate();
    } catch (const SchemeError& e) {
        throw ConfigError(std::string("label: ") + e.what());
    }
    return s;
}

} // namespace

RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!kKnownKeys.count(key)) throw ConfigError("unknown config field '" + key + "'");
    }
    RunConfig c;
    if (j.contains("name")) c.name = string_field(j, "name");
    if (j.contains("output_dir")) c.output_dir = resolve(base_dir, string_field(j, "output_dir"));
    else c.output_dir = base_dir / c.output_dir;
    if (j.contains("data")) c.data_path = resolve(base_dir, string_field(j, "data"));
    if (j.contains("benchmark")) c.benchmark_path = resolve(base_dir, string_field(j, "benchmark"));
    if (j.contains("frequency")) {
        try {
            c.frequency = parse_frequency(string_field(j, "frequency"));
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("frequency: ") + e.what());
        }
    }
    if (j.contains("label")) c.label = parse_label(j.at("label"));

    nlohmann::json model = j.value("model", nlohmann::json::object());
    if (!model.is_object()) throw ConfigError("model must be a JSON object");
    if (!model.contains("classes")) model["classes"] = c.label.bins;
    c.model = model.get<ModelConfig>();
    c.model.validate();
    if (c.model.classes != static_cast<std::size_t>(c.label.bins)) {
        throw ConfigError("model.classes (" + std::to_string(c.model.classes) +
                          ") must equal label.bins (" + std::to_string(c.label.bins) + ")");
    }

    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    if (c.train.cutoff) throw ConfigError("train.cutoff is derived; set the top-level 'cutoff' instead");

    nlohmann::json strategy = j.value("strategy", nlohmann::json::object());
    if (!strategy.is_object()) throw ConfigError("strategy must be a JSON object");
    if (!strategy.contains("phi")) {
        std::vector<int> phi(static_cast<std::size_t>(c.label.bins), 0);
        phi.front() = 1;
        strategy["phi"] = phi;
    }
    c.strategy = strategy.get<StrategyConfig>();
    c.strategy.validate(c.label.bins);

    if (j.contains("synthetic")) {
        nlohmann::json synth = j.at("synthetic");
        if (!synth.is_object()) throw ConfigError("synthetic must be a JSON object");
        if (!synth.contains("frequency")) synth["frequency"] = std::string(to_string(c.frequency));
        c.synthetic = synth.get<SyntheticSpec>();
        if (c.synthetic->frequency != c.frequency) {
            throw ConfigError("synthetic.frequency must match frequency");
        }
    }
    if (c.data_path && c.synthetic) throw ConfigError("set either 'data' or 'synthetic', not both");

    if (j.contains("risk_free_rate")) {
        if (!j.at("risk_free_rate").is_number()) throw ConfigError("risk_free_rate must be a number");
        c.risk_free_rate = j.at("risk_free_rate").get<double>();
        if (!std::isfinite(c.risk_free_rate)) throw ConfigError("risk_free_rate must be finite");
    }
    if (j.contains("var_method")) c.var_method = parse_var_method(string_field(j, "var_method"));
    if (j.contains("cutoff") && !j.at("cutoff").is_null()) {
        if (!is_count(j.at("cutoff"))) throw ConfigError("cutoff must be an integer >= 0");
        c.cutoff = j.at("cutoff").get<std::size_t>();
    }
    if (j.contains("test_fraction")) {
        if (!j.at("test_fraction").is_number()) throw ConfigError("test_fraction must be a number");
        c.test_fraction = j.at("test_fraction").get<double>();
        if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) {
            throw ConfigError("test_fraction must lie strictly between 0 and 1");
        }
    }
    if (j.contains("grid_search")) {
        if (!j.at("grid_search").is_boolean()) throw ConfigError("grid_search must be a boolean");
        c.grid_search = j.at("grid_search").get<bool>();
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    try {
        return parse_run_config(j, path.parent_path().empty() ? "." : path.parent_path());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config type error: ") + e.what());
    }
}

nlohmann::json canonical_json(const RunConfig& c) {
    nlohmann::json j{{"name", c.name},
                     {"frequency", std::string(to_string(c.frequency))},
                     {"label", {{"bins", c.label.bins},
                                {"fraction", c.label.fraction},
                                {"include_null", c.label.include_null}}},
                     {"model", c.model},
                     {"train", c.train},
                     {"strategy", c.strategy},
                     {"risk_free_rate", c.risk_free_rate},
                     {"var_method", c.var_method == VarMethod::Historical ? "historical" : "parametric"},
                     {"test_fraction", c.test_fraction},
                     {"grid_search", c.grid_search}};
    j["cutoff"] = c.cutoff ? nlohmann::json(*c.cutoff) : nlohmann::json(nullptr);
    j["synthetic"] = c.synthetic ? nlohmann::json(*c.synthetic) : nlohmann::json(nullptr);
    j["data"] = c.data_path ? nlohmann::json(c.data_path->filename().string()) : nlohmann::json(nullptr);
    j["benchmark"] =
        c.benchmark_path ? nlohmann::json(c.benchmark_path->filename().string()) : nlohmann::json(nullptr);
    return j;
}

std::string config_hash(const RunConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canonical_json(c).dump())));
    return buf;
}

} // namespace quantformer::app
