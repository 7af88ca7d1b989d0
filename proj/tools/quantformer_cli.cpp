#include "quantformer/app/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>

int main(int argc, char** argv) {
    CLI::App app{"quantformer: transformer stock ranking, backtest and report"};
    app.require_subcommand(1);

    std::string config;
    const char* stages[][2] = {
        {"synth", "Generate a synthetic daily panel"},
        {"ingest", "Aggregate daily bars into the period store"},
        {"train", "Train the model and write a checkpoint"},
        {"backtest", "Run the quantile strategy over the test range"},
        {"report", "Compute metrics and plot the equity curve"},
        {"table1", "Dataset statistics for a set of run configs"},
    };
    for (const auto& [name, help] : stages) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config,-c", config, "JSON config file")->required()->check(CLI::ExistingFile);
    }

    CLI11_PARSE(app, argc, argv);

    const std::string stage = app.get_subcommands().front()->get_name();
    if (stage == "table1") return quantformer::app::run_table1(config, std::cout, std::cerr);
    return quantformer::app::run_command(stage, config, std::cout, std::cerr);
}
