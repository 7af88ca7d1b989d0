#pragma once

#include "quantformer/app/run_config.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace quantformer::app {

inline constexpr const char* kSyntheticFile = "synthetic_daily.csv";
inline constexpr const char* kPeriodFile = "periods.csv";
inline constexpr const char* kCheckpointFile = "model.ckpt.json";
inline constexpr const char* kLossFile = "loss_history.csv";
inline constexpr const char* kEquityFile = "equity.csv";
inline constexpr const char* kWeightsFile = "weights.csv";
inline constexpr const char* kBenchmarkFile = "benchmark.csv";
inline constexpr const char* kReportFile = "report.json";
inline constexpr const char* kPlotFile = "equity.svg";
inline constexpr const char* kVersion = "0.1.0";

/// Decision times of a run: training uses [first, cutoff], the backtest
/// trades at (cutoff, last].
struct DecisionRange {
    std::size_t first = 0;
    std::size_t cutoff = 0;
    std::size_t last = 0;
};
DecisionRange decision_range(const PeriodSeries& series, const RunConfig& config);

/// periods.csv when present, else the daily CSV ingested on the fly.
PeriodSeries load_series(const RunConfig& config);

void run_synth(const RunConfig& config, std::ostream& log);
void run_ingest(const RunConfig& config, std::ostream& log);
void run_train(const RunConfig& config, std::ostream& log);
void run_backtest(const RunConfig& config, std::ostream& log);
void run_report(const RunConfig& config, std::ostream& log);

/// Dispatches by stage name; returns the process exit status and prints
/// errors to `err`.
int run_command(const std::string& stage, const std::filesystem::path& config_path, std::ostream& log,
                std::ostream& err);

struct Table1Row {
    std::string name;
    Frequency frequency = Frequency::Monthly;
    int bins = 3;
    std::size_t samples = 0;
    std::size_t sections = 0;
    bool include_null = false;
};

/// Dataset statistics for each run, computed over every decision time.
std::vector<Table1Row> replicate_table1(const std::vector<RunConfig>& runs);
void write_table1(const std::vector<Table1Row>& rows, std::ostream& out);
/// Reads `{"output_dir": ..., "runs": [path | inline config, ...]}`.
std::vector<RunConfig> load_config_set(const std::filesystem::path& path,
                                       std::filesystem::path* output_dir = nullptr);
int run_table1(const std::filesystem::path& config_path, std::ostream& log, std::ostream& err);

} // namespace quantformer::app
