#include "quantformer/app/pipeline.hpp"

#include "quantformer/app/svg_plot.hpp"
#include "quantformer/errors.hpp"
#include "quantformer/text_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

namespace quantformer::app {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kTable1Block = 64;

std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << content;
    if (!out) throw DataError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PrerequisiteError("missing artifact " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void require_file(const fs::path& path, const char* hint) {
    if (!fs::exists(path)) {
        throw PrerequisiteError("missing artifact " + path.string() + " (" + hint + ")");
    }
}

void prepare_output(const RunConfig& config) { fs::create_directories(config.output_dir); }

/// Writes every artifact, then a manifest hashing each of them.
void publish(const RunConfig& config, const std::string& stage,
             const std::vector<std::pair<std::string, std::string>>& artifacts,
             nlohmann::json extra = nlohmann::json::object()) {
    nlohmann::json files = nlohmann::json::object();
    for (const auto& [name, content] : artifacts) {
        write_text(config.output_dir / name, content);
        files[name] = hex64(fnv1a64(content));
    }
    nlohmann::json seeds{{"model", config.model.seed}, {"shuffle", config.train.shuffle_seed}};
    if (config.synthetic) seeds["synthetic"] = config.synthetic->seed;
    nlohmann::json manifest{{"stage", stage},
                            {"version", kVersion},
                            {"config_hash", config_hash(config)},
                            {"config", canonical_json(config)},
                            {"seeds", seeds},
                            {"artifacts", files}};
    if (!extra.empty()) manifest["details"] = std::move(extra);
    write_text(config.output_dir / ("manifest_" + stage + ".json"), manifest.dump(2) + "\n");
}

fs::path daily_source(const RunConfig& config) {
    if (config.data_path) return *config.data_path;
    if (config.synthetic) return config.output_dir / kSyntheticFile;
    throw ConfigError("config needs either 'data' or 'synthetic'");
}

PeriodSeries ingest(const RunConfig& config) {
    const fs::path source = daily_source(config);
    if (!fs::exists(source)) {
        throw PrerequisiteError("missing daily data " + source.string() +
                                (config.synthetic ? " (run synth first)" : ""));
    }
    return aggregate_period(ingest_daily_csv(source), config.frequency);
}

std::map<std::string, double> read_return_column(const fs::path& path, bool equity_layout) {
    std::istringstream in(read_text(path));
    std::string line;
    std::size_t line_no = 1;
    std::getline(in, line);
    const std::string expected = equity_layout ? "timestamp,value,period_return,turnover" : "timestamp,return";
    if (trim(line) != expected) throw ParseError(line_no, path.filename().string() + ": expected header " + expected);
    std::map<std::string, double> out;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto f = split_fields(trim(line));
        const std::size_t column = equity_layout ? 2 : 1;
        if (f.size() != (equity_layout ? 4u : 2u)) throw ParseError(line_no, path.filename().string() + ": wrong field count");
        const auto r = parse_double(f[column]);
        if (!r) throw ParseError(line_no, path.filename().string() + ": malformed return");
        out[std::string(f[0])] = *r;
    }
    return out;
}

std::string render(const auto& writer) {
    std::ostringstream out;
    writer(out);
    return out.str();
}

} // namespace

DecisionRange decision_range(const PeriodSeries& series, const RunConfig& config) {
    if (series.period_count() < kWindowLength + 1) {
        throw DataError("series has " + std::to_string(series.period_count()) +
                        " periods; at least " + std::to_string(kWindowLength + 1) + " are needed");
    }
    DecisionRange r;
    r.last = series.period_count() - 2;
    bool found = false;
    for (std::size_t t = kWindowLength - 1; t <= r.last; ++t) {
        if (normalized_section(series, t)) {
            r.first = t;
            found = true;
            break;
        }
    }
    if (!found) throw DataError("no decision time has two stocks with complete windows");
    const std::size_t count = r.last - r.first + 1;
    if (count < 2) throw DataError("need at least two decision times to split train and test");
    if (config.cutoff) {
        r.cutoff = *config.cutoff;
    } else {
        const auto train_count =
            static_cast<std::size_t>(std::floor(static_cast<double>(count) * (1.0 - config.test_fraction)));
        r.cutoff = r.first + std::max<std::size_t>(train_count, 1) - 1;
        r.cutoff = std::min(r.cutoff, r.last - 1);
    }
    if (r.cutoff < r.first || r.cutoff >= r.last) {
        throw ConfigError("cutoff " + std::to_string(r.cutoff) + " must lie in [" + std::to_string(r.first) +
                          ", " + std::to_string(r.last - 1) + "]");
    }
    return r;
}

PeriodSeries load_series(const RunConfig& config) {
    const fs::path store = config.output_dir / kPeriodFile;
    if (!fs::exists(store)) return ingest(config);
    std::istringstream in(read_text(store));
    PeriodSeries series = read_period_csv(in);
    if (series.frequency != config.frequency) {
        throw ConfigError(std::string("frequency: ") + store.string() + " holds " +
                          std::string(to_string(series.frequency)) + " periods but the config asks for " +
                          std::string(to_string(config.frequency)));
    }
    return series;
}

void run_synth(const RunConfig& config, std::ostream& log) {
    if (!config.synthetic) throw ConfigError("synthetic: the synth stage needs a 'synthetic' section");
    prepare_output(config);
    const SyntheticUniverse u = generate_universe(*config.synthetic);
    log << "synth: " << u.tickers.size() << " stocks, " << u.panel.bar_count() << " daily bars\n";
    publish(config, "synth", {{kSyntheticFile, render([&](std::ostream& o) { write_daily_csv(u.panel, o); })}});
}

void run_ingest(const RunConfig& config, std::ostream& log) {
    prepare_output(config);
    const PeriodSeries series = ingest(config);
    log << "ingest: " << series.records.size() << " stocks, " << series.period_count() << " "
        << to_string(series.frequency) << " periods\n";
    publish(config, "ingest", {{kPeriodFile, render([&](std::ostream& o) { write_period_csv(series, o); })}});
}

void run_train(const RunConfig& config, std::ostream& log) {
    prepare_output(config);
    const PeriodSeries series = load_series(config);
    const DecisionRange range = decision_range(series, config);
    const DatasetReport data = build_dataset(labeled_sections(series, range.first, range.cutoff), config.label);
    if (data.samples.empty()) throw DataError("no labeled training samples up to t=" + std::to_string(range.cutoff));
    log << "train: " << data.samples.size() << " samples from " << data.sections << " sections (t "
        << range.first << ".." << range.cutoff << ")\n";

    ModelConfig model = config.model;
    TrainConfig train_config = config.train;
    train_config.cutoff = range.cutoff;
    nlohmann::json details{{"samples", data.samples.size()},
                           {"sections", data.sections},
                           {"first_decision", range.first},
                           {"cutoff", range.cutoff}};
    if (config.grid_search) {
        const TimeSplit parts = validation_split(data.samples);
        const auto grid = default_grid(Candidate{model, train_config});
        const GridSearchResult found = grid_search(grid, parts.train, parts.test);
        model = found.best.model;
        train_config = found.best.train;
        nlohmann::json scores = nlohmann::json::array();
        for (std::size_t i = 0; i < grid.size(); ++i) {
            scores.push_back({{"model", grid[i].model}, {"validation_mse", found.validation_mse[i]}});
            log << "grid: d=" << grid[i].model.d << " H=" << grid[i].model.heads << " L=" << grid[i].model.layers
                << " mse=" << format_double(found.validation_mse[i]) << '\n';
        }
        details["grid"] = scores;
        details["grid_best"] = found.best_index;
    }
    const TrainResult result = train(data.samples, model, train_config);
    log << "train: mse " << format_double(result.loss_history.front()) << " -> "
        << format_double(result.loss_history.back()) << " over " << result.loss_history.size() << " epochs\n";
    publish(config, "train",
            {{kCheckpointFile, render([&](std::ostream& o) { save_checkpoint(o, model, result.params); })},
             {kLossFile, render([&](std::ostream& o) { write_loss_history_csv(result.loss_history, o); })}},
            details);
}

void run_backtest(const RunConfig& config, std::ostream& log) {
    const auto [model, params] = load_checkpoint(config.output_dir / kCheckpointFile);
    if (model.classes != static_cast<std::size_t>(config.label.bins)) {
        throw ConfigError("checkpoint predicts " + std::to_string(model.classes) + " classes but label.bins is " +
                          std::to_string(config.label.bins));
    }
    const PeriodSeries series = load_series(config);
    const DecisionRange range = decision_range(series, config);
    const EquityCurve curve = quantformer::run_backtest(series, range.cutoff + 1, range.last,
                                                        model_predictor(params, model), config.label,
                                                        config.strategy);
    const EquityCurve bench = uniform_benchmark(series, range.cutoff + 1, range.last, config.strategy);
    if (curve.ruined) log << "warning: portfolio ruined; backtest halted at " << curve.points.back().timestamp << '\n';
    log << "backtest: " << curve.points.size() - 1 << " periods, final value "
        << format_double(curve.points.back().value) << " vs uniform " << format_double(bench.points.back().value)
        << '\n';
    publish(config, "backtest",
            {{kEquityFile, render([&](std::ostream& o) { write_equity_csv(curve, o); })},
             {kWeightsFile, render([&](std::ostream& o) { write_weights_csv(curve, o); })},
             {kBenchmarkFile, render([&](std::ostream& o) { write_equity_csv(bench, o); })}},
            {{"first_decision", range.cutoff + 1}, {"last_decision", range.last}});
}

void run_report(const RunConfig& config, std::ostream& log) {
    const fs::path equity_path = config.output_dir / kEquityFile;
    const fs::path weights_path = config.output_dir / kWeightsFile;
    require_file(equity_path, "run backtest first");
    require_file(weights_path, "run backtest first");
    std::istringstream equity_in(read_text(equity_path));
    std::istringstream weights_in(read_text(weights_path));
    const EquityCurve curve = read_equity_csv(equity_in, weights_in);
    if (curve.points.size() < 2) throw DataError("equity curve has no traded periods");

    std::map<std::string, double> bench;
    if (config.benchmark_path) {
        bench = read_return_column(*config.benchmark_path, false);
    } else {
        require_file(config.output_dir / kBenchmarkFile, "run backtest first");
        bench = read_return_column(config.output_dir / kBenchmarkFile, true);
    }
    ReturnSeries series;
    series.periods_per_year = periods_per_year(config.frequency);
    series.risk_free_rate = config.risk_free_rate;
    series.portfolio = curve.returns();
    std::vector<double> bench_values{1.0};
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
        const auto it = bench.find(curve.points[i].timestamp);
        if (it == bench.end()) throw DataError("benchmark has no return for " + curve.points[i].timestamp);
        series.benchmark.push_back(it->second);
        bench_values.push_back(bench_values.back() * (1.0 + it->second));
    }
    const MetricsReport report =
        evaluate_metrics(series, curve.values(), curve.weights_history(), config.var_method, &log);

    std::vector<double> strategy_values;
    for (double v : curve.values()) strategy_values.push_back(v / curve.points.front().value);
    std::vector<std::string> labels;
    for (const auto& p : curve.points) labels.push_back(p.timestamp);
    const std::string title = config.name.empty() ? "Equity curve" : "Equity curve: " + config.name;
    const std::string svg = render([&](std::ostream& o) {
        write_line_plot({{"strategy", "#1f77b4", strategy_values}, {"benchmark", "#d62728", bench_values}}, labels,
                        title, o);
    });
    const nlohmann::json report_json = report;
    log << "report: " << report_json.dump() << '\n';
    publish(config, "report", {{kReportFile, report_json.dump(2) + "\n"}, {kPlotFile, svg}});
}

int run_command(const std::string& stage, const fs::path& config_path, std::ostream& log, std::ostream& err) {
    try {
        const RunConfig config = load_run_config(config_path);
        if (stage == "synth") run_synth(config, log);
        else if (stage == "ingest") run_ingest(config, log);
        else if (stage == "train") run_train(config, log);
        else if (stage == "backtest") run_backtest(config, log);
        else if (stage == "report") run_report(config, log);
        else throw ConfigError("unknown stage " + stage);
        return 0;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const SchemeError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const PrerequisiteError& e) {
        err << "prerequisite error: " << e.what() << '\n';
        return 3;
    } catch (const ParseError& e) {
        err << "data error: " << e.what() << '\n';
        return 4;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return 4;
    } catch (const GapError& e) {
        err << "data error: " << e.what() << '\n';
        return 4;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return 5;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

std::vector<Table1Row> replicate_table1(const std::vector<RunConfig>& runs) {
    std::vector<Table1Row> rows;
    for (const auto& run : runs) {
        PeriodSeries series;
        if (run.synthetic) {
            series = aggregate_period(generate_universe(*run.synthetic).panel, run.frequency);
        } else {
            series = ingest(run);
        }
        Table1Row row{run.name, run.frequency, run.label.bins, 0, 0, run.label.include_null};
        if (series.period_count() >= 2) {
            const std::size_t last = series.period_count() - 2;
            for (std::size_t start = 0; start <= last; start += kTable1Block) {
                const std::size_t stop = std::min(last, start + kTable1Block - 1);
                const DatasetReport data = build_dataset(labeled_sections(series, start, stop), run.label);
                row.samples += data.samples.size();
                row.sections += data.sections;
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_table1(const std::vector<Table1Row>& rows, std::ostream& out) {
    out << "| Strategy | Frequency | Label dim | Training samples | Section | Null-label |\n";
    out << "|---|---|---|---|---|---|\n";
    for (const auto& r : rows) {
        out << "| " << r.name << " | " << to_string(r.frequency) << " | " << r.bins << " | " << r.samples << " | "
            << r.sections << " | " << (r.include_null ? "w/" : "w/o") << " |\n";
    }
}

std::vector<RunConfig> load_config_set(const fs::path& path, fs::path* output_dir) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config set " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config set " + path.string() + " is not valid JSON: " + e.what());
    }
    const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
    if (!j.is_object() || !j.contains("runs") || !j.at("runs").is_array()) {
        throw ConfigError("config set needs a 'runs' array");
    }
    if (output_dir) {
        *output_dir = j.contains("output_dir") ? base / j.at("output_dir").get<std::string>() : fs::path();
    }
    std::vector<RunConfig> runs;
    for (const auto& entry : j.at("runs")) {
        if (entry.is_string()) {
            runs.push_back(load_run_config(base / entry.get<std::string>()));
        } else {
            runs.push_back(parse_run_config(entry, base));
        }
    }
    return runs;
}

int run_table1(const fs::path& config_path, std::ostream& log, std::ostream& err) {
    try {
        fs::path output_dir;
        const auto rows = replicate_table1(load_config_set(config_path, &output_dir));
        const std::string table = render([&](std::ostream& o) { write_table1(rows, o); });
        log << table;
        if (!output_dir.empty()) {
            fs::create_directories(output_dir);
            write_text(output_dir / "table1.md", table);
        }
        return 0;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

} // namespace quantformer::app
