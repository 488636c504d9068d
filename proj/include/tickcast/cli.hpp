#pragma once

// Command implementations behind the tickcast binary. They are plain
// functions over option structs so tests can drive them without a process
// boundary; tools/main.cpp only parses arguments and maps exceptions to exit
// codes. Every output file embeds the tool version and the hash of the
// resolved configuration.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tickcast/benchmarks.hpp"
#include "tickcast/common.hpp"
#include "tickcast/eval.hpp"
#include "tickcast/features.hpp"
#include "tickcast/generator.hpp"
#include "tickcast/mixtures.hpp"
#include "tickcast/net.hpp"
#include "tickcast/orderflow.hpp"
#include "tickcast/sim.hpp"

namespace tickcast::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;  // usage / config errors
inline constexpr int kExitIo = 2;
inline constexpr int kExitNumeric = 3;

inline std::string meta_string(std::uint64_t config_hash) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "tickcast %s config=%016llx",
                  std::string(kToolVersion).c_str(),
                  static_cast<unsigned long long>(config_hash));
    return buf;
}

// Relative output paths are redirected under TICKCAST_OUT_DIR when set.
inline std::string out_path(const std::string& path) {
    const char* dir = std::getenv("TICKCAST_OUT_DIR");
    if (dir == nullptr || *dir == '\0' || path == "-") return path;
    std::filesystem::path p(path);
    if (p.is_absolute()) return path;
    return (std::filesystem::path(dir) / p).string();
}

// --- generate --------------------------------------------------------------------

struct GenerateOptions {
    orderflow::GeneratorConfig gen;
    double duration_seconds = 600.0;
    std::uint64_t max_events = 0;  // 0 = no cap
    std::string out = "stream.ndjson";
    std::uint64_t config_hash = 0;
};

inline void cmd_generate(const GenerateOptions& opts) {
    opts.gen.validate();
    orderflow::StreamWriter writer(out_path(opts.out));
    writer.write_line("# " + meta_string(opts.config_hash) +
                      " seed=" + std::to_string(opts.gen.seed));
    orderflow::StreamGenerator gen(opts.gen);
    if (opts.duration_seconds > 0)
        gen.generate(
            opts.duration_seconds,
            [&writer](const orderflow::OrderFlowEvent& ev) {
                writer.write_line(orderflow::serialize_message(ev));
            },
            opts.max_events);
}

// --- build -----------------------------------------------------------------------

struct BuildOptions {
    std::vector<std::string> inputs;  // one or two stream files (second = pair B)
    std::string out_prefix = "dataset";
    features::DatasetConfig dataset;
    // Fraction-based split boundaries over the anchor time span, used when
    // the explicit ranges in `dataset` are unset.
    double train_fraction = 0.7;
    double validation_fraction = 0.15;
    bool export_csv = false;
    std::uint64_t config_hash = 0;
};

struct BuildResult {
    std::string train_path, validation_path, test_path;
    std::size_t n_train = 0, n_validation = 0, n_test = 0;
};

inline BuildResult cmd_build(const BuildOptions& opts) {
    if (opts.inputs.empty() || opts.inputs.size() > 2)
        throw ConfigError("build expects one or two input streams");
    std::vector<orderflow::OrderFlowEvent> events;
    for (std::size_t i = 0; i < opts.inputs.size(); ++i) {
        auto part = orderflow::read_stream(opts.inputs[i]);
        // The input slot decides the pair label when two streams are joined.
        if (opts.inputs.size() == 2)
            for (auto& ev : part)
                ev.pair = i == 0 ? orderflow::Pair::PairA : orderflow::Pair::PairB;
        events.insert(events.end(), part.begin(), part.end());
    }
    std::stable_sort(events.begin(), events.end(),
                     [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });

    features::DatasetConfig cfg = opts.dataset;
    auto samples = features::build_dataset(events, cfg);
    if (samples.empty()) throw DomainError("build produced no samples");

    const bool explicit_ranges = cfg.train.end > cfg.train.begin;
    if (!explicit_ranges) {
        if (!(opts.train_fraction > 0 && opts.validation_fraction > 0 &&
              opts.train_fraction + opts.validation_fraction < 1.0))
            throw ConfigError("split fractions must be positive and sum below 1");
        const Timestamp t0 = samples.front().anchor_timestamp;
        const Timestamp t1 = samples.back().anchor_timestamp + 1;
        const double span = static_cast<double>(t1 - t0);
        const Timestamp train_end =
            t0 + static_cast<Timestamp>(span * opts.train_fraction);
        const Timestamp val_end = t0 + static_cast<Timestamp>(
                                           span * (opts.train_fraction +
                                                   opts.validation_fraction));
        cfg.train = {t0, train_end};
        cfg.validation = {train_end, val_end};
        cfg.test = {val_end, t1};
    }
    auto splits = features::split_by_date(std::move(samples), cfg);
    if (splits.train.empty() || splits.validation.empty() || splits.test.empty())
        throw ConfigError("a split range contains no samples; adjust boundaries");

    const auto stats = features::fit_normalization(splits.train);
    features::apply_normalization(splits.train, stats);
    features::apply_normalization(splits.validation, stats);
    features::apply_normalization(splits.test, stats);

    BuildResult result;
    result.n_train = splits.train.size();
    result.n_validation = splits.validation.size();
    result.n_test = splits.test.size();
    auto write = [&](const std::string& suffix, std::vector<features::Sample>& part,
                     std::string& path_out) {
        features::Dataset ds;
        ds.m = cfg.m;
        ds.tau_seconds = cfg.tau_seconds;
        ds.tick_size = cfg.tick_size;
        ds.price_ref = cfg.price_ref;
        ds.stride = cfg.stride;
        ds.normalized = true;
        ds.stats = stats;
        ds.samples = std::move(part);
        path_out = out_path(opts.out_prefix + "." + suffix + ".tkds");
        features::write_dataset(path_out, ds, opts.config_hash);
        if (opts.export_csv)
            features::export_csv(out_path(opts.out_prefix + "." + suffix + ".csv"), ds,
                                 meta_string(opts.config_hash));
    };
    write("train", splits.train, result.train_path);
    write("validation", splits.validation, result.validation_path);
    write("test", splits.test, result.test_path);
    return result;
}

// --- train -----------------------------------------------------------------------

struct TrainOptions {
    std::string train_path;
    std::string validation_path;
    std::string family = "poisson";
    net::NetConfig net;
    net::TrainConfig trainer;
    std::string out = "model.tkcp";
    std::string log_csv = "training_log.csv";
    std::string resume;  // checkpoint path to continue from
    std::uint64_t config_hash = 0;
};

inline void write_training_log(const std::string& path,
                               std::span<const net::EpochStats> history,
                               std::uint64_t config_hash) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open training log: " + path);
    out << "# " << meta_string(config_hash) << "\n";
    out << "epoch,train_nll,validation_nll,wall_seconds\n";
    out.precision(12);
    for (const auto& h : history)
        out << h.epoch << ',' << h.train_nll << ',' << h.val_nll << ',' << h.wall_seconds
            << '\n';
}

inline void cmd_train(const TrainOptions& opts) {
    const auto train_ds = features::read_dataset(opts.train_path);
    const auto val_ds = features::read_dataset(opts.validation_path);
    if (train_ds.samples.empty() || val_ds.samples.empty())
        throw ConfigError("training requires non-empty train and validation datasets");

    const auto family = mixtures::family_from_string(opts.family);
    net::Checkpoint ck;
    if (!opts.resume.empty()) {
        ck = net::load_checkpoint(opts.resume);
        if (ck.trainer.current.family != family)
            throw ConfigError("resume checkpoint family differs from requested head");
        const int remaining = opts.trainer.max_epochs - ck.trainer.epoch;
        ck.trainer.stopped = false;
        net::train_epochs(ck.trainer, train_ds.samples, val_ds.samples, opts.trainer,
                          std::max(0, remaining));
    } else {
        ck.trainer = net::make_trainer(opts.net, family, opts.trainer, train_ds.samples);
        net::train_epochs(ck.trainer, train_ds.samples, val_ds.samples, opts.trainer,
                          opts.trainer.max_epochs);
    }
    ck.stats = train_ds.stats;
    ck.config_hash = opts.config_hash;
    net::save_checkpoint(out_path(opts.out), ck);
    write_training_log(out_path(opts.log_csv), ck.trainer.history, opts.config_hash);
}

// --- fit-benchmark -----------------------------------------------------------------

struct FitBenchmarkOptions {
    std::string kind = "birthdeath";  // birthdeath | glm
    std::string stream;               // birthdeath input
    std::string dataset;              // glm training dataset
    double tick_size = 0.01;
    int levels = 5;
    std::string out = "benchmark.json";
    std::uint64_t config_hash = 0;
};

inline void cmd_fit_benchmark(const FitBenchmarkOptions& opts) {
    nlohmann::json j;
    if (opts.kind == "birthdeath") {
        if (opts.stream.empty()) throw ConfigError("birthdeath fit needs --stream");
        const auto events = orderflow::read_stream(opts.stream);
        const auto rates = benchmarks::fit_birth_death(events, opts.tick_size, opts.levels);
        j = rates.to_json();
        j["kind"] = "birthdeath";
    } else if (opts.kind == "glm") {
        if (opts.dataset.empty()) throw ConfigError("glm fit needs --dataset");
        const auto ds = features::read_dataset(opts.dataset);
        const auto params = benchmarks::fit_glm(ds.samples);
        j = params.to_json();
        j["kind"] = "glm";
    } else {
        throw ConfigError("unknown benchmark kind: " + opts.kind);
    }
    j["version"] = std::string(kToolVersion);
    j["config_hash"] = meta_string(opts.config_hash);
    std::ofstream out(out_path(opts.out));
    if (!out) throw IoError("cannot open for writing: " + opts.out);
    out << j.dump(2) << "\n";
}

// --- shared model loading -------------------------------------------------------------

struct ModelSpec {
    std::string name;
    std::string kind;  // checkpoint | glm | birthdeath
    std::string path;
};

// "name=kind:path"
inline ModelSpec parse_model_spec(const std::string& text) {
    const auto eq = text.find('=');
    const auto colon = text.find(':', eq == std::string::npos ? 0 : eq);
    if (eq == std::string::npos || colon == std::string::npos || eq == 0 || colon <= eq + 1)
        throw ConfigError("bad model spec (want name=kind:path): " + text);
    ModelSpec spec;
    spec.name = text.substr(0, eq);
    spec.kind = text.substr(eq + 1, colon - eq - 1);
    spec.path = text.substr(colon + 1);
    if (spec.kind != "checkpoint" && spec.kind != "glm" && spec.kind != "birthdeath")
        throw ConfigError("unknown model kind: " + spec.kind);
    return spec;
}

// Book snapshots at each test anchor, replayed once per pair from the
// provided streams. Used by birth-death forecasting.
inline std::vector<mixtures::Forecast> birth_death_forecasts(
    const benchmarks::BirthDeathRates& rates, const features::Dataset& test,
    const std::vector<std::string>& streams, int n_paths, std::uint64_t seed) {
    if (streams.empty())
        throw ConfigError("birthdeath forecasts need the source --stream for book replay");
    std::vector<orderflow::OrderFlowEvent> events;
    for (std::size_t i = 0; i < streams.size(); ++i) {
        auto part = orderflow::read_stream(streams[i]);
        if (streams.size() == 2)
            for (auto& ev : part)
                ev.pair = i == 0 ? orderflow::Pair::PairA : orderflow::Pair::PairB;
        events.insert(events.end(), part.begin(), part.end());
    }
    std::stable_sort(events.begin(), events.end(),
                     [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });

    std::map<int, orderflow::BookState> books;
    books.emplace(1, orderflow::BookState(test.tick_size));
    books.emplace(2, orderflow::BookState(test.tick_size));

    std::vector<mixtures::Forecast> out;
    out.reserve(test.samples.size());
    std::size_t next_event = 0;
    for (std::size_t i = 0; i < test.samples.size(); ++i) {
        const auto& s = test.samples[i];
        if (i > 0 && s.anchor_timestamp < test.samples[i - 1].anchor_timestamp)
            throw DomainError("test samples must be sorted by anchor timestamp");
        while (next_event < events.size() &&
               events[next_event].timestamp <= s.anchor_timestamp) {
            books.at(static_cast<int>(events[next_event].pair))
                .apply(events[next_event]);
            ++next_event;
        }
        const auto& book = books.at(s.pair);
        if (!book.has_mid())
            throw DomainError("book replay has no mid at a test anchor");
        out.push_back(benchmarks::forecast_birth_death(
            rates, book, s.anchor_price, test.tau_seconds, n_paths,
            derive_seed(seed, static_cast<std::uint64_t>(i)), test.price_ref));
    }
    return out;
}

inline sim::ModelForecasts compute_forecasts(const ModelSpec& spec,
                                             const features::Dataset& test,
                                             const std::vector<std::string>& streams,
                                             int bd_paths, std::uint64_t bd_seed) {
    sim::ModelForecasts model;
    model.name = spec.name;
    if (spec.kind == "checkpoint") {
        auto ck = net::load_checkpoint(spec.path);
        model.forecasts.reserve(test.samples.size());
        for (const auto& s : test.samples)
            model.forecasts.push_back(net::predict(s, ck.trainer.best));
    } else if (spec.kind == "glm") {
        std::ifstream in(spec.path);
        if (!in) throw IoError("cannot open model file: " + spec.path);
        nlohmann::json j;
        in >> j;
        const auto params = benchmarks::GlmParams::from_json(j);
        model.forecasts.reserve(test.samples.size());
        for (const auto& s : test.samples)
            model.forecasts.push_back(benchmarks::forecast_glm(params, s));
    } else {
        std::ifstream in(spec.path);
        if (!in) throw IoError("cannot open model file: " + spec.path);
        nlohmann::json j;
        in >> j;
        const auto rates = benchmarks::BirthDeathRates::from_json(j);
        model.forecasts = birth_death_forecasts(rates, test, streams, bd_paths, bd_seed);
    }
    return model;
}

// --- evaluate --------------------------------------------------------------------

struct PeriodSpec {
    std::string label;
    features::TimeRange range;
};

// "label:begin_us:end_us"
inline PeriodSpec parse_period_spec(const std::string& text) {
    const auto c1 = text.find(':');
    const auto c2 = text.find(':', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
        throw ConfigError("bad period spec (want label:begin_us:end_us): " + text);
    PeriodSpec p;
    p.label = text.substr(0, c1);
    p.range.begin = std::stoll(text.substr(c1 + 1, c2 - c1 - 1));
    p.range.end = std::stoll(text.substr(c2 + 1));
    return p;
}

struct EvaluateOptions {
    std::string test_path;
    std::vector<std::string> models;   // name=kind:path
    std::string baseline;              // model name used for loss scaling
    std::vector<std::string> streams;  // replay sources for birthdeath models
    int bd_paths = 2000;
    std::uint64_t bd_seed = 1;
    std::vector<std::string> periods;  // label:begin:end; default one period "all"
    std::vector<double> rhos = {0.5, 0.9};
    std::string out_json = "eval_report.json";
    std::string out_csv = "eval_report.csv";
    std::uint64_t config_hash = 0;
};

inline nlohmann::json cmd_evaluate(const EvaluateOptions& opts) {
    if (opts.models.empty()) throw ConfigError("evaluate needs at least one model");
    const auto test = features::read_dataset(opts.test_path);
    if (test.samples.empty()) throw DomainError("empty test dataset");

    std::vector<ModelSpec> specs;
    for (const auto& m : opts.models) specs.push_back(parse_model_spec(m));
    const std::string baseline_name = opts.baseline.empty() ? specs.back().name
                                                            : opts.baseline;

    std::vector<sim::ModelForecasts> forecasts;
    for (const auto& spec : specs)
        forecasts.push_back(
            compute_forecasts(spec, test, opts.streams, opts.bd_paths, opts.bd_seed));

    const auto baseline_it =
        std::find_if(forecasts.begin(), forecasts.end(),
                     [&](const auto& m) { return m.name == baseline_name; });
    if (baseline_it == forecasts.end())
        throw ConfigError("baseline model '" + baseline_name + "' not among the models");

    std::vector<long> truths;
    std::vector<std::string> labels;
    truths.reserve(test.samples.size());
    std::vector<PeriodSpec> period_specs;
    for (const auto& p : opts.periods) period_specs.push_back(parse_period_spec(p));
    for (const auto& s : test.samples) {
        truths.push_back(s.target);
        std::string label = period_specs.empty() ? "all" : "other";
        for (const auto& p : period_specs)
            if (p.range.contains(s.anchor_timestamp)) {
                label = p.label;
                break;
            }
        labels.push_back(std::move(label));
    }

    nlohmann::json reports = nlohmann::json::array();
    std::vector<std::string> csv_rows;
    for (const auto& model : forecasts) {
        auto report = eval::evaluate(model.forecasts, truths, baseline_it->forecasts, labels,
                                     opts.rhos);
        report.model = model.name;
        report.baseline = baseline_name;
        reports.push_back(eval::report_to_json(report));
        const auto rows = eval::report_csv_rows(report);
        csv_rows.insert(csv_rows.end(), rows.begin(), rows.end());
    }

    nlohmann::json out{{"version", std::string(kToolVersion)},
                       {"config_hash", meta_string(opts.config_hash)},
                       {"baseline", baseline_name},
                       {"reports", std::move(reports)}};
    {
        std::ofstream f(out_path(opts.out_json));
        if (!f) throw IoError("cannot open for writing: " + opts.out_json);
        f << out.dump(2) << "\n";
    }
    {
        std::ofstream f(out_path(opts.out_csv));
        if (!f) throw IoError("cannot open for writing: " + opts.out_csv);
        f << "# " << meta_string(opts.config_hash) << "\n";
        f << "model,period,metric,value,scaled_value\n";
        for (const auto& row : csv_rows) f << row << "\n";
    }
    return out;
}

// --- simulate --------------------------------------------------------------------

struct SimulateOptions {
    std::string test_path;
    std::vector<std::string> models;
    std::vector<std::string> streams;
    int bd_paths = 2000;
    std::uint64_t bd_seed = 1;
    sim::SimConfig sim;
    std::string out_scenarios = "sim_scenarios.csv";
    std::string out_trajectories = "sim_trajectories.csv";
    std::string out_histogram = "sim_histogram.json";
    std::string out_ttests = "sim_ttests.json";
    int histogram_bins = 50;
    std::uint64_t config_hash = 0;
};

inline nlohmann::json cmd_simulate(const SimulateOptions& opts) {
    if (opts.models.empty()) throw ConfigError("simulate needs at least one model");
    opts.sim.validate();
    const auto test = features::read_dataset(opts.test_path);
    if (test.samples.empty()) throw DomainError("empty test dataset");

    std::vector<ModelSpec> specs;
    for (const auto& m : opts.models) specs.push_back(parse_model_spec(m));
    std::vector<sim::ModelForecasts> forecasts;
    for (const auto& spec : specs)
        forecasts.push_back(
            compute_forecasts(spec, test, opts.streams, opts.bd_paths, opts.bd_seed));

    sim::SimConfig cfg = opts.sim;
    cfg.tick_size = test.tick_size;  // realized moves are stored in dataset ticks
    const auto result = sim::run_experiment(forecasts, test.samples, cfg);

    const std::string meta = meta_string(opts.config_hash) +
                             " master_seed=" + std::to_string(cfg.master_seed);
    sim::write_scenarios_csv(out_path(opts.out_scenarios), result, meta);
    sim::write_trajectories_csv(out_path(opts.out_trajectories), result, meta);

    auto hist = sim::histogram_json(result, opts.histogram_bins);
    hist["version"] = std::string(kToolVersion);
    hist["config_hash"] = meta_string(opts.config_hash);
    hist["master_seed"] = cfg.master_seed;
    {
        std::ofstream f(out_path(opts.out_histogram));
        if (!f) throw IoError("cannot open for writing: " + opts.out_histogram);
        f << hist.dump(2) << "\n";
    }

    // Paired t-tests for every (benchmark, deep-model) pair, on the scaled
    // final capital distributions.
    nlohmann::json table = nlohmann::json::array();
    for (std::size_t bi = 0; bi < specs.size(); ++bi) {
        if (specs[bi].kind == "checkpoint") continue;
        for (std::size_t mi = 0; mi < specs.size(); ++mi) {
            if (specs[mi].kind != "checkpoint") continue;
            nlohmann::json entry{{"benchmark", specs[bi].name}, {"model", specs[mi].name}};
            try {
                const auto t = sim::paired_t_test(result.scaled_finals[mi],
                                                  result.scaled_finals[bi]);
                entry["t"] = t.t;
                entry["p"] = t.p;
                entry["df"] = t.df;
                entry["mean_diff"] = t.mean_diff;
            } catch (const DomainError& e) {
                entry["degenerate"] = true;
                entry["error"] = e.what();
            }
            table.push_back(std::move(entry));
        }
    }
    nlohmann::json out{{"version", std::string(kToolVersion)},
                       {"config_hash", meta_string(opts.config_hash)},
                       {"master_seed", cfg.master_seed},
                       {"ttests", std::move(table)}};
    {
        std::ofstream f(out_path(opts.out_ttests));
        if (!f) throw IoError("cannot open for writing: " + opts.out_ttests);
        f << out.dump(2) << "\n";
    }
    return out;
}

}  // namespace tickcast::cli
