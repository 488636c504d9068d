// tickcast command-line interface: data generation and ingestion, dataset
// building, training, evaluation, and the Kelly trading simulation. Options
// may come from flags or a TOML-style config file (flags win).

#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tickcast/cli.hpp"

namespace cli = tickcast::cli;

namespace {

tickcast::features::PriceRef parse_price_ref(const std::string& s) {
    if (s == "mid") return tickcast::features::PriceRef::Mid;
    if (s == "lasttrade") return tickcast::features::PriceRef::LastTrade;
    throw tickcast::ConfigError("unknown price reference: " + s);
}

tickcast::net::Activation parse_activation(const std::string& s) {
    if (s == "tanh") return tickcast::net::Activation::Tanh;
    if (s == "relu") return tickcast::net::Activation::ReLU;
    throw tickcast::ConfigError("unknown activation: " + s);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tickcast: probabilistic tick-move forecasting over order-flow streams"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML-style config file; flags override file values");
    app.allow_config_extras(false);

    // generate
    cli::GenerateOptions gen;
    auto* sc_gen = app.add_subcommand("generate", "Synthesize an order-flow stream");
    sc_gen->add_option("--out", gen.out, "Output stream (.ndjson, .gz, or -)");
    sc_gen->add_option("--duration", gen.duration_seconds, "Simulated seconds");
    sc_gen->add_option("--max-events", gen.max_events, "Event-count cap (0 = none)");
    sc_gen->add_option("--limit-rate", gen.gen.limit_rate_per_level,
                       "Limit arrivals/s per side and level");
    sc_gen->add_option("--open-rate", gen.gen.open_rate, "Market orders/s per side");
    sc_gen->add_option("--cancel-rate", gen.gen.cancel_rate, "Cancels/s per resting order");
    sc_gen->add_option("--levels", gen.gen.levels, "Active placement levels per side");
    sc_gen->add_option("--size-log-mean", gen.gen.size_log_mean, "Order size lognormal mean");
    sc_gen->add_option("--size-log-sd", gen.gen.size_log_sd, "Order size lognormal sd");
    sc_gen->add_option("--min-size", gen.gen.min_size, "Minimum order size");
    sc_gen->add_option("--signal-strength", gen.gen.signal_strength,
                       "Imbalance coupling strength (0 = no signal)");
    sc_gen->add_option("--tick-size", gen.gen.tick_size, "Price tick");
    sc_gen->add_option("--initial-price", gen.gen.initial_price, "Starting price");
    sc_gen->add_option("--seed-levels", gen.gen.seed_levels, "Pre-seeded book levels");
    sc_gen->add_option("--seed-size", gen.gen.seed_size, "Pre-seeded order size");
    sc_gen->add_option("--start-time", gen.gen.start_time, "Stream start (us since epoch)");
    sc_gen->add_option("--seed", gen.gen.seed, "Generator seed");
    std::string gen_pair = "A";
    sc_gen->add_option("--pair", gen_pair, "Currency pair label (A or B)");

    // build
    cli::BuildOptions build;
    auto* sc_build = app.add_subcommand("build", "Build train/validation/test datasets");
    sc_build->add_option("--input", build.inputs, "Input stream(s); second file = pair B")
        ->expected(1, 2);
    sc_build->add_option("--out-prefix", build.out_prefix, "Dataset path prefix");
    sc_build->add_option("-m,--window", build.dataset.m, "Covariate window length m");
    sc_build->add_option("--tau", build.dataset.tau_seconds, "Forecast horizon seconds");
    sc_build->add_option("--tick-size", build.dataset.tick_size, "Price tick");
    sc_build->add_option("--stride", build.dataset.stride, "Anchor stride");
    std::string price_ref = "mid";
    sc_build->add_option("--price-ref", price_ref, "Price reference: mid | lasttrade");
    sc_build->add_option("--train-begin", build.dataset.train.begin, "Train range begin (us)");
    sc_build->add_option("--train-end", build.dataset.train.end, "Train range end (us)");
    sc_build->add_option("--validation-begin", build.dataset.validation.begin,
                         "Validation range begin (us)");
    sc_build->add_option("--validation-end", build.dataset.validation.end,
                         "Validation range end (us)");
    sc_build->add_option("--test-begin", build.dataset.test.begin, "Test range begin (us)");
    sc_build->add_option("--test-end", build.dataset.test.end, "Test range end (us)");
    sc_build->add_option("--train-fraction", build.train_fraction,
                         "Train share when explicit ranges are unset");
    sc_build->add_option("--validation-fraction", build.validation_fraction,
                         "Validation share when explicit ranges are unset");
    sc_build->add_flag("--csv", build.export_csv, "Also export CSV copies");

    // train
    cli::TrainOptions train;
    auto* sc_train = app.add_subcommand("train", "Train a mixture-density head");
    sc_train->add_option("--train", train.train_path, "Training dataset (.tkds)");
    sc_train->add_option("--validation", train.validation_path, "Validation dataset (.tkds)");
    sc_train->add_option("--head", train.family,
                         "Mixture head: poisson | negbinomial | ztpoisson");
    sc_train->add_option("--out", train.out, "Checkpoint output path");
    sc_train->add_option("--log", train.log_csv, "Training log CSV path");
    sc_train->add_option("--resume", train.resume, "Resume from checkpoint");
    sc_train->add_option("--lstm-layers", train.net.lstm_layers, "Recurrent layers L");
    sc_train->add_option("--state-size", train.net.state_size, "LSTM state size");
    sc_train->add_option("--dense-layers", train.net.dense_layers, "Dense layers D");
    sc_train->add_option("--dense-width", train.net.dense_width, "Dense layer width");
    sc_train->add_option("--embed-type", train.net.embed_type, "Order-type embedding dim");
    sc_train->add_option("--embed-side", train.net.embed_side, "Side embedding dim");
    sc_train->add_option("--embed-hour", train.net.embed_hour, "Hour embedding dim");
    sc_train->add_option("--embed-pair", train.net.embed_pair, "Pair embedding dim");
    sc_train->add_option("--keep-prob", train.net.keep_prob, "Dropout keep probability");
    std::string embed_act = "tanh", dense_act = "relu";
    sc_train->add_option("--embed-activation", embed_act, "tanh | relu");
    sc_train->add_option("--dense-activation", dense_act, "tanh | relu");
    sc_train->add_flag("--project-statics", train.net.project_statics,
                       "Dense-project statics instead of per-step embeddings");
    sc_train->add_option("--init-seed", train.net.seed, "Parameter init seed");
    sc_train->add_option("--lr", train.trainer.lr, "Adam learning rate");
    sc_train->add_option("--batch-size", train.trainer.batch_size, "Mini-batch size");
    sc_train->add_option("--epochs", train.trainer.max_epochs, "Maximum epochs");
    sc_train->add_option("--patience", train.trainer.patience,
                         "Non-improving evaluations tolerated before stopping");
    sc_train->add_option("--clip-norm", train.trainer.clip_norm, "Gradient norm clip");
    sc_train->add_option("--seed", train.trainer.seed, "Training seed (shuffle, dropout)");
    sc_train->add_flag("--verbose", train.trainer.verbose, "Log per-epoch losses");

    // fit-benchmark
    cli::FitBenchmarkOptions fitb;
    auto* sc_fitb = app.add_subcommand("fit-benchmark", "Fit a literature baseline model");
    sc_fitb->add_option("--kind", fitb.kind, "birthdeath | glm");
    sc_fitb->add_option("--stream", fitb.stream, "Stream file (birthdeath)");
    sc_fitb->add_option("--dataset", fitb.dataset, "Training dataset (glm)");
    sc_fitb->add_option("--tick-size", fitb.tick_size, "Price tick (birthdeath)");
    sc_fitb->add_option("--levels", fitb.levels, "Tracked levels (birthdeath)");
    sc_fitb->add_option("--out", fitb.out, "Output JSON path");

    // evaluate
    cli::EvaluateOptions eval;
    auto* sc_eval = app.add_subcommand("evaluate", "Two-step forecast evaluation");
    sc_eval->add_option("--test", eval.test_path, "Test dataset (.tkds)");
    sc_eval->add_option("--model", eval.models, "Model spec name=kind:path (repeatable)");
    sc_eval->add_option("--baseline", eval.baseline, "Baseline model name for scaling");
    sc_eval->add_option("--stream", eval.streams, "Stream(s) for birthdeath book replay")
        ->expected(0, 2);
    sc_eval->add_option("--bd-paths", eval.bd_paths,
                        "Simulated paths per birthdeath forecast");
    sc_eval->add_option("--bd-seed", eval.bd_seed, "Birthdeath forecast seed");
    sc_eval->add_option("--period", eval.periods, "Period spec label:begin_us:end_us");
    sc_eval->add_option("--rho", eval.rhos, "Quantile levels");
    sc_eval->add_option("--out-json", eval.out_json, "Report JSON path");
    sc_eval->add_option("--out-csv", eval.out_csv, "Report CSV path");

    // simulate
    cli::SimulateOptions sim;
    auto* sc_sim = app.add_subcommand("simulate", "Kelly-criterion trading simulation");
    sc_sim->add_option("--test", sim.test_path, "Test dataset (.tkds)");
    sc_sim->add_option("--model", sim.models, "Model spec name=kind:path (repeatable)");
    sc_sim->add_option("--stream", sim.streams, "Stream(s) for birthdeath book replay")
        ->expected(0, 2);
    sc_sim->add_option("--bd-paths", sim.bd_paths, "Simulated paths per birthdeath forecast");
    sc_sim->add_option("--bd-seed", sim.bd_seed, "Birthdeath forecast seed");
    sc_sim->add_option("--capital", sim.sim.initial_capital, "Initial capital");
    sc_sim->add_option("-T,--iterations", sim.sim.iterations, "Trades per scenario");
    sc_sim->add_option("-K,--scenarios", sim.sim.scenarios, "Scenario count");
    sc_sim->add_option("--risk-aversion", sim.sim.risk_aversion, "Kelly multiplier epsilon");
    sc_sim->add_flag("!--no-leverage", sim.sim.allow_leverage, "Clamp |f| to 1");
    sc_sim->add_option("--seed", sim.sim.master_seed, "Master simulation seed");
    sc_sim->add_option("--threads", sim.sim.threads, "Worker threads over scenarios");
    sc_sim->add_option("--trajectories", sim.sim.trajectory_count,
                       "Scenarios with full trajectories kept");
    sc_sim->add_option("--histogram-bins", sim.histogram_bins, "Histogram bin count");
    sc_sim->add_option("--out-scenarios", sim.out_scenarios, "Per-scenario CSV path");
    sc_sim->add_option("--out-trajectories", sim.out_trajectories, "Trajectory CSV path");
    sc_sim->add_option("--out-histogram", sim.out_histogram, "Histogram JSON path");
    sc_sim->add_option("--out-ttests", sim.out_ttests, "Paired t-test JSON path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? cli::kExitOk : cli::kExitUsage;
    }

    try {
        const std::uint64_t config_hash = tickcast::fnv1a64(app.config_to_str(true, false));
        if (sc_gen->parsed()) {
            gen.gen.pair = gen_pair == "B" ? tickcast::orderflow::Pair::PairB
                                           : tickcast::orderflow::Pair::PairA;
            gen.config_hash = config_hash;
            cli::cmd_generate(gen);
        } else if (sc_build->parsed()) {
            build.dataset.price_ref = parse_price_ref(price_ref);
            build.config_hash = config_hash;
            const auto result = cli::cmd_build(build);
            std::cerr << "[tickcast] built " << result.n_train << "/" << result.n_validation
                      << "/" << result.n_test << " train/validation/test samples\n";
        } else if (sc_train->parsed()) {
            train.net.embed_activation = parse_activation(embed_act);
            train.net.dense_activation = parse_activation(dense_act);
            train.config_hash = config_hash;
            cli::cmd_train(train);
        } else if (sc_fitb->parsed()) {
            fitb.config_hash = config_hash;
            cli::cmd_fit_benchmark(fitb);
        } else if (sc_eval->parsed()) {
            eval.config_hash = config_hash;
            cli::cmd_evaluate(eval);
        } else if (sc_sim->parsed()) {
            sim.config_hash = config_hash;
            cli::cmd_simulate(sim);
        }
    } catch (const tickcast::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return cli::kExitUsage;
    } catch (const tickcast::DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return cli::kExitUsage;
    } catch (const tickcast::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return cli::kExitNumeric;
    } catch (const tickcast::Error& e) {
        // Parse, schema, ordering and plain I/O failures are input problems.
        std::cerr << "I/O error: " << e.what() << "\n";
        return cli::kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return cli::kExitUsage;
    }
    return cli::kExitOk;
}
