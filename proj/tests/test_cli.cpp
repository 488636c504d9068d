#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "tickcast/cli.hpp"

namespace cli = tickcast::cli;
namespace ft = tickcast::features;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    EXPECT_TRUE(in) << path;
    return std::string(std::istreambuf_iterator<char>(in), {});
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("tickcast_cli_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int counter() {
        static int c = 0;
        return ++c;
    }
};

cli::GenerateOptions small_generate(const std::string& out, std::uint64_t seed = 5) {
    cli::GenerateOptions g;
    g.out = out;
    g.duration_seconds = 240.0;
    g.gen.limit_rate_per_level = 1.0;
    g.gen.open_rate = 1.0;
    g.gen.cancel_rate = 0.15;
    g.gen.levels = 3;
    g.gen.seed_levels = 3;
    g.gen.signal_strength = 1.5;
    g.gen.seed = seed;
    g.config_hash = 0x42;
    return g;
}

cli::BuildOptions small_build(const std::string& input, const std::string& prefix) {
    cli::BuildOptions b;
    b.inputs = {input};
    b.out_prefix = prefix;
    b.dataset.m = 8;
    b.dataset.tau_seconds = 2.0;
    b.dataset.stride = 2;
    b.config_hash = 0x42;
    return b;
}

}  // namespace

TEST(CmdGenerate, ZeroDurationWritesMetaOnlyFile) {
    TempDir dir;
    auto opts = small_generate(dir.file("empty.ndjson"));
    opts.duration_seconds = 0.0;
    cli::cmd_generate(opts);
    const auto events = tickcast::orderflow::read_stream(opts.out);
    EXPECT_TRUE(events.empty());
    const auto content = slurp(opts.out);
    EXPECT_EQ(content.rfind("# tickcast", 0), 0u);  // meta header present
}

TEST(CmdGenerate, FixedSeedIsByteIdentical) {
    TempDir dir;
    auto a = small_generate(dir.file("a.ndjson"));
    auto b = small_generate(dir.file("b.ndjson"));
    cli::cmd_generate(a);
    cli::cmd_generate(b);
    EXPECT_EQ(slurp(a.out), slurp(b.out));
}

// Round-trip oracle over a larger generated file.
TEST(CmdGenerate, LargeStreamRoundTripsThroughParser) {
    TempDir dir;
    auto opts = small_generate(dir.file("big.ndjson"), 9);
    opts.duration_seconds = 2000.0;
    cli::cmd_generate(opts);
    tickcast::orderflow::StreamReader reader(opts.out);
    std::string line;
    std::size_t n = 0;
    while (reader.next_line(line)) {
        const auto ev = tickcast::orderflow::parse_message(line);
        ASSERT_EQ(tickcast::orderflow::serialize_message(ev), line);
        ++n;
    }
    EXPECT_GT(n, 10000u);
}

TEST(CmdBuild, SinglePairInputYieldsPairOneSamples) {
    TempDir dir;
    auto gen = small_generate(dir.file("s.ndjson"));
    cli::cmd_generate(gen);
    const auto result = cli::cmd_build(small_build(gen.out, dir.file("ds")));
    EXPECT_GT(result.n_train, 0u);
    const auto train = ft::read_dataset(result.train_path);
    for (const auto& s : train.samples) EXPECT_EQ(s.pair, 1);
}

TEST(CmdBuild, TwoPairInputInterleavesByTimestamp) {
    TempDir dir;
    auto ga = small_generate(dir.file("a.ndjson"), 5);
    auto gb = small_generate(dir.file("b.ndjson"), 6);
    cli::cmd_generate(ga);
    cli::cmd_generate(gb);
    auto build = small_build(ga.out, dir.file("ds"));
    build.inputs = {ga.out, gb.out};
    const auto result = cli::cmd_build(build);
    const auto test = ft::read_dataset(result.test_path);
    std::size_t pair1 = 0, pair2 = 0;
    for (std::size_t i = 0; i < test.samples.size(); ++i) {
        if (i > 0)
            EXPECT_GE(test.samples[i].anchor_timestamp,
                      test.samples[i - 1].anchor_timestamp);
        (test.samples[i].pair == 1 ? pair1 : pair2)++;
    }
    EXPECT_GT(pair1, 0u);
    EXPECT_GT(pair2, 0u);
}

TEST(CmdBuild, RebuildIsByteIdentical) {
    TempDir dir;
    auto gen = small_generate(dir.file("s.ndjson"));
    cli::cmd_generate(gen);
    const auto r1 = cli::cmd_build(small_build(gen.out, dir.file("x")));
    const auto r2 = cli::cmd_build(small_build(gen.out, dir.file("y")));
    EXPECT_EQ(slurp(r1.train_path), slurp(r2.train_path));
    EXPECT_EQ(slurp(r1.test_path), slurp(r2.test_path));
}

TEST(CmdBuild, OverlappingExplicitRangesAreConfigError) {
    TempDir dir;
    auto gen = small_generate(dir.file("s.ndjson"));
    cli::cmd_generate(gen);
    auto build = small_build(gen.out, dir.file("ds"));
    build.dataset.train = {0, 100};
    build.dataset.validation = {50, 150};  // overlaps train
    build.dataset.test = {150, 200};
    EXPECT_THROW(cli::cmd_build(build), tickcast::ConfigError);
}

TEST(CmdTrain, OneEpochSmokeUnderSixtySeconds) {
    TempDir dir;
    auto gen = small_generate(dir.file("s.ndjson"));
    gen.duration_seconds = 1200.0;  // ~1000+ training samples at stride 2
    cli::cmd_generate(gen);
    const auto built = cli::cmd_build(small_build(gen.out, dir.file("ds")));
    ASSERT_GE(built.n_train, 1000u);

    cli::TrainOptions train;
    train.train_path = built.train_path;
    train.validation_path = built.validation_path;
    train.family = "poisson";
    train.net.state_size = 8;
    train.net.dense_width = 8;
    train.trainer.max_epochs = 1;
    train.out = dir.file("m.tkcp");
    train.log_csv = dir.file("log.csv");
    const auto t0 = std::chrono::steady_clock::now();
    cli::cmd_train(train);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_LT(secs, 60.0);
    EXPECT_TRUE(fs::exists(train.out));
    const auto log = slurp(train.log_csv);
    EXPECT_NE(log.find("epoch,train_nll,validation_nll,wall_seconds"), std::string::npos);
}

TEST(CmdTrain, InvalidHeadNameIsUsageError) {
    cli::TrainOptions train;
    train.train_path = "nonexistent.tkds";
    train.family = "gaussian";
    EXPECT_THROW(cli::cmd_train(train), tickcast::Error);
}

TEST(CmdTrain, ResumeMatchesStraightRun) {
    TempDir dir;
    auto gen = small_generate(dir.file("s.ndjson"));
    cli::cmd_generate(gen);
    const auto built = cli::cmd_build(small_build(gen.out, dir.file("ds")));

    cli::TrainOptions base;
    base.train_path = built.train_path;
    base.validation_path = built.validation_path;
    base.net.state_size = 6;
    base.net.dense_width = 6;
    base.trainer.patience = 100;

    auto straight = base;
    straight.trainer.max_epochs = 3;
    straight.out = dir.file("straight.tkcp");
    straight.log_csv = dir.file("straight.csv");
    cli::cmd_train(straight);

    auto first = base;
    first.trainer.max_epochs = 1;
    first.out = dir.file("part.tkcp");
    first.log_csv = dir.file("part.csv");
    cli::cmd_train(first);
    auto second = base;
    second.trainer.max_epochs = 3;
    second.resume = first.out;
    second.out = dir.file("resumed.tkcp");
    second.log_csv = dir.file("resumed.csv");
    cli::cmd_train(second);

    // Checkpoints are byte-identical: same parameters, optimizer state, and
    // rng position.
    EXPECT_EQ(slurp(straight.out), slurp(second.out));
}

TEST(CmdEvaluate, SelfBaselineRowsAndCounts) {
    TempDir dir;
    auto gen = small_generate(dir.file("s.ndjson"));
    gen.duration_seconds = 600.0;
    cli::cmd_generate(gen);
    const auto built = cli::cmd_build(small_build(gen.out, dir.file("ds")));

    cli::TrainOptions train;
    train.train_path = built.train_path;
    train.validation_path = built.validation_path;
    train.net.state_size = 6;
    train.net.dense_width = 6;
    train.trainer.max_epochs = 1;
    train.out = dir.file("m.tkcp");
    train.log_csv = dir.file("log.csv");
    cli::cmd_train(train);

    cli::EvaluateOptions eval;
    eval.test_path = built.test_path;
    eval.models = {"deep=checkpoint:" + train.out};
    eval.baseline = "deep";
    eval.out_json = dir.file("er.json");
    eval.out_csv = dir.file("er.csv");
    const auto report = cli::cmd_evaluate(eval);

    // models x periods x metrics rows after the header and meta lines.
    const auto csv = slurp(eval.out_csv);
    std::size_t rows = 0;
    for (char c : csv)
        if (c == '\n') ++rows;
    EXPECT_EQ(rows, 2u + 1u * 1u * 3u);

    for (const auto& rep : report.at("reports"))
        for (const auto& period : rep.at("periods"))
            for (const auto& entry : period.at("size_risk"))
                if (entry.at("available").get<bool>())
                    EXPECT_DOUBLE_EQ(entry.at("scaled").get<double>(), 1.0);
}

TEST(CmdSimulate, SmokeRunWithTTestPairs) {
    TempDir dir;
    auto gen = small_generate(dir.file("s.ndjson"));
    gen.duration_seconds = 600.0;
    cli::cmd_generate(gen);
    const auto built = cli::cmd_build(small_build(gen.out, dir.file("ds")));

    cli::TrainOptions train;
    train.train_path = built.train_path;
    train.validation_path = built.validation_path;
    train.net.state_size = 6;
    train.net.dense_width = 6;
    train.trainer.max_epochs = 1;
    train.out = dir.file("m.tkcp");
    train.log_csv = dir.file("log.csv");
    cli::cmd_train(train);

    cli::FitBenchmarkOptions fitb;
    fitb.kind = "glm";
    fitb.dataset = built.train_path;
    fitb.out = dir.file("glm.json");
    cli::cmd_fit_benchmark(fitb);

    cli::SimulateOptions sim;
    sim.test_path = built.test_path;
    sim.models = {"deep=checkpoint:" + train.out, "b2=glm:" + fitb.out};
    sim.sim.iterations = 1;
    sim.sim.scenarios = 1;
    sim.sim.master_seed = 9;
    sim.out_scenarios = dir.file("scen.csv");
    sim.out_trajectories = dir.file("traj.csv");
    sim.out_histogram = dir.file("hist.json");
    sim.out_ttests = dir.file("tt.json");
    const auto out = cli::cmd_simulate(sim);

    // Seed recorded in the CSV header line and the JSON artifacts.
    EXPECT_NE(slurp(sim.out_scenarios).find("master_seed=9"), std::string::npos);
    EXPECT_EQ(out.at("master_seed").get<std::uint64_t>(), 9u);
    // One (benchmark, deep) pair.
    ASSERT_EQ(out.at("ttests").size(), 1u);
    EXPECT_EQ(out.at("ttests")[0].at("benchmark"), "b2");
    EXPECT_EQ(out.at("ttests")[0].at("model"), "deep");
}

TEST(CmdSimulate, BadIterationCountIsConfigError) {
    cli::SimulateOptions sim;
    sim.models = {"m=glm:x.json"};
    sim.sim.iterations = 0;
    EXPECT_THROW(cli::cmd_simulate(sim), tickcast::ConfigError);
}

// Criterion-8-shaped check at unit scale: the full pipeline run twice with
// one seed produces byte-identical primary outputs.
TEST(Pipeline, DeterministicAcrossTwoRuns) {
    auto run = [&](const TempDir& dir) {
        auto gen = small_generate(dir.file("s.ndjson"));
        gen.duration_seconds = 400.0;
        cli::cmd_generate(gen);
        const auto built = cli::cmd_build(small_build(gen.out, dir.file("ds")));
        cli::TrainOptions train;
        train.train_path = built.train_path;
        train.validation_path = built.validation_path;
        train.net.state_size = 6;
        train.net.dense_width = 6;
        train.trainer.max_epochs = 1;
        train.out = dir.file("m.tkcp");
        train.log_csv = dir.file("log.csv");
        cli::cmd_train(train);
        cli::EvaluateOptions eval;
        eval.test_path = built.test_path;
        eval.models = {"deep=checkpoint:" + train.out};
        eval.out_json = dir.file("er.json");
        eval.out_csv = dir.file("er.csv");
        cli::cmd_evaluate(eval);
        return std::tuple{slurp(gen.out), slurp(built.train_path), slurp(built.test_path),
                          slurp(train.out), slurp(dir.file("er.json")),
                          slurp(dir.file("er.csv"))};
    };
    TempDir d1, d2;
    EXPECT_EQ(run(d1), run(d2));
}

TEST(OutDirOverride, RelativePathsLandInEnvDirectory) {
    TempDir dir;
    ::setenv("TICKCAST_OUT_DIR", dir.path.c_str(), 1);
    auto gen = small_generate("env_stream.ndjson");
    gen.duration_seconds = 1.0;
    cli::cmd_generate(gen);
    ::unsetenv("TICKCAST_OUT_DIR");
    EXPECT_TRUE(fs::exists(dir.file("env_stream.ndjson")));
}
