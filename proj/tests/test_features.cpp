#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "tickcast/features.hpp"
#include "tickcast/generator.hpp"

namespace ft = tickcast::features;
namespace of = tickcast::orderflow;
using of::EventType;
using of::Side;
using tickcast::Timestamp;

namespace {

constexpr Timestamp kSec = tickcast::kMicrosPerSecond;

of::OrderFlowEvent ev(Timestamp ts, EventType type, Side side, double price, double size,
                      std::string id) {
    of::OrderFlowEvent e;
    e.timestamp = ts;
    e.type = type;
    e.side = side;
    e.price = price;
    e.size = size;
    e.order_id = std::move(id);
    return e;
}

// Mid-price ladder climbing +1 tick per second (tick = 1.0). Warmup at t~0
// builds bid 98 / asks 102,104,106,108 (mid 100); then alternating best-bid
// improvements and best-ask cancels raise the mid one tick each second:
//   t=1: bid 100      -> mid 101
//   t=2: cancel a102  -> mid 102
//   t=3: bid 102      -> mid 103
//   t=4: cancel a104  -> mid 104
//   t=5: bid 104      -> mid 105
//   t=6: cancel a106  -> mid 106
std::vector<of::OrderFlowEvent> ladder_stream() {
    std::vector<of::OrderFlowEvent> s;
    s.push_back(ev(1, EventType::LimitPlace, Side::Buy, 98, 1.0, "b98"));
    s.push_back(ev(2, EventType::LimitPlace, Side::Sell, 102, 1.0, "a102"));
    s.push_back(ev(3, EventType::LimitPlace, Side::Sell, 104, 1.0, "a104"));
    s.push_back(ev(4, EventType::LimitPlace, Side::Sell, 106, 1.0, "a106"));
    s.push_back(ev(5, EventType::LimitPlace, Side::Sell, 108, 1.0, "a108"));
    s.push_back(ev(1 * kSec, EventType::LimitPlace, Side::Buy, 100, 1.0, "b100"));
    s.push_back(ev(2 * kSec, EventType::Cancel, Side::Sell, 102, 1.0, "a102"));
    s.push_back(ev(3 * kSec, EventType::LimitPlace, Side::Buy, 102, 1.0, "b102"));
    s.push_back(ev(4 * kSec, EventType::Cancel, Side::Sell, 104, 1.0, "a104"));
    s.push_back(ev(5 * kSec, EventType::LimitPlace, Side::Buy, 104, 1.0, "b104"));
    s.push_back(ev(6 * kSec, EventType::Cancel, Side::Sell, 106, 1.0, "a106"));
    return s;
}

ft::DatasetConfig ladder_config() {
    ft::DatasetConfig cfg;
    cfg.m = 3;
    cfg.tau_seconds = 2.0;
    cfg.tick_size = 1.0;
    return cfg;
}

}  // namespace

// Manual timeline-walk oracle: every eligible anchor sees mid rise exactly
// +2 ticks over the 2-second horizon.
TEST(BuildDataset, LadderTargetsArePlusTwo) {
    const auto samples = ft::build_dataset(ladder_stream(), ladder_config());
    // Eligible anchors: indices 2..8 of 11 events (horizon must stay in-stream).
    ASSERT_EQ(samples.size(), 7u);
    for (const auto& s : samples) EXPECT_EQ(s.target, 2) << "anchor " << s.anchor_timestamp;
}

TEST(BuildDataset, AnchorWithinTauOfStreamEndIsExcluded) {
    const auto samples = ft::build_dataset(ladder_stream(), ladder_config());
    for (const auto& s : samples)
        EXPECT_LE(s.anchor_timestamp + 2 * kSec, 6 * kSec);
}

TEST(BuildDataset, ConstantPriceStreamHasZeroTargets) {
    std::vector<of::OrderFlowEvent> s;
    s.push_back(ev(1, EventType::LimitPlace, Side::Buy, 99, 1.0, "b"));
    s.push_back(ev(2, EventType::LimitPlace, Side::Sell, 101, 1.0, "a"));
    for (int i = 0; i < 20; ++i)
        s.push_back(ev((i + 1) * kSec, EventType::LimitPlace, Side::Buy, 90 - i, 1.0,
                       "deep" + std::to_string(i)));
    ft::DatasetConfig cfg;
    cfg.m = 4;
    cfg.tau_seconds = 3.0;
    cfg.tick_size = 1.0;
    const auto samples = ft::build_dataset(s, cfg);
    ASSERT_FALSE(samples.empty());
    for (const auto& smp : samples) EXPECT_EQ(smp.target, 0);
}

// No-look-ahead: an autoregressive entry whose tau horizon crosses the anchor
// is masked to zero with its indicator set.
TEST(BuildDataset, AutoregressiveLeakEntriesAreMasked) {
    const auto samples = ft::build_dataset(ladder_stream(), ladder_config());
    // Anchor at t=4s: window events at t=2s,3s,4s. Entry for t=2s (horizon
    // 4s <= anchor) is known and equals +2; entry for t=3s (horizon 5s) leaks.
    const auto it = std::find_if(samples.begin(), samples.end(), [](const ft::Sample& s) {
        return s.anchor_timestamp == 4 * kSec;
    });
    ASSERT_NE(it, samples.end());
    ASSERT_EQ(it->ar_moves.size(), 2u);
    EXPECT_EQ(it->ar_mask[0], 0);
    EXPECT_DOUBLE_EQ(it->ar_moves[0], 2.0);
    EXPECT_EQ(it->ar_mask[1], 1);
    EXPECT_DOUBLE_EQ(it->ar_moves[1], 0.0);
}

TEST(BuildDataset, ShortStreamYieldsEmptyDataset) {
    std::vector<of::OrderFlowEvent> s;
    s.push_back(ev(1, EventType::LimitPlace, Side::Buy, 99, 1.0, "b"));
    ft::DatasetConfig cfg;
    cfg.m = 8;
    cfg.tau_seconds = 1.0;
    EXPECT_TRUE(ft::build_dataset(s, cfg).empty());
}

TEST(BuildDataset, DeterministicGivenInputs) {
    of::GeneratorConfig gcfg;
    gcfg.seed = 77;
    const auto events = of::generate_stream(gcfg, 120.0);
    ft::DatasetConfig cfg;
    cfg.m = 8;
    cfg.tau_seconds = 2.0;
    const auto a = ft::build_dataset(events, cfg);
    const auto b = ft::build_dataset(events, cfg);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].anchor_timestamp, b[i].anchor_timestamp);
        EXPECT_EQ(a[i].target, b[i].target);
        EXPECT_EQ(a[i].temporal, b[i].temporal);
        EXPECT_EQ(a[i].ar_moves, b[i].ar_moves);
    }
}

TEST(BuildDataset, TwoPairStreamInterleavesByAnchor) {
    of::GeneratorConfig ga;
    ga.seed = 5;
    ga.pair = of::Pair::PairA;
    of::GeneratorConfig gb = ga;
    gb.seed = 6;
    gb.pair = of::Pair::PairB;
    auto events = of::generate_stream(ga, 90.0);
    const auto eb = of::generate_stream(gb, 90.0);
    events.insert(events.end(), eb.begin(), eb.end());
    std::stable_sort(events.begin(), events.end(),
                     [](const auto& x, const auto& y) { return x.timestamp < y.timestamp; });

    ft::DatasetConfig cfg;
    cfg.m = 8;
    cfg.tau_seconds = 2.0;
    const auto samples = ft::build_dataset(events, cfg);
    ASSERT_FALSE(samples.empty());
    std::size_t pair1 = 0, pair2 = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (i > 0) EXPECT_GE(samples[i].anchor_timestamp, samples[i - 1].anchor_timestamp);
        (samples[i].pair == 1 ? pair1 : pair2)++;
    }
    EXPECT_GT(pair1, 0u);
    EXPECT_GT(pair2, 0u);
}

// Zero-signal generator: target signs are symmetric about zero (two-sided
// binomial test on the sign counts).
TEST(BuildDataset, ZeroSignalTargetsAreSymmetric) {
    of::GeneratorConfig gcfg;
    gcfg.limit_rate_per_level = 2.0;
    gcfg.open_rate = 1.0;
    gcfg.cancel_rate = 0.2;
    gcfg.signal_strength = 0.0;
    gcfg.seed = 2024;
    const auto events = of::generate_stream(gcfg, 600.0);

    ft::DatasetConfig cfg;
    cfg.m = 4;
    cfg.tau_seconds = 3.0;
    cfg.stride = 3;
    const auto samples = ft::build_dataset(events, cfg);
    long pos = 0, neg = 0;
    for (const auto& s : samples) {
        if (s.target > 0) ++pos;
        if (s.target < 0) ++neg;
    }
    const double n = static_cast<double>(pos + neg);
    ASSERT_GT(n, 50.0);
    const double z = (static_cast<double>(pos) - n / 2.0) / std::sqrt(n / 4.0);
    const double p = std::erfc(std::fabs(z) / std::sqrt(2.0));
    EXPECT_GT(p, 0.01) << "pos=" << pos << " neg=" << neg;
}

TEST(SplitByDate, AssignsByAnchorWithHalfOpenRanges) {
    auto samples = ft::build_dataset(ladder_stream(), ladder_config());
    ft::DatasetConfig cfg = ladder_config();
    cfg.train = {0, 2 * kSec};
    cfg.validation = {2 * kSec, 4 * kSec};
    cfg.test = {4 * kSec, 100 * kSec};
    const auto splits = ft::split_by_date(samples, cfg);
    for (const auto& s : splits.train) EXPECT_LT(s.anchor_timestamp, 2 * kSec);
    for (const auto& s : splits.validation) {
        EXPECT_GE(s.anchor_timestamp, 2 * kSec);
        EXPECT_LT(s.anchor_timestamp, 4 * kSec);
    }
    // Anchor exactly on a boundary belongs to the later range.
    const bool boundary_in_test =
        std::any_of(splits.test.begin(), splits.test.end(),
                    [](const ft::Sample& s) { return s.anchor_timestamp == 4 * kSec; });
    EXPECT_TRUE(boundary_in_test);
    EXPECT_EQ(splits.train.size() + splits.validation.size() + splits.test.size(),
              samples.size());
}

TEST(SplitByDate, AllAnchorsBeforeTrainEndGoToTrain) {
    auto samples = ft::build_dataset(ladder_stream(), ladder_config());
    ft::DatasetConfig cfg = ladder_config();
    cfg.train = {0, 1000 * kSec};
    cfg.validation = {1000 * kSec, 2000 * kSec};
    cfg.test = {2000 * kSec, 3000 * kSec};
    const auto splits = ft::split_by_date(samples, cfg);
    EXPECT_EQ(splits.train.size(), samples.size());
    EXPECT_TRUE(splits.validation.empty());
    EXPECT_TRUE(splits.test.empty());
}

// Set-equality oracle: shuffled input yields identical split membership.
TEST(SplitByDate, ShuffleInvariant) {
    of::GeneratorConfig gcfg;
    gcfg.seed = 31;
    const auto events = of::generate_stream(gcfg, 120.0);
    ft::DatasetConfig cfg;
    cfg.m = 6;
    cfg.tau_seconds = 2.0;
    auto samples = ft::build_dataset(events, cfg);
    const Timestamp t0 = samples.front().anchor_timestamp;
    const Timestamp t1 = samples.back().anchor_timestamp;
    cfg.train = {t0, t0 + (t1 - t0) / 3};
    cfg.validation = {t0 + (t1 - t0) / 3, t0 + 2 * (t1 - t0) / 3};
    cfg.test = {t0 + 2 * (t1 - t0) / 3, t1 + 1};

    auto shuffled = samples;
    std::mt19937_64 mix(99);
    std::shuffle(shuffled.begin(), shuffled.end(), mix);

    auto keys = [](const std::vector<ft::Sample>& v) {
        std::vector<Timestamp> k;
        for (const auto& s : v) k.push_back(s.anchor_timestamp);
        std::sort(k.begin(), k.end());
        return k;
    };
    const auto a = ft::split_by_date(samples, cfg);
    const auto b = ft::split_by_date(shuffled, cfg);
    EXPECT_EQ(keys(a.train), keys(b.train));
    EXPECT_EQ(keys(a.validation), keys(b.validation));
    EXPECT_EQ(keys(a.test), keys(b.test));
}

TEST(Normalization, StandardizesAndClampsZeroVariance) {
    // Two tiny hand samples; size covariate constant -> clamped scale.
    ft::Sample s1, s2;
    for (auto* s : {&s1, &s2}) {
        s->temporal.resize(2 * ft::kNumTemporal);
        s->ar_moves.assign(1, 0.0);
        s->ar_mask.assign(1, 0);
    }
    // interarrival values {8, 12, 10, 10}: mean 10, population sd sqrt(2).
    s1.at(0, ft::kColInterarrival) = 8;
    s1.at(1, ft::kColInterarrival) = 12;
    s2.at(0, ft::kColInterarrival) = 10;
    s2.at(1, ft::kColInterarrival) = 10;
    for (auto* s : {&s1, &s2})
        for (int g = 0; g < 2; ++g) {
            s->at(g, ft::kColSize) = 5.0;  // constant
            s->at(g, ft::kColPrice) = 100.0 + g;
        }
    s1.ar_moves[0] = 1.0;
    s2.ar_moves[0] = -1.0;

    std::vector<ft::Sample> train = {s1, s2};
    const auto stats = ft::fit_normalization(train);
    EXPECT_DOUBLE_EQ(stats.size.sd, 1.0);  // clamped
    EXPECT_DOUBLE_EQ(stats.interarrival.mean, 10.0);

    ft::Sample probe = s1;
    ft::apply_normalization(probe, stats);
    for (int g = 0; g < 2; ++g) EXPECT_DOUBLE_EQ(probe.at(g, ft::kColSize), 0.0);

    // (14 - 10) / 2: direct affine arithmetic.
    EXPECT_NEAR((14.0 - 10.0) / 2.0, 2.0, 1e-15);
}

// Recomputation oracle: train set standardized with its own stats has
// empirical mean ~ 0 per covariate.
TEST(Normalization, ReapplyingToTrainRecentersToZero) {
    of::GeneratorConfig gcfg;
    gcfg.seed = 12;
    gcfg.open_rate = 1.0;
    const auto events = of::generate_stream(gcfg, 200.0);
    ft::DatasetConfig cfg;
    cfg.m = 12;
    cfg.tau_seconds = 0.3;  // shorter than the window span, so some
                            // autoregressive entries are unmasked
    auto samples = ft::build_dataset(events, cfg);
    ASSERT_FALSE(samples.empty());
    const auto stats = ft::fit_normalization(samples);
    ft::apply_normalization(samples, stats);

    double sum_ia = 0, sum_sz = 0, sum_px = 0, sum_ar = 0;
    long n = 0, n_ar = 0;
    for (const auto& s : samples) {
        for (int g = 0; g < s.m(); ++g) {
            sum_ia += s.at(g, ft::kColInterarrival);
            sum_sz += s.at(g, ft::kColSize);
            sum_px += s.at(g, ft::kColPrice);
            ++n;
        }
        for (std::size_t g = 0; g < s.ar_moves.size(); ++g)
            if (s.ar_mask[g] == 0) {
                sum_ar += s.ar_moves[g];
                ++n_ar;
            }
    }
    ASSERT_GT(n_ar, 0);
    EXPECT_LT(std::fabs(sum_ia / n), 1e-9);
    EXPECT_LT(std::fabs(sum_sz / n), 1e-9);
    EXPECT_LT(std::fabs(sum_px / n), 1e-9);
    EXPECT_LT(std::fabs(sum_ar / n_ar), 1e-9);
}

TEST(DatasetIo, BinaryRoundTripAndCsvExport) {
    of::GeneratorConfig gcfg;
    gcfg.seed = 9;
    const auto events = of::generate_stream(gcfg, 60.0);
    ft::DatasetConfig cfg;
    cfg.m = 5;
    cfg.tau_seconds = 2.0;
    ft::Dataset ds;
    ds.m = cfg.m;
    ds.tau_seconds = cfg.tau_seconds;
    ds.tick_size = cfg.tick_size;
    ds.price_ref = cfg.price_ref;
    ds.samples = ft::build_dataset(events, cfg);
    ds.stats = ft::fit_normalization(ds.samples);
    ft::apply_normalization(ds.samples, ds.stats);
    ds.normalized = true;
    ASSERT_FALSE(ds.samples.empty());

    const auto dir = std::filesystem::temp_directory_path();
    const std::string bin = (dir / "tickcast_ds_test.tkds").string();
    const std::string csv = (dir / "tickcast_ds_test.csv").string();
    ft::write_dataset(bin, ds, 0xabcdef);
    const auto back = ft::read_dataset(bin);
    ASSERT_EQ(back.samples.size(), ds.samples.size());
    EXPECT_EQ(back.m, ds.m);
    EXPECT_EQ(back.normalized, true);
    EXPECT_DOUBLE_EQ(back.stats.ar_move.mean, ds.stats.ar_move.mean);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        EXPECT_EQ(back.samples[i].anchor_timestamp, ds.samples[i].anchor_timestamp);
        EXPECT_EQ(back.samples[i].target, ds.samples[i].target);
        EXPECT_EQ(back.samples[i].temporal, ds.samples[i].temporal);
        EXPECT_EQ(back.samples[i].ar_moves, ds.samples[i].ar_moves);
        EXPECT_EQ(back.samples[i].ar_mask, ds.samples[i].ar_mask);
    }

    ft::export_csv(csv, back, "test export");
    EXPECT_GT(std::filesystem::file_size(csv), 100u);
    std::filesystem::remove(bin);
    std::filesystem::remove(csv);
}
