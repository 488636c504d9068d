#pragma once

// Event stream -> model-ready samples.
//
// Each sample is an m-event covariate window ending at its anchor event, the
// autoregressive tick moves of earlier window events, two static covariates,
// and the tick-quantized move of the price reference tau seconds after the
// anchor. Autoregressive entries whose own tau horizon crosses the anchor
// would leak target-period information; they are zeroed and flagged through
// a mask indicator instead.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tickcast/common.hpp"
#include "tickcast/orderflow.hpp"

namespace tickcast::features {

enum class PriceRef : int { Mid = 1, LastTrade = 2 };

// Temporal covariate column layout.
inline constexpr int kColInterarrival = 0;  // ms since previous event, >= 0
inline constexpr int kColSize = 1;
inline constexpr int kColType = 2;  // categorical 1..3
inline constexpr int kColSide = 3;  // categorical 1..2
inline constexpr int kColPrice = 4;
inline constexpr int kNumTemporal = 5;

struct Sample {
    std::vector<double> temporal;      // m x 5, row-major
    std::vector<double> ar_moves;      // m-1 entries; entry g is the move tau s
                                       // after window event g (0 when masked)
    std::vector<std::uint8_t> ar_mask; // 1 = unknown at anchor time
    int hour = 0;                      // 0..23, UTC, from the anchor timestamp
    int pair = 1;                      // 1 or 2
    long target = 0;                   // signed ticks, tau s after the anchor
    Timestamp anchor_timestamp = 0;
    double anchor_price = 0.0;         // raw price reference at the anchor

    int m() const { return static_cast<int>(temporal.size()) / kNumTemporal; }
    double at(int row, int col) const { return temporal[row * kNumTemporal + col]; }
    double& at(int row, int col) { return temporal[row * kNumTemporal + col]; }
};

struct TimeRange {
    Timestamp begin = 0;
    Timestamp end = 0;  // half-open: [begin, end)
    bool contains(Timestamp t) const { return t >= begin && t < end; }
};

struct DatasetConfig {
    int m = 300;
    double tau_seconds = 15.0;
    double tick_size = 0.01;
    PriceRef price_ref = PriceRef::Mid;
    int stride = 1;  // thins the anchor set for desk-scale runs
    TimeRange train, validation, test;

    Timestamp tau_micros() const {
        return static_cast<Timestamp>(std::llround(tau_seconds * kMicrosPerSecond));
    }

    void validate() const {
        if (m < 2) throw ConfigError("window length m must be >= 2");
        if (!(tau_seconds > 0)) throw ConfigError("tau must be positive");
        if (!(tick_size > 0)) throw ConfigError("tick_size must be positive");
        if (stride < 1) throw ConfigError("stride must be >= 1");
        auto valid = [](const TimeRange& r) { return r.end > r.begin; };
        if (valid(train) || valid(validation) || valid(test)) {
            if (!(valid(train) && valid(validation) && valid(test)))
                throw ConfigError("all three split ranges must be set together");
            if (train.end > validation.begin || validation.end > test.begin)
                throw ConfigError("split ranges must be disjoint and ordered "
                                  "train < validation < test");
        }
    }
};

struct AffineStat {
    double mean = 0.0;
    double sd = 1.0;
};

struct NormalizationStats {
    AffineStat interarrival, size, price, ar_move;
};

// --- dataset construction ----------------------------------------------------

namespace detail {

inline int hour_of_day_utc(Timestamp ts) {
    const std::int64_t hours = ts / (3600LL * kMicrosPerSecond);
    return static_cast<int>(((hours % 24) + 24) % 24);
}

struct ReplayRecord {
    Timestamp ts;
    double price = std::numeric_limits<double>::quiet_NaN();  // reference after event
    long move = 0;
    bool move_valid = false;
};

// Replay one pair's events through a fresh emulator, recording the price
// reference after every event and each event's tau-after tick move.
inline std::vector<ReplayRecord> replay_pair(std::span<const orderflow::OrderFlowEvent> events,
                                             const DatasetConfig& cfg) {
    std::vector<ReplayRecord> rec(events.size());
    orderflow::BookState book(cfg.tick_size);
    double last_trade = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t j = 0; j < events.size(); ++j) {
        const auto res = book.apply(events[j]);
        if (res.traded > 0) last_trade = book.ticks_to_price(res.last_fill_ticks);
        rec[j].ts = events[j].timestamp;
        if (cfg.price_ref == PriceRef::Mid) {
            if (book.has_mid()) rec[j].price = orderflow::mid_price(book);
        } else {
            rec[j].price = last_trade;
        }
    }

    // Two-pointer sweep for the tau-after move of every event.
    const Timestamp tau = cfg.tau_micros();
    const Timestamp t_last = events.empty() ? 0 : events.back().timestamp;
    std::size_t k = 0;
    for (std::size_t j = 0; j < events.size(); ++j) {
        const Timestamp horizon = rec[j].ts + tau;
        if (horizon > t_last) break;  // rest of the stream cannot be scored
        if (k < j) k = j;
        while (k + 1 < events.size() && rec[k + 1].ts <= horizon) ++k;
        if (!std::isnan(rec[j].price) && !std::isnan(rec[k].price)) {
            rec[j].move = orderflow::tick_quantize(rec[k].price - rec[j].price, cfg.tick_size);
            rec[j].move_valid = true;
        }
    }
    return rec;
}

inline void build_pair_samples(std::span<const orderflow::OrderFlowEvent> events,
                               const DatasetConfig& cfg, int pair_code,
                               std::vector<Sample>& out) {
    if (static_cast<int>(events.size()) < cfg.m) return;
    const auto rec = replay_pair(events, cfg);
    const Timestamp tau = cfg.tau_micros();
    const int m = cfg.m;

    for (std::size_t j = static_cast<std::size_t>(m - 1); j < events.size();
         j += static_cast<std::size_t>(cfg.stride)) {
        if (!rec[j].move_valid) continue;

        Sample s;
        s.temporal.resize(static_cast<std::size_t>(m) * kNumTemporal);
        s.ar_moves.assign(static_cast<std::size_t>(m - 1), 0.0);
        s.ar_mask.assign(static_cast<std::size_t>(m - 1), 0);
        const std::size_t w0 = j - static_cast<std::size_t>(m - 1);
        for (int g = 0; g < m; ++g) {
            const std::size_t e = w0 + static_cast<std::size_t>(g);
            const auto& ev = events[e];
            const double dt_ms =
                e == 0 ? 0.0
                       : static_cast<double>(ev.timestamp - events[e - 1].timestamp) /
                             static_cast<double>(kMicrosPerMilli);
            s.at(g, kColInterarrival) = dt_ms;
            s.at(g, kColSize) = ev.size;
            s.at(g, kColType) = static_cast<double>(static_cast<int>(ev.type));
            s.at(g, kColSide) = static_cast<double>(static_cast<int>(ev.side));
            s.at(g, kColPrice) = ev.price;
            if (g < m - 1) {
                const bool known = rec[e].move_valid && rec[e].ts + tau <= rec[j].ts;
                if (known) s.ar_moves[static_cast<std::size_t>(g)] =
                    static_cast<double>(rec[e].move);
                else s.ar_mask[static_cast<std::size_t>(g)] = 1;
            }
        }
        s.hour = hour_of_day_utc(rec[j].ts);
        s.pair = pair_code;
        s.target = rec[j].move;
        s.anchor_timestamp = rec[j].ts;
        s.anchor_price = rec[j].price;
        out.push_back(std::move(s));
    }
}

}  // namespace detail

// Builds raw (unnormalized) samples. A two-pair stream is split by pair,
// replayed through independent emulators, and merged back by anchor time.
inline std::vector<Sample> build_dataset(std::span<const orderflow::OrderFlowEvent> events,
                                         const DatasetConfig& config) {
    config.validate();
    std::vector<orderflow::OrderFlowEvent> a, b;
    for (const auto& ev : events)
        (ev.pair == orderflow::Pair::PairA ? a : b).push_back(ev);

    std::vector<Sample> out;
    detail::build_pair_samples(a, config, 1, out);
    const std::size_t n_a = out.size();
    detail::build_pair_samples(b, config, 2, out);

    if (out.empty())
        std::cerr << "[tickcast] warning: stream shorter than the covariate window; "
                     "empty dataset\n";

    std::inplace_merge(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(n_a), out.end(),
                       [](const Sample& x, const Sample& y) {
                           return x.anchor_timestamp < y.anchor_timestamp;
                       });
    return out;
}

struct SplitDatasets {
    std::vector<Sample> train, validation, test;
};

// Assignment by anchor timestamp into half-open ranges; a boundary anchor
// belongs to the later range. Windows look backward, so overlap of a window
// with a later range never moves the sample.
inline SplitDatasets split_by_date(std::vector<Sample> samples, const DatasetConfig& config) {
    config.validate();
    SplitDatasets out;
    for (auto& s : samples) {
        if (config.test.contains(s.anchor_timestamp)) out.test.push_back(std::move(s));
        else if (config.validation.contains(s.anchor_timestamp))
            out.validation.push_back(std::move(s));
        else if (config.train.contains(s.anchor_timestamp)) out.train.push_back(std::move(s));
    }
    auto by_anchor = [](const Sample& x, const Sample& y) {
        return x.anchor_timestamp < y.anchor_timestamp;
    };
    std::stable_sort(out.train.begin(), out.train.end(), by_anchor);
    std::stable_sort(out.validation.begin(), out.validation.end(), by_anchor);
    std::stable_sort(out.test.begin(), out.test.end(), by_anchor);
    return out;
}

// --- normalization -------------------------------------------------------------

// Training-split statistics for the continuous covariates and the
// autoregressive inputs. Categories stay untouched.
inline NormalizationStats fit_normalization(std::span<const Sample> train) {
    struct Acc {
        double sum = 0.0, sumsq = 0.0;
        std::int64_t n = 0;
        void add(double x) {
            sum += x;
            sumsq += x * x;
            ++n;
        }
        AffineStat finish(const char* name) const {
            AffineStat st;
            if (n == 0) return st;
            st.mean = sum / static_cast<double>(n);
            const double var = sumsq / static_cast<double>(n) - st.mean * st.mean;
            st.sd = var > 0 ? std::sqrt(var) : 0.0;
            if (st.sd < 1e-12) {
                std::cerr << "[tickcast] warning: zero-variance covariate '" << name
                          << "', scale clamped to 1\n";
                st.sd = 1.0;
            }
            return st;
        }
    };
    Acc ia, sz, px, ar;
    for (const auto& s : train) {
        const int m = s.m();
        for (int g = 0; g < m; ++g) {
            ia.add(s.at(g, kColInterarrival));
            sz.add(s.at(g, kColSize));
            px.add(s.at(g, kColPrice));
        }
        for (std::size_t g = 0; g < s.ar_moves.size(); ++g)
            if (s.ar_mask[g] == 0) ar.add(s.ar_moves[g]);
    }
    NormalizationStats st;
    st.interarrival = ia.finish("interarrival");
    st.size = sz.finish("size");
    st.price = px.finish("price");
    st.ar_move = ar.finish("ar_move");
    return st;
}

inline void apply_normalization(Sample& s, const NormalizationStats& st) {
    const int m = s.m();
    for (int g = 0; g < m; ++g) {
        s.at(g, kColInterarrival) = (s.at(g, kColInterarrival) - st.interarrival.mean) /
                                    st.interarrival.sd;
        s.at(g, kColSize) = (s.at(g, kColSize) - st.size.mean) / st.size.sd;
        s.at(g, kColPrice) = (s.at(g, kColPrice) - st.price.mean) / st.price.sd;
    }
    for (std::size_t g = 0; g < s.ar_moves.size(); ++g)
        if (s.ar_mask[g] == 0)
            s.ar_moves[g] = (s.ar_moves[g] - st.ar_move.mean) / st.ar_move.sd;
}

inline void apply_normalization(std::vector<Sample>& samples, const NormalizationStats& st) {
    for (auto& s : samples) apply_normalization(s, st);
}

// --- serialized dataset ----------------------------------------------------------

struct Dataset {
    int m = 0;
    double tau_seconds = 0.0;
    double tick_size = 0.0;
    PriceRef price_ref = PriceRef::Mid;
    int stride = 1;
    bool normalized = false;
    NormalizationStats stats;
    std::vector<Sample> samples;
};

namespace detail {

inline constexpr char kDatasetMagic[4] = {'T', 'K', 'D', 'S'};
inline constexpr std::uint32_t kDatasetVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("truncated dataset file");
    return v;
}

template <typename T>
void write_column(std::ostream& out, const std::vector<T>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <typename T>
void read_column(std::istream& in, std::vector<T>& v, std::size_t n) {
    v.resize(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
    if (!in) throw IoError("truncated dataset column");
}

inline void write_stat(std::ostream& out, const AffineStat& s) {
    write_pod(out, s.mean);
    write_pod(out, s.sd);
}

inline AffineStat read_stat(std::istream& in) {
    AffineStat s;
    s.mean = read_pod<double>(in);
    s.sd = read_pod<double>(in);
    return s;
}

}  // namespace detail

// Columnar binary layout: header, then one contiguous block per field.
inline void write_dataset(const std::string& path, const Dataset& ds,
                          std::uint64_t config_hash = 0) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open dataset for writing: " + path);
    using namespace detail;
    out.write(kDatasetMagic, 4);
    write_pod(out, kDatasetVersion);
    char version_str[16] = {};
    std::snprintf(version_str, sizeof(version_str), "%s", std::string(kToolVersion).c_str());
    out.write(version_str, sizeof(version_str));
    write_pod(out, config_hash);
    write_pod(out, static_cast<std::int32_t>(ds.m));
    write_pod(out, ds.tau_seconds);
    write_pod(out, ds.tick_size);
    write_pod(out, static_cast<std::int32_t>(ds.price_ref));
    write_pod(out, static_cast<std::int32_t>(ds.stride));
    write_pod(out, static_cast<std::uint8_t>(ds.normalized ? 1 : 0));
    write_stat(out, ds.stats.interarrival);
    write_stat(out, ds.stats.size);
    write_stat(out, ds.stats.price);
    write_stat(out, ds.stats.ar_move);

    const std::uint64_t n = ds.samples.size();
    write_pod(out, n);
    std::vector<std::int64_t> anchors(n);
    std::vector<double> prices(n);
    std::vector<std::uint8_t> pairs(n), hours(n);
    std::vector<std::int32_t> targets(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = ds.samples[i];
        anchors[i] = s.anchor_timestamp;
        prices[i] = s.anchor_price;
        pairs[i] = static_cast<std::uint8_t>(s.pair);
        hours[i] = static_cast<std::uint8_t>(s.hour);
        targets[i] = static_cast<std::int32_t>(s.target);
    }
    write_column(out, anchors);
    write_column(out, prices);
    write_column(out, pairs);
    write_column(out, hours);
    write_column(out, targets);
    for (const auto& s : ds.samples) write_column(out, s.temporal);
    for (const auto& s : ds.samples) write_column(out, s.ar_moves);
    for (const auto& s : ds.samples) write_column(out, s.ar_mask);
    if (!out) throw IoError("write failed: " + path);
}

inline Dataset read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset: " + path);
    using namespace detail;
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kDatasetMagic, 4) != 0)
        throw IoError("not a tickcast dataset: " + path);
    const auto version = read_pod<std::uint32_t>(in);
    if (version != kDatasetVersion)
        throw IoError("unsupported dataset version " + std::to_string(version));
    char version_str[16];
    in.read(version_str, sizeof(version_str));
    (void)read_pod<std::uint64_t>(in);  // config hash, informational

    Dataset ds;
    ds.m = read_pod<std::int32_t>(in);
    ds.tau_seconds = read_pod<double>(in);
    ds.tick_size = read_pod<double>(in);
    ds.price_ref = static_cast<PriceRef>(read_pod<std::int32_t>(in));
    ds.stride = read_pod<std::int32_t>(in);
    ds.normalized = read_pod<std::uint8_t>(in) != 0;
    ds.stats.interarrival = read_stat(in);
    ds.stats.size = read_stat(in);
    ds.stats.price = read_stat(in);
    ds.stats.ar_move = read_stat(in);

    const auto n = read_pod<std::uint64_t>(in);
    std::vector<std::int64_t> anchors;
    std::vector<double> prices;
    std::vector<std::uint8_t> pairs, hours;
    std::vector<std::int32_t> targets;
    read_column(in, anchors, n);
    read_column(in, prices, n);
    read_column(in, pairs, n);
    read_column(in, hours, n);
    read_column(in, targets, n);

    ds.samples.resize(n);
    const std::size_t mt = static_cast<std::size_t>(ds.m) * kNumTemporal;
    const std::size_t ma = static_cast<std::size_t>(ds.m - 1);
    for (std::size_t i = 0; i < n; ++i) {
        auto& s = ds.samples[i];
        s.anchor_timestamp = anchors[i];
        s.anchor_price = prices[i];
        s.pair = pairs[i];
        s.hour = hours[i];
        s.target = targets[i];
    }
    for (std::size_t i = 0; i < n; ++i) read_column(in, ds.samples[i].temporal, mt);
    for (std::size_t i = 0; i < n; ++i) read_column(in, ds.samples[i].ar_moves, ma);
    for (std::size_t i = 0; i < n; ++i) read_column(in, ds.samples[i].ar_mask, ma);
    return ds;
}

// Flat CSV export for inspection.
inline void export_csv(const std::string& path, const Dataset& ds,
                       const std::string& meta_comment = "") {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open CSV for writing: " + path);
    if (!meta_comment.empty()) out << "# " << meta_comment << "\n";
    out << "anchor_timestamp,pair,hour,target,anchor_price";
    const char* names[kNumTemporal] = {"ia_ms", "size", "type", "side", "price"};
    for (int c = 0; c < kNumTemporal; ++c)
        for (int g = 0; g < ds.m; ++g) out << ',' << names[c] << '_' << g;
    for (int g = 0; g + 1 < ds.m; ++g) out << ",ar_" << g;
    for (int g = 0; g + 1 < ds.m; ++g) out << ",armask_" << g;
    out << '\n';
    out.precision(12);
    for (const auto& s : ds.samples) {
        out << s.anchor_timestamp << ',' << s.pair << ',' << s.hour << ',' << s.target << ','
            << s.anchor_price;
        for (int c = 0; c < kNumTemporal; ++c)
            for (int g = 0; g < ds.m; ++g) out << ',' << s.at(g, c);
        for (double v : s.ar_moves) out << ',' << v;
        for (auto v : s.ar_mask) out << ',' << static_cast<int>(v);
        out << '\n';
    }
    if (!out) throw IoError("CSV write failed: " + path);
}

}  // namespace tickcast::features
