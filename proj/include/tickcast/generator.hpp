#pragma once

// Synthetic order-flow generator: independent exponential clocks per
// (event type, side, relative level) in the zero-intelligence tradition,
// with an optional imbalance coupling. With signal_strength > 0 the
// market-order and limit-order intensities tilt with the current book
// imbalance, so future mid-price drift becomes statistically predictable
// from recent flow; at 0 the model is symmetric noise.

#include <cmath>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tickcast/common.hpp"
#include "tickcast/orderflow.hpp"
#include "tickcast/rng.hpp"

namespace tickcast::orderflow {

struct GeneratorConfig {
    double limit_rate_per_level = 0.5;  // events/s per (side, level)
    double open_rate = 1.0;             // market orders/s per side
    double cancel_rate = 0.1;           // 1/s per resting order
    int levels = 5;                     // active placement levels per side

    // Order sizes: lognormal in base currency, snapped to 1e-8 lots.
    double size_log_mean = 0.0;
    double size_log_sd = 0.5;
    double min_size = 0.01;

    double signal_strength = 0.0;  // imbalance coupling kappa; 0 = no signal

    // Volatility clustering: all intensities share a slowly mean-reverting
    // log-normal activity factor (business-time scaling). 0 disables it.
    double activity_log_sd = 0.0;
    double activity_time_seconds = 300.0;

    double tick_size = 0.01;
    double initial_price = 100.0;

    int seed_levels = 5;      // book levels pre-seeded per side (0 = start empty)
    double seed_size = 1.0;   // size of each seed order
    Timestamp start_time = 0; // microseconds

    Pair pair = Pair::PairA;
    std::uint64_t seed = 1;

    void validate() const {
        if (limit_rate_per_level < 0 || open_rate < 0 || cancel_rate < 0)
            throw ConfigError("generator rates must be non-negative");
        if (levels < 1) throw ConfigError("generator needs at least one level");
        if (!(tick_size > 0)) throw ConfigError("tick_size must be positive");
        if (limit_rate_per_level == 0 && open_rate == 0 && cancel_rate == 0)
            throw ConfigError("degenerate generator config: zero total rate");
        if (activity_log_sd < 0 || !(activity_time_seconds > 0))
            throw ConfigError("bad activity clustering parameters");
        if (!(min_size > 0) || !(seed_size > 0)) throw ConfigError("sizes must be positive");
    }
};

class StreamGenerator {
public:
    using Sink = std::function<void(const OrderFlowEvent&)>;

    explicit StreamGenerator(const GeneratorConfig& cfg)
        : cfg_(cfg), rng_(cfg.seed), book_(cfg.tick_size) {
        cfg_.validate();
        init_ticks_ = book_.price_to_ticks(cfg_.initial_price);
    }

    // Emits events for `duration_seconds` of simulated time; a nonzero
    // max_events caps the emitted count (seed events included).
    void generate(double duration_seconds, const Sink& sink, std::uint64_t max_events = 0) {
        last_ts_ = cfg_.start_time;
        emitted_ = 0;
        seed_book(sink);

        double t_us = static_cast<double>(last_ts_);
        const double end_us =
            static_cast<double>(cfg_.start_time) + duration_seconds * kMicrosPerSecond;

        while (max_events == 0 || emitted_ < max_events) {
            const Rates r = current_rates();
            if (r.total <= 0.0) break;
            const double dt = rng_.exponential(r.total);
            evolve_activity(dt);
            t_us += dt * kMicrosPerSecond;
            if (t_us > end_us) break;
            const Timestamp ts = std::max(last_ts_, static_cast<Timestamp>(std::llround(t_us)));
            step(r, ts, sink);
        }
    }

    std::vector<OrderFlowEvent> generate(double duration_seconds,
                                         std::uint64_t max_events = 0) {
        std::vector<OrderFlowEvent> out;
        generate(
            duration_seconds, [&out](const OrderFlowEvent& ev) { out.push_back(ev); },
            max_events);
        return out;
    }

    const BookState& book() const { return book_; }

private:
    struct Rates {
        double buy_limit = 0, sell_limit = 0;   // per level
        double buy_open = 0, sell_open = 0;
        double buy_cancel = 0, sell_cancel = 0; // whole side
        double total = 0;
    };

    struct LiveSide {
        std::vector<std::string> ids;
        std::unordered_map<std::string, std::size_t> pos;

        void add(const std::string& id) {
            pos[id] = ids.size();
            ids.push_back(id);
        }
        void remove(const std::string& id) {
            auto it = pos.find(id);
            if (it == pos.end()) return;
            const std::size_t i = it->second;
            pos[ids.back()] = i;
            std::swap(ids[i], ids.back());
            ids.pop_back();
            pos.erase(it);
        }
    };

    // Pre-seeds seed_levels resting orders per side, one microsecond apart,
    // so a replayed stream reconstructs the same starting book.
    void seed_book(const Sink& sink) {
        Timestamp ts = cfg_.start_time;
        for (int d = 0; d < cfg_.seed_levels; ++d) {
            emit(make_limit(Side::Buy, init_ticks_ - 1 - d, cfg_.seed_size, ++ts), sink);
            emit(make_limit(Side::Sell, init_ticks_ + 1 + d, cfg_.seed_size, ++ts), sink);
        }
    }

    Rates current_rates() const {
        double tilt = 0.0;
        if (cfg_.signal_strength != 0.0) {
            const SizeUnits b = book_.side_volume_units(Side::Buy, cfg_.levels);
            const SizeUnits a = book_.side_volume_units(Side::Sell, cfg_.levels);
            if (b + a > 0) {
                const double imbalance =
                    static_cast<double>(b - a) / static_cast<double>(b + a);
                // Saturating response: the trend direction follows the
                // imbalance sign while the drift magnitude stays bounded.
                tilt = cfg_.signal_strength * 0.25 * std::tanh(imbalance / 0.25);
            }
        }
        Rates r;
        // Taker flow trends with the imbalance: the predictable signal.
        r.buy_limit = cfg_.limit_rate_per_level;
        r.sell_limit = cfg_.limit_rate_per_level;
        r.buy_open = cfg_.open_rate * std::exp(tilt);
        r.sell_open = cfg_.open_rate * std::exp(-tilt);
        r.buy_cancel = cfg_.cancel_rate * static_cast<double>(live_[0].ids.size());
        r.sell_cancel = cfg_.cancel_rate * static_cast<double>(live_[1].ids.size());
        if (cfg_.activity_log_sd > 0) {
            const double a = std::exp(log_activity_);
            r.buy_limit *= a;
            r.sell_limit *= a;
            r.buy_open *= a;
            r.sell_open *= a;
            r.buy_cancel *= a;
            r.sell_cancel *= a;
        }
        r.total = cfg_.levels * (r.buy_limit + r.sell_limit) + r.buy_open + r.sell_open +
                  r.buy_cancel + r.sell_cancel;
        return r;
    }

    // Ornstein-Uhlenbeck step for the log activity over a dt gap.
    void evolve_activity(double dt_seconds) {
        if (cfg_.activity_log_sd <= 0) return;
        const double decay = std::exp(-dt_seconds / cfg_.activity_time_seconds);
        log_activity_ = log_activity_ * decay +
                        cfg_.activity_log_sd * std::sqrt(1.0 - decay * decay) * rng_.normal();
    }

    void step(const Rates& r, Timestamp ts, const Sink& sink) {
        double u = rng_.uniform() * r.total;

        for (Side side : {Side::Buy, Side::Sell}) {
            const double lim = side == Side::Buy ? r.buy_limit : r.sell_limit;
            if (u < cfg_.levels * lim) {
                const int d = static_cast<int>(u / lim);
                place_limit(side, d, ts, sink);
                return;
            }
            u -= cfg_.levels * lim;
        }
        for (Side side : {Side::Buy, Side::Sell}) {
            const double open = side == Side::Buy ? r.buy_open : r.sell_open;
            if (u < open) {
                market_order(side, ts, sink);
                return;
            }
            u -= open;
        }
        for (Side side : {Side::Buy, Side::Sell}) {
            const double can = side == Side::Buy ? r.buy_cancel : r.sell_cancel;
            if (u < can) {
                cancel_random(side, ts, sink);
                return;
            }
            u -= can;
        }
        // Numerical edge of the cumulative walk: treat as a sell cancel if
        // possible, else drop the tick.
        if (!live_[1].ids.empty()) cancel_random(Side::Sell, ts, sink);
    }

    void place_limit(Side side, int d, Timestamp ts, const Sink& sink) {
        std::int64_t ticks;
        if (side == Side::Buy) {
            const std::int64_t anchor = book_.best_ask_ticks()
                                            ? *book_.best_ask_ticks()
                                            : (book_.best_bid_ticks() ? *book_.best_bid_ticks() + 2
                                                                      : init_ticks_ + 1);
            ticks = anchor - 1 - d;
        } else {
            const std::int64_t anchor = book_.best_bid_ticks()
                                            ? *book_.best_bid_ticks()
                                            : (book_.best_ask_ticks() ? *book_.best_ask_ticks() - 2
                                                                      : init_ticks_ - 1);
            ticks = anchor + 1 + d;
        }
        if (ticks < 1) ticks = 1;
        emit(make_limit(side, ticks, draw_size(), ts), sink);
    }

    void market_order(Side side, Timestamp ts, const Sink& sink) {
        const bool has_liquidity =
            side == Side::Buy ? !book_.asks().empty() : !book_.bids().empty();
        if (!has_liquidity) return;  // nothing to hit; clock fires silently

        OrderFlowEvent ev;
        ev.timestamp = ts;
        ev.type = EventType::Open;
        ev.side = side;
        ev.size = draw_size();
        const std::int64_t ref =
            side == Side::Buy ? *book_.best_ask_ticks() : *book_.best_bid_ticks();
        ev.price = book_.ticks_to_price(ref);
        ev.order_id = next_id();
        ev.pair = cfg_.pair;
        emit(ev, sink);
    }

    void cancel_random(Side side, Timestamp ts, const Sink& sink) {
        LiveSide& live = live_[side == Side::Buy ? 0 : 1];
        if (live.ids.empty()) return;
        const std::string id = live.ids[rng_.uniform_index(live.ids.size())];
        const auto order = book_.find_order(id);
        if (!order) return;

        OrderFlowEvent ev;
        ev.timestamp = ts;
        ev.type = EventType::Cancel;
        ev.side = side;
        ev.price = book_.ticks_to_price(order->ticks);
        ev.size = from_size_units(order->size);
        ev.order_id = id;
        ev.pair = cfg_.pair;
        emit(ev, sink);
    }

    OrderFlowEvent make_limit(Side side, std::int64_t ticks, double size, Timestamp ts) {
        OrderFlowEvent ev;
        ev.timestamp = ts;
        ev.type = EventType::LimitPlace;
        ev.side = side;
        ev.price = book_.ticks_to_price(ticks);
        ev.size = size;
        ev.order_id = next_id();
        ev.pair = cfg_.pair;
        return ev;
    }

    double draw_size() {
        double s = rng_.lognormal(cfg_.size_log_mean, cfg_.size_log_sd);
        if (s < cfg_.min_size) s = cfg_.min_size;
        // Snap to 1e-8 lots so the wire format round-trips exactly.
        return from_size_units(std::max<SizeUnits>(1, to_size_units(s)));
    }

    void emit(const OrderFlowEvent& ev, const Sink& sink) {
        const ApplyResult res = book_.apply(ev);
        if (ev.type == EventType::LimitPlace && book_.find_order(ev.order_id))
            live_[ev.side == Side::Buy ? 0 : 1].add(ev.order_id);
        for (const auto& id : res.removed_ids) {
            live_[0].remove(id);
            live_[1].remove(id);
        }
        last_ts_ = ev.timestamp;
        ++emitted_;
        sink(ev);
    }

    std::string next_id() { return "g" + std::to_string(++id_counter_); }

    GeneratorConfig cfg_;
    Rng rng_;
    BookState book_;
    std::int64_t init_ticks_ = 0;
    LiveSide live_[2];
    std::uint64_t id_counter_ = 0;
    std::uint64_t emitted_ = 0;
    Timestamp last_ts_ = 0;
    double log_activity_ = 0.0;
};

// Convenience wrapper matching the rest of the free-function surface.
inline std::vector<OrderFlowEvent> generate_stream(const GeneratorConfig& config,
                                                   double duration_seconds,
                                                   std::uint64_t max_events = 0) {
    StreamGenerator gen(config);
    return gen.generate(duration_seconds, max_events);
}

}  // namespace tickcast::orderflow
