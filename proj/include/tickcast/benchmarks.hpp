#pragma once

// The two literature baselines.
//
// Benchmark 1: a continuous-time birth-death order-book model. Limit
// arrivals are Poisson per (side, distance-from-opposite-best), cancels are
// exponential per resting order, market orders Poisson per side; sizes are
// resampled from the empirical pool. Forecasts are produced by simulating
// n_paths continuations of the current book through the emulator and
// collecting the empirical tick-move distribution.
//
// Benchmark 2: a 2-component Poisson mixture GLM. Mixture weights are a
// softmax over static covariates; component rates are log-linear in the
// static covariates plus window summary statistics. Fitted by EM with
// Newton-stepped weighted regressions in the M-step.

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "tickcast/common.hpp"
#include "tickcast/features.hpp"
#include "tickcast/mixtures.hpp"
#include "tickcast/orderflow.hpp"
#include "tickcast/rng.hpp"

namespace tickcast::benchmarks {

// --- Benchmark 1: birth-death book model -----------------------------------------

struct BirthDeathRates {
    int levels = 5;
    double tick_size = 0.01;
    std::array<std::vector<double>, 2> limit_rate;   // [buy,sell][d], events/s
    std::array<double, 2> market_rate{};             // events/s per side
    std::array<std::vector<double>, 2> cancel_rate;  // 1/s per resting order
    std::vector<double> size_pool;

    nlohmann::json to_json() const {
        return nlohmann::json{{"levels", levels},
                              {"tick_size", tick_size},
                              {"limit_rate_buy", limit_rate[0]},
                              {"limit_rate_sell", limit_rate[1]},
                              {"market_rate", market_rate},
                              {"cancel_rate_buy", cancel_rate[0]},
                              {"cancel_rate_sell", cancel_rate[1]},
                              {"size_pool", size_pool}};
    }

    static BirthDeathRates from_json(const nlohmann::json& j) {
        BirthDeathRates r;
        r.levels = j.at("levels").get<int>();
        r.tick_size = j.at("tick_size").get<double>();
        r.limit_rate[0] = j.at("limit_rate_buy").get<std::vector<double>>();
        r.limit_rate[1] = j.at("limit_rate_sell").get<std::vector<double>>();
        const auto mr = j.at("market_rate").get<std::vector<double>>();
        r.market_rate = {mr.at(0), mr.at(1)};
        r.cancel_rate[0] = j.at("cancel_rate_buy").get<std::vector<double>>();
        r.cancel_rate[1] = j.at("cancel_rate_sell").get<std::vector<double>>();
        r.size_pool = j.at("size_pool").get<std::vector<double>>();
        return r;
    }
};

namespace detail {

// Distance of a resting price level from the opposite best quote, matching
// the placement rule "one tick inside the opposite best, d levels back".
inline int relative_level(orderflow::Side side, std::int64_t ticks, std::int64_t best_bid,
                          std::int64_t best_ask) {
    if (side == orderflow::Side::Buy) return static_cast<int>(best_ask - 1 - ticks);
    return static_cast<int>(ticks - best_bid - 1);
}

}  // namespace detail

// Maximum-likelihood exponential rates from one replayed stream: event counts
// over observation time; cancel rates over cumulative per-order exposure.
inline BirthDeathRates fit_birth_death(std::span<const orderflow::OrderFlowEvent> events,
                                       double tick_size, int levels,
                                       std::size_t max_pool = 200'000) {
    namespace of = orderflow;
    BirthDeathRates rates;
    rates.levels = levels;
    rates.tick_size = tick_size;
    for (int s = 0; s < 2; ++s) {
        rates.limit_rate[s].assign(static_cast<std::size_t>(levels), 0.0);
        rates.cancel_rate[s].assign(static_cast<std::size_t>(levels), 0.0);
    }

    of::BookState book(tick_size);
    std::array<std::vector<long>, 2> limit_counts{
        std::vector<long>(static_cast<std::size_t>(levels), 0),
        std::vector<long>(static_cast<std::size_t>(levels), 0)};
    std::array<std::vector<long>, 2> cancel_counts = limit_counts;
    std::array<std::vector<double>, 2> exposure{
        std::vector<double>(static_cast<std::size_t>(levels), 0.0),
        std::vector<double>(static_cast<std::size_t>(levels), 0.0)};
    std::array<long, 2> market_counts{0, 0};

    Timestamp obs_start = -1, prev_ts = -1;
    for (const auto& ev : events) {
        // Accumulate order exposure over the gap since the previous event.
        if (obs_start >= 0 && prev_ts >= 0 && ev.timestamp > prev_ts && book.has_mid()) {
            const double dt = static_cast<double>(ev.timestamp - prev_ts) /
                              static_cast<double>(kMicrosPerSecond);
            const std::int64_t bb = *book.best_bid_ticks();
            const std::int64_t ba = *book.best_ask_ticks();
            for (const auto& [ticks, lvl] : book.bids()) {
                const int d = detail::relative_level(of::Side::Buy, ticks, bb, ba);
                if (d >= 0 && d < levels)
                    exposure[0][static_cast<std::size_t>(d)] +=
                        dt * static_cast<double>(lvl.queue.size());
            }
            for (const auto& [ticks, lvl] : book.asks()) {
                const int d = detail::relative_level(of::Side::Sell, ticks, bb, ba);
                if (d >= 0 && d < levels)
                    exposure[1][static_cast<std::size_t>(d)] +=
                        dt * static_cast<double>(lvl.queue.size());
            }
        }

        const int side = ev.side == of::Side::Buy ? 0 : 1;
        if (obs_start >= 0 && book.has_mid()) {
            const std::int64_t bb = *book.best_bid_ticks();
            const std::int64_t ba = *book.best_ask_ticks();
            switch (ev.type) {
                case of::EventType::LimitPlace: {
                    const int d = detail::relative_level(ev.side, book.price_to_ticks(ev.price),
                                                         bb, ba);
                    if (d >= 0 && d < levels)
                        ++limit_counts[side][static_cast<std::size_t>(d)];
                    break;
                }
                case of::EventType::Open:
                    ++market_counts[side];
                    break;
                case of::EventType::Cancel: {
                    const auto order = book.find_order(ev.order_id);
                    if (order) {
                        const int d = detail::relative_level(order->side, order->ticks, bb, ba);
                        if (d >= 0 && d < levels)
                            ++cancel_counts[side][static_cast<std::size_t>(d)];
                    }
                    break;
                }
            }
        }
        if (ev.type != of::EventType::Cancel && ev.size > 0 &&
            rates.size_pool.size() < max_pool)
            rates.size_pool.push_back(ev.size);

        book.apply(ev);
        prev_ts = ev.timestamp;
        if (obs_start < 0 && book.has_mid()) obs_start = ev.timestamp;
    }

    if (obs_start < 0 || prev_ts <= obs_start)
        throw DomainError("birth-death fit: zero observation time");
    const double total_time =
        static_cast<double>(prev_ts - obs_start) / static_cast<double>(kMicrosPerSecond);

    for (int s = 0; s < 2; ++s) {
        rates.market_rate[s] = static_cast<double>(market_counts[s]) / total_time;
        for (int d = 0; d < levels; ++d) {
            rates.limit_rate[s][static_cast<std::size_t>(d)] =
                static_cast<double>(limit_counts[s][static_cast<std::size_t>(d)]) / total_time;
            const double ex = exposure[s][static_cast<std::size_t>(d)];
            rates.cancel_rate[s][static_cast<std::size_t>(d)] =
                ex > 0 ? static_cast<double>(cancel_counts[s][static_cast<std::size_t>(d)]) / ex
                       : 0.0;
        }
    }
    if (rates.size_pool.empty()) throw DomainError("birth-death fit: empty size pool");
    return rates;
}

namespace detail {

enum class PathClock { BuyLimit, SellLimit, BuyMarket, SellMarket, BuyCancel, SellCancel };

// One simulated continuation of `book` for tau seconds; returns the tick
// move of the price reference. `start_ref` is the reference value at the
// anchor (the sample's own anchor price, keeping alignment exact).
inline long simulate_path(const BirthDeathRates& rates, orderflow::BookState book,
                          double start_ref, features::PriceRef price_ref, double tau_seconds,
                          Rng& rng) {
    namespace of = orderflow;
    const int W = rates.levels;
    double last_ref = start_ref;
    double t = 0.0;
    Timestamp ts = book.last_event_time();
    long id_counter = 0;
    std::array<std::vector<double>, 2> cancel_intensity{
        std::vector<double>(static_cast<std::size_t>(W), 0.0),
        std::vector<double>(static_cast<std::size_t>(W), 0.0)};

    while (true) {
        const auto bb = book.best_bid_ticks();
        const auto ba = book.best_ask_ticks();

        // Cancellable order counts at the current geometry.
        for (int s = 0; s < 2; ++s)
            std::fill(cancel_intensity[s].begin(), cancel_intensity[s].end(), 0.0);
        if (bb && ba) {
            for (const auto& [ticks, lvl] : book.bids()) {
                const int d = relative_level(of::Side::Buy, ticks, *bb, *ba);
                if (d >= 0 && d < W)
                    cancel_intensity[0][static_cast<std::size_t>(d)] =
                        rates.cancel_rate[0][static_cast<std::size_t>(d)] *
                        static_cast<double>(lvl.queue.size());
            }
            for (const auto& [ticks, lvl] : book.asks()) {
                const int d = relative_level(of::Side::Sell, ticks, *bb, *ba);
                if (d >= 0 && d < W)
                    cancel_intensity[1][static_cast<std::size_t>(d)] =
                        rates.cancel_rate[1][static_cast<std::size_t>(d)] *
                        static_cast<double>(lvl.queue.size());
            }
        }
        double total = 0.0;
        for (int s = 0; s < 2; ++s) {
            total += rates.market_rate[s];
            for (int d = 0; d < W; ++d)
                total += rates.limit_rate[s][static_cast<std::size_t>(d)] +
                         cancel_intensity[s][static_cast<std::size_t>(d)];
        }
        if (total <= 0.0) break;  // frozen book

        t += rng.exponential(total);
        if (t > tau_seconds) break;
        ts = std::max<Timestamp>(ts + 1, book.last_event_time());

        // Categorical clock selection.
        double u = rng.uniform() * total;
        PathClock kind{};
        int side_idx = -1, level_d = -1;
        bool found = false;
        for (int s = 0; s < 2 && !found; ++s)
            for (int d = 0; d < W && !found; ++d) {
                const double r = rates.limit_rate[s][static_cast<std::size_t>(d)];
                if (u < r) {
                    kind = s == 0 ? PathClock::BuyLimit : PathClock::SellLimit;
                    side_idx = s;
                    level_d = d;
                    found = true;
                } else {
                    u -= r;
                }
            }
        for (int s = 0; s < 2 && !found; ++s) {
            if (u < rates.market_rate[s]) {
                kind = s == 0 ? PathClock::BuyMarket : PathClock::SellMarket;
                side_idx = s;
                found = true;
            } else {
                u -= rates.market_rate[s];
            }
        }
        for (int s = 0; s < 2 && !found; ++s)
            for (int d = 0; d < W && !found; ++d) {
                const double r = cancel_intensity[s][static_cast<std::size_t>(d)];
                if (u < r) {
                    kind = s == 0 ? PathClock::BuyCancel : PathClock::SellCancel;
                    side_idx = s;
                    level_d = d;
                    found = true;
                } else {
                    u -= r;
                }
            }
        if (!found) continue;  // fp edge of the cumulative walk

        const of::Side side = side_idx == 0 ? of::Side::Buy : of::Side::Sell;
        of::OrderFlowEvent ev;
        ev.timestamp = ts;
        ev.pair = of::Pair::PairA;
        ev.side = side;

        switch (kind) {
            case PathClock::BuyLimit:
            case PathClock::SellLimit: {
                std::int64_t anchor;
                if (side == of::Side::Buy)
                    anchor = ba ? *ba : (bb ? *bb + 2 : book.price_to_ticks(last_ref) + 1);
                else
                    anchor = bb ? *bb : (ba ? *ba - 2 : book.price_to_ticks(last_ref) - 1);
                std::int64_t ticks =
                    side == of::Side::Buy ? anchor - 1 - level_d : anchor + 1 + level_d;
                if (ticks < 1) ticks = 1;
                ev.type = of::EventType::LimitPlace;
                ev.price = book.ticks_to_price(ticks);
                ev.size = rates.size_pool[rng.uniform_index(rates.size_pool.size())];
                ev.order_id = "p" + std::to_string(++id_counter);
                break;
            }
            case PathClock::BuyMarket:
            case PathClock::SellMarket: {
                const bool has_liq =
                    side == of::Side::Buy ? !book.asks().empty() : !book.bids().empty();
                if (!has_liq) continue;  // silent clock: nothing to hit
                ev.type = of::EventType::Open;
                ev.price = book.ticks_to_price(side == of::Side::Buy ? *book.best_ask_ticks()
                                                                     : *book.best_bid_ticks());
                ev.size = rates.size_pool[rng.uniform_index(rates.size_pool.size())];
                ev.order_id = "p" + std::to_string(++id_counter);
                break;
            }
            case PathClock::BuyCancel:
            case PathClock::SellCancel: {
                // Intensity was positive, so the bucket's level exists.
                const std::int64_t ticks =
                    side == of::Side::Buy ? *ba - 1 - level_d : *bb + 1 + level_d;
                const of::BookLevel* lvl = nullptr;
                if (side == of::Side::Buy) {
                    auto it = book.bids().find(ticks);
                    if (it != book.bids().end()) lvl = &it->second;
                } else {
                    auto it = book.asks().find(ticks);
                    if (it != book.asks().end()) lvl = &it->second;
                }
                if (lvl == nullptr || lvl->queue.empty()) continue;
                const auto& victim = lvl->queue[rng.uniform_index(lvl->queue.size())];
                ev.type = of::EventType::Cancel;
                ev.price = book.ticks_to_price(ticks);
                ev.size = of::from_size_units(victim.size);
                ev.order_id = victim.order_id;
                break;
            }
        }

        const auto res = book.apply(ev);
        if (price_ref == features::PriceRef::LastTrade) {
            if (res.traded > 0) last_ref = book.ticks_to_price(res.last_fill_ticks);
        } else if (book.has_mid()) {
            last_ref = of::mid_price(book);
        }
    }
    return of::tick_quantize(last_ref - start_ref, rates.tick_size);
}

}  // namespace detail

// Empirical forecast from n_paths simulated continuations of the book.
// Per-path RNG streams derive from (seed, path index), so results do not
// depend on evaluation order.
inline mixtures::EmpiricalForecast forecast_birth_death(
    const BirthDeathRates& rates, const orderflow::BookState& book, double anchor_ref_price,
    double tau_seconds, int n_paths, std::uint64_t seed,
    features::PriceRef price_ref = features::PriceRef::Mid) {
    if (n_paths < 1) throw DomainError("forecast_birth_death needs n_paths >= 1");
    if (!book.has_mid()) throw DomainError("forecast_birth_death needs a two-sided book");
    mixtures::EmpiricalForecast fc;
    long down = 0, up = 0, zero = 0;
    for (int p = 0; p < n_paths; ++p) {
        Rng rng = Rng::child(seed, static_cast<std::uint64_t>(p));
        const long move = detail::simulate_path(rates, book, anchor_ref_price, price_ref,
                                                tau_seconds, rng);
        if (move < 0) {
            ++down;
            fc.down_mags.push_back(-move);
        } else if (move > 0) {
            ++up;
            fc.up_mags.push_back(move);
        } else {
            ++zero;
        }
    }
    (void)zero;
    const double n = static_cast<double>(n_paths);
    const double p_down = static_cast<double>(down) / n;
    const double p_up = static_cast<double>(up) / n;
    // Complement form keeps the frequencies summing to exactly 1.0.
    fc.pi = {p_down, p_up, 1.0 - (p_down + p_up)};
    std::sort(fc.down_mags.begin(), fc.down_mags.end());
    std::sort(fc.up_mags.begin(), fc.up_mags.end());
    return fc;
}

// --- Benchmark 2: Poisson mixture GLM ----------------------------------------------

inline constexpr int kGlmStaticDim = 26;  // intercept + 24 hour one-hots + pair dummy

// Static covariates: intercept, hour-of-day one-hot, pair dummy.
inline Eigen::VectorXd glm_static_features(const features::Sample& s) {
    Eigen::VectorXd u = Eigen::VectorXd::Zero(kGlmStaticDim);
    u[0] = 1.0;
    u[1 + s.hour] = 1.0;
    u[25] = s.pair == 2 ? 1.0 : 0.0;
    return u;
}

// Full covariates: statics plus window summaries (per-type and per-side event
// fractions, mean inter-arrival).
inline Eigen::VectorXd glm_features(const features::Sample& s) {
    Eigen::VectorXd u = Eigen::VectorXd::Zero(kGlmStaticDim + 6);
    u.head(kGlmStaticDim) = glm_static_features(s);
    const int m = s.m();
    double mean_ia = 0.0;
    for (int g = 0; g < m; ++g) {
        const int type = static_cast<int>(s.at(g, features::kColType));
        const int side = static_cast<int>(s.at(g, features::kColSide));
        u[kGlmStaticDim + (type - 1)] += 1.0;
        u[kGlmStaticDim + 3 + (side - 1)] += 1.0;
        mean_ia += s.at(g, features::kColInterarrival);
    }
    for (int k = 0; k < 5; ++k) u[kGlmStaticDim + k] /= static_cast<double>(m);
    u[kGlmStaticDim + 5] = mean_ia / static_cast<double>(m);
    return u;
}

struct GlmParams {
    Eigen::VectorXd pi_weights;           // Up-component score over statics
    std::array<Eigen::VectorXd, 2> beta;  // log-linear rate coefficients
    bool converged = false;
    int iterations = 0;
    double final_log_likelihood = 0.0;
    std::vector<double> ll_trace;  // observed-data log-likelihood per EM iteration

    nlohmann::json to_json() const {
        auto vec = [](const Eigen::VectorXd& v) {
            return std::vector<double>(v.data(), v.data() + v.size());
        };
        return nlohmann::json{{"pi_weights", vec(pi_weights)},
                              {"beta_down", vec(beta[0])},
                              {"beta_up", vec(beta[1])},
                              {"converged", converged},
                              {"iterations", iterations},
                              {"final_log_likelihood", final_log_likelihood}};
    }

    static GlmParams from_json(const nlohmann::json& j) {
        GlmParams p;
        auto vec = [&](const char* key) {
            const auto v = j.at(key).get<std::vector<double>>();
            return Eigen::Map<const Eigen::VectorXd>(v.data(),
                                                     static_cast<Eigen::Index>(v.size()))
                .eval();
        };
        p.pi_weights = vec("pi_weights");
        p.beta[0] = vec("beta_down");
        p.beta[1] = vec("beta_up");
        p.converged = j.value("converged", true);
        p.iterations = j.value("iterations", 0);
        return p;
    }
};

inline mixtures::MixtureForecast forecast_glm(const GlmParams& params,
                                              const features::Sample& sample) {
    const Eigen::VectorXd us = glm_static_features(sample);
    const Eigen::VectorXd u = glm_features(sample);
    mixtures::MixtureForecast f;
    f.family = mixtures::Family::Poisson;
    const double p_up = mixtures::sigmoid(params.pi_weights.dot(us));
    f.pi = {1.0 - p_up, p_up};
    for (int k = 0; k < 2; ++k) f.lambda[k] = std::exp(params.beta[k].dot(u));
    return f;
}

struct GlmFitConfig {
    int max_iterations = 500;
    double tolerance = 1e-8;
    int newton_steps = 25;
    double ridge = 1e-9;
};

namespace detail {

// Newton maximization with step halving; `objective` must be concave-ish.
// Returns the reached objective value.
template <typename Obj, typename GradHess>
double newton_ascend(Eigen::VectorXd& theta, const Obj& objective, const GradHess& grad_hess,
                     int steps, double ridge) {
    double value = objective(theta);
    const auto dim = theta.size();
    for (int it = 0; it < steps; ++it) {
        Eigen::VectorXd grad(dim);
        Eigen::MatrixXd hess(dim, dim);
        grad_hess(theta, grad, hess);
        hess.diagonal().array() += ridge;
        Eigen::VectorXd step = hess.ldlt().solve(grad);
        if (!step.allFinite()) break;
        double scale = 1.0;
        bool improved = false;
        for (int half = 0; half < 30; ++half) {
            Eigen::VectorXd candidate = theta + scale * step;
            const double cand_value = objective(candidate);
            if (std::isfinite(cand_value) && cand_value >= value) {
                theta = std::move(candidate);
                if (cand_value - value < 1e-12 * (std::fabs(value) + 1.0)) {
                    return cand_value;  // inner convergence
                }
                value = cand_value;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if (!improved) break;
    }
    return value;
}

}  // namespace detail

inline GlmParams fit_glm(std::span<const features::Sample> train,
                         const GlmFitConfig& cfg = {}) {
    if (train.empty()) throw DomainError("fit_glm: empty training set");
    const std::size_t n = train.size();
    const Eigen::Index dim = kGlmStaticDim + 6;

    std::vector<Eigen::VectorXd> u(n), us(n);
    std::vector<double> mag(n);
    std::vector<int> sign(n);
    for (std::size_t i = 0; i < n; ++i) {
        u[i] = glm_features(train[i]);
        us[i] = glm_static_features(train[i]);
        mag[i] = static_cast<double>(std::labs(train[i].target));
        sign[i] = train[i].target < 0 ? -1 : (train[i].target > 0 ? 1 : 0);
    }

    // Internal standardization of the non-binary feature columns keeps the
    // Newton systems well-conditioned; coefficients are mapped back to raw
    // space before returning.
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim), sd = Eigen::VectorXd::Ones(dim);
    for (Eigen::Index j = kGlmStaticDim; j < dim; ++j) {
        double m = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += u[i][j];
        m /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) sq += (u[i][j] - m) * (u[i][j] - m);
        const double s = std::sqrt(sq / static_cast<double>(n));
        mean[j] = m;
        sd[j] = s > 1e-12 ? s : 1.0;
        for (std::size_t i = 0; i < n; ++i) u[i][j] = (u[i][j] - mean[j]) / sd[j];
    }

    // Initialization: intercept-only rates at the per-direction mean
    // magnitude, uniform mixture weights.
    std::array<Eigen::VectorXd, 2> beta{Eigen::VectorXd::Zero(dim),
                                        Eigen::VectorXd::Zero(dim)};
    {
        std::array<double, 2> sums{0.0, 0.0};
        std::array<long, 2> counts{0, 0};
        for (std::size_t i = 0; i < n; ++i) {
            if (sign[i] < 0) {
                sums[0] += mag[i];
                ++counts[0];
            } else if (sign[i] > 0) {
                sums[1] += mag[i];
                ++counts[1];
            }
        }
        for (int k = 0; k < 2; ++k)
            beta[k][0] = std::log(
                std::max(0.05, counts[k] > 0 ? sums[k] / static_cast<double>(counts[k]) : 1.0));
    }
    Eigen::VectorXd w = Eigen::VectorXd::Zero(kGlmStaticDim);

    auto observed_ll = [&]() {
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mixtures::MixtureForecast f;
            f.family = mixtures::Family::Poisson;
            const double p_up = mixtures::sigmoid(w.dot(us[i]));
            f.pi = {1.0 - p_up, p_up};
            for (int k = 0; k < 2; ++k) f.lambda[k] = std::exp(beta[k].dot(u[i]));
            ll += mixtures::log_likelihood(train[i].target, f);
        }
        return ll;
    };

    GlmParams out;
    std::vector<std::array<double, 2>> resp(n);
    double prev_ll = -std::numeric_limits<double>::infinity();

    for (int iter = 0; iter < cfg.max_iterations; ++iter) {
        // E-step: direction responsibilities. Non-zero targets are observed;
        // zeros split by the components' mass at zero.
        for (std::size_t i = 0; i < n; ++i) {
            if (sign[i] < 0) resp[i] = {1.0, 0.0};
            else if (sign[i] > 0) resp[i] = {0.0, 1.0};
            else {
                const double p_up = mixtures::sigmoid(w.dot(us[i]));
                const double l0 = std::exp(beta[0].dot(u[i]));
                const double l1 = std::exp(beta[1].dot(u[i]));
                const double a = std::log(1.0 - p_up) - l0;
                const double b = std::log(p_up) - l1;
                const double lse = mixtures::log_sum_exp(a, b);
                resp[i] = {std::exp(a - lse), std::exp(b - lse)};
            }
        }

        // M-step 1: mixture weights by weighted logistic Newton ascent.
        detail::newton_ascend(
            w,
            [&](const Eigen::VectorXd& theta) {
                double v = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double s = theta.dot(us[i]);
                    // resp_up * log sigma(s) + resp_down * log sigma(-s)
                    v += resp[i][1] * -mixtures::softplus(-s) +
                         resp[i][0] * -mixtures::softplus(s);
                }
                return v;
            },
            [&](const Eigen::VectorXd& theta, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) {
                grad.setZero();
                hess.setZero();
                for (std::size_t i = 0; i < n; ++i) {
                    const double p = mixtures::sigmoid(theta.dot(us[i]));
                    grad += (resp[i][1] - p) * us[i];
                    hess -= p * (1.0 - p) * us[i] * us[i].transpose();
                }
            },
            cfg.newton_steps, cfg.ridge);

        // M-step 2: per-component weighted Poisson regressions.
        for (int k = 0; k < 2; ++k) {
            detail::newton_ascend(
                beta[k],
                [&](const Eigen::VectorXd& theta) {
                    double v = 0.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        if (resp[i][k] == 0.0) continue;
                        const double s = theta.dot(u[i]);
                        v += resp[i][k] * (mag[i] * s - std::exp(s));
                    }
                    return v;
                },
                [&](const Eigen::VectorXd& theta, Eigen::VectorXd& grad,
                    Eigen::MatrixXd& hess) {
                    grad.setZero();
                    hess.setZero();
                    for (std::size_t i = 0; i < n; ++i) {
                        if (resp[i][k] == 0.0) continue;
                        const double lam = std::exp(theta.dot(u[i]));
                        grad += resp[i][k] * (mag[i] - lam) * u[i];
                        hess -= resp[i][k] * lam * u[i] * u[i].transpose();
                    }
                },
                cfg.newton_steps, cfg.ridge);
        }

        const double ll = observed_ll();
        if (std::isfinite(prev_ll) && ll < prev_ll - 1e-6)
            throw NumericError("GLM EM decreased the log-likelihood");
        out.iterations = iter + 1;
        out.final_log_likelihood = ll;
        out.ll_trace.push_back(ll);
        if (std::isfinite(prev_ll) && std::fabs(ll - prev_ll) < cfg.tolerance) {
            out.converged = true;
            break;
        }
        prev_ll = ll;
    }
    if (!out.converged)
        std::cerr << "[tickcast] warning: GLM EM reached max iterations without converging; "
                     "returning last iterate\n";

    // Undo the internal standardization: beta_raw_j = beta_j / sd_j, the
    // intercept absorbs the means.
    for (int k = 0; k < 2; ++k) {
        for (Eigen::Index j = kGlmStaticDim; j < dim; ++j) {
            const double bj = beta[k][j] / sd[j];
            beta[k][0] -= bj * mean[j];
            beta[k][j] = bj;
        }
    }
    out.pi_weights = w;
    out.beta = beta;
    return out;
}

}  // namespace tickcast::benchmarks
