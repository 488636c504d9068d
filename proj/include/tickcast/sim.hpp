#pragma once

// Kelly-criterion trading simulation.
//
// Each scenario draws test datapoints monotonically (indices strictly
// increase), sizes a position from the model's probabilistic forecast with
// the standard Kelly formula scaled by a risk-aversion multiplier, realizes
// the stored tick move after tau seconds, and compounds capital over T
// iterations. All models inside a scenario trade the identical draw
// sequence, and a hypothetical perfect-prediction baseline runs on the same
// draws for scaling, which makes paired t-tests across models valid.

#include <array>
#include <cmath>
#include <fstream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "tickcast/common.hpp"
#include "tickcast/features.hpp"
#include "tickcast/mixtures.hpp"
#include "tickcast/rng.hpp"

namespace tickcast::sim {

struct SimConfig {
    double initial_capital = 10000.0;
    int iterations = 500;  // T
    int scenarios = 10000; // K
    double risk_aversion = 0.1;
    bool allow_leverage = true;
    double tick_size = 0.01;
    std::uint64_t master_seed = 1;
    int threads = 1;
    int trajectory_count = 1;  // leading scenarios whose trajectories are kept

    void validate() const {
        if (!(initial_capital > 0)) throw ConfigError("initial capital must be positive");
        if (iterations < 1) throw ConfigError("iterations must be >= 1");
        if (scenarios < 1) throw ConfigError("scenarios must be >= 1");
        if (!(risk_aversion > 0)) throw ConfigError("risk aversion must be positive");
        if (!(tick_size > 0)) throw ConfigError("tick_size must be positive");
        if (threads < 1) throw ConfigError("threads must be >= 1");
    }
};

// f_t = s_t (pi_up / Yhat_up - pi_down / Yhat_down) * epsilon, with the
// expected tick moves converted to price units so the fraction is
// dimensionless. A direction with zero probability contributes no term; a
// positive-probability direction with vanishing expected move is degenerate.
inline double kelly_fraction(double price, const mixtures::Forecast& forecast,
                             double risk_aversion, double tick_size) {
    const auto probs = mixtures::direction_probs(forecast);
    auto term = [&](int k, double p) {
        if (p == 0.0) return 0.0;
        const double expected = mixtures::expected_magnitude_of(forecast, k) * tick_size;
        if (!(expected > 0.0))
            throw DomainError("degenerate forecast: zero expected move with positive "
                              "direction probability");
        return p / expected;
    };
    return price * (term(mixtures::kUp, probs[1]) - term(mixtures::kDown, probs[0])) *
           risk_aversion;
}

// Monotone sampling: each draw is uniform over the indices strictly after
// the previous one; exhaustion ends the sequence early.
inline std::vector<std::size_t> monotone_draws(std::size_t n, int iterations, Rng& rng) {
    std::vector<std::size_t> draws;
    draws.reserve(static_cast<std::size_t>(iterations));
    std::size_t prev_plus_one = 0;  // previous index + 1
    for (int t = 0; t < iterations; ++t) {
        if (prev_plus_one >= n) break;
        const std::size_t j =
            prev_plus_one + static_cast<std::size_t>(rng.uniform_index(n - prev_plus_one));
        draws.push_back(j);
        prev_plus_one = j + 1;
    }
    return draws;
}

struct Trade {
    std::size_t sample_index = 0;
    double fraction = 0.0;
    long realized = 0;
    double pnl = 0.0;
};

struct ScenarioResult {
    std::vector<double> trajectory;  // trajectory[0] = initial capital
    std::vector<Trade> trades;
    double final_capital = 0.0;
    double scaled_final = 0.0;  // filled when a baseline is available
};

struct ModelForecasts {
    std::string name;
    std::vector<mixtures::Forecast> forecasts;  // aligned with the test set
};

// The hypothetical baseline that predicts every realized move exactly. Runs
// through the same scenario machinery as any model.
inline ModelForecasts perfect_forecasts(std::span<const features::Sample> samples) {
    ModelForecasts model;
    model.name = "perfect";
    model.forecasts.reserve(samples.size());
    for (const auto& s : samples) {
        mixtures::EmpiricalForecast fc;
        if (s.target > 0) {
            fc.pi = {0.0, 1.0, 0.0};
            fc.up_mags = {s.target};
        } else if (s.target < 0) {
            fc.pi = {1.0, 0.0, 0.0};
            fc.down_mags = {-s.target};
        } else {
            fc.pi = {0.0, 0.0, 1.0};
        }
        model.forecasts.push_back(std::move(fc));
    }
    return model;
}

inline ScenarioResult run_scenario_on_draws(const ModelForecasts& model,
                                            std::span<const features::Sample> samples,
                                            const SimConfig& config,
                                            std::span<const std::size_t> draws) {
    if (model.forecasts.size() != samples.size())
        throw DomainError("forecasts not aligned with the sample set");
    ScenarioResult result;
    double capital = config.initial_capital;
    result.trajectory.push_back(capital);
    for (std::size_t j : draws) {
        const auto& s = samples[j];
        double fraction = kelly_fraction(s.anchor_price, model.forecasts[j],
                                         config.risk_aversion, config.tick_size);
        if (!config.allow_leverage) fraction = std::clamp(fraction, -1.0, 1.0);
        const double position_value = fraction * capital;
        const double pnl = position_value * (static_cast<double>(s.target) *
                                             config.tick_size / s.anchor_price);
        capital += pnl;
        result.trades.push_back({j, fraction, s.target, pnl});
        if (capital <= 0.0) {
            capital = 0.0;  // bankruptcy terminates the scenario
            result.trajectory.push_back(capital);
            break;
        }
        result.trajectory.push_back(capital);
    }
    result.final_capital = capital;
    return result;
}

inline ScenarioResult run_scenario(const ModelForecasts& model,
                                   std::span<const features::Sample> samples,
                                   const SimConfig& config, std::uint64_t scenario_seed) {
    config.validate();
    Rng rng(scenario_seed);
    const auto draws = monotone_draws(samples.size(), config.iterations, rng);
    return run_scenario_on_draws(model, samples, config, draws);
}

struct ExperimentResult {
    std::vector<std::string> model_names;            // excludes the baseline
    std::vector<std::vector<double>> finals;         // [model][scenario]
    std::vector<std::vector<double>> scaled_finals;  // [model][scenario]
    std::vector<double> baseline_finals;             // [scenario]
    // Kept trajectories for the leading scenarios: [scenario][model]; the
    // baseline trajectory is appended last in each scenario's list.
    std::vector<std::vector<std::vector<double>>> trajectories;
};

// Runs K scenarios per model on shared per-scenario draws plus the perfect
// baseline, and scales final capital by the baseline per scenario. Scenario
// RNG streams derive from (master_seed, scenario index) only, so results are
// independent of the thread count.
inline ExperimentResult run_experiment(std::span<const ModelForecasts> models,
                                       std::span<const features::Sample> samples,
                                       const SimConfig& config) {
    config.validate();
    if (models.empty()) throw ConfigError("run_experiment needs at least one model");
    const auto baseline = perfect_forecasts(samples);

    ExperimentResult result;
    for (const auto& m : models) result.model_names.push_back(m.name);
    result.finals.assign(models.size(),
                         std::vector<double>(static_cast<std::size_t>(config.scenarios), 0.0));
    result.scaled_finals = result.finals;
    result.baseline_finals.assign(static_cast<std::size_t>(config.scenarios), 0.0);
    const int kept = std::min(config.trajectory_count, config.scenarios);
    result.trajectories.assign(static_cast<std::size_t>(kept), {});

    auto run_range = [&](int begin, int end) {
        for (int k = begin; k < end; ++k) {
            Rng rng = Rng::child(config.master_seed, static_cast<std::uint64_t>(k));
            const auto draws = monotone_draws(samples.size(), config.iterations, rng);
            const auto base = run_scenario_on_draws(baseline, samples, config, draws);
            result.baseline_finals[static_cast<std::size_t>(k)] = base.final_capital;
            std::vector<std::vector<double>> kept_trajs;
            for (std::size_t mi = 0; mi < models.size(); ++mi) {
                const auto r = run_scenario_on_draws(models[mi], samples, config, draws);
                result.finals[mi][static_cast<std::size_t>(k)] = r.final_capital;
                result.scaled_finals[mi][static_cast<std::size_t>(k)] =
                    r.final_capital / base.final_capital;
                if (k < kept) kept_trajs.push_back(r.trajectory);
            }
            if (k < kept) {
                kept_trajs.push_back(base.trajectory);
                result.trajectories[static_cast<std::size_t>(k)] = std::move(kept_trajs);
            }
        }
    };

    if (config.threads <= 1) {
        run_range(0, config.scenarios);
    } else {
        std::vector<std::thread> workers;
        const int per = (config.scenarios + config.threads - 1) / config.threads;
        for (int w = 0; w < config.threads; ++w) {
            const int begin = w * per;
            const int end = std::min(config.scenarios, begin + per);
            if (begin >= end) break;
            workers.emplace_back(run_range, begin, end);
        }
        for (auto& th : workers) th.join();
    }
    return result;
}

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    long df = 0;
    double mean_diff = 0.0;
};

// Paired Student t-test; p-value from the exact t CDF (regularized
// incomplete beta under the hood). Identical samples give t=0, p=1; a
// deterministic nonzero difference has no valid t statistic and is an error.
inline TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DomainError("paired t-test needs equal-length samples");
    const std::size_t n = a.size();
    if (n < 2) throw DomainError("paired t-test needs at least two pairs");
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i] - mean;
        ss += d * d;
    }
    const double var = ss / static_cast<double>(n - 1);
    TTestResult res;
    res.df = static_cast<long>(n - 1);
    res.mean_diff = mean;
    if (var == 0.0) {
        if (mean == 0.0) return res;  // identical samples: t=0, p=1
        throw DomainError("paired t-test: zero difference variance with nonzero mean");
    }
    res.t = mean / std::sqrt(var / static_cast<double>(n));
    boost::math::students_t dist(static_cast<double>(res.df));
    res.p = 2.0 * boost::math::cdf(dist, -std::fabs(res.t));
    return res;
}

// --- output files -----------------------------------------------------------------

inline void write_scenarios_csv(const std::string& path, const ExperimentResult& r,
                                const std::string& meta_comment) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    if (!meta_comment.empty()) out << "# " << meta_comment << "\n";
    out << "model,scenario,final,scaled_final\n";
    out.precision(12);
    for (std::size_t mi = 0; mi < r.model_names.size(); ++mi)
        for (std::size_t k = 0; k < r.finals[mi].size(); ++k)
            out << r.model_names[mi] << ',' << k << ',' << r.finals[mi][k] << ','
                << r.scaled_finals[mi][k] << '\n';
    if (!out) throw IoError("write failed: " + path);
}

inline void write_trajectories_csv(const std::string& path, const ExperimentResult& r,
                                   const std::string& meta_comment) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    if (!meta_comment.empty()) out << "# " << meta_comment << "\n";
    out << "scenario,model,iteration,capital\n";
    out.precision(12);
    for (std::size_t k = 0; k < r.trajectories.size(); ++k) {
        for (std::size_t mi = 0; mi < r.trajectories[k].size(); ++mi) {
            const std::string& name =
                mi < r.model_names.size() ? r.model_names[mi] : std::string("perfect");
            for (std::size_t t = 0; t < r.trajectories[k][mi].size(); ++t)
                out << k << ',' << name << ',' << t << ',' << r.trajectories[k][mi][t] << '\n';
        }
    }
    if (!out) throw IoError("write failed: " + path);
}

// Equal-width histogram of scaled final capital per model.
inline nlohmann::json histogram_json(const ExperimentResult& r, int bins = 50) {
    nlohmann::json models = nlohmann::json::array();
    for (std::size_t mi = 0; mi < r.model_names.size(); ++mi) {
        const auto& v = r.scaled_finals[mi];
        double lo = v[0], hi = v[0];
        for (double x : v) {
            lo = std::min(lo, x);
            hi = std::max(hi, x);
        }
        if (hi <= lo) hi = lo + 1e-12;
        std::vector<long> counts(static_cast<std::size_t>(bins), 0);
        for (double x : v) {
            int b = static_cast<int>(static_cast<double>(bins) * (x - lo) / (hi - lo));
            b = std::clamp(b, 0, bins - 1);
            ++counts[static_cast<std::size_t>(b)];
        }
        std::vector<double> edges(static_cast<std::size_t>(bins) + 1);
        for (int i = 0; i <= bins; ++i)
            edges[static_cast<std::size_t>(i)] =
                lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
        models.push_back({{"model", r.model_names[mi]},
                          {"bin_edges", edges},
                          {"counts", counts}});
    }
    return nlohmann::json{{"histograms", std::move(models)}};
}

}  // namespace tickcast::sim
