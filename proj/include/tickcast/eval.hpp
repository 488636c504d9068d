#pragma once

// Two-step forecast evaluation: directional point forecasts scored with the
// multiclass (Gorodkin) Matthews correlation coefficient, then size risk
// scored with pinball loss on the correctly-classified non-zero directions,
// reported raw and scaled to a designated baseline model.

#include <array>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tickcast/common.hpp"
#include "tickcast/mixtures.hpp"

namespace tickcast::eval {

enum class Direction : int { Down = 0, Up = 1, Zero = 2 };

inline const char* to_string(Direction d) {
    switch (d) {
        case Direction::Down: return "down";
        case Direction::Up: return "up";
        case Direction::Zero: return "zero";
    }
    return "?";
}

inline Direction true_class(long y) {
    if (y < 0) return Direction::Down;
    if (y > 0) return Direction::Up;
    return Direction::Zero;
}

struct ConfusionMatrix {
    std::array<std::array<long, 3>, 3> counts{};  // [truth][prediction]

    void add(Direction truth, Direction pred) {
        ++counts[static_cast<int>(truth)][static_cast<int>(pred)];
    }
    long total() const {
        long t = 0;
        for (const auto& row : counts)
            for (long c : row) t += c;
        return t;
    }
};

// Argmax over the direction probabilities. Ties go to Zero when the model
// can express it, otherwise Down (the lower-risk class either way).
inline Direction direction_point_forecast(const mixtures::Forecast& fc) {
    const auto probs = mixtures::direction_probs(fc);
    const int K = mixtures::direction_class_count(fc);
    double vmax = probs[0];
    for (int k = 1; k < K; ++k) vmax = std::max(vmax, probs[k]);
    int argmax = -1;
    int ties = 0;
    for (int k = 0; k < K; ++k) {
        if (probs[k] == vmax) {
            ++ties;
            if (argmax < 0) argmax = k;
        }
    }
    if (ties > 1) return K == 3 ? Direction::Zero : Direction::Down;
    return static_cast<Direction>(argmax);
}

// Multiclass MCC (Gorodkin). A degenerate denominator (all predictions in
// one class, or all truths in one class) scores 0: random performance.
inline double mcc(const ConfusionMatrix& cm) {
    const double s = static_cast<double>(cm.total());
    if (s == 0.0) throw DomainError("MCC of an empty confusion matrix");
    double trace = 0.0;
    std::array<double, 3> t{}, p{};
    for (int i = 0; i < 3; ++i) {
        trace += static_cast<double>(cm.counts[i][i]);
        for (int j = 0; j < 3; ++j) {
            t[i] += static_cast<double>(cm.counts[i][j]);
            p[j] += static_cast<double>(cm.counts[i][j]);
        }
    }
    double tp_dot = 0.0, tsq = 0.0, psq = 0.0;
    for (int i = 0; i < 3; ++i) {
        tp_dot += t[i] * p[i];
        tsq += t[i] * t[i];
        psq += p[i] * p[i];
    }
    const double denom = std::sqrt(s * s - psq) * std::sqrt(s * s - tsq);
    if (denom == 0.0) return 0.0;
    return (trace * s - tp_dot) / denom;
}

// Non-negative pinball loss on magnitudes.
inline double quantile_loss(double y_true, double q_pred, double rho) {
    if (!(rho > 0.0 && rho < 1.0)) throw DomainError("quantile level outside (0,1)");
    return y_true >= q_pred ? rho * (y_true - q_pred) : (1.0 - rho) * (q_pred - y_true);
}

struct SizeRiskEntry {
    double rho = 0.0;
    double loss = 0.0;
    double scaled = 0.0;
    bool available = false;         // model had correctly-classified samples
    bool scaled_available = false;  // baseline side defined and positive
};

struct PeriodMetrics {
    std::string period;
    long n = 0;
    double mcc = 0.0;
    long n_sized = 0;  // correctly-classified non-zero samples of the model
    std::vector<SizeRiskEntry> size_risk;
};

struct EvalReport {
    std::string model;
    std::string baseline;
    std::vector<PeriodMetrics> periods;
};

namespace detail {

// Mean pinball loss over correctly-classified non-zero directions, using the
// predicted (== true) component's quantile.
inline std::pair<double, long> size_risk(std::span<const mixtures::Forecast> forecasts,
                                         std::span<const long> truths,
                                         std::span<const std::size_t> idx, double rho) {
    double sum = 0.0;
    long n = 0;
    for (std::size_t i : idx) {
        const Direction truth = true_class(truths[i]);
        if (truth == Direction::Zero) continue;
        if (direction_point_forecast(forecasts[i]) != truth) continue;
        const int k = truth == Direction::Down ? mixtures::kDown : mixtures::kUp;
        const long q = mixtures::quantile_of(forecasts[i], k, rho);
        sum += quantile_loss(static_cast<double>(std::labs(truths[i])),
                             static_cast<double>(q), rho);
        ++n;
    }
    return {n > 0 ? sum / static_cast<double>(n) : 0.0, n};
}

}  // namespace detail

inline EvalReport evaluate(std::span<const mixtures::Forecast> model_forecasts,
                           std::span<const long> truths,
                           std::span<const mixtures::Forecast> baseline_forecasts,
                           std::span<const std::string> period_labels,
                           std::vector<double> rhos = {0.5, 0.9}) {
    if (model_forecasts.size() != truths.size() ||
        baseline_forecasts.size() != truths.size() || period_labels.size() != truths.size())
        throw DomainError("evaluate: misaligned input sequences");

    // Periods in order of first appearance.
    std::vector<std::string> order;
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < truths.size(); ++i) {
        auto [it, inserted] = groups.try_emplace(period_labels[i]);
        if (inserted) order.push_back(period_labels[i]);
        it->second.push_back(i);
    }

    EvalReport report;
    for (const auto& label : order) {
        const auto& idx = groups[label];
        PeriodMetrics pm;
        pm.period = label;
        pm.n = static_cast<long>(idx.size());

        ConfusionMatrix cm;
        for (std::size_t i : idx)
            cm.add(true_class(truths[i]), direction_point_forecast(model_forecasts[i]));
        pm.mcc = mcc(cm);

        for (double rho : rhos) {
            auto [model_loss, model_n] = detail::size_risk(model_forecasts, truths, idx, rho);
            auto [base_loss, base_n] =
                detail::size_risk(baseline_forecasts, truths, idx, rho);
            SizeRiskEntry e;
            e.rho = rho;
            e.loss = model_loss;
            e.available = model_n > 0;
            pm.n_sized = model_n;
            if (e.available && base_n > 0 && base_loss > 0.0) {
                e.scaled = model_loss / base_loss;
                e.scaled_available = true;
            } else if (e.available && base_n > 0 && base_loss == 0.0 && model_loss == 0.0) {
                e.scaled = 1.0;  // both perfect
                e.scaled_available = true;
            }
            pm.size_risk.push_back(e);
        }
        report.periods.push_back(std::move(pm));
    }
    return report;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json periods = nlohmann::json::array();
    for (const auto& p : r.periods) {
        nlohmann::json risks = nlohmann::json::array();
        for (const auto& e : p.size_risk) {
            nlohmann::json je{{"rho", e.rho}, {"available", e.available}};
            if (e.available) je["loss"] = e.loss;
            if (e.scaled_available) je["scaled"] = e.scaled;
            risks.push_back(std::move(je));
        }
        periods.push_back({{"period", p.period},
                           {"n", p.n},
                           {"mcc", p.mcc},
                           {"n_sized", p.n_sized},
                           {"size_risk", std::move(risks)}});
    }
    return nlohmann::json{
        {"model", r.model}, {"baseline", r.baseline}, {"periods", std::move(periods)}};
}

// Rows of (model, period, metric, value, scaled_value); scaled empty for MCC.
inline std::vector<std::string> report_csv_rows(const EvalReport& r) {
    std::vector<std::string> rows;
    char buf[256];
    for (const auto& p : r.periods) {
        std::snprintf(buf, sizeof(buf), "%s,%s,mcc,%.10g,", r.model.c_str(),
                      p.period.c_str(), p.mcc);
        rows.emplace_back(buf);
        for (const auto& e : p.size_risk) {
            if (e.available && e.scaled_available)
                std::snprintf(buf, sizeof(buf), "%s,%s,ql_%g,%.10g,%.10g", r.model.c_str(),
                              p.period.c_str(), e.rho, e.loss, e.scaled);
            else if (e.available)
                std::snprintf(buf, sizeof(buf), "%s,%s,ql_%g,%.10g,", r.model.c_str(),
                              p.period.c_str(), e.rho, e.loss);
            else
                std::snprintf(buf, sizeof(buf), "%s,%s,ql_%g,unavailable,", r.model.c_str(),
                              p.period.c_str(), e.rho);
            rows.emplace_back(buf);
        }
    }
    return rows;
}

}  // namespace tickcast::eval
