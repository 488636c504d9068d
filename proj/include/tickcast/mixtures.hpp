#pragma once

// Mixture-density output heads over signed tick moves.
//
// Three families: a 2-component Poisson mixture, a 2-component Negative
// Binomial mixture, and a 3-component Zero-Truncated Poisson mixture whose
// third component carries the y=0 mass. Component k=1 is the downward
// direction, k=2 upward. All pmf arithmetic is done in log space through
// lgamma; factorials are never materialized.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/digamma.hpp>
#include <nlohmann/json.hpp>

#include "tickcast/common.hpp"
#include "tickcast/rng.hpp"

namespace tickcast::mixtures {

enum class Family : int { Poisson = 1, NegBinomial = 2, ZeroTruncPoisson = 3 };

inline int component_count(Family f) { return f == Family::ZeroTruncPoisson ? 3 : 2; }

inline const char* to_string(Family f) {
    switch (f) {
        case Family::Poisson: return "poisson";
        case Family::NegBinomial: return "negbinomial";
        case Family::ZeroTruncPoisson: return "ztpoisson";
    }
    return "?";
}

inline Family family_from_string(const std::string& s) {
    if (s == "poisson") return Family::Poisson;
    if (s == "negbinomial") return Family::NegBinomial;
    if (s == "ztpoisson") return Family::ZeroTruncPoisson;
    throw ConfigError("unknown mixture family: " + s);
}

// Direction classes. y=0 under a 2-component family maps to kBothComponents:
// the likelihood there is the full two-component mass at zero.
inline constexpr int kBothComponents = 0;
inline constexpr int kDown = 1;
inline constexpr int kUp = 2;
inline constexpr int kZero = 3;

inline int direction_class(long y, Family family) {
    if (y < 0) return kDown;
    if (y > 0) return kUp;
    return family == Family::ZeroTruncPoisson ? kZero : kBothComponents;
}

// --- scalar links and numeric helpers ---------------------------------------

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// softplus(x) = log(1 + e^x), overflow-safe on both tails.
inline double softplus(double x) {
    if (x > 30.0) return x + std::log1p(std::exp(-x));
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

// Inverse of softplus on (0, inf); used for mean-matching bias init.
inline double inverse_softplus(double y) {
    if (y > 30.0) return y;
    return std::log(std::expm1(y));
}

inline double log_sum_exp(double a, double b) {
    const double m = std::max(a, b);
    if (m == -std::numeric_limits<double>::infinity()) return m;
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// log(e^x - 1) without overflow or cancellation.
inline double log_expm1(double x) {
    if (x > 30.0) return x + std::log1p(-std::exp(-x));
    return std::log(std::expm1(x));
}

// lgamma(k + r) - lgamma(r), exact summation for small k where the direct
// difference of two huge lgammas would lose precision (r = 1/alpha can be
// 1e8 in the Poisson-limit regime).
inline double lgamma_ratio(double k, double r) {
    const long ki = static_cast<long>(k);
    if (k == static_cast<double>(ki) && ki >= 0 && ki <= 64) {
        double s = 0.0;
        for (long j = 0; j < ki; ++j) s += std::log(r + static_cast<double>(j));
        return s;
    }
    return std::lgamma(k + r) - std::lgamma(r);
}

// --- component log pmfs ------------------------------------------------------

inline double log_poisson_pmf(long k, double lambda) {
    if (k < 0) return -std::numeric_limits<double>::infinity();
    const double kd = static_cast<double>(k);
    return kd * std::log(lambda) - lambda - std::lgamma(kd + 1.0);
}

inline double log_nb_pmf(long k, double mu, double alpha) {
    if (k < 0) return -std::numeric_limits<double>::infinity();
    const double kd = static_cast<double>(k);
    const double r = 1.0 / alpha;
    const double log1am = std::log1p(alpha * mu);
    return lgamma_ratio(kd, r) - std::lgamma(kd + 1.0) - r * log1am +
           kd * (std::log(alpha * mu) - log1am);
}

// Zero-truncated Poisson, support {1, 2, ...}. pmf(0) is identically zero;
// asking for it directly is a caller error.
inline double log_ztp_pmf(long k, double lambda) {
    if (k == 0) throw DomainError("zero-truncated Poisson pmf is undefined at 0");
    if (k < 0) return -std::numeric_limits<double>::infinity();
    const double kd = static_cast<double>(k);
    return kd * std::log(lambda) - log_expm1(lambda) - std::lgamma(kd + 1.0);
}

// --- forecasts ---------------------------------------------------------------

// Parametric mixture forecast: the universal model-output currency.
struct MixtureForecast {
    Family family = Family::Poisson;
    std::vector<double> pi;            // K entries, k=1 down / k=2 up / k=3 zero
    std::array<double, 2> lambda{};    // Poisson / ZTP rates
    std::array<double, 2> mu{};        // NB means
    std::array<double, 2> alpha{};     // NB shapes

    int K() const { return component_count(family); }

    void assert_valid() const {
        if (static_cast<int>(pi.size()) != K()) throw DomainError("forecast pi size mismatch");
        double s = 0.0;
        for (double p : pi) {
            if (!(p > 0.0 && p < 1.0)) throw DomainError("forecast pi outside (0,1)");
            s += p;
        }
        if (std::fabs(s - 1.0) > 1e-12) throw DomainError("forecast pi does not sum to 1");
        for (int i = 0; i < 2; ++i) {
            if (family == Family::NegBinomial) {
                if (!(mu[i] > 0.0 && alpha[i] > 0.0))
                    throw DomainError("NB parameters must be positive");
            } else if (!(lambda[i] > 0.0)) {
                throw DomainError("rate parameters must be positive");
            }
        }
    }
};

// Empirical forecast produced by simulation-based models (Benchmark 1):
// direction frequencies plus per-direction magnitude samples, exposing the
// same quantile/expectation surface as the parametric forecast.
struct EmpiricalForecast {
    std::array<double, 3> pi{};        // down, up, zero frequencies, sum 1
    std::vector<long> down_mags;       // sorted ascending
    std::vector<long> up_mags;         // sorted ascending

    long quantile(int k, double rho) const {
        if (!(rho > 0.0 && rho < 1.0)) throw DomainError("quantile level outside (0,1)");
        const auto& mags = k == kDown ? down_mags : up_mags;
        if (mags.empty()) return 0;
        // Smallest magnitude with empirical CDF >= rho.
        const std::size_t n = mags.size();
        std::size_t idx = static_cast<std::size_t>(
            std::ceil(rho * static_cast<double>(n) - 1e-12));
        if (idx > 0) --idx;
        return mags[idx];
    }

    double expected_magnitude(int k) const {
        const auto& mags = k == kDown ? down_mags : up_mags;
        if (mags.empty()) return 0.0;
        double s = 0.0;
        for (long m : mags) s += static_cast<double>(m);
        return s / static_cast<double>(mags.size());
    }
};

using Forecast = std::variant<MixtureForecast, EmpiricalForecast>;

// --- log likelihood -----------------------------------------------------------

inline double log_likelihood(long y, const MixtureForecast& f) {
    const long mag = std::labs(y);
    const int k = direction_class(y, f.family);
    switch (f.family) {
        case Family::Poisson:
            if (k == kBothComponents)
                return log_sum_exp(std::log(f.pi[0]) + log_poisson_pmf(0, f.lambda[0]),
                                   std::log(f.pi[1]) + log_poisson_pmf(0, f.lambda[1]));
            return std::log(f.pi[k - 1]) + log_poisson_pmf(mag, f.lambda[k - 1]);
        case Family::NegBinomial:
            if (k == kBothComponents)
                return log_sum_exp(std::log(f.pi[0]) + log_nb_pmf(0, f.mu[0], f.alpha[0]),
                                   std::log(f.pi[1]) + log_nb_pmf(0, f.mu[1], f.alpha[1]));
            return std::log(f.pi[k - 1]) + log_nb_pmf(mag, f.mu[k - 1], f.alpha[k - 1]);
        case Family::ZeroTruncPoisson:
            if (k == kZero) return std::log(f.pi[2]);
            return std::log(f.pi[k - 1]) + log_ztp_pmf(mag, f.lambda[k - 1]);
    }
    throw DomainError("bad family");
}

// --- head weights and gradients -----------------------------------------------

// Softmax over per-component affine scores of z, log-sum-exp stabilized.
inline std::vector<double> mixture_probs(const Eigen::VectorXd& z,
                                         const std::vector<Eigen::VectorXd>& w,
                                         const std::vector<double>& b) {
    const int K = static_cast<int>(w.size());
    std::vector<double> scores(K);
    double m = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k) {
        scores[k] = w[k].dot(z) + b[k];
        m = std::max(m, scores[k]);
    }
    double denom = 0.0;
    for (int k = 0; k < K; ++k) denom += std::exp(scores[k] - m);
    std::vector<double> pi(K);
    for (int k = 0; k < K; ++k) pi[k] = std::exp(scores[k] - m) / denom;
    return pi;
}

inline double positive_link(const Eigen::VectorXd& z, const Eigen::VectorXd& w, double b) {
    return softplus(w.dot(z) + b);
}

struct HeadGradients {
    Eigen::VectorXd z;  // dNLL/dz
    std::vector<Eigen::VectorXd> w_pi;
    std::vector<double> b_pi;
    std::vector<Eigen::VectorXd> w_rate;
    std::vector<double> b_rate;
    std::vector<Eigen::VectorXd> w_shape;  // NB only
    std::vector<double> b_shape;
};

// Output-head weights: K mixture-score heads plus per-component positive
// parameter heads (lambda or mu, plus alpha for NB). The tensors live in the
// network's parameter store; this struct is the owner of their semantics.
struct MixtureHead {
    Family family = Family::Poisson;
    std::vector<Eigen::VectorXd> w_pi;
    std::vector<double> b_pi;
    std::vector<Eigen::VectorXd> w_rate;  // lambda (Poisson/ZTP) or mu (NB)
    std::vector<double> b_rate;
    std::vector<Eigen::VectorXd> w_shape;  // alpha, NB only
    std::vector<double> b_shape;

    int K() const { return component_count(family); }
    int z_dim() const { return w_pi.empty() ? 0 : static_cast<int>(w_pi[0].size()); }

    void init(Family fam, int z, double target_mean_magnitude, Rng& rng) {
        family = fam;
        const double bound = 1.0 / std::sqrt(static_cast<double>(z));
        auto draw = [&](int n) {
            Eigen::VectorXd v(n);
            for (int i = 0; i < n; ++i) v[i] = rng.uniform(-bound, bound);
            return v;
        };
        w_pi.assign(static_cast<std::size_t>(K()), Eigen::VectorXd());
        b_pi.assign(static_cast<std::size_t>(K()), 0.0);
        for (auto& w : w_pi) w = draw(z);
        w_rate.assign(2, Eigen::VectorXd());
        // Mean-matching: initial rate/mean parameters start near the
        // training-target magnitude so early softplus outputs are sane.
        const double b0 = inverse_softplus(std::max(0.05, target_mean_magnitude));
        b_rate.assign(2, b0);
        for (auto& w : w_rate) w = draw(z);
        if (family == Family::NegBinomial) {
            w_shape.assign(2, Eigen::VectorXd());
            b_shape.assign(2, inverse_softplus(0.5));
            for (auto& w : w_shape) w = draw(z);
        } else {
            w_shape.clear();
            b_shape.clear();
        }
    }

    MixtureForecast forecast(const Eigen::VectorXd& z) const {
        MixtureForecast f;
        f.family = family;
        f.pi = mixture_probs(z, w_pi, b_pi);
        for (int i = 0; i < 2; ++i) {
            const double rate = positive_link(z, w_rate[i], b_rate[i]);
            if (family == Family::NegBinomial) {
                f.mu[i] = rate;
                f.alpha[i] = positive_link(z, w_shape[i], b_shape[i]);
            } else {
                f.lambda[i] = rate;
            }
        }
        return f;
    }

    double nll(long y, const Eigen::VectorXd& z) const {
        return -log_likelihood(y, forecast(z));
    }

    // Exact gradient of the NLL with respect to z and every head weight.
    std::pair<double, HeadGradients> backward(long y, const Eigen::VectorXd& z) const {
        const MixtureForecast f = forecast(z);
        const double nll_value = -log_likelihood(y, f);
        const int K = this->K();
        const long mag = std::labs(y);
        const double magd = static_cast<double>(mag);
        const int k = direction_class(y, family);

        std::vector<double> d_pi_score(static_cast<std::size_t>(K), 0.0);
        std::array<double, 2> d_rate{0.0, 0.0};   // dNLL/d(lambda or mu)
        std::array<double, 2> d_shape{0.0, 0.0};  // dNLL/d(alpha)

        auto double_derivs_nb = [&](long yy, int i, double scale) {
            const double mu = f.mu[i], a = f.alpha[i];
            const double yd = static_cast<double>(yy);
            const double r = 1.0 / a;
            const double dmu = yd / mu - (1.0 + a * yd) / (1.0 + a * mu);
            const double dalpha =
                -(boost::math::digamma(yd + r) - boost::math::digamma(r)) / (a * a) +
                std::log1p(a * mu) / (a * a) - mu / (a * (1.0 + a * mu)) + yd / a -
                yd * mu / (1.0 + a * mu);
            d_rate[i] += -scale * dmu;
            d_shape[i] += -scale * dalpha;
        };

        if (k == kDown || k == kUp) {
            const int i = k - 1;
            for (int j = 0; j < K; ++j) d_pi_score[static_cast<std::size_t>(j)] = f.pi[j];
            d_pi_score[static_cast<std::size_t>(i)] -= 1.0;
            switch (family) {
                case Family::Poisson:
                    d_rate[i] = 1.0 - magd / f.lambda[i];
                    break;
                case Family::NegBinomial:
                    double_derivs_nb(mag, i, 1.0);
                    break;
                case Family::ZeroTruncPoisson: {
                    const double lam = f.lambda[i];
                    d_rate[i] = 1.0 / (-std::expm1(-lam)) - magd / lam;
                    break;
                }
            }
        } else if (k == kZero) {
            for (int j = 0; j < K; ++j) d_pi_score[static_cast<std::size_t>(j)] = f.pi[j];
            d_pi_score[2] -= 1.0;
        } else {
            // y = 0 under a 2-component family: both components share the
            // zero mass; responsibilities split the gradient.
            std::array<double, 2> lw{};
            for (int j = 0; j < 2; ++j) {
                const double lp = family == Family::Poisson
                                      ? log_poisson_pmf(0, f.lambda[j])
                                      : log_nb_pmf(0, f.mu[j], f.alpha[j]);
                lw[j] = std::log(f.pi[j]) + lp;
            }
            const double lse = log_sum_exp(lw[0], lw[1]);
            for (int j = 0; j < 2; ++j) {
                const double resp = std::exp(lw[j] - lse);
                d_pi_score[static_cast<std::size_t>(j)] = f.pi[j] - resp;
                if (family == Family::Poisson) {
                    d_rate[j] = resp;  // dlogpmf(0)/dlambda = -1
                } else {
                    double_derivs_nb(0, j, resp);
                }
            }
        }

        HeadGradients g;
        g.z = Eigen::VectorXd::Zero(z.size());
        g.w_pi.resize(static_cast<std::size_t>(K));
        g.b_pi.resize(static_cast<std::size_t>(K));
        for (int j = 0; j < K; ++j) {
            const double d = d_pi_score[static_cast<std::size_t>(j)];
            g.w_pi[static_cast<std::size_t>(j)] = d * z;
            g.b_pi[static_cast<std::size_t>(j)] = d;
            g.z += d * w_pi[static_cast<std::size_t>(j)];
        }
        g.w_rate.resize(2);
        g.b_rate.resize(2);
        for (int i = 0; i < 2; ++i) {
            const double ds = d_rate[i] * sigmoid(w_rate[i].dot(z) + b_rate[i]);
            g.w_rate[i] = ds * z;
            g.b_rate[i] = ds;
            g.z += ds * w_rate[i];
        }
        if (family == Family::NegBinomial) {
            g.w_shape.resize(2);
            g.b_shape.resize(2);
            for (int i = 0; i < 2; ++i) {
                const double ds = d_shape[i] * sigmoid(w_shape[i].dot(z) + b_shape[i]);
                g.w_shape[i] = ds * z;
                g.b_shape[i] = ds;
                g.z += ds * w_shape[i];
            }
        }
        return {nll_value, std::move(g)};
    }
};

// --- quantiles, expectations, sampling -----------------------------------------

// Smallest integer q in the component's support with CDF(q) >= rho. Linear
// cumulative summation; exactness beats speed here.
inline long component_quantile(Family family, double p1, double p2, double rho) {
    if (!(rho > 0.0 && rho < 1.0)) throw DomainError("quantile level outside (0,1)");
    const long start = family == Family::ZeroTruncPoisson ? 1 : 0;
    auto log_pmf = [&](long k) {
        switch (family) {
            case Family::Poisson: return log_poisson_pmf(k, p1);
            case Family::NegBinomial: return log_nb_pmf(k, p1, p2);
            case Family::ZeroTruncPoisson: return log_ztp_pmf(k, p1);
        }
        return -std::numeric_limits<double>::infinity();
    };
    double cum = 0.0;
    for (long k = start; k < 100'000'000; ++k) {
        cum += std::exp(log_pmf(k));
        if (cum >= rho) return k;
        if (1.0 - cum < 1e-15) return k;  // fp-saturated tail
    }
    throw NumericError("quantile search did not terminate");
}

// Per-direction conditional expectation of |y|.
inline std::pair<double, double> expected_move(const MixtureForecast& f) {
    auto one = [&](int i) {
        switch (f.family) {
            case Family::Poisson: return f.lambda[i];
            case Family::NegBinomial: return f.mu[i];
            case Family::ZeroTruncPoisson: return f.lambda[i] / (-std::expm1(-f.lambda[i]));
        }
        return 0.0;
    };
    return {one(0), one(1)};
}

namespace detail {

inline long sample_ztp(double lambda, Rng& rng) {
    if (lambda >= 0.5) {
        for (int attempt = 0; attempt < 100000; ++attempt) {
            const long k = rng.poisson(lambda);
            if (k >= 1) return k;
        }
        throw NumericError("ZTP rejection sampler stalled");
    }
    // Small-rate regime: sequential inversion over {1, 2, ...}.
    const double u = rng.uniform();
    double cum = 0.0;
    for (long k = 1; k < 1000; ++k) {
        cum += std::exp(log_ztp_pmf(k, lambda));
        if (u <= cum) return k;
    }
    return 1;
}

}  // namespace detail

inline long sample_move(const MixtureForecast& f, Rng& rng) {
    const double u = rng.uniform();
    double cum = 0.0;
    int k = f.K();
    for (int j = 1; j <= f.K(); ++j) {
        cum += f.pi[j - 1];
        if (u < cum) {
            k = j;
            break;
        }
    }
    if (k == kZero && f.family == Family::ZeroTruncPoisson) return 0;
    long mag = 0;
    switch (f.family) {
        case Family::Poisson:
            mag = rng.poisson(f.lambda[k - 1]);
            break;
        case Family::NegBinomial: {
            // Gamma-Poisson mixture representation.
            const double shape = 1.0 / f.alpha[k - 1];
            const double scale = f.alpha[k - 1] * f.mu[k - 1];
            mag = rng.poisson(rng.gamma(shape, scale));
            break;
        }
        case Family::ZeroTruncPoisson:
            mag = detail::sample_ztp(f.lambda[k - 1], rng);
            break;
    }
    return k == kDown ? -mag : mag;
}

inline long sample_move(const EmpiricalForecast& f, Rng& rng) {
    const double u = rng.uniform();
    if (u < f.pi[0] && !f.down_mags.empty())
        return -f.down_mags[rng.uniform_index(f.down_mags.size())];
    if (u < f.pi[0] + f.pi[1] && !f.up_mags.empty())
        return f.up_mags[rng.uniform_index(f.up_mags.size())];
    return 0;
}

// --- uniform access over the forecast variant ----------------------------------

// Direction probabilities as {down, up, zero}; zero mass is 0 for 2-component
// parametric families (they can never predict the Zero class).
inline std::array<double, 3> direction_probs(const Forecast& fc) {
    if (const auto* m = std::get_if<MixtureForecast>(&fc)) {
        return {m->pi[0], m->pi[1], m->K() == 3 ? m->pi[2] : 0.0};
    }
    return std::get<EmpiricalForecast>(fc).pi;
}

inline int direction_class_count(const Forecast& fc) {
    if (const auto* m = std::get_if<MixtureForecast>(&fc)) return m->K();
    return 3;
}

inline long quantile_of(const Forecast& fc, int k, double rho) {
    if (const auto* m = std::get_if<MixtureForecast>(&fc)) {
        const int i = k - 1;
        const double p1 = m->family == Family::NegBinomial ? m->mu[i] : m->lambda[i];
        const double p2 = m->family == Family::NegBinomial ? m->alpha[i] : 0.0;
        return component_quantile(m->family, p1, p2, rho);
    }
    return std::get<EmpiricalForecast>(fc).quantile(k, rho);
}

inline double expected_magnitude_of(const Forecast& fc, int k) {
    if (const auto* m = std::get_if<MixtureForecast>(&fc)) {
        const auto [down, up] = expected_move(*m);
        return k == kDown ? down : up;
    }
    return std::get<EmpiricalForecast>(fc).expected_magnitude(k);
}

inline long sample_of(const Forecast& fc, Rng& rng) {
    if (const auto* m = std::get_if<MixtureForecast>(&fc)) return sample_move(*m, rng);
    return sample_move(std::get<EmpiricalForecast>(fc), rng);
}

// --- JSON wire form -------------------------------------------------------------

inline nlohmann::json forecast_to_json(const Forecast& fc) {
    nlohmann::json j;
    if (const auto* m = std::get_if<MixtureForecast>(&fc)) {
        j["family"] = to_string(m->family);
        j["pi"] = m->pi;
        nlohmann::json params;
        if (m->family == Family::NegBinomial) {
            params["mu"] = m->mu;
            params["alpha"] = m->alpha;
        } else {
            params["lambda"] = m->lambda;
        }
        j["params"] = std::move(params);
    } else {
        const auto& e = std::get<EmpiricalForecast>(fc);
        j["family"] = "empirical";
        j["pi"] = e.pi;
        j["params"] = {{"down_mags", e.down_mags}, {"up_mags", e.up_mags}};
    }
    return j;
}

inline Forecast forecast_from_json(const nlohmann::json& j) {
    const std::string fam = j.at("family").get<std::string>();
    if (fam == "empirical") {
        EmpiricalForecast e;
        const auto pi = j.at("pi").get<std::vector<double>>();
        std::copy(pi.begin(), pi.end(), e.pi.begin());
        e.down_mags = j.at("params").at("down_mags").get<std::vector<long>>();
        e.up_mags = j.at("params").at("up_mags").get<std::vector<long>>();
        return e;
    }
    MixtureForecast m;
    m.family = family_from_string(fam);
    m.pi = j.at("pi").get<std::vector<double>>();
    const auto& params = j.at("params");
    if (m.family == Family::NegBinomial) {
        const auto mu = params.at("mu").get<std::vector<double>>();
        const auto alpha = params.at("alpha").get<std::vector<double>>();
        std::copy(mu.begin(), mu.end(), m.mu.begin());
        std::copy(alpha.begin(), alpha.end(), m.alpha.begin());
    } else {
        const auto lambda = params.at("lambda").get<std::vector<double>>();
        std::copy(lambda.begin(), lambda.end(), m.lambda.begin());
    }
    return m;
}

}  // namespace tickcast::mixtures
