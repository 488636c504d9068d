#include <gtest/gtest.h>

#include <cmath>

#include <gsl/gsl_cdf.h>
#include <gsl/gsl_randist.h>

#include "tickcast/mixtures.hpp"

namespace mx = tickcast::mixtures;
using mx::Family;

namespace {

Eigen::VectorXd random_vec(tickcast::Rng& rng, int n, double sd = 0.5) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = rng.normal(0.0, sd);
    return v;
}

mx::MixtureHead random_head(Family family, int z_dim, tickcast::Rng& rng) {
    mx::MixtureHead head;
    head.family = family;
    const int K = mx::component_count(family);
    for (int k = 0; k < K; ++k) {
        head.w_pi.push_back(random_vec(rng, z_dim));
        head.b_pi.push_back(rng.normal(0.0, 0.3));
    }
    for (int i = 0; i < 2; ++i) {
        head.w_rate.push_back(random_vec(rng, z_dim));
        head.b_rate.push_back(rng.normal(0.5, 0.5));
    }
    if (family == Family::NegBinomial) {
        for (int i = 0; i < 2; ++i) {
            head.w_shape.push_back(random_vec(rng, z_dim));
            head.b_shape.push_back(rng.normal(0.0, 0.5));
        }
    }
    return head;
}

// CDF walk straight from GSL; the implementation never touches GSL.
long quantile_oracle(Family family, double p1, double p2, double rho) {
    auto cdf = [&](long k) -> double {
        switch (family) {
            case Family::Poisson:
                return gsl_cdf_poisson_P(static_cast<unsigned>(k), p1);
            case Family::NegBinomial: {
                const double r = 1.0 / p2;
                const double p = 1.0 / (1.0 + p2 * p1);
                return gsl_cdf_negative_binomial_P(static_cast<unsigned>(k), p, r);
            }
            case Family::ZeroTruncPoisson: {
                const double p0 = gsl_ran_poisson_pdf(0, p1);
                return (gsl_cdf_poisson_P(static_cast<unsigned>(k), p1) - p0) / (1.0 - p0);
            }
        }
        return 0.0;
    };
    const long start = family == Family::ZeroTruncPoisson ? 1 : 0;
    for (long k = start; k < 10'000'000; ++k)
        if (cdf(k) >= rho) return k;
    return -1;
}

}  // namespace

TEST(MixtureProbs, UniformWhenScoresEqual) {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(4);
    std::vector<Eigen::VectorXd> w(3, Eigen::VectorXd::Zero(4));
    std::vector<double> b(3, 0.0);
    const auto pi = mx::mixture_probs(z, w, b);
    for (double p : pi) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
}

TEST(MixtureProbs, SoftmaxArithmeticOracle) {
    // scores (ln 2, 0) -> (2/3, 1/3)
    Eigen::VectorXd z = Eigen::VectorXd::Zero(1);
    std::vector<Eigen::VectorXd> w(2, Eigen::VectorXd::Zero(1));
    std::vector<double> b = {std::log(2.0), 0.0};
    const auto pi = mx::mixture_probs(z, w, b);
    EXPECT_NEAR(pi[0], 2.0 / 3.0, 1e-14);
    EXPECT_NEAR(pi[1], 1.0 / 3.0, 1e-14);
}

TEST(MixtureProbs, ShiftInvariance) {
    tickcast::Rng rng(4);
    Eigen::VectorXd z = random_vec(rng, 5);
    std::vector<Eigen::VectorXd> w;
    std::vector<double> b, b_shifted;
    for (int k = 0; k < 3; ++k) {
        w.push_back(random_vec(rng, 5));
        b.push_back(rng.normal());
        b_shifted.push_back(b.back() + 17.5);
    }
    const auto a = mx::mixture_probs(z, w, b);
    const auto c = mx::mixture_probs(z, w, b_shifted);
    int argmax_a = 0, argmax_c = 0;
    for (int k = 0; k < 3; ++k) {
        EXPECT_NEAR(a[k], c[k], 1e-12);
        if (a[k] > a[argmax_a]) argmax_a = k;
        if (c[k] > c[argmax_c]) argmax_c = k;
    }
    EXPECT_EQ(argmax_a, argmax_c);
}

TEST(PositiveLink, SoftplusValues) {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(1);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(1);
    EXPECT_NEAR(mx::positive_link(z, w, 0.0), std::log(2.0), 1e-15);
    // Asymptotic oracle on both tails.
    const double low = mx::positive_link(z, w, -50.0);
    EXPECT_GT(low, 0.0);
    EXPECT_NEAR(low, std::exp(-50.0), 1e-12 * std::exp(-50.0));
    const double high = mx::positive_link(z, w, 50.0);
    EXPECT_NEAR(high, 50.0, 50.0 * 1e-12);
}

TEST(DirectionClass, SignMapping) {
    EXPECT_EQ(mx::direction_class(-3, Family::Poisson), mx::kDown);
    EXPECT_EQ(mx::direction_class(7, Family::NegBinomial), mx::kUp);
    EXPECT_EQ(mx::direction_class(0, Family::ZeroTruncPoisson), mx::kZero);
    EXPECT_EQ(mx::direction_class(0, Family::Poisson), mx::kBothComponents);
    EXPECT_EQ(mx::direction_class(0, Family::NegBinomial), mx::kBothComponents);
}

TEST(LogLikelihood, PoissonPmfOracle) {
    mx::MixtureForecast f;
    f.family = Family::Poisson;
    f.pi = {0.5, 0.5};
    f.lambda = {1.0, 1.0};
    // log(0.5 * 1^2 e^-1 / 2!) computed by direct arithmetic
    const double expected = std::log(0.5 * std::exp(-1.0) / 2.0);
    EXPECT_NEAR(mx::log_likelihood(2, f), expected, 1e-12);
    EXPECT_NEAR(expected, -2.38629, 1e-5);
}

TEST(LogLikelihood, NbGeometricClosedForm) {
    // alpha=1 makes the NB component geometric: pmf(3) = (1/3)(2/3)^3 = 8/81.
    const double pmf = std::exp(mx::log_nb_pmf(3, 2.0, 1.0));
    EXPECT_NEAR(pmf, 8.0 / 81.0, 1e-14);
}

TEST(LogLikelihood, ZtpPmfOracle) {
    const double expected = std::log(2.0 / (std::exp(2.0) - 1.0));
    EXPECT_NEAR(mx::log_ztp_pmf(1, 2.0), expected, 1e-12);
    EXPECT_NEAR(std::exp(expected), 0.313035, 1e-6);

    mx::MixtureForecast f;
    f.family = Family::ZeroTruncPoisson;
    f.pi = {0.0, 1.0, 0.0};  // degenerate on the up component
    f.lambda = {1.0, 2.0};
    EXPECT_NEAR(mx::log_likelihood(1, f), expected, 1e-12);
}

TEST(LogLikelihood, ZeroUnderTwoComponentFamiliesUsesBothComponents) {
    mx::MixtureForecast f;
    f.family = Family::Poisson;
    f.pi = {0.3, 0.7};
    f.lambda = {1.5, 2.5};
    const double expected = std::log(0.3 * std::exp(-1.5) + 0.7 * std::exp(-2.5));
    EXPECT_NEAR(mx::log_likelihood(0, f), expected, 1e-12);
}

TEST(LogLikelihood, ZtpPmfAtZeroIsDomainError) {
    EXPECT_THROW(mx::log_ztp_pmf(0, 2.0), tickcast::DomainError);
}

TEST(LogLikelihood, ZtpMatchesRenormalizedPoisson) {
    for (double lambda : {0.05, 0.7, 3.0, 12.0}) {
        for (long y = 1; y <= 30; ++y) {
            const double expected =
                std::exp(mx::log_poisson_pmf(y, lambda)) / (-std::expm1(-lambda));
            EXPECT_NEAR(std::exp(mx::log_ztp_pmf(y, lambda)), expected, 1e-12) << lambda;
        }
    }
}

TEST(LogLikelihood, NbConvergesToPoissonAtSmallAlpha) {
    for (double mu : {0.3, 1.0, 5.0, 10.0}) {
        for (long y = 0; y <= 50; ++y) {
            const double nb = std::exp(mx::log_nb_pmf(y, mu, 1e-8));
            const double pois = std::exp(mx::log_poisson_pmf(y, mu));
            EXPECT_NEAR(nb, pois, 1e-6) << "mu=" << mu << " y=" << y;
        }
    }
}

// Normalization: exp(log_likelihood) sums to 1 over the signed support.
TEST(LogLikelihood, MixtureNormalizes) {
    tickcast::Rng rng(21);
    for (Family family : {Family::Poisson, Family::NegBinomial, Family::ZeroTruncPoisson}) {
        for (int rep = 0; rep < 40; ++rep) {
            mx::MixtureForecast f;
            f.family = family;
            const int K = mx::component_count(family);
            double s = 0.0;
            f.pi.resize(K);
            for (int k = 0; k < K; ++k) s += (f.pi[k] = rng.uniform(0.05, 1.0));
            for (int k = 0; k < K; ++k) f.pi[k] /= s;
            double max_mean = 0.0;
            for (int i = 0; i < 2; ++i) {
                f.lambda[i] = rng.uniform(0.05, 20.0);
                f.mu[i] = rng.uniform(0.05, 20.0);
                f.alpha[i] = rng.uniform(0.02, 3.0);
                const double mean = family == Family::NegBinomial ? f.mu[i] : f.lambda[i];
                const double var = family == Family::NegBinomial
                                       ? f.mu[i] * (1.0 + f.alpha[i] * f.mu[i])
                                       : f.lambda[i];
                max_mean = std::max(max_mean, mean + 20.0 * std::sqrt(var) + 50.0);
            }
            const long bound = static_cast<long>(max_mean);
            double total = 0.0;
            for (long y = -bound; y <= bound; ++y)
                total += std::exp(mx::log_likelihood(y, f));
            EXPECT_NEAR(total, 1.0, 1e-6) << mx::to_string(family);
        }
    }
}

TEST(LogLikelihood, FiniteAtHugeCounts) {
    mx::MixtureForecast f;
    f.family = Family::Poisson;
    f.pi = {0.5, 0.5};
    f.lambda = {3.0, 8.0};
    EXPECT_TRUE(std::isfinite(mx::log_likelihood(1'000'000, f)));
    f.family = Family::NegBinomial;
    f.mu = {2.0, 4.0};
    f.alpha = {0.5, 1.5};
    EXPECT_TRUE(std::isfinite(mx::log_likelihood(-1'000'000, f)));
    f.family = Family::ZeroTruncPoisson;
    f.pi = {0.3, 0.3, 0.4};
    EXPECT_TRUE(std::isfinite(mx::log_likelihood(1'000'000, f)));
}

// Finite-difference oracle over loss_gradient for every family.
TEST(LossGradient, MatchesCentralFiniteDifferences) {
    const double h = 1e-5;
    const int z_dim = 6;
    for (Family family : {Family::Poisson, Family::NegBinomial, Family::ZeroTruncPoisson}) {
        tickcast::Rng rng(static_cast<std::uint64_t>(family) * 101 + 7);
        for (int rep = 0; rep < 100; ++rep) {
            mx::MixtureHead head = random_head(family, z_dim, rng);
            Eigen::VectorXd z = random_vec(rng, z_dim);
            const long y = static_cast<long>(rng.uniform_index(9)) - 4;

            auto [nll, grad] = head.backward(y, z);
            ASSERT_TRUE(std::isfinite(nll));

            auto check = [&](double analytic, double* slot) {
                const double saved = *slot;
                *slot = saved + h;
                const double up = head.nll(y, z);
                *slot = saved - h;
                const double down = head.nll(y, z);
                *slot = saved;
                const double fd = (up - down) / (2.0 * h);
                const double scale = std::max({1.0, std::fabs(fd), std::fabs(analytic)});
                EXPECT_NEAR(analytic, fd, 1e-6 * scale)
                    << mx::to_string(family) << " rep=" << rep << " y=" << y;
            };

            for (int k = 0; k < head.K(); ++k) {
                for (int i = 0; i < z_dim; ++i) check(grad.w_pi[k][i], &head.w_pi[k][i]);
                check(grad.b_pi[k], &head.b_pi[k]);
            }
            for (int c = 0; c < 2; ++c) {
                for (int i = 0; i < z_dim; ++i) check(grad.w_rate[c][i], &head.w_rate[c][i]);
                check(grad.b_rate[c], &head.b_rate[c]);
                if (family == Family::NegBinomial) {
                    for (int i = 0; i < z_dim; ++i)
                        check(grad.w_shape[c][i], &head.w_shape[c][i]);
                    check(grad.b_shape[c], &head.b_shape[c]);
                }
            }
            // dNLL/dz by perturbing z itself.
            for (int i = 0; i < z_dim; ++i) check(grad.z[i], &z[i]);
        }
    }
}

TEST(LossGradient, StationaryAtMaximizingLambda) {
    // Single-component Poisson at lambda = |y|: dNLL/dlambda = 0, so the
    // rate-bias gradient vanishes.
    mx::MixtureHead head;
    head.family = Family::Poisson;
    head.w_pi = {Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2)};
    head.b_pi = {25.0, -25.0};  // pins pi ~ (1, 0): down component only
    head.w_rate = {Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2)};
    head.b_rate = {mx::inverse_softplus(4.0), mx::inverse_softplus(1.0)};
    Eigen::VectorXd z = Eigen::VectorXd::Zero(2);
    auto [nll, grad] = head.backward(-4, z);
    EXPECT_NEAR(grad.b_rate[0], 0.0, 1e-10);
}

TEST(LossGradient, UnusedComponentHasZeroParameterGradient) {
    tickcast::Rng rng(33);
    for (Family family : {Family::Poisson, Family::ZeroTruncPoisson}) {
        mx::MixtureHead head = random_head(family, 4, rng);
        Eigen::VectorXd z = random_vec(rng, 4);
        auto [nll, grad] = head.backward(+2, z);  // up move: component 1 unused
        EXPECT_EQ(grad.w_rate[0].lpNorm<Eigen::Infinity>(), 0.0);
        EXPECT_EQ(grad.b_rate[0], 0.0);
    }
}

TEST(ComponentQuantile, PoissonMedianCase) {
    // CDF(2) ~ 0.42319 < 0.5 <= CDF(3) ~ 0.64723
    EXPECT_EQ(mx::component_quantile(Family::Poisson, 3.0, 0.0, 0.5), 3);
}

TEST(ComponentQuantile, ZtpSmallRateFloorsAtOne) {
    EXPECT_EQ(mx::component_quantile(Family::ZeroTruncPoisson, 0.01, 0.0, 0.5), 1);
}

TEST(ComponentQuantile, RejectsBadRho) {
    EXPECT_THROW(mx::component_quantile(Family::Poisson, 1.0, 0.0, 0.0), tickcast::DomainError);
    EXPECT_THROW(mx::component_quantile(Family::Poisson, 1.0, 0.0, 1.0), tickcast::DomainError);
}

TEST(ComponentQuantile, AgreesWithGslCdfOracle) {
    tickcast::Rng rng(55);
    for (int rep = 0; rep < 400; ++rep) {
        const Family family = std::array{Family::Poisson, Family::NegBinomial,
                                         Family::ZeroTruncPoisson}[rng.uniform_index(3)];
        const double p1 = rng.uniform(0.05, 60.0);
        const double p2 = rng.uniform(0.05, 3.0);
        const double rho = rng.uniform(0.001, 0.999);
        EXPECT_EQ(mx::component_quantile(family, p1, p2, rho),
                  quantile_oracle(family, p1, p2, rho))
            << mx::to_string(family) << " p1=" << p1 << " p2=" << p2 << " rho=" << rho;
    }
}

TEST(ComponentQuantile, NonDecreasingInRhoWithCdfBracket) {
    const double lambda = 4.2;
    long prev = 0;
    for (double rho : {0.05, 0.2, 0.4, 0.5, 0.75, 0.9, 0.99, 0.999999}) {
        const long q = mx::component_quantile(Family::Poisson, lambda, 0.0, rho);
        EXPECT_GE(q, prev);
        prev = q;
        // CDF(q-1) < rho <= CDF(q)
        EXPECT_GE(gsl_cdf_poisson_P(static_cast<unsigned>(q), lambda), rho);
        if (q > 0)
            EXPECT_LT(gsl_cdf_poisson_P(static_cast<unsigned>(q - 1), lambda), rho);
    }
}

TEST(ExpectedMove, FamilyMeans) {
    mx::MixtureForecast f;
    f.family = Family::Poisson;
    f.pi = {0.5, 0.5};
    f.lambda = {2.0, 5.0};
    auto [d1, u1] = mx::expected_move(f);
    EXPECT_DOUBLE_EQ(d1, 2.0);
    EXPECT_DOUBLE_EQ(u1, 5.0);

    f.family = Family::NegBinomial;
    f.mu = {1.5, 0.7};
    f.alpha = {0.9, 2.3};
    auto [d2, u2] = mx::expected_move(f);
    EXPECT_DOUBLE_EQ(d2, 1.5);
    EXPECT_DOUBLE_EQ(u2, 0.7);

    f.family = Family::ZeroTruncPoisson;
    f.lambda = {1.0, 1.0};
    auto [d3, u3] = mx::expected_move(f);
    EXPECT_NEAR(d3, 1.0 / (1.0 - std::exp(-1.0)), 1e-12);
    EXPECT_NEAR(d3, 1.58198, 1e-5);
}

TEST(SampleMove, DegenerateMixtureIsOneSided) {
    mx::MixtureForecast f;
    f.family = Family::Poisson;
    f.pi = {1.0, 0.0};
    f.lambda = {2.0, 2.0};
    tickcast::Rng rng(9);
    for (int i = 0; i < 2000; ++i) EXPECT_LE(mx::sample_move(f, rng), 0);
}

TEST(SampleMove, ZtpComponentsNeverEmitZero) {
    mx::MixtureForecast f;
    f.family = Family::ZeroTruncPoisson;
    f.pi = {0.5, 0.5, 0.0};
    f.lambda = {0.05, 3.0};
    tickcast::Rng rng(10);
    for (int i = 0; i < 5000; ++i) EXPECT_NE(mx::sample_move(f, rng), 0);
}

TEST(SampleMove, EmpiricalMeanMatchesAnalytic) {
    mx::MixtureForecast f;
    f.family = Family::Poisson;
    f.pi = {0.35, 0.65};
    f.lambda = {1.2, 3.4};
    const double mean = 0.65 * 3.4 - 0.35 * 1.2;
    const double second = 0.35 * (1.2 + 1.2 * 1.2) + 0.65 * (3.4 + 3.4 * 3.4);
    const double sd = std::sqrt(second - mean * mean);

    tickcast::Rng rng(12);
    const int n = 1'000'000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += static_cast<double>(mx::sample_move(f, rng));
    EXPECT_NEAR(sum / n, mean, 3.0 * sd / std::sqrt(static_cast<double>(n)));
}

TEST(EmpiricalForecast, QuantileAndMeanConventions) {
    mx::EmpiricalForecast e;
    e.pi = {0.25, 0.5, 0.25};
    e.up_mags = {1, 2, 2, 5};
    EXPECT_EQ(e.quantile(mx::kUp, 0.25), 1);
    EXPECT_EQ(e.quantile(mx::kUp, 0.5), 2);
    EXPECT_EQ(e.quantile(mx::kUp, 0.9), 5);
    EXPECT_DOUBLE_EQ(e.expected_magnitude(mx::kUp), 2.5);
}

TEST(ForecastJson, RoundTripsBothKinds) {
    mx::MixtureForecast m;
    m.family = Family::NegBinomial;
    m.pi = {0.4, 0.6};
    m.mu = {1.25, 2.5};
    m.alpha = {0.3, 0.8};
    const auto j = mx::forecast_to_json(m);
    const auto back = std::get<mx::MixtureForecast>(mx::forecast_from_json(j));
    EXPECT_EQ(back.family, m.family);
    EXPECT_EQ(back.pi, m.pi);
    EXPECT_EQ(back.mu, m.mu);
    EXPECT_EQ(back.alpha, m.alpha);

    mx::EmpiricalForecast e;
    e.pi = {0.2, 0.3, 0.5};
    e.down_mags = {1, 1, 3};
    e.up_mags = {2};
    const auto je = mx::forecast_to_json(e);
    const auto eback = std::get<mx::EmpiricalForecast>(mx::forecast_from_json(je));
    EXPECT_EQ(eback.pi, e.pi);
    EXPECT_EQ(eback.down_mags, e.down_mags);
    EXPECT_EQ(eback.up_mags, e.up_mags);
}
