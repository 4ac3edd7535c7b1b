#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "support.hpp"
#include "volqml/filter.hpp"
#include "volqml/sre.hpp"

using namespace volqml;

namespace {
// psi(1/2) + log 2, from an arbitrary-precision evaluation
constexpr double kPsiHalfPlusLog2 = -1.27036284546147817;
}  // namespace

TEST(Simulate, ReplayIsBitIdentical) {
    const ThetaVector t(ModelSpec::agarch(2, 1), {0.1, 0.1, 0.05, 0.6, -0.3});
    const auto a = simulate_stationary(t, InnovationSpec::student_t(7), RngStream(4, 2), 500);
    const auto b = simulate_stationary(t, InnovationSpec::student_t(7), RngStream(4, 2), 500);
    EXPECT_EQ(a.x, b.x);
    EXPECT_EQ(a.sigma2, b.sigma2);
    EXPECT_EQ(a.presample_x, b.presample_x);
}

TEST(Simulate, PathIdentity) {
    const ThetaVector t(ModelSpec::garch(1, 1), {0.1, 0.2, 0.5});
    const auto p = simulate_stationary(t, InnovationSpec::normal(), RngStream(1, 0), 300);
    ASSERT_EQ(p.x.size(), 300u);
    for (std::size_t k = 0; k < p.x.size(); ++k) {
        EXPECT_DOUBLE_EQ(p.x[k], std::sqrt(p.sigma2[k]) * p.z[k]);
        const double prev_x = k == 0 ? p.presample_x[0] : p.x[k - 1];
        const double prev_s = k == 0 ? p.presample_sigma2[0] : p.sigma2[k - 1];
        EXPECT_NEAR(p.sigma2[k], 0.1 + 0.2 * prev_x * prev_x + 0.5 * prev_s, 1e-14);
    }
    EXPECT_TRUE(p.certificate_ok);
    EXPECT_LT(p.certificate_gap, 1e-8);
}

TEST(Simulate, FilterAtTruthFromPresampleStateIsExact) {
    const ThetaVector t(ModelSpec::agarch(1, 2), {0.1, 0.15, 0.3, 0.2, 0.4});
    const auto p = simulate_stationary(t, InnovationSpec::normal(), RngStream(2, 0), 200);
    FilterConfig cfg;
    cfg.initial = p.presample_sigma2;
    const auto f = run_filter(t, observations_with_presample(p), cfg, 0);
    for (std::size_t k = 0; k < f.size(); ++k) EXPECT_NEAR(f.h[k], p.sigma2[k], 1e-13 * p.sigma2[k]);
}

TEST(Simulate, EgarchPath) {
    const ThetaVector t(ModelSpec::egarch(), {-0.1, 0.8, -0.1, 0.3});
    const auto p = simulate_stationary(t, InnovationSpec::normal(), RngStream(3, 0), 400);
    for (std::size_t k = 1; k < p.x.size(); ++k) {
        const double l = -0.1 + 0.8 * std::log(p.sigma2[k - 1]) - 0.1 * p.z[k - 1] + 0.3 * std::abs(p.z[k - 1]);
        EXPECT_NEAR(std::log(p.sigma2[k]), l, 1e-12);
    }
}

TEST(Simulate, SampleVarianceNearStationaryLevel) {
    const ThetaVector t(ModelSpec::garch(1, 1), {0.1, 0.1, 0.6});
    const auto p = simulate_stationary(t, InnovationSpec::normal(), RngStream(5, 0), 200000);
    EXPECT_NEAR(sample_variance(p.x), 0.1 / 0.3, 0.02);
}

TEST(Companion, Garch11IsScalar) {
    const ThetaVector t(ModelSpec::garch(1, 1), {0.1, 0.2, 0.5});
    const auto a = agarch_companion(t, 1.5);
    ASSERT_EQ(a.rows(), 1);
    EXPECT_DOUBLE_EQ(a(0, 0), 0.2 * 2.25 + 0.5);
}

TEST(Companion, Agarch22Layout) {
    const ThetaVector t(ModelSpec::agarch(2, 2), {0.1, 0.1, 0.05, 0.4, 0.2, 0.5});
    const double z = -0.8;
    const double u2 = std::pow(std::abs(z) - 0.5 * z, 2);
    const auto a = agarch_companion(t, z);
    ASSERT_EQ(a.rows(), 3);
    // the matrix propagates the (p+q-1)-dimensional state; its spectral content drives the Lyapunov exponent
    EXPECT_NEAR(a(0, 0), 0.1 * u2 + 0.4, 1e-15);
    EXPECT_TRUE(a.allFinite());
    EXPECT_GE(a.minCoeff(), 0.0);
}

TEST(Lyapunov, ClosedFormArchOne) {
    const ThetaVector t(ModelSpec::garch(1, 1), {0.1, 0.5, 0.0});
    const auto est = lyapunov_agarch(t, InnovationSpec::normal(), RngStream(42, 0), 10000, 50);
    const double want = std::log(0.5) + kPsiHalfPlusLog2;
    EXPECT_NEAR(want, -1.96351002602142348, 1e-14);
    EXPECT_LT(std::abs(est.rho_hat - want), 3.0 * est.std_error);
    EXPECT_GT(est.std_error, 0.0);
}

TEST(Lyapunov, DeterministicBetaOnly) {
    const ThetaVector t(ModelSpec::garch(1, 1), {0.1, 0.0, 0.5});
    const auto est = lyapunov_agarch(t, InnovationSpec::normal(), RngStream(1, 0), 1000, 5);
    EXPECT_NEAR(est.rho_hat, std::log(0.5), 1e-12);
}

TEST(Lyapunov, ReplayAndNormChoice) {
    const ThetaVector t(ModelSpec::agarch(2, 2), {0.1, 0.1, 0.05, 0.4, 0.2, 0.3});
    const auto a = lyapunov_agarch(t, InnovationSpec::normal(), RngStream(7, 1), 2000, 10);
    const auto b = lyapunov_agarch(t, InnovationSpec::normal(), RngStream(7, 1), 2000, 10);
    EXPECT_EQ(a.rho_hat, b.rho_hat);
    const auto c = lyapunov_agarch(t, InnovationSpec::normal(), RngStream(7, 1), 2000, 10, MatrixNorm::operator_2);
    EXPECT_NEAR(a.rho_hat, c.rho_hat, 5e-3);
    EXPECT_LT(a.rho_hat, 0.0);
}

TEST(Lyapunov, JensenBound) {
    // rho <= log E A for scalar A
    RngStream s(3, 0);
    for (int rep = 0; rep < 5; ++rep) {
        const double a1 = 0.05 + 0.4 * s.uniform(), b1 = 0.2 + 0.5 * s.uniform();
        const ThetaVector t(ModelSpec::garch(1, 1), {0.1, a1, b1});
        const auto est = lyapunov_agarch(t, InnovationSpec::normal(), RngStream(8, rep), 4000, 10);
        EXPECT_LT(est.rho_hat, std::log(a1 + b1) + 3.0 * est.std_error);
    }
}

TEST(SpectralRadius, KnownValue) {
    const std::vector<double> b{0.3, 0.2};
    const auto r = spectral_radius_C(b);
    EXPECT_NEAR(r.radius, 0.6216990566028302, 1e-14);
    EXPECT_NEAR(r.bound, std::sqrt(0.5), 1e-15);
    EXPECT_EQ(spectral_radius_C(std::vector<double>{}).radius, 0.0);
}

TEST(SpectralRadius, ScalarCaseMeetsTheBound) {
    // q = 1: C = beta1, so the radius equals the bound
    const std::vector<double> b{0.7};
    const auto r = spectral_radius_C(b);
    EXPECT_DOUBLE_EQ(r.radius, r.bound);
}

TEST(SpectralRadius, BoundAndGelfandOnRandomBetas) {
    RngStream s(12, 0);
    for (int rep = 0; rep < 100; ++rep) {
        const auto q = 2 + static_cast<std::size_t>(s.uniform() * 4.0);
        std::vector<double> b(q);
        double sum = 0.0;
        for (auto& v : b) sum += v = s.uniform();
        const double target = 0.2 + 0.78 * s.uniform();
        for (auto& v : b) v *= target / sum;
        const auto r = spectral_radius_C(b);
        EXPECT_LT(r.radius, r.bound) << "q = " << q;
        const double g = log_norm_power(beta_companion(b), 64) / 64.0;
        EXPECT_LT(std::abs(g - std::log(r.radius)), 0.05) << "q = " << q;
    }
}

TEST(EgarchInvertibility, ClosedFormPoint) {
    const ThetaVector t(ModelSpec::egarch(), {0.0, 0.0, 0.0, 1.0});
    const auto d = egarch_invertibility_check(t, InnovationSpec::normal(), RngStream(6, 0), 100000);
    EXPECT_LT(std::abs(d.log_lambda_mean - -0.929386322889251716), 3.0 * d.std_error);
    EXPECT_TRUE(d.contractive());
}

TEST(EgarchInvertibility, RefusesOtherFamilies) {
    const ThetaVector t(ModelSpec::garch(1, 1), {0.1, 0.2, 0.5});
    EXPECT_THROW(egarch_invertibility_check(t, InnovationSpec::normal(), RngStream(1, 0), 10), UnsupportedError);
}

TEST(Contraction, GarchIsAlwaysContractive) {
    const ThetaVector t(ModelSpec::garch(1, 2), {0.1, 0.2, 0.3, 0.2});
    const std::vector<double> x(50, 1.0);
    const auto d = scan_contraction(t, x);
    EXPECT_TRUE(d.contractive());
}
