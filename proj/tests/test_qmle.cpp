#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "support.hpp"
#include "volqml/qmle.hpp"

using namespace volqml;
using volqml::testing::simulated_data;

TEST(Fit, RecoversGarch11) {
    const ThetaVector t(ModelSpec::garch(1, 1), {0.1, 0.2, 0.5});
    const auto data = simulated_data(t, 1, 8000);
    const auto rep = fit(t.model(), data, CompactRegion::default_for(t.model(), sample_variance(data)));
    EXPECT_TRUE(rep.converged);
    ASSERT_TRUE(rep.covariance_available);
    for (Eigen::Index k = 0; k < 3; ++k)
        EXPECT_LT(std::abs(rep.theta_hat[k] - t.coefficients()[k]), 4.0 * rep.covariance.std_errors[k]) << k;
    EXPECT_EQ(rep.n, 8000u);
    EXPECT_EQ(rep.residuals.size(), 8000u);
    EXPECT_LT(rep.projected_gradient, 1e-6);
}

TEST(Fit, RecoversEgarch) {
    const ThetaVector t(ModelSpec::egarch(), {-0.1, 0.8, -0.1, 0.3});
    const auto data = simulated_data(t, 2, 6000);
    const auto rep = fit(t.model(), data, CompactRegion::default_for(t.model(), sample_variance(data)));
    EXPECT_TRUE(rep.converged);
    for (Eigen::Index k = 0; k < 4; ++k)
        EXPECT_LT(std::abs(rep.theta_hat[k] - t.coefficients()[k]), 0.15) << k;
}

TEST(Fit, LocalMaximumHasZeroProjectedGradient) {
    const ThetaVector t(ModelSpec::agarch(1, 1), {0.1, 0.15, 0.6, 0.3});
    const auto data = simulated_data(t, 3, 3000);
    const auto region = CompactRegion::default_for(t.model(), sample_variance(data));
    const auto rep = fit(t.model(), data, region);
    ASSERT_TRUE(rep.converged);
    // no feasible ascent direction of size 1e-4 in any coordinate
    const double base = loglik(ThetaVector(t.model(), rep.theta_hat), data);
    for (Eigen::Index k = 0; k < 4; ++k)
        for (double sgn : {-1.0, 1.0}) {
            Eigen::VectorXd c = rep.theta_hat;
            c[k] += sgn * 1e-4;
            c = region.project(t.model(), c);
            EXPECT_LE(loglik(ThetaVector(t.model(), c), data), base + 1e-9);
        }
}

TEST(Fit, NestingIsExact) {
    const ThetaVector t(ModelSpec::garch(1, 1), {0.1, 0.2, 0.5});
    const auto data = simulated_data(t, 4, 2000);
    const double var = sample_variance(data);
    const auto gm = ModelSpec::garch(1, 1);
    const auto am = ModelSpec::agarch(1, 1);
    const Eigen::VectorXd start_g = (Eigen::VectorXd(3) << 0.05, 0.1, 0.7).finished();
    const Eigen::VectorXd start_a = (Eigen::VectorXd(4) << 0.05, 0.1, 0.7, 0.0).finished();
    auto region_a = CompactRegion::default_for(am, var);
    const auto region_g = CompactRegion::default_for(gm, var);
    FitOptions opt;
    opt.fixed = {false, false, false, true};
    const auto rg = fit(gm, data, region_g, start_g);
    const auto ra = fit(am, data, region_a, start_a, opt);
    EXPECT_EQ(ra.theta_hat[3], 0.0);
    for (Eigen::Index k = 0; k < 3; ++k) EXPECT_LT(std::abs(rg.theta_hat[k] - ra.theta_hat[k]), 1e-10) << k;
    EXPECT_EQ(rg.loglik, ra.loglik);
}

TEST(Fit, FixedCoordinateStaysPut) {
    const ThetaVector t(ModelSpec::agarch(1, 1), {0.1, 0.15, 0.6, 0.3});
    const auto data = simulated_data(t, 5, 1500);
    FitOptions opt;
    opt.fixed = {false, true, false, false};
    const Eigen::VectorXd init = (Eigen::VectorXd(4) << 0.2, 0.25, 0.4, 0.0).finished();
    const auto rep = fit(t.model(), data, CompactRegion::default_for(t.model(), sample_variance(data)), init, opt);
    EXPECT_EQ(rep.theta_hat[1], 0.25);
    ASSERT_TRUE(rep.covariance_available);
    EXPECT_EQ(rep.covariance.std_errors.size(), 4);
}

TEST(Fit, IsDeterministicAcrossThreadCounts) {
    const ThetaVector t(ModelSpec::agarch(2, 1), {0.1, 0.1, 0.05, 0.6, 0.2});
    const auto data = simulated_data(t, 6, 2000);
    const auto region = CompactRegion::default_for(t.model(), sample_variance(data));
    FitOptions one, four;
    four.threads = 4;
    const auto a = fit(t.model(), data, region, std::nullopt, one);
    const auto b = fit(t.model(), data, region, std::nullopt, four);
    EXPECT_EQ(a.theta_hat, b.theta_hat);
    EXPECT_EQ(a.loglik, b.loglik);
}

TEST(Fit, RejectsTooShortData) {
    const auto m = ModelSpec::garch(1, 1);
    const std::vector<double> data(20, 1.0);
    EXPECT_THROW(fit(m, data, CompactRegion::default_for(m)), ConstraintError);
}

TEST(Fit, AllStartsFailingRaises) {
    const auto m = ModelSpec::garch(1, 1);
    std::vector<double> data(200, 1.0);
    data[50] = std::numeric_limits<double>::infinity();
    EXPECT_THROW(fit(m, data, CompactRegion::default_for(m)), FitFailure);
}

TEST(Covariance, StandardErrorsMatchMonteCarloScale) {
    // at n = 4000 and theta0 = (0.1, 0.2, 0.5), the plug-in SE of beta is O(0.03)
    const ThetaVector t(ModelSpec::garch(1, 1), {0.1, 0.2, 0.5});
    const auto data = simulated_data(t, 7, 4000);
    const auto cov = covariance(t, data);
    EXPECT_EQ(cov.n, 4000u);
    EXPECT_NEAR(cov.kurt_hat, 2.0, 0.4);
    EXPECT_GT(cov.std_errors[2], 0.01);
    EXPECT_LT(cov.std_errors[2], 0.08);
    EXPECT_LT((cov.vcov - cov.vcov.transpose()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Residuals, AreUnitScaleAtTruth) {
    const ThetaVector t(ModelSpec::garch(1, 1), {0.1, 0.2, 0.5});
    const auto data = simulated_data(t, 8, 20000);
    const auto r = residuals(t, data);
    double s2 = 0.0;
    for (double z : r) s2 += z * z;
    EXPECT_NEAR(s2 / static_cast<double>(r.size()), 1.0, 0.03);
}

TEST(DefaultStarts, AreFeasibleAndDistinct) {
    for (const auto& m : {ModelSpec::garch(1, 1), ModelSpec::agarch(2, 2), ModelSpec::egarch()}) {
        const auto region = CompactRegion::default_for(m, 2.0);
        const auto starts = default_starts(m, 2.0, 5);
        ASSERT_GE(starts.size(), 1u);
        for (const auto& s : starts) EXPECT_TRUE(region.contains(m, s)) << to_string(m.family);
    }
}
