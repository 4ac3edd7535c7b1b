#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "support.hpp"
#include "volqml/models.hpp"

using namespace volqml;
using volqml::testing::fd_gradient;
using volqml::testing::max_rel_error;
using volqml::testing::random_theta;

TEST(ModelSpec, Dimensions) {
    EXPECT_EQ(ModelSpec::garch(1, 1).dim(), 3u);
    EXPECT_EQ(ModelSpec::agarch(2, 2).dim(), 6u);
    EXPECT_EQ(ModelSpec::egarch().dim(), 4u);
    EXPECT_EQ(ModelSpec::garch(1, 0).state_dim(), 0u);
    EXPECT_EQ(ModelSpec::agarch(2, 3).gamma_index(), 6u);
    const std::vector<std::string> names{"alpha0", "alpha1", "alpha2", "beta1", "gamma"};
    EXPECT_EQ(ModelSpec::agarch(2, 1).coefficient_names(), names);
}

TEST(ModelSpec, EgarchOrdersPinned) {
    EXPECT_THROW(ModelSpec({ModelFamily::egarch, 2, 1}).validate(), ConstraintError);
    EXPECT_THROW(ModelSpec::agarch(0, 1).validate(), ConstraintError);
}

TEST(ThetaVector, RejectsConstraintViolations) {
    EXPECT_THROW(ThetaVector(ModelSpec::garch(1, 1), {0.0, 0.1, 0.5}), ConstraintError);
    EXPECT_THROW(ThetaVector(ModelSpec::garch(1, 1), {0.1, -0.1, 0.5}), ConstraintError);
    EXPECT_THROW(ThetaVector(ModelSpec::garch(1, 2), {0.1, 0.1, 0.5, 0.5}), ConstraintError);
    EXPECT_THROW(ThetaVector(ModelSpec::agarch(1, 1), {0.1, 0.1, 0.5, 1.5}), ConstraintError);
    EXPECT_THROW(ThetaVector(ModelSpec::egarch(), {0.0, 0.5, 0.3, 0.2}), ConstraintError);
    EXPECT_THROW(ThetaVector(ModelSpec::egarch(), {0.0, 1.0, 0.0, 0.2}), ConstraintError);
    EXPECT_THROW(ThetaVector(ModelSpec::garch(1, 1), {0.1, 0.1}), ConstraintError);
    EXPECT_NO_THROW(ThetaVector(ModelSpec::egarch(), {-5.0, 0.0, -0.2, 0.2}));
    EXPECT_NO_THROW(ThetaVector(ModelSpec::agarch(1, 1), {0.1, 0.1, 0.5, -1.0}));
}

TEST(ThetaVector, Accessors) {
    ThetaVector t(ModelSpec::agarch(2, 2), {0.1, 0.05, 0.04, 0.3, 0.2, -0.4});
    EXPECT_DOUBLE_EQ(t.alpha(2), 0.04);
    EXPECT_DOUBLE_EQ(t.beta(1), 0.3);
    EXPECT_DOUBLE_EQ(t.gamma(), -0.4);
    EXPECT_DOUBLE_EQ(t.beta_sum(), 0.5);
    EXPECT_DOUBLE_EQ(ThetaVector(ModelSpec::garch(1, 1), {0.1, 0.2, 0.5}).gamma(), 0.0);
}

TEST(EvalG, HandValues) {
    const ThetaVector garch(ModelSpec::garch(1, 1), {0.1, 0.2, 0.5});
    const std::vector<double> x{-1.0}, s{0.4};
    EXPECT_DOUBLE_EQ(eval_g(garch, x, s), 0.1 + 0.2 + 0.2);

    const ThetaVector agarch(ModelSpec::agarch(1, 1), {0.1, 0.2, 0.5, 0.3});
    // (|-1| - 0.3 * -1)^2 = 1.69
    EXPECT_DOUBLE_EQ(eval_g(agarch, x, s), 0.1 + 0.2 * 1.69 + 0.2);

    const ThetaVector eg(ModelSpec::egarch(), {-0.1, 0.6, -0.2, 0.4});
    const std::vector<double> ls{std::log(0.4)};
    EXPECT_NEAR(eval_g(eg, x, ls), -0.1 + 0.6 * std::log(0.4) + (0.2 + 0.4) / std::sqrt(0.4), 1e-15);
}

TEST(EvalG, LagLengthChecked) {
    const ThetaVector t(ModelSpec::garch(2, 1), {0.1, 0.1, 0.1, 0.5});
    const std::vector<double> x1{1.0}, s1{1.0}, x2{1.0, 2.0}, neg{-1.0};
    EXPECT_THROW(eval_g(t, x1, s1), ConstraintError);
    EXPECT_THROW(eval_g(t, x2, neg), ConstraintError);
    EXPECT_NO_THROW(eval_g(t, x2, s1));
}

class GDerivativeOracle : public ::testing::TestWithParam<ModelSpec> {};

TEST_P(GDerivativeOracle, AnalyticMatchesFiniteDifferences) {
    const ModelSpec m = GetParam();
    RngStream s(11, m.dim());
    const auto d = static_cast<Eigen::Index>(m.dim());
    const auto k = static_cast<Eigen::Index>(m.state_dim());
    for (int rep = 0; rep < 10; ++rep) {
        const ThetaVector theta(m, random_theta(m, s));
        std::vector<double> x(m.obs_lags()), st(m.state_dim());
        for (auto& v : x) v = s.normal();
        for (auto& v : st) v = m.is_egarch() ? s.normal() : 0.2 + s.uniform();
        // stacked argument (theta, s); x is held fixed (and away from 0, where |x| kinks)
        for (auto& v : x)
            if (std::abs(v) < 0.05) v = 0.3;
        Eigen::VectorXd arg(d + k);
        arg << theta.coefficients(), Eigen::Map<const Eigen::VectorXd>(st.data(), k);
        const auto g_of = [&](const Eigen::VectorXd& a) {
            GDerivatives out;
            out.resize(m, 0);
            detail::evaluate_g(m, a.data(), x.data(), a.data() + d, 0, out);
            return out.value;
        };
        const auto grad_of = [&](const Eigen::VectorXd& a) {
            GDerivatives out;
            out.resize(m, 1);
            detail::evaluate_g(m, a.data(), x.data(), a.data() + d, 1, out);
            Eigen::VectorXd v(d + k);
            v << out.d_theta, out.d_s;
            return v;
        };
        const Eigen::VectorXd want = fd_gradient(g_of, arg);
        EXPECT_LT(max_rel_error(grad_of(arg), want), 1e-8);
        const Eigen::MatrixXd h = d2g(theta, x, st);
        EXPECT_LT(max_rel_error(h, volqml::testing::fd_jacobian(grad_of, arg)), 1e-7);
        EXPECT_EQ((h - h.transpose()).cwiseAbs().maxCoeff(), 0.0);
    }
}

INSTANTIATE_TEST_SUITE_P(Families, GDerivativeOracle,
                         ::testing::Values(ModelSpec::garch(1, 1), ModelSpec::agarch(1, 1), ModelSpec::agarch(2, 2),
                                           ModelSpec::agarch(3, 1), ModelSpec::egarch()));

TEST(EvalG, GarchEqualsAgarchAtZeroGamma) {
    RngStream s(3, 0);
    for (int rep = 0; rep < 50; ++rep) {
        const auto c = random_theta(ModelSpec::garch(2, 2), s);
        Eigen::VectorXd ca(6);
        ca << c, 0.0;
        const ThetaVector g(ModelSpec::garch(2, 2), c), a(ModelSpec::agarch(2, 2), ca);
        const std::vector<double> x{s.normal(), s.normal()}, st{s.uniform(), s.uniform()};
        EXPECT_EQ(eval_g(g, x, st), eval_g(a, x, st));
    }
}

TEST(CompactRegion, DefaultContainsTypicalPoints) {
    const auto m = ModelSpec::agarch(1, 1);
    const auto r = CompactRegion::default_for(m, 2.0);
    EXPECT_NO_THROW(r.validate(m));
    Eigen::VectorXd c(4);
    c << 0.1, 0.2, 0.5, 0.3;
    EXPECT_TRUE(r.contains(m, c));
    c[2] = 0.9995;
    EXPECT_FALSE(r.contains(m, c));
}

TEST(CompactRegion, ProjectionIsIdempotentAndFeasible) {
    RngStream s(8, 0);
    for (const auto& m : {ModelSpec::agarch(2, 3), ModelSpec::garch(1, 2), ModelSpec::egarch()}) {
        const auto r = CompactRegion::default_for(m);
        for (int rep = 0; rep < 200; ++rep) {
            Eigen::VectorXd c(static_cast<Eigen::Index>(m.dim()));
            for (auto& v : c) v = 3.0 * s.normal();
            const auto p = r.project(m, c);
            EXPECT_TRUE(r.contains(m, p, 1e-12));
            EXPECT_LT((r.project(m, p) - p).cwiseAbs().maxCoeff(), 1e-12);
        }
    }
}

TEST(CompactRegion, BetaCapProjectionIsEuclidean) {
    const auto m = ModelSpec::garch(1, 2);
    const auto r = CompactRegion::default_for(m);
    Eigen::VectorXd c(4);
    c << 0.1, 0.1, 0.7, 0.5;
    const auto p = r.project(m, c);
    // equal shift of both betas onto sum = 0.999
    EXPECT_NEAR(p[2], 0.7 - 0.1005, 1e-12);
    EXPECT_NEAR(p[3], 0.5 - 0.1005, 1e-12);
}

TEST(CompactRegion, FixedCoordinatesDoNotMove) {
    const auto m = ModelSpec::garch(1, 2);
    const auto r = CompactRegion::default_for(m);
    Eigen::VectorXd c(4);
    c << 0.1, 0.1, 0.7, 0.5;
    const auto p = r.project(m, c, {false, false, true, false});
    EXPECT_EQ(p[2], 0.7);
    EXPECT_NEAR(p[3], 0.299, 1e-12);
}

TEST(WeakStationarity, Margin) {
    const ThetaVector t(ModelSpec::agarch(1, 1), {0.1, 0.2, 0.5, 0.5});
    EXPECT_NEAR(weak_stationarity_margin(t, InnovationSpec::normal()), 1.0 - 0.2 * 1.25 - 0.5, 1e-15);
    EXPECT_THROW(weak_stationarity_margin(ThetaVector(ModelSpec::egarch(), {0, 0.5, 0, 0.1}), InnovationSpec::normal()),
                 UnsupportedError);
}
