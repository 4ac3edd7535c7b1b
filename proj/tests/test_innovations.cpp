#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "volqml/innovations.hpp"
#include "volqml/rng.hpp"

using namespace volqml;

namespace {

struct Moments {
    double mean = 0, var = 0, kurt = 0;
};

Moments sample_moments(const std::vector<double>& v) {
    Moments m;
    const double n = static_cast<double>(v.size());
    for (double x : v) m.mean += x;
    m.mean /= n;
    double m2 = 0, m4 = 0;
    for (double x : v) {
        const double d = x - m.mean;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    m.var = m2 / n;
    m.kurt = (m4 / n) / (m.var * m.var);
    return m;
}

}  // namespace

TEST(RngStream, ReplayIsBitIdentical) {
    RngStream a(17, 3), b(17, 3);
    for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
    RngStream c(17, 3), d(17, 3);
    for (int i = 0; i < 1000; ++i) ASSERT_EQ(std::bit_cast<std::uint64_t>(c.normal()), std::bit_cast<std::uint64_t>(d.normal()));
}

TEST(RngStream, DistinctStreamsDiffer) {
    RngStream a(17, 3), b(17, 4), c(18, 3);
    int same_ab = 0, same_ac = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto x = a.next_u64();
        same_ab += x == b.next_u64();
        same_ac += x == c.next_u64();
    }
    EXPECT_EQ(same_ab, 0);
    EXPECT_EQ(same_ac, 0);
}

TEST(RngStream, SplitChildrenAreIndependentOfOrder) {
    const RngStream parent(5, 0);
    auto c2 = parent.split(2);
    auto c1 = parent.split(1);
    auto c2b = parent.split(2);
    EXPECT_EQ(c2.next_u64(), c2b.next_u64());
    EXPECT_NE(c1.next_u64(), parent.split(2).next_u64());
}

TEST(RngStream, SplitStreamsAreUncorrelated) {
    const RngStream parent(9, 1);
    auto a = parent.split(0), b = parent.split(1);
    const int n = 200000;
    double sab = 0;
    for (int i = 0; i < n; ++i) sab += a.normal() * b.normal();
    EXPECT_LT(std::abs(sab / n), 4.0 / std::sqrt(n));
}

TEST(RngStream, UniformIsOpenInterval) {
    RngStream s(1, 1);
    for (int i = 0; i < 100000; ++i) {
        const double u = s.uniform();
        ASSERT_GT(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
}

TEST(Innovations, EmptyDraw) {
    RngStream s(1, 0);
    EXPECT_TRUE(draw(InnovationSpec::normal(), s, 0).empty());
}

class FamilyMoments : public ::testing::TestWithParam<InnovationSpec> {};

TEST_P(FamilyMoments, MeanAndVarianceAtOneMillion) {
    const auto spec = GetParam();
    RngStream s(2024, static_cast<std::uint64_t>(spec.family));
    const std::size_t n = 1000000;
    const auto m = sample_moments(draw(spec, s, n));
    EXPECT_LT(std::abs(m.mean), 4.0 / std::sqrt(static_cast<double>(n)));
    EXPECT_LT(std::abs(m.var - 1.0), 0.02);
}

TEST_P(FamilyMoments, Moment4AtLeastOne) {
    const auto spec = GetParam();
    if (spec.family == InnovationFamily::student_t && spec.nu <= 4.0) GTEST_SKIP();
    EXPECT_GE(moment4(spec), 1.0);
}

TEST_P(FamilyMoments, AbsMomentBelowOne) {
    const auto m = moment_abs(GetParam());
    EXPECT_LE(m.value, 1.0 + 1e-15);
    EXPECT_GE(m.std_error, 0.0);
}

TEST_P(FamilyMoments, AbsMomentMatchesSample) {
    const auto spec = GetParam();
    RngStream s(77, 1);
    const auto v = draw(spec, s, 400000);
    double a = 0;
    for (double x : v) a += std::abs(x);
    a /= static_cast<double>(v.size());
    EXPECT_NEAR(a, moment_abs(spec).value, 0.005);
}

INSTANTIATE_TEST_SUITE_P(AllFamilies, FamilyMoments,
                         ::testing::Values(InnovationSpec::normal(), InnovationSpec::student_t(6.0),
                                           InnovationSpec::student_t(3.5), InnovationSpec::uniform(),
                                           InnovationSpec::rademacher()));

TEST(Innovations, Moment4ClosedForms) {
    EXPECT_DOUBLE_EQ(moment4(InnovationSpec::normal()), 3.0);
    EXPECT_DOUBLE_EQ(moment4(InnovationSpec::uniform()), 9.0 / 5.0);
    EXPECT_DOUBLE_EQ(moment4(InnovationSpec::student_t(6.0)), 6.0);
    EXPECT_DOUBLE_EQ(moment4(InnovationSpec::rademacher()), 1.0);
}

TEST(Innovations, Moment4InfiniteForHeavyTails) {
    EXPECT_THROW(moment4(InnovationSpec::student_t(4.0)), UnsupportedError);
    EXPECT_THROW(moment4(InnovationSpec::student_t(3.0)), UnsupportedError);
}

TEST(Innovations, InvalidNuRejected) {
    RngStream s(1, 0);
    EXPECT_THROW(draw(InnovationSpec::student_t(2.0), s, 3), ConstraintError);
    EXPECT_THROW(draw(InnovationSpec::student_t(-1.0), s, 3), ConstraintError);
}

TEST(Innovations, AbsMomentClosedForms) {
    EXPECT_NEAR(moment_abs(InnovationSpec::normal()).value, 0.7978845608028654, 1e-15);
    EXPECT_NEAR(moment_abs(InnovationSpec::uniform()).value, std::numbers::sqrt3 / 2.0, 1e-15);
    // quadrature of the standardized t6 density
    EXPECT_NEAR(moment_abs(InnovationSpec::student_t(6.0)).value, 0.75, 1e-14);
}

TEST(Innovations, StudentKurtosisNearSix) {
    RngStream s(31, 0);
    const auto m = sample_moments(draw(InnovationSpec::student_t(6.0), s, 1000000));
    // the t6 sample kurtosis converges slowly (eighth moment is infinite)
    EXPECT_NEAR(m.kurt, 6.0, 0.6);
}

TEST(Innovations, UniformKurtosis) {
    RngStream s(32, 0);
    const auto m = sample_moments(draw(InnovationSpec::uniform(), s, 1000000));
    EXPECT_NEAR(m.kurt, 1.8, 0.01);
}

TEST(Innovations, RademacherIsNotIdentifiable) {
    EXPECT_FALSE(InnovationSpec::rademacher().identifiable());
    EXPECT_TRUE(InnovationSpec::normal().identifiable());
    RngStream s(3, 0);
    for (double z : draw(InnovationSpec::rademacher(), s, 1000)) EXPECT_EQ(std::abs(z), 1.0);
}

TEST(Innovations, FamilyNamesRoundTrip) {
    for (auto f : {InnovationFamily::normal, InnovationFamily::student_t, InnovationFamily::uniform,
                   InnovationFamily::rademacher})
        EXPECT_EQ(parse_innovation_family(to_string(f)), f);
    EXPECT_THROW(parse_innovation_family("cauchy"), ConstraintError);
}
