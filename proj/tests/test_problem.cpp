#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "fbsvi/constants.hpp"
#include "fbsvi/presets.hpp"
#include "fbsvi/problem.hpp"

using namespace fbsvi;

namespace {

ProblemSpec scalar(double k2_declared, double gamma_declared, double fy, bool identity_g = true) {
    ProblemSpec s;
    s.coeffs = detail::scalar_coefficients(
        [](double, double, double, double) { return 0.0; }, [](double, double, double) { return 0.0; },
        [fy](double, double, double y, double) { return fy * y; },
        [identity_g](double x) { return identity_g ? x : 0.0; },
        {.K = 0.0, .k2 = k2_declared, .gamma = gamma_declared, .L = std::abs(fy)}, false);
    return s;
}

}  // namespace

TEST(Assumptions, TrivialSpecPasses) {
    const auto rep = validate_assumptions(scalar(1.0, 0.0, 0.0), 2000, 1);
    EXPECT_TRUE(rep.all_passed()) << ::testing::PrintToString(rep.failures());
    EXPECT_TRUE(rep.constants_ok());
}

TEST(Assumptions, UnderstatedTerminalLipschitzIsCaught) {
    const auto rep = validate_assumptions(scalar(0.5, 0.0, 0.0), 2000, 1);
    const auto* c = rep.find("H5(iii): Lipschitz k2 of g");
    ASSERT_NE(c, nullptr);
    EXPECT_FALSE(c->passed);
    EXPECT_NEAR(c->empirical, 1.0, 1e-12);
    EXPECT_FALSE(rep.constants_ok());
    // Fail-fast wiring into the compatibility search.
    const auto res = check_compatibility(rep, structural(DeclaredConstants{.k2 = 0.5}), 1.0);
    EXPECT_FALSE(res);
    EXPECT_FALSE(res.reason.empty());
}

TEST(Assumptions, MonotoneDriverPasses) {
    const auto rep = validate_assumptions(scalar(1.0, -5.0, -5.0), 2000, 1);
    const auto* c = rep.find("H5(v): monotonicity gamma of f in y");
    ASSERT_NE(c, nullptr);
    EXPECT_TRUE(c->passed);
    EXPECT_NEAR(c->empirical, -5.0, 1e-12);
    const auto bad = validate_assumptions(scalar(1.0, -6.0, -5.0), 2000, 1);
    EXPECT_FALSE(bad.find("H5(v): monotonicity gamma of f in y")->passed);
}

TEST(Assumptions, DeterministicGivenSeed) {
    const auto spec = make_preset("linear");
    const auto a = validate_assumptions(spec, 500, 9), b = validate_assumptions(spec, 500, 9);
    ASSERT_EQ(a.checks.size(), b.checks.size());
    for (std::size_t i = 0; i < a.checks.size(); ++i) EXPECT_EQ(a.checks[i].empirical, b.checks[i].empirical);
}

TEST(Assumptions, PresetsAreConsistent) {
    for (const auto& name : preset_names()) {
        const auto spec = make_preset(name);
        EXPECT_NO_THROW(spec.validate()) << name;
        const auto rep = validate_assumptions(spec, 2000, 3);
        EXPECT_TRUE(rep.constants_ok()) << name << ": " << ::testing::PrintToString(rep.failures());
    }
}

TEST(Assumptions, FlagsNonzeroInteriorAndDecouplingMistakes) {
    auto s = make_preset("linear");
    s.psi = ConvexFn::interval(0.0, 1.0);  // 0 on the boundary
    s.x0 = {0.5};
    const auto rep = validate_assumptions(s, 200, 1);
    EXPECT_FALSE(rep.find("H1: psi >= psi(0) = 0, 0 in Int Dom psi")->passed);

    auto c = make_preset("coupled");
    c.coeffs.coupled = false;  // b depends on y
    const auto rc = validate_assumptions(c, 200, 1);
    EXPECT_FALSE(rc.find("decoupled: b, sigma independent of (y, z)")->passed);
}

TEST(ProblemSpec, ValidationErrors) {
    auto s = make_preset("reflected-bm");
    s.x0 = {-1.0};
    EXPECT_THROW(s.validate(), DomainError);
    s.x0 = {0.0, 0.0};
    EXPECT_THROW(s.validate(), InvalidArgument);
    s = make_preset("zero");
    s.T = 0.0;
    EXPECT_THROW(s.validate(), InvalidArgument);
    s = make_preset("zero");
    s.coeffs.g = nullptr;
    EXPECT_THROW(s.validate(), InvalidArgument);
    EXPECT_THROW(make_preset("no-such-preset"), InvalidArgument);
}

TEST(Affine, EvaluatesBlocksAndDetectsCoupling) {
    AffineCoefficients a;
    a.dims = {2, 1, 1};
    a.Bx = {{-1, 0}, {0, -2}};
    a.By = {{0.5}, {0}};
    a.b0 = {1, 2};
    a.S0 = {{1}, {0.5}};
    a.Fy = {{-3}};
    a.G = {{1, 1}};
    const auto c = make_affine(a, {.K = 2});
    EXPECT_TRUE(c.coupled);
    std::vector<double> x{1, 2}, y{4}, z{0}, out(2), sig(2), fo(1), go(1);
    c.b(0, x, y, z, out);
    EXPECT_DOUBLE_EQ(out[0], -1 + 2 + 1);
    EXPECT_DOUBLE_EQ(out[1], -4 + 2);
    c.sigma(0, x, y, sig);
    EXPECT_DOUBLE_EQ(sig[1], 0.5);
    c.f(0, x, y, z, fo);
    EXPECT_DOUBLE_EQ(fo[0], -12);
    c.g(x, go);
    EXPECT_DOUBLE_EQ(go[0], 3);
    a.Bx = {{1, 2, 3}};
    EXPECT_THROW(make_affine(a, {}), InvalidArgument);
}
