#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "fbsvi/parallel.hpp"
#include "fbsvi/presets.hpp"
#include "fbsvi/regression.hpp"
#include "fbsvi/solver.hpp"
#include "support/oracles.hpp"

using namespace fbsvi;

TEST(Regression, RecoversPolynomialsExactly) {
    const std::size_t P = 3000;
    std::vector<double> x(P);
    for (std::size_t p = 0; p < P; ++p) x[p] = -2.0 + 4.0 * static_cast<double>(p) / (P - 1);
    RegressionModel m;
    const auto w = m.fit(
        P, 1, 1, 3, [&](std::size_t p) { return Point(&x[p], 1); },
        [&](std::size_t p, MutPoint out) { out[0] = 1 - 2 * x[p] + 0.5 * x[p] * x[p] * x[p]; });
    EXPECT_TRUE(w.empty());
    for (double v : {-1.5, 0.0, 0.3, 1.9}) EXPECT_NEAR(m.predict1(Point(&v, 1)), 1 - 2 * v + 0.5 * v * v * v, 1e-10);
}

TEST(Regression, ReducesDegreeOnConstantDesign) {
    const std::size_t P = 700;
    const double c = 0.4;
    RegressionModel m;
    const auto w = m.fit(
        P, 1, 1, 3, [&](std::size_t) { return Point(&c, 1); },
        [&](std::size_t p, MutPoint out) { out[0] = static_cast<double>(p % 2); });
    EXPECT_EQ(m.degree(), 0);
    EXPECT_FALSE(w.empty());
    EXPECT_NEAR(m.predict1(Point(&c, 1)), 350.0 / 700.0, 1e-14);
}

TEST(Regression, TotalDegreeBasisSize) {
    EXPECT_EQ(total_degree_exponents(1, 3).size(), 4u);
    EXPECT_EQ(total_degree_exponents(2, 3).size(), 10u);
    EXPECT_EQ(total_degree_exponents(3, 2).size(), 10u);
}

TEST(Backward, ZeroProblemIsExact) {
    auto s = make_preset("zero");
    s.x0 = {3.0};
    const auto r = picard_solve(s, 1e-3, TimeGrid(0, 1, 20), 1000, 1);
    EXPECT_NEAR(r.backward.u_estimate[0], 3.0, 1e-12);
    EXPECT_EQ(r.report.iterations, 1u);
    EXPECT_TRUE(r.report.converged);
    EXPECT_NEAR(estimate_u(s, 0.5, -1.0, 1e-3, 10, 1000, 1).value, -1.0, 1e-12);
    EXPECT_EQ(estimate_u(s, 1.0, 2.5, 1e-3, 10, 1000, 1).value, 2.5);
}

TEST(Backward, HeatClosedForm) {
    const auto s = make_preset("heat");
    for (double x : {-0.5, 0.0, 0.5}) {
        const auto u = estimate_u(s, 0.0, x, 1e-3, 50, 20000, 7);
        EXPECT_NEAR(u.value, oracle::heat_quadratic(1.0, 0.0, x), 3 * u.std_err) << x;
    }
    const auto u = estimate_u(s, 0.6, 1.0, 1e-3, 20, 20000, 7);
    EXPECT_NEAR(u.value, oracle::heat_quadratic(1.0, 0.6, 1.0), 3 * u.std_err);
}

TEST(Backward, HeatZMatchesGradient) {
    auto s = make_preset("heat");
    s.x0 = {0.7};
    const auto r = picard_solve(s, 1e-3, TimeGrid(0, 1, 50), 20000, 3);
    // Z_t = sigma u_x(t, X_t) = 2 X_t; at t0 all paths share x0.
    double z = 0;
    for (double v : r.backward.Z0) z += v;
    z /= static_cast<double>(r.backward.Z0.size());
    EXPECT_NEAR(z, 1.4, 0.05);
}

TEST(Backward, LinearDriverClosedForm) {
    // b = 0.1 x, sigma = 0.3, f = -y + 0.2 x, g = x: u(t, x) = a(t) x with
    // a' = 0.9 a - 0.2, a(T) = 1.
    auto s = make_preset("linear");
    s.x0 = {1.0};
    const double a0 = 2.0 / 9.0 + (7.0 / 9.0) * std::exp(-0.9);
    const auto u = estimate_u(s, 0.0, 1.0, 1e-3, 200, 20000, 13);
    // explicit Euler in the driver contributes O(dt); 0.9 * a0 * dt / 2 < 0.002 at dt = 0.005
    EXPECT_NEAR(u.value, a0, 3 * u.std_err + 0.002);
}

TEST(Backward, UpperObstacleAgainstBinomialTree) {
    const auto s = make_preset("reflected-y");
    const double tree = oracle::binomial_upper_obstacle(0.0, 1.0, 4000);
    const auto u = estimate_u(s, 0.0, 0.0, 1e-4, 200, 40000, 21);
    // Discrete exercise at 200 dates and the eps-penalty both bias in the
    // same direction by O(sqrt(dt)); allowance 0.6 sqrt(dt).
    EXPECT_NEAR(u.value, tree, 3 * u.std_err + 0.6 * std::sqrt(1.0 / 200));
    EXPECT_LE(u.value, 0.0 + 3 * u.std_err);
}

TEST(Backward, FeasibilityImprovesAsEpsShrinks) {
    const auto s = make_preset("reflected-y");
    const TimeGrid g(0, 1, 100);
    double prev = std::numeric_limits<double>::infinity();
    for (double eps : {1e-1, 1e-2, 1e-3}) {
        const auto r = picard_solve(s, eps, g, 10000, 4);
        double f = 0;
        for (std::size_t i = 0; i < g.N; ++i) f += r.backward.diagnostics[i].feasibility;
        f /= static_cast<double>(g.N);
        EXPECT_LE(f, prev) << eps;
        prev = f;
        for (const auto& d : r.backward.diagnostics) EXPECT_EQ(d.pairing_violations, 0u);
    }
    EXPECT_LE(prev, 1e-2);
}

TEST(Backward, RealizedSumMatchesMeanY0) {
    const auto s = make_preset("linear");
    const auto r = picard_solve(s, 1e-3, TimeGrid(0, 1, 40), 5000, 2);
    double m = 0;
    for (double v : r.backward.realized) m += v;
    m /= 5000;
    // E[R] = E[Y0] up to the regression projection error
    EXPECT_NEAR(m, r.backward.u_estimate[0], 4 * r.backward.std_err[0]);
}

TEST(Picard, CoupledProblemContracts) {
    const auto s = make_preset("coupled");
    PicardConfig cfg;
    cfg.max_iter = 15;
    const auto r = picard_solve(s, 1e-2, TimeGrid(0, 1, 50), 8000, 5, cfg);
    ASSERT_TRUE(r.report.witness.has_value());
    EXPECT_NE(r.report.witness->branch, WitnessBranch::SmallTime);
    EXPECT_FALSE(r.report.split);
    EXPECT_TRUE(r.report.converged);
    EXPECT_LE(r.report.iterations, 15u);
    for (double q : r.report.ratios) EXPECT_LT(q, 1.0);
}

TEST(Picard, SplitsWhenNoWitness) {
    auto s = make_preset("coupled");
    s.coeffs.constants.gamma = 3.0;  // declared loosely: no witness on [0, 1] for large lambda-bar terms
    s.coeffs.constants.K = 3.0;
    s.T = 4.0;
    const auto sc = structural(s.coeffs.constants);
    if (check_compatibility(sc, 4.0)) GTEST_SKIP() << "witness exists; splitting path not exercised";
    PicardConfig cfg;
    cfg.max_iter = 6;
    const auto r = picard_solve(s, 1e-2, TimeGrid(0, 4, 80), 2000, 5, cfg);
    EXPECT_TRUE(r.report.split);
    EXPECT_GT(r.report.subintervals.size(), 2u);
    EXPECT_EQ(r.report.witness->branch, WitnessBranch::SmallTime);
    EXPECT_TRUE(std::isfinite(r.backward.u_estimate[0]));
    cfg.allow_splitting = false;
    EXPECT_THROW(picard_solve(s, 1e-2, TimeGrid(0, 4, 80), 2000, 5, cfg), CompatibilityError);
}

TEST(Picard, RefusesWhenC1Fails) {
    const auto s = make_preset("bad-constants");
    try {
        picard_solve(s, 1e-2, TimeGrid(0, 1, 10), 500, 1);
        FAIL() << "expected CompatibilityError";
    } catch (const CompatibilityError& e) {
        EXPECT_NE(std::string(e.what()).find("(C1) violated"), std::string::npos);
    }
}

TEST(Picard, DeterministicAcrossThreadCounts) {
    const auto s = make_preset("coupled");
    set_thread_count(1);
    const auto a = picard_solve(s, 1e-2, TimeGrid(0, 1, 30), 3000, 8);
    set_thread_count(3);
    const auto b = picard_solve(s, 1e-2, TimeGrid(0, 1, 30), 3000, 8);
    set_thread_count(0);
    EXPECT_EQ(a.backward.u_estimate, b.backward.u_estimate);
    EXPECT_EQ(a.report.residuals, b.report.residuals);
    EXPECT_EQ(a.forward.X, b.forward.X);
}

TEST(Picard, WeightedDistance) {
    const auto s = make_preset("reflected-bm");
    const auto e = simulate_forward(s, 1e-2, TimeGrid(0, 1, 10), 600, 1);
    EXPECT_EQ(weighted_distance(e, e.X, 0.0, 0, 10), 0.0);
    auto shifted = e.X;
    for (std::size_t k = 600; k < shifted.size(); ++k) shifted[k] += 1.0;  // nodes 1..N
    // sqrt(sum_i e^{-lambda t_i} dt * 1)
    double s0 = 0;
    for (std::size_t i = 1; i <= 10; ++i) s0 += std::exp(-2.0 * 0.1 * i) * 0.1;
    EXPECT_NEAR(weighted_distance(e, shifted, 2.0, 0, 10), std::sqrt(s0), 1e-12);
}

TEST(Lipschitz, ProbeBoundedOnCoupledProblem) {
    const auto s = make_preset("coupled");
    const auto c = structural(s.coeffs.constants);
    const auto w = check_compatibility(c, 1.0);
    ASSERT_TRUE(w);
    const double ct = lipschitz_constant_CT(*w.witness, c);
    const auto pr = lipschitz_probe(s, 0.0, 0.0, 0.5, 1e-2, 30, 4000, 17);
    EXPECT_GT(pr.combined_se, 0.0);
    EXPECT_LE(pr.ratio, std::sqrt(ct) + 3 * pr.combined_se / 0.5);
}

TEST(RateStudy, ExactWhenUnconstrained) {
    auto s = make_preset("heat");
    const auto fit = penalization_rate_study(s, {1e-1, 1e-2, 1e-3}, 1e-4, 10, 600, 1);
    EXPECT_TRUE(fit.exact);
    EXPECT_NEAR(fit.floor, 1.0 / 6.0, 1e-15);
    EXPECT_THROW(penalization_rate_study(s, {1e-2, 1e-1, 1e-3}, 1e-4, 10, 600, 1), InvalidArgument);
    EXPECT_THROW(penalization_rate_study(s, {1e-1, 1e-2}, 1e-4, 10, 600, 1), InvalidArgument);
}

TEST(RateStudy, ReflectedSlopeAboveFloor) {
    const auto s = make_preset("reflected-bm");
    const auto fit = penalization_rate_study(s, {1e-1, 1e-2, 1e-3}, 1e-4, 100, 4000, 3);
    EXPECT_FALSE(fit.exact);
    EXPECT_GT(fit.D[0], fit.D[1]);
    EXPECT_GT(fit.D[1], fit.D[2]);
    EXPECT_GE(fit.slope, theoretical_rate_floor(1.0));
}
