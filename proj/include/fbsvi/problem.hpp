#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fbsvi/convex.hpp"
#include "fbsvi/error.hpp"
#include "fbsvi/parallel.hpp"
#include "fbsvi/rng.hpp"

namespace fbsvi {

/// Problem dimensions: state n, backward m, Brownian d.
struct Dims {
    std::size_t n = 1;
    std::size_t m = 1;
    std::size_t d = 1;
};

/// Declared structural constants of the coefficients.
struct DeclaredConstants {
    double K = 0.0;      ///< Lipschitz constant of b, sigma and f (in x, z)
    double k1 = 0.0;     ///< Lipschitz constant of sigma in z
    double k2 = 0.0;     ///< Lipschitz constant of g
    double gamma = 0.0;  ///< one-sided Lipschitz constant of f in y
    double L = 0.0;      ///< linear growth of f(t, 0, y, 0) in y
    double eta0 = 0.0;   ///< deterministic bound on |f(t, 0, 0, 0)|
    double rho0 = 1.0;   ///< integrability exponent excess, >= 1
};

/// Deterministic coefficients b, sigma, f, g with their declared constants.
///
/// All callables write into caller-provided buffers:
///   b(t, x, y, z, out[n]),  sigma(t, x, y, out[n*d] row-major),
///   f(t, x, y, z, out[m]),  g(x, out[m]).
/// z is an m x d matrix stored row-major.
struct CoefficientSet {
    using DriftFn = std::function<void(double, Point, Point, Point, MutPoint)>;
    using DiffusionFn = std::function<void(double, Point, Point, MutPoint)>;
    using DriverFn = std::function<void(double, Point, Point, Point, MutPoint)>;
    using TerminalFn = std::function<void(Point, MutPoint)>;

    Dims dims;
    DriftFn b;
    DiffusionFn sigma;
    DriverFn f;
    TerminalFn g;
    DeclaredConstants constants;
    /// True when b depends on (y, z) or sigma depends on y.
    bool coupled = false;

    void check() const {
        if (dims.n == 0 || dims.m == 0 || dims.d == 0) throw InvalidArgument("coefficients: zero dimension");
        if (!b || !sigma || !f || !g) throw InvalidArgument("coefficients: b, sigma, f and g must all be set");
    }
};

/// A complete forward-backward problem on [t0, T].
struct ProblemSpec {
    ConvexFn psi = ConvexFn::zero(1);
    ConvexFn phi = ConvexFn::zero(1);
    CoefficientSet coeffs;
    std::vector<double> x0{0.0};
    double T = 1.0;
    double t0 = 0.0;
    std::string name = "custom";

    const Dims& dims() const { return coeffs.dims; }

    /// Structural checks; throws on the first violation.
    void validate() const {
        coeffs.check();
        if (psi.dim() != coeffs.dims.n) throw InvalidArgument("psi dimension differs from n");
        if (phi.dim() != coeffs.dims.m) throw InvalidArgument("phi dimension differs from m");
        if (x0.size() != coeffs.dims.n) throw InvalidArgument("x0 dimension differs from n");
        if (!(T > 0.0) || !std::isfinite(T)) throw InvalidArgument("horizon T must be positive");
        if (t0 < 0.0 || t0 > T) throw InvalidArgument("t0 must lie in [0, T]");
        if (!psi.in_domain(x0, kBoundaryTol)) throw DomainError("x0 must belong to Dom psi");
    }
};

/// One line of an assumption report.
struct AssumptionCheck {
    std::string name;
    double declared = 0.0;
    double empirical = 0.0;
    bool passed = true;
    /// True when the check falsifies a declared constant (as opposed to a
    /// structural property such as normalization or domain membership).
    bool is_constant = false;
    std::string note;
};

struct AssumptionReport {
    std::vector<AssumptionCheck> checks;
    std::size_t sample_count = 0;
    std::uint64_t seed = 0;

    bool all_passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
    }
    bool constants_ok() const {
        return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return !c.is_constant || c.passed; });
    }
    const AssumptionCheck* find(const std::string& name) const {
        for (const auto& c : checks)
            if (c.name == name) return &c;
        return nullptr;
    }
    std::vector<std::string> failures() const {
        std::vector<std::string> out;
        for (const auto& c : checks)
            if (!c.passed) out.push_back(c.name);
        return out;
    }
};

namespace detail {

inline double frob_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

inline double vnorm(const std::vector<double>& a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return std::sqrt(s);
}

// Sampled tuple for the Lipschitz checks.
struct Sample {
    double t;
    std::vector<double> x1, x2, y1, y2, z1, z2;
};

inline Sample draw_sample(const ProblemSpec& spec, std::uint64_t seed, std::size_t index, double radius) {
    const auto& dm = spec.dims();
    const std::uint64_t s = path_seed(seed, index);
    std::uint64_t c = 0;
    auto u = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(s, c++); };
    Sample out;
    out.t = u(spec.t0, spec.T);
    auto fill = [&](std::vector<double>& v, std::size_t k) {
        v.resize(k);
        for (auto& e : v) e = u(-radius, radius);
    };
    fill(out.x1, dm.n);
    fill(out.x2, dm.n);
    fill(out.y1, dm.m);
    fill(out.y2, dm.m);
    fill(out.z1, dm.m * dm.d);
    fill(out.z2, dm.m * dm.d);
    return out;
}

inline double max_reduce(const std::vector<double>& v) {
    double m = 0.0;
    for (double e : v) m = std::max(m, e);
    return m;
}

}  // namespace detail

/// Samples the coefficients on the box [-radius, radius] and estimates each
/// declared constant empirically. A constant check passes when the estimate
/// does not exceed the declared value by more than 5%. The report only ever
/// falsifies; a pass is not a proof.
inline AssumptionReport validate_assumptions(const ProblemSpec& spec, std::size_t sample_count,
                                             std::uint64_t seed, double radius = 10.0) {
    if (sample_count < 1) throw InvalidArgument("validate_assumptions: sample_count must be >= 1");
    spec.coeffs.check();
    const auto& dm = spec.dims();
    const auto& cst = spec.coeffs.constants;
    const auto& co = spec.coeffs;
    constexpr double slack = 0.05;
    constexpr double abs_tol = 1e-9;

    AssumptionReport rep;
    rep.sample_count = sample_count;
    rep.seed = seed;

    // Per-sample empirical quantities, reduced in index order.
    const std::size_t S = sample_count;
    std::vector<double> emp_b(S), emp_sigma(S), emp_g(S), emp_fx(S), emp_gamma(S, -1e300), emp_L(S), emp_dec(S);
    std::vector<double> psi_neg(S), phi_neg(S), h6_inf(S);

    parallel_for(S, [&](std::size_t i) {
        const auto smp = detail::draw_sample(spec, seed, i, radius);
        std::vector<double> o1(dm.n), o2(dm.n), s1(dm.n * dm.d), s2(dm.n * dm.d), f1(dm.m), f2(dm.m);
        std::vector<double> g1(dm.m), g2(dm.m), zero_x(dm.n, 0.0), zero_z(dm.m * dm.d, 0.0);
        const double dx = detail::frob_dist(smp.x1, smp.x2);
        const double dy = detail::frob_dist(smp.y1, smp.y2);
        const double dz = detail::frob_dist(smp.z1, smp.z2);

        co.b(smp.t, smp.x1, smp.y1, smp.z1, o1);
        co.b(smp.t, smp.x2, smp.y2, smp.z2, o2);
        emp_b[i] = detail::frob_dist(o1, o2) / std::max(dx + dy + dz, 1e-300);

        co.sigma(smp.t, smp.x1, smp.y1, s1);
        co.sigma(smp.t, smp.x2, smp.y2, s2);
        emp_sigma[i] = detail::frob_dist(s1, s2) / std::max(std::sqrt(dx * dx + dy * dy), 1e-300);

        co.g(smp.x1, g1);
        co.g(smp.x2, g2);
        emp_g[i] = detail::frob_dist(g1, g2) / std::max(dx, 1e-300);

        co.f(smp.t, smp.x1, smp.y1, smp.z1, f1);
        co.f(smp.t, smp.x2, smp.y1, smp.z2, f2);
        emp_fx[i] = detail::frob_dist(f1, f2) / std::max(dx + dz, 1e-300);

        co.f(smp.t, smp.x1, smp.y2, smp.z1, f2);
        double ip = 0.0;
        for (std::size_t k = 0; k < dm.m; ++k) ip += (f1[k] - f2[k]) * (smp.y1[k] - smp.y2[k]);
        emp_gamma[i] = ip / std::max(dy * dy, 1e-300);

        co.f(smp.t, zero_x, smp.y1, zero_z, f1);
        emp_L[i] = std::max(0.0, detail::vnorm(f1) - cst.eta0) / std::max(detail::vnorm(smp.y1), 1e-300);

        if (!co.coupled) {
            co.b(smp.t, smp.x1, smp.y2, smp.z2, o2);
            co.sigma(smp.t, smp.x1, smp.y2, s2);
            co.b(smp.t, smp.x1, smp.y1, smp.z1, o1);
            co.sigma(smp.t, smp.x1, smp.y1, s1);
            emp_dec[i] = detail::frob_dist(o1, o2) + detail::frob_dist(s1, s2);
        }

        const ExtendedReal pv = spec.psi.value(smp.x1);
        psi_neg[i] = pv.is_finite() ? std::max(0.0, -pv.value()) : 0.0;
        std::vector<double> ym(dm.m);
        std::copy(smp.y1.begin(), smp.y1.end(), ym.begin());
        const ExtendedReal fv = spec.phi.value(ym);
        phi_neg[i] = fv.is_finite() ? std::max(0.0, -fv.value()) : 0.0;
        h6_inf[i] = spec.phi.value(g1).is_finite() ? 0.0 : 1.0;
    });

    double gamma_hat = -1e300;
    for (double v : emp_gamma) gamma_hat = std::max(gamma_hat, v);

    auto constant_check = [&](std::string name, double declared, double empirical) {
        AssumptionCheck c;
        c.name = std::move(name);
        c.declared = declared;
        c.empirical = empirical;
        c.is_constant = true;
        c.passed = empirical <= declared * (1.0 + slack) + abs_tol;
        return c;
    };
    auto structural = [&](std::string name, bool ok, double emp, std::string note) {
        AssumptionCheck c;
        c.name = std::move(name);
        c.empirical = emp;
        c.passed = ok;
        c.note = std::move(note);
        return c;
    };

    {
        std::vector<double> zero(dm.n, 0.0);
        const bool zero_val = spec.psi.value(zero) == ExtendedReal(0.0);
        const bool interior = spec.psi.kind() == ConvexKind::Custom || spec.psi.boundary_distance(zero) > 0.0;
        const double neg = detail::max_reduce(psi_neg);
        rep.checks.push_back(structural("H1: psi >= psi(0) = 0, 0 in Int Dom psi", zero_val && interior && neg == 0.0,
                                        neg, zero_val ? (interior ? "" : "0 on the domain boundary") : "psi(0) != 0"));
        rep.checks.push_back(structural("H1: x0 in Dom psi", spec.psi.in_domain(spec.x0, kBoundaryTol), 0.0, ""));
    }
    {
        std::vector<double> zero(dm.m, 0.0);
        const bool zero_val = spec.phi.value(zero) == ExtendedReal(0.0);
        const double neg = detail::max_reduce(phi_neg);
        rep.checks.push_back(structural("H2: phi >= phi(0) = 0", zero_val && neg == 0.0, neg, ""));
    }
    rep.checks.push_back(constant_check("H4: growth L of f(t,0,y,0)", cst.L, detail::max_reduce(emp_L)));
    rep.checks.push_back(constant_check("H5(i): Lipschitz K of b", cst.K, detail::max_reduce(emp_b)));
    rep.checks.push_back(constant_check("H5(ii): Lipschitz K of sigma", cst.K, detail::max_reduce(emp_sigma)));
    rep.checks.push_back(constant_check("H5(iii): Lipschitz k2 of g", cst.k2, detail::max_reduce(emp_g)));
    rep.checks.push_back(constant_check("H5(iv): Lipschitz K of f in (x,z)", cst.K, detail::max_reduce(emp_fx)));
    {
        AssumptionCheck c;
        c.name = "H5(v): monotonicity gamma of f in y";
        c.declared = cst.gamma;
        c.empirical = gamma_hat;
        c.is_constant = true;
        c.passed = gamma_hat <= cst.gamma + slack * std::abs(cst.gamma) + abs_tol;
        rep.checks.push_back(c);
    }
    {
        const double hits = detail::max_reduce(h6_inf);
        rep.checks.push_back(structural("H6: phi(g(x)) finite", hits == 0.0, hits,
                                        hits == 0.0 ? "" : "g maps some sampled x outside Dom phi"));
    }
    rep.checks.push_back(structural("H'5: k1 = 0 (sigma independent of z)", cst.k1 == 0.0, cst.k1, ""));
    rep.checks.push_back(structural("H'4: rho0 >= 1", cst.rho0 >= 1.0, cst.rho0, ""));
    if (!co.coupled) {
        const double v = detail::max_reduce(emp_dec);
        rep.checks.push_back(structural("decoupled: b, sigma independent of (y, z)", v == 0.0, v,
                                        v == 0.0 ? "" : "declared decoupled but b or sigma varies with (y, z)"));
    }
    return rep;
}

}  // namespace fbsvi
