#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fbsvi/convex.hpp"
#include "fbsvi/error.hpp"
#include "fbsvi/problem.hpp"

namespace fbsvi {

using Matrix = std::vector<std::vector<double>>;

/// Coefficients that are affine in their arguments:
///   b     = Bx x + By y + Bz vec(z) + b0
///   sigma = S0 + sum_k x_k Sx[k] + sum_l y_l Sy[l]
///   f     = Fx x + Fy y + Fz vec(z) + f0
///   g     = G x + g0
/// Empty matrices are treated as zero blocks.
struct AffineCoefficients {
    Dims dims;
    Matrix Bx, By, Bz;
    std::vector<double> b0;
    Matrix S0;
    std::vector<Matrix> Sx, Sy;
    Matrix Fx, Fy, Fz;
    std::vector<double> f0;
    Matrix G;
    std::vector<double> g0;
};

namespace detail {

inline void check_block(const Matrix& M, std::size_t rows, std::size_t cols, const std::string& what) {
    if (M.empty()) return;
    if (M.size() != rows) throw InvalidArgument(what + ": expected " + std::to_string(rows) + " rows");
    for (const auto& r : M)
        if (r.size() != cols) throw InvalidArgument(what + ": expected " + std::to_string(cols) + " columns");
}

inline void check_vec(const std::vector<double>& v, std::size_t k, const std::string& what) {
    if (!v.empty() && v.size() != k) throw InvalidArgument(what + ": expected length " + std::to_string(k));
}

inline void gemv_add(const Matrix& M, Point v, MutPoint out) {
    if (M.empty()) return;
    for (std::size_t i = 0; i < M.size(); ++i)
        for (std::size_t j = 0; j < v.size(); ++j) out[i] += M[i][j] * v[j];
}

inline void add_vec(const std::vector<double>& c, MutPoint out) {
    for (std::size_t i = 0; i < c.size(); ++i) out[i] += c[i];
}

inline void mat_add(const Matrix& M, double s, MutPoint out, std::size_t cols) {
    if (M.empty()) return;
    for (std::size_t i = 0; i < M.size(); ++i)
        for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += s * M[i][j];
}

inline bool nonzero(const Matrix& M) {
    for (const auto& r : M)
        for (double v : r)
            if (v != 0.0) return true;
    return false;
}

}  // namespace detail

/// Builds a coefficient set from affine blocks. Constants are not inferred;
/// the caller declares them.
inline CoefficientSet make_affine(const AffineCoefficients& a, const DeclaredConstants& constants) {
    const auto [n, m, d] = a.dims;
    detail::check_block(a.Bx, n, n, "b.x");
    detail::check_block(a.By, n, m, "b.y");
    detail::check_block(a.Bz, n, m * d, "b.z");
    detail::check_vec(a.b0, n, "b.c");
    detail::check_block(a.S0, n, d, "sigma.c");
    if (!a.Sx.empty() && a.Sx.size() != n) throw InvalidArgument("sigma.x: expected one matrix per state coordinate");
    if (!a.Sy.empty() && a.Sy.size() != m) throw InvalidArgument("sigma.y: expected one matrix per backward coordinate");
    for (const auto& M : a.Sx) detail::check_block(M, n, d, "sigma.x");
    for (const auto& M : a.Sy) detail::check_block(M, n, d, "sigma.y");
    detail::check_block(a.Fx, m, n, "f.x");
    detail::check_block(a.Fy, m, m, "f.y");
    detail::check_block(a.Fz, m, m * d, "f.z");
    detail::check_vec(a.f0, m, "f.c");
    detail::check_block(a.G, m, n, "g.x");
    detail::check_vec(a.g0, m, "g.c");

    CoefficientSet c;
    c.dims = a.dims;
    c.constants = constants;
    bool sy = false;
    for (const auto& M : a.Sy) sy = sy || detail::nonzero(M);
    c.coupled = detail::nonzero(a.By) || detail::nonzero(a.Bz) || sy;
    c.b = [a](double, Point x, Point y, Point z, MutPoint out) {
        std::fill(out.begin(), out.end(), 0.0);
        detail::gemv_add(a.Bx, x, out);
        detail::gemv_add(a.By, y, out);
        detail::gemv_add(a.Bz, z, out);
        detail::add_vec(a.b0, out);
    };
    c.sigma = [a](double, Point x, Point y, MutPoint out) {
        const std::size_t d = a.dims.d;
        std::fill(out.begin(), out.end(), 0.0);
        detail::mat_add(a.S0, 1.0, out, d);
        for (std::size_t k = 0; k < a.Sx.size(); ++k) detail::mat_add(a.Sx[k], x[k], out, d);
        for (std::size_t l = 0; l < a.Sy.size(); ++l) detail::mat_add(a.Sy[l], y[l], out, d);
    };
    c.f = [a](double, Point x, Point y, Point z, MutPoint out) {
        std::fill(out.begin(), out.end(), 0.0);
        detail::gemv_add(a.Fx, x, out);
        detail::gemv_add(a.Fy, y, out);
        detail::gemv_add(a.Fz, z, out);
        detail::add_vec(a.f0, out);
    };
    c.g = [a](Point x, MutPoint out) {
        std::fill(out.begin(), out.end(), 0.0);
        detail::gemv_add(a.G, x, out);
        detail::add_vec(a.g0, out);
    };
    return c;
}

namespace detail {

// One-dimensional scalar coefficient helpers.
inline CoefficientSet scalar_coefficients(std::function<double(double, double, double, double)> b,
                                          std::function<double(double, double, double)> sigma,
                                          std::function<double(double, double, double, double)> f,
                                          std::function<double(double)> g, DeclaredConstants k, bool coupled) {
    CoefficientSet c;
    c.dims = {1, 1, 1};
    c.constants = k;
    c.coupled = coupled;
    c.b = [b](double t, Point x, Point y, Point z, MutPoint o) { o[0] = b(t, x[0], y[0], z[0]); };
    c.sigma = [sigma](double t, Point x, Point y, MutPoint o) { o[0] = sigma(t, x[0], y[0]); };
    c.f = [f](double t, Point x, Point y, Point z, MutPoint o) { o[0] = f(t, x[0], y[0], z[0]); };
    c.g = [g](Point x, MutPoint o) { o[0] = g(x[0]); };
    return c;
}

}  // namespace detail

inline const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names{"zero",   "linear",  "ornstein-uhlenbeck", "reflected-bm",
                                                "heat",   "coupled", "reflected-y",        "bad-constants"};
    return names;
}

/// Named one-dimensional problems used by the CLI, the configs and the tests.
///
///   zero                b = sigma = f = 0, g(x) = x
///   linear              b = 0.1 x, sigma = 0.3, f = -y + 0.2 x, g(x) = x
///   ornstein-uhlenbeck  b = -x, sigma = 1, f = 0, g(x) = x
///   reflected-bm        psi = indicator [0, inf), b = 0, sigma = 1, f = 0, g(x) = -|x|
///   heat                b = 0, sigma = 1, f = 0, g(x) = x^2
///   coupled             psi = indicator [-1, inf), b = 0.5 y, sigma = 1,
///                       f = -10 y + 0.5 x, g(x) = 0.5 x
///   reflected-y         phi = indicator (-inf, 0], b = 0, sigma = 1, f = 0, g(x) = x
///   bad-constants       as `linear` but declaring k1 = 2, k2 = 1 (k1 k2 >= 1)
inline ProblemSpec make_preset(const std::string& name) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    ProblemSpec s;
    s.name = name;
    s.T = 1.0;
    s.t0 = 0.0;
    s.x0 = {0.0};
    auto zero4 = [](double, double, double, double) { return 0.0; };
    auto unit_sigma = [](double, double, double) { return 1.0; };
    if (name == "zero") {
        s.coeffs = detail::scalar_coefficients(zero4, [](double, double, double) { return 0.0; }, zero4,
                                               [](double x) { return x; }, {.K = 0.0, .k2 = 1.0}, false);
    } else if (name == "linear" || name == "bad-constants") {
        DeclaredConstants k{.K = 0.2, .k2 = 1.0, .gamma = -1.0, .L = 1.0};
        if (name == "bad-constants") k.k1 = 2.0;
        s.coeffs = detail::scalar_coefficients([](double, double x, double, double) { return 0.1 * x; },
                                               [](double, double, double) { return 0.3; },
                                               [](double, double x, double y, double) { return -y + 0.2 * x; },
                                               [](double x) { return x; }, k, false);
    } else if (name == "ornstein-uhlenbeck") {
        s.coeffs = detail::scalar_coefficients([](double, double x, double, double) { return -x; }, unit_sigma,
                                               zero4, [](double x) { return x; }, {.K = 1.0, .k2 = 1.0}, false);
        s.x0 = {1.0};
    } else if (name == "reflected-bm") {
        s.psi = ConvexFn::interval(0.0, inf);
        s.coeffs = detail::scalar_coefficients(zero4, unit_sigma, zero4, [](double x) { return -std::abs(x); },
                                               {.K = 0.0, .k2 = 1.0}, false);
    } else if (name == "heat") {
        // g is only locally Lipschitz; k2 is declared for the default sampling box [-10, 10].
        s.coeffs = detail::scalar_coefficients(zero4, unit_sigma, zero4, [](double x) { return x * x; },
                                               {.K = 0.0, .k2 = 20.0}, false);
    } else if (name == "coupled") {
        s.psi = ConvexFn::interval(-1.0, inf);
        s.coeffs = detail::scalar_coefficients([](double, double, double y, double) { return 0.5 * y; }, unit_sigma,
                                               [](double, double x, double y, double) { return -10.0 * y + 0.5 * x; },
                                               [](double x) { return 0.5 * x; },
                                               {.K = 0.5, .k2 = 0.5, .gamma = -10.0, .L = 10.0}, true);
    } else if (name == "reflected-y") {
        s.phi = ConvexFn::interval(-inf, 0.0);
        s.coeffs = detail::scalar_coefficients(zero4, unit_sigma, zero4, [](double x) { return x; },
                                               {.K = 0.0, .k2 = 1.0}, false);
    } else {
        throw InvalidArgument("unknown preset '" + name + "'");
    }
    return s;
}

}  // namespace fbsvi
