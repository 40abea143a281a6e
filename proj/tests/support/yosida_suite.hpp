#pragma once

// Randomized check of the Yosida approximation identities (a)-(f) over the
// convex catalog. Returns the worst normalized residual of each property.

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "fbsvi/convex.hpp"

namespace suite {

using fbsvi::ConvexFn;
using fbsvi::Point;

struct Tuple {
    ConvexFn f = ConvexFn::zero(1);
    double eps = 1.0;
    std::vector<double> u;
};

/// Catalog members with min f = f(0) = 0 (needed by property (d)).
inline ConvexFn random_function(std::mt19937_64& rng, std::size_t& dim) {
    std::uniform_int_distribution<int> kind(0, 5), dims(1, 3);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    switch (kind(rng)) {
        case 0: dim = static_cast<std::size_t>(dims(rng)); return ConvexFn::zero(dim);
        case 1: {
            dim = static_cast<std::size_t>(dims(rng));
            std::vector<double> lo(dim), hi(dim);
            for (std::size_t k = 0; k < dim; ++k) {
                lo[k] = unit(rng) < 0.25 ? -INFINITY : -0.1 - 2.0 * unit(rng);
                hi[k] = unit(rng) < 0.25 ? INFINITY : 0.1 + 2.0 * unit(rng);
            }
            return ConvexFn::box(lo, hi);
        }
        case 2: dim = static_cast<std::size_t>(dims(rng)); return ConvexFn::ball(dim, 0.5 + 1.5 * unit(rng));
        case 3: dim = static_cast<std::size_t>(dims(rng)); return ConvexFn::quadratic(dim, 0.1 + 4.9 * unit(rng));
        case 4: dim = 1; return ConvexFn::power_positive_part(0.1 + 4.9 * unit(rng));
        default: dim = 1; return ConvexFn::abs_value(0.1 + 4.9 * unit(rng));
    }
}

inline Tuple random_tuple(std::mt19937_64& rng) {
    Tuple t;
    std::size_t dim = 1;
    t.f = random_function(rng, dim);
    std::uniform_real_distribution<double> le(std::log(1e-3), 0.0);
    std::normal_distribution<double> nd(0.0, 2.0);
    t.eps = std::exp(le(rng));
    t.u.resize(dim);
    for (auto& v : t.u) v = nd(rng);
    return t;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
}
inline double nrm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

struct Residuals {
    // Worst violation of each property, divided by (1 + magnitude of the terms).
    std::array<double, 6> worst{};  // a..f
    std::size_t tuples = 0;
    std::size_t f_checked = 0;
    double max() const { return *std::max_element(worst.begin(), worst.end()); }
};

inline double fval(const ConvexFn& f, const std::vector<double>& x) {
    const auto v = f.value(Point(x));
    return v.is_finite() ? v.value() : INFINITY;
}

/// Evaluates (a)-(e) on `count` random tuples and (f) on every box tuple whose
/// interior contains 0.
inline Residuals run(std::size_t count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 2.0);
    std::uniform_real_distribution<double> le(std::log(1e-3), 0.0);
    Residuals r;
    auto upd = [&](int k, double viol, double scale) { r.worst[k] = std::max(r.worst[k], viol / (1.0 + scale)); };
    for (std::size_t it = 0; it < count; ++it) {
        const Tuple t = random_tuple(rng);
        const auto& f = t.f;
        const double e = t.eps;
        const auto& u = t.u;
        const std::size_t n = u.size();
        const auto J = fbsvi::resolvent_J(f, e, Point(u));
        const auto G = fbsvi::yosida_gradient(f, e, Point(u));
        const double env = fbsvi::moreau_envelope(f, e, Point(u));
        const double fJ = fval(f, J);

        // (a) env = eps/2 |G|^2 + f(J)
        upd(0, std::abs(env - (0.5 * e * dot(G, G) + fJ)), std::abs(env));

        // (b) nonexpansive resolvent
        std::vector<double> v(n);
        for (auto& x : v) x = nd(rng);
        const auto Jv = fbsvi::resolvent_J(f, e, Point(v));
        std::vector<double> du(n), dj(n);
        for (std::size_t k = 0; k < n; ++k) du[k] = u[k] - v[k], dj[k] = J[k] - Jv[k];
        upd(1, std::max(0.0, nrm(dj) - nrm(du)), nrm(du));

        // (c) G is a subgradient of f at J: f(w) >= f(J) + <G, w - J> for w in Dom f.
        for (int s = 0; s < 8; ++s) {
            std::vector<double> w(n);
            for (std::size_t k = 0; k < n; ++k) w[k] = J[k] + (s < 4 ? 0.01 : 1.0) * nd(rng);
            const auto wp = fbsvi::prox(f, 1e-12, Point(w));  // move w into Dom f when needed
            if (f.is_indicator()) w = wp;
            const double fw = fval(f, w);
            if (!std::isfinite(fw)) continue;
            std::vector<double> d(n);
            for (std::size_t k = 0; k < n; ++k) d[k] = w[k] - J[k];
            const double rhs = fJ + dot(G, d);
            upd(2, std::max(0.0, rhs - fw), std::abs(fw) + std::abs(fJ) + nrm(G) * nrm(d));
        }

        // (d) 0 <= env <= <G, u>
        const double gu = dot(G, u);
        upd(3, std::max(0.0, -env), 0.0);
        upd(3, std::max(0.0, env - gu), std::abs(env) + std::abs(gu));

        // (e) <G_e(u) - G_d(v), u - v> >= -(e + d)|G_e(u)||G_d(v)|
        const double d2 = std::exp(le(rng));
        const auto Gv = fbsvi::yosida_gradient(f, d2, Point(v));
        std::vector<double> dg(n);
        for (std::size_t k = 0; k < n; ++k) dg[k] = G[k] - Gv[k];
        const double lhs = dot(dg, du);
        const double bound = -(e + d2) * nrm(G) * nrm(Gv);
        upd(4, std::max(0.0, bound - lhs), std::abs(lhs) + std::abs(bound));

        // (f) boxes with 0 in the interior: r0 |G| <= <G, x - 0> with r0 = dist(0, boundary).
        if (f.kind() == fbsvi::ConvexKind::IndicatorBox || f.kind() == fbsvi::ConvexKind::IndicatorBall) {
            double r0 = INFINITY;
            if (f.kind() == fbsvi::ConvexKind::IndicatorBall) r0 = f.radius();
            else
                for (std::size_t k = 0; k < n; ++k) r0 = std::min({r0, -f.lower()[k], f.upper()[k]});
            if (r0 > 0.0) {
                if (!std::isfinite(r0)) r0 = 1.0;  // whole space: G = 0, any r0 works
                ++r.f_checked;
                const double a = r0 * nrm(G);
                upd(5, std::max(0.0, a - gu), a + std::abs(gu));
            }
        }
        ++r.tuples;
    }
    return r;
}

}  // namespace suite
