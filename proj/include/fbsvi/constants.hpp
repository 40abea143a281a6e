#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "fbsvi/error.hpp"
#include "fbsvi/parallel.hpp"
#include "fbsvi/problem.hpp"
#include "fbsvi/rng.hpp"

namespace fbsvi {

/// A(lambda, t) = exp(-min(lambda, 0) t).
inline double A(double lambda, double t) {
    if (t < 0.0) throw InvalidArgument("A: t must be nonnegative");
    return std::exp(-std::min(lambda, 0.0) * t);
}

/// B(lambda, t) = int_0^t exp(-lambda s) ds, with a series branch near lambda t = 0.
inline double B(double lambda, double t) {
    if (t < 0.0) throw InvalidArgument("B: t must be nonnegative");
    const double x = lambda * t;
    if (std::abs(x) < 1e-6) return t * (1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0);
    return -std::expm1(-x) / lambda;
}

struct LambdaBars {
    double first;   ///< lambda - K (2 + 1/C1 + 1/C2) - K^2
    double second;  ///< -lambda - 2 gamma - K (1/C3 + 1/C4)
};

inline LambdaBars lambda_bars(double lambda, double K, double gamma, double C1, double C2, double C3, double C4) {
    if (!(C1 > 0 && C2 > 0 && C3 > 0 && C4 > 0)) throw InvalidArgument("lambda_bars: C1..C4 must be positive");
    return {lambda - K * (2.0 + 1.0 / C1 + 1.0 / C2) - K * K, -lambda - 2.0 * gamma - K * (1.0 / C3 + 1.0 / C4)};
}

/// mu(alpha, T) = K (C1 + K) B(lb2, T) + A(lb2, T) / alpha * (K C2 + k1^2).
inline double mu(double alpha, double T, double K, double k1, double C1, double C2, double lambda_bar_2) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("mu: alpha must lie in (0, 1)");
    return K * (C1 + K) * B(lambda_bar_2, T) + A(lambda_bar_2, T) / alpha * (K * C2 + k1 * k1);
}

enum class WitnessBranch { C2, C3, SmallTime };

inline std::string to_string(WitnessBranch b) {
    switch (b) {
        case WitnessBranch::C2: return "C2-branch";
        case WitnessBranch::C3: return "C3-branch";
        case WitnessBranch::SmallTime: return "small-time";
    }
    return "unknown";
}

/// Structural constants the compatibility machinery is evaluated on.
struct StructuralConstants {
    double K = 0.0;
    double k1 = 0.0;
    double k2 = 0.0;
    double gamma = 0.0;
};

inline StructuralConstants structural(const DeclaredConstants& d) { return {d.K, d.k1, d.k2, d.gamma}; }

/// Auxiliary constants certifying (C1) together with (C2) or (C3).
struct CompatibilityWitness {
    double lambda = 0.0;
    double alpha = 0.5;
    double C1 = 1.0;
    double C2 = 1.0;
    double C3 = 1.0;
    /// (1 - alpha) / K; absent when K = 0, where every K / C4 term vanishes.
    std::optional<double> C4;
    double lambda_bar_1 = 0.0;
    double lambda_bar_2 = 0.0;
    double mu = 0.0;
    double horizon = 0.0;
    WitnessBranch branch = WitnessBranch::C2;
};

namespace detail {

inline std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

// K / C4 with C4 = (1 - alpha) / K.
inline double k_over_c4(double K, double alpha) { return K * K / (1.0 - alpha); }

// Fills the derived fields of a candidate from its free parameters.
inline CompatibilityWitness evaluate_candidate(const StructuralConstants& c, double T, double lambda, double alpha,
                                               double C1, double C2, double C3) {
    CompatibilityWitness w;
    w.lambda = lambda;
    w.alpha = alpha;
    w.C1 = C1;
    w.C2 = C2;
    w.C3 = C3;
    if (c.K > 0.0) w.C4 = (1.0 - alpha) / c.K;
    w.lambda_bar_1 = lambda - c.K * (2.0 + 1.0 / C1 + 1.0 / C2) - c.K * c.K;
    w.lambda_bar_2 = -lambda - 2.0 * c.gamma - c.K / C3 - k_over_c4(c.K, alpha);
    w.mu = mu(alpha, T, c.K, c.k1, C1, C2, w.lambda_bar_2);
    w.horizon = T;
    w.branch = c.k2 == 0.0 ? WitnessBranch::C2 : WitnessBranch::C3;
    return w;
}

// Smallest branch margin; the candidate is a witness iff this is > 0
// (for the closed inequality of (C3) a zero margin is accepted separately).
inline double branch_slack(const StructuralConstants& c, const CompatibilityWitness& w, bool* closed_ok = nullptr) {
    if (c.k2 == 0.0) {
        if (closed_ok) *closed_ok = false;
        return w.lambda_bar_1 - w.mu * c.K * w.C3;
    }
    const double a_lo = c.k1 * c.k1 * c.k2 * c.k2;
    const double s_alpha = std::min(w.alpha - a_lo, 1.0 - w.alpha);
    const double s_mu = 1.0 - w.mu * c.k2 * c.k2;
    const double s_lb = w.lambda_bar_1 - c.K * w.C3 / (c.k2 * c.k2);
    if (closed_ok) *closed_ok = s_alpha > 0.0 && s_mu > 0.0 && s_lb >= 0.0;
    return std::min({s_alpha, s_mu, s_lb > 0.0 ? s_lb : (s_lb == 0.0 ? 0.0 : s_lb)});
}

inline bool is_witness(const StructuralConstants& c, const CompatibilityWitness& w) {
    bool closed_ok = false;
    const double s = branch_slack(c, w, &closed_ok);
    return c.k2 == 0.0 ? s > 0.0 : closed_ok;
}

}  // namespace detail

/// Re-derives every quantity of a witness from its free parameters (lambda,
/// alpha, C1, C2, C3) and checks the branch inequalities. Stored derived
/// values are not trusted.
inline bool verify_witness(const CompatibilityWitness& w, const StructuralConstants& c, std::string* reason = nullptr) {
    auto fail = [&](std::string why) {
        if (reason) *reason = std::move(why);
        return false;
    };
    if (!(c.k1 * c.k2 < 1.0)) return fail("(C1) violated: k1*k2=" + detail::fmt(c.k1 * c.k2));
    if (!(w.alpha > 0.0 && w.alpha < 1.0)) return fail("alpha outside (0,1)");
    if (!(w.C1 > 0.0 && w.C2 > 0.0 && w.C3 > 0.0)) return fail("C1..C3 must be positive");
    if (c.K > 0.0) {
        if (!w.C4 || std::abs(*w.C4 - (1.0 - w.alpha) / c.K) > 1e-12 * std::max(1.0, std::abs(*w.C4)))
            return fail("C4 != (1 - alpha) / K");
    }
    const double C4 = c.K > 0.0 ? (1.0 - w.alpha) / c.K : 1.0;
    const auto lb = lambda_bars(w.lambda, c.K, c.gamma, w.C1, w.C2, w.C3, C4);
    const double lb2 = c.K > 0.0 ? lb.second : -w.lambda - 2.0 * c.gamma;
    const double m = mu(w.alpha, w.horizon, c.K, c.k1, w.C1, w.C2, lb2);
    if (c.k2 == 0.0) {
        if (w.branch == WitnessBranch::C3) return fail("C3-branch requires k2 > 0");
        if (!(m * c.K * w.C3 < lb.first)) return fail("(C2) violated: mu*K*C3 >= lambda_bar_1");
    } else {
        if (w.branch == WitnessBranch::C2) return fail("C2-branch requires k2 = 0");
        if (!(w.alpha > c.k1 * c.k1 * c.k2 * c.k2)) return fail("(C3) violated: alpha <= k1^2 k2^2");
        if (!(m * c.k2 * c.k2 < 1.0)) return fail("(C3) violated: mu*k2^2 >= 1");
        if (!(lb.first >= c.K * w.C3 / (c.k2 * c.k2))) return fail("(C3) violated: lambda_bar_1 < K*C3/k2^2");
    }
    return true;
}

/// Outcome of a compatibility search.
struct CompatibilityResult {
    std::optional<CompatibilityWitness> witness;
    std::string reason;
    std::size_t evaluations = 0;

    explicit operator bool() const { return witness.has_value(); }
};

/// Witness built by the small-horizon construction: for k2 > 0,
/// alpha = (1 + k1^2 k2^2) / 2 and C2 = (alpha - k1^2 k2^2) / (4 K k2^2);
/// for k2 = 0, alpha = 1/2. C1 = C3 = 1 and lambda is the smallest value
/// meeting the lambda_bar_1 requirement (with a factor-2 margin when k2 = 0).
inline CompatibilityWitness small_time_recipe(const StructuralConstants& c, double h) {
    const double K = c.K;
    if (K <= 0.0) return detail::evaluate_candidate(c, h, 1.0, 0.5, 1.0, 1.0, 1.0);
    if (c.k2 > 0.0) {
        const double a_lo = c.k1 * c.k1 * c.k2 * c.k2;
        const double alpha = 0.5 * (1.0 + a_lo);
        const double C2 = (alpha - a_lo) / (4.0 * K * c.k2 * c.k2);
        const double target = K / (c.k2 * c.k2);
        const double lambda = K * (3.0 + 1.0 / C2) + K * K + target * (1.0 + 1e-10) + 1e-12;
        return detail::evaluate_candidate(c, h, lambda, alpha, 1.0, C2, 1.0);
    }
    const double mu0 = (K + c.k1 * c.k1) / 0.5;
    const double lambda = K * 4.0 + K * K + 2.0 * mu0 * K + 1.0;
    return detail::evaluate_candidate(c, h, lambda, 0.5, 1.0, 1.0, 1.0);
}

inline bool small_time_recipe_holds(const StructuralConstants& c, double h) {
    return detail::is_witness(c, small_time_recipe(c, h));
}

/// Searches (lambda, alpha, C1, C2, C3) for a witness of (C1) and (C2) or (C3)
/// on horizon T. A coarse grid (lambda on a symmetric 1-2-5 grid in
/// [-50, 50], alpha in {0.05, ..., 0.95}, C_i in {1e-2, ..., 1e2}) plus the
/// small-horizon construction is scanned first; among feasible points the
/// lexicographically smallest (lambda, alpha, C1, C2, C3) is returned. If none
/// is feasible, a seeded local search around the least-violating point uses
/// the remaining budget.
inline CompatibilityResult check_compatibility(const StructuralConstants& c, double T,
                                               std::size_t search_budget = 100000) {
    CompatibilityResult res;
    if (!(c.k1 * c.k2 < 1.0) || c.k1 < 0.0 || c.k2 < 0.0) {
        res.reason = "(C1) violated: k1*k2=" + detail::fmt(c.k1 * c.k2);
        return res;
    }
    if (T < 0.0) throw InvalidArgument("check_compatibility: T must be nonnegative");

    std::vector<double> lambdas{0.0};
    for (double dec : {0.01, 0.1, 1.0, 10.0})
        for (double m : {1.0, 2.0, 5.0})
            if (dec * m <= 50.0) {
                lambdas.push_back(dec * m);
                lambdas.push_back(-dec * m);
            }
    std::sort(lambdas.begin(), lambdas.end());
    std::vector<double> alphas;
    for (int i = 1; i <= 19; ++i) alphas.push_back(0.05 * i);
    const std::array<double, 5> cs{0.01, 0.1, 1.0, 10.0, 100.0};

    const std::size_t nl = lambdas.size(), na = alphas.size(), nc = cs.size();
    const std::size_t total = std::min(search_budget, nl * na * nc * nc * nc);
    // Flattened index order is lexicographic in (lambda, alpha, C1, C2, C3).
    auto decode = [&](std::size_t idx) {
        const std::size_t i3 = idx % nc;
        idx /= nc;
        const std::size_t i2 = idx % nc;
        idx /= nc;
        const std::size_t i1 = idx % nc;
        idx /= nc;
        const std::size_t ia = idx % na;
        idx /= na;
        return detail::evaluate_candidate(c, T, lambdas[idx], alphas[ia], cs[i1], cs[i2], cs[i3]);
    };

    const std::size_t chunks = (total + kChunk - 1) / kChunk;
    std::vector<std::size_t> first_feasible(chunks, total);
    std::vector<std::pair<double, std::size_t>> best_slack(chunks, {-1e300, total});
    parallel_chunks(total, [&](std::size_t ch, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const auto w = decode(i);
            if (detail::is_witness(c, w)) {
                first_feasible[ch] = std::min(first_feasible[ch], i);
                continue;
            }
            const double s = detail::branch_slack(c, w);
            if (std::isfinite(s) && s > best_slack[ch].first) best_slack[ch] = {s, i};
        }
    });
    res.evaluations = total;

    std::optional<CompatibilityWitness> found;
    for (std::size_t ch = 0; ch < chunks && !found; ++ch)
        if (first_feasible[ch] < total) found = decode(first_feasible[ch]);

    const auto recipe = small_time_recipe(c, T);
    ++res.evaluations;
    if (detail::is_witness(c, recipe)) {
        if (!found || std::tie(recipe.lambda, recipe.alpha, recipe.C1, recipe.C2, recipe.C3) <
                          std::tie(found->lambda, found->alpha, found->C1, found->C2, found->C3))
            found = recipe;
    }

    if (!found && res.evaluations < search_budget) {
        // Local refinement in log-coordinates of (|lambda|, C1, C2, C3) and alpha.
        std::pair<double, std::size_t> best{-1e300, total};
        for (const auto& b : best_slack)
            if (b.first > best.first) best = b;
        CompatibilityWitness cur = best.second < total ? decode(best.second) : recipe;
        double cur_s = detail::branch_slack(c, cur);
        std::uint64_t k = 0;
        const std::uint64_t seed = 0x5EEDC0FFEEULL;
        while (res.evaluations < search_budget) {
            ++res.evaluations;
            auto jitter = [&](double scale) { return scale * (2.0 * uniform01(seed, k++) - 1.0); };
            const double lam = cur.lambda + jitter(1.0 + 0.2 * std::abs(cur.lambda));
            const double al = std::clamp(cur.alpha + jitter(0.05), 1e-3, 1.0 - 1e-3);
            const double c1 = std::clamp(cur.C1 * std::exp(jitter(0.5)), 1e-4, 1e4);
            const double c2 = std::clamp(cur.C2 * std::exp(jitter(0.5)), 1e-4, 1e4);
            const double c3 = std::clamp(cur.C3 * std::exp(jitter(0.5)), 1e-4, 1e4);
            const auto w = detail::evaluate_candidate(c, T, lam, al, c1, c2, c3);
            if (detail::is_witness(c, w)) {
                found = w;
                break;
            }
            const double s = detail::branch_slack(c, w);
            if (std::isfinite(s) && s > cur_s) {
                cur = w;
                cur_s = s;
            }
        }
    }

    if (found) {
        std::string why;
        if (!verify_witness(*found, c, &why)) throw Error("check_compatibility: witness failed re-verification: " + why);
        res.witness = found;
    } else {
        res.reason = "no witness found within budget of " + std::to_string(search_budget) + " evaluations";
    }
    return res;
}

/// Refuses when sampled falsification rejected any declared constant.
inline CompatibilityResult check_compatibility(const AssumptionReport& report, const StructuralConstants& c, double T,
                                               std::size_t search_budget = 100000) {
    if (!report.constants_ok()) {
        CompatibilityResult res;
        res.reason = "declared constants falsified by sampling:";
        for (const auto& chk : report.checks)
            if (chk.is_constant && !chk.passed)
                res.reason += " [" + chk.name + ": declared " + detail::fmt(chk.declared) + ", empirical " +
                              detail::fmt(chk.empirical) + "]";
        return res;
    }
    return check_compatibility(c, T, search_budget);
}

/// Largest horizon h in (0, h_max] on which the small-horizon construction
/// yields a witness, found by bisection (the construction's mu is
/// nondecreasing in h).
inline double small_time_T0(const StructuralConstants& c, double h_max = 1e3) {
    if (!(c.k1 * c.k2 < 1.0)) throw CompatibilityError("(C1) violated: k1*k2=" + detail::fmt(c.k1 * c.k2));
    if (c.K <= 0.0 || small_time_recipe_holds(c, h_max)) return h_max;
    double lo = 0.0, hi = h_max;
    for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (small_time_recipe_holds(c, mid) ? lo : hi) = mid;
    }
    if (!(lo > 0.0)) throw Error("small_time_T0: construction fails for every positive horizon");
    return lo;
}

/// Lipschitz constant C_T of x -> (X, Y, Z) implied by a witness:
/// max{ A / (1 - mu k2^2), A / (lambda_bar_1 - mu K C3) } with A = exp(-(lambda ^ 0) T).
/// Returns +infinity when a denominator is not positive.
inline double lipschitz_constant_CT(const CompatibilityWitness& w, const StructuralConstants& c) {
    const double a = std::exp(-std::min(w.lambda, 0.0) * w.horizon);
    const double d1 = 1.0 - w.mu * c.k2 * c.k2;
    const double d2 = w.lambda_bar_1 - w.mu * c.K * w.C3;
    const double inf = std::numeric_limits<double>::infinity();
    return std::max(d1 > 0.0 ? a / d1 : inf, d2 > 0.0 ? a / d2 : inf);
}

}  // namespace fbsvi
