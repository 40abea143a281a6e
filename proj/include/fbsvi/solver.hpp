#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fbsvi/constants.hpp"
#include "fbsvi/convex.hpp"
#include "fbsvi/error.hpp"
#include "fbsvi/forward.hpp"
#include "fbsvi/parallel.hpp"
#include "fbsvi/problem.hpp"
#include "fbsvi/regression.hpp"

namespace fbsvi {

struct BackwardConfig {
    int degree = 3;
    /// Keep Y for every path and node of the solved range.
    bool keep_paths = false;
    /// Solved node range [first_node, last_node]; last_node defaults to N.
    std::size_t first_node = 0;
    std::optional<std::size_t> last_node;
    /// Terminal function at last_node; defaults to g.
    CoefficientSet::TerminalFn terminal;
};

/// Per-node diagnostics of a backward pass.
struct NodeDiagnostics {
    double feasibility = 0.0;      ///< mean |Y - J_{eps,phi}(Y)|^2
    double envelope_mean = 0.0;    ///< mean phi_eps(Y)
    double mean_abs_U = 0.0;       ///< mean |U|
    std::size_t pairing_violations = 0;  ///< U != 0 while Y strictly inside Dom phi (indicator phi)
    double martingale_z = 0.0;     ///< mean of Y_{i+1} - E_i over its standard error
};

/// Result of the regression backward pass on a forward ensemble.
struct BackwardSolution {
    TimeGrid grid;
    Dims dims;
    double eps = 0.0;
    std::size_t P = 0;
    std::size_t first_node = 0;
    std::size_t last_node = 0;

    /// Conditional-expectation and Z models, indexed by node (only the solved range is populated).
    std::vector<RegressionModel> e_models, z_models;
    ConvexFn phi = ConvexFn::zero(1);
    CoefficientSet::DriverFn f;
    CoefficientSet::TerminalFn terminal;

    /// Mean of Y at first_node (the regression value at x0 when all paths start there).
    std::vector<double> u_estimate;
    /// Standard deviation over paths of the realized sum R, divided by sqrt(P).
    std::vector<double> std_err;
    /// Per-path R = terminal(X) + sum dt (f - U), P * m; its mean equals u_estimate.
    std::vector<double> realized;
    /// Per-path values at first_node: Y (P*m), Z (P*m*d), U (P*m).
    std::vector<double> Y0, Z0, U0;
    /// keep_paths only: Y node-major over [first_node, last_node], ((i - first) * P + p) * m.
    std::vector<double> Y;
    std::vector<NodeDiagnostics> diagnostics;  ///< indexed by node - first_node, nodes < last_node
    std::vector<std::string> warnings;

    double dt() const { return grid.dt(); }

    /// y(t_i, x): regression mean, explicit driver step, then the implicit phi step.
    void y_at(std::size_t i, Point x, MutPoint y) const {
        if (i == last_node) {
            terminal(x, y);
            return;
        }
        check_node(i);
        const std::size_t m = dims.m, d = dims.d;
        std::vector<double> e(m), z(m * d), fv(m), yt(m);
        e_models[i].predict(x, e);
        z_models[i].predict(x, z);
        f(grid.t(i), x, e, z, fv);
        for (std::size_t k = 0; k < m; ++k) yt[k] = e[k] + dt() * fv[k];
        prox_of_envelope_into(phi, eps, dt(), yt, y);
    }

    void z_at(std::size_t i, Point x, MutPoint z) const {
        if (i == last_node) {
            std::fill(z.begin(), z.end(), 0.0);
            return;
        }
        check_node(i);
        z_models[i].predict(x, z);
    }

    YZFeedback feedback() const {
        return [this](std::size_t i, double, Point x, MutPoint y, MutPoint z) {
            y_at(i, x, y);
            z_at(i, x, z);
        };
    }

    Point y_path(std::size_t p, std::size_t i) const {
        if (Y.empty()) throw InvalidArgument("backward solution: paths were not kept");
        return {Y.data() + ((i - first_node) * P + p) * dims.m, dims.m};
    }

private:
    void check_node(std::size_t i) const {
        if (i < first_node || i >= last_node || i >= e_models.size())
            throw InvalidArgument("backward solution: node outside the solved range");
    }
};

/// Least-squares Monte Carlo backward induction on a Full forward ensemble:
///   E_i = regress(Y_{i+1} | X_i)
///   Z_i = regress((Y_{i+1} - E_i) dW_i^T / dt | X_i)
///   Ytilde = E_i + dt f(t_i, X_i, E_i, Z_i)
///   Y_i = prox_of_envelope(phi, eps, dt, Ytilde),  U_i = grad phi_eps(Y_i).
inline BackwardSolution solve_backward(const PathEnsemble& fw, const ProblemSpec& spec, double eps,
                                       const BackwardConfig& cfg = {}) {
    if (fw.mode != Recording::Full) throw InvalidArgument("solve_backward: needs a Full forward ensemble");
    detail::check_positive(eps, "solve_backward: eps");
    spec.coeffs.check();
    const auto& dm = spec.dims();
    if (fw.dims.n != dm.n || fw.dims.d != dm.d) throw InvalidArgument("solve_backward: ensemble dimensions differ");
    const std::size_t P = fw.P, m = dm.m, n = dm.n, d = dm.d;
    const std::size_t first = cfg.first_node;
    const std::size_t last = cfg.last_node.value_or(fw.grid.N);
    if (first >= last || last > fw.grid.N) throw InvalidArgument("solve_backward: invalid node range");

    BackwardSolution sol;
    sol.grid = fw.grid;
    sol.dims = dm;
    sol.eps = eps;
    sol.P = P;
    sol.first_node = first;
    sol.last_node = last;
    sol.e_models.resize(last);
    sol.z_models.resize(last);
    sol.phi = spec.phi;
    sol.f = spec.coeffs.f;
    sol.terminal = cfg.terminal ? cfg.terminal : spec.coeffs.g;
    sol.diagnostics.resize(last - first);

    const double dt = fw.grid.dt();
    const double gamma = spec.coeffs.constants.gamma;
    const bool extra_sweep = gamma > 0.0 && dt * gamma > 0.5;
    const bool phi_indicator = spec.phi.is_indicator();

    std::vector<double> ynext(P * m), R(P * m), E(P * m), Zp(P * m * d), Y(P * m), U(P * m);
    parallel_for(P, [&](std::size_t p) {
        sol.terminal(fw.x(p, last), MutPoint(ynext.data() + p * m, m));
        for (std::size_t k = 0; k < m; ++k) {
            if (!std::isfinite(ynext[p * m + k])) throw NonFiniteValue("solve_backward: non-finite terminal value");
            R[p * m + k] = ynext[p * m + k];
        }
    });
    if (cfg.keep_paths) {
        sol.Y.assign((last - first + 1) * P * m, 0.0);
        std::copy(ynext.begin(), ynext.end(), sol.Y.begin() + static_cast<std::ptrdiff_t>((last - first) * P * m));
    }

    const std::size_t chunks = (P + kChunk - 1) / kChunk;
    for (std::size_t i = last; i-- > first;) {
        const double t = fw.grid.t(i);
        auto xs = [&](std::size_t p) { return fw.x(p, i); };
        auto& em = sol.e_models[i];
        auto& zm = sol.z_models[i];
        std::string w = em.fit(P, n, m, cfg.degree, xs, [&](std::size_t p, MutPoint out) {
            std::copy_n(ynext.data() + p * m, m, out.begin());
        });
        if (!w.empty()) sol.warnings.push_back("node " + std::to_string(i) + ": " + w);
        parallel_for(P, [&](std::size_t p) { em.predict(fw.x(p, i), MutPoint(E.data() + p * m, m)); });
        w = zm.fit(P, n, m * d, cfg.degree, xs, [&](std::size_t p, MutPoint out) {
            const Point dw = fw.dw(p, i);
            for (std::size_t k = 0; k < m; ++k)
                for (std::size_t j = 0; j < d; ++j) out[k * d + j] = (ynext[p * m + k] - E[p * m + k]) * dw[j] / dt;
        });
        if (!w.empty()) sol.warnings.push_back("node " + std::to_string(i) + " (z): " + w);

        std::vector<double> feas(chunks, 0.0), env(chunks, 0.0), uabs(chunks, 0.0), mres(chunks, 0.0),
            mres2(chunks, 0.0);
        std::vector<std::size_t> viol(chunks, 0);
        parallel_chunks(P, [&](std::size_t c, std::size_t b, std::size_t e) {
            std::vector<double> fv(m), yt(m), jy(m);
            for (std::size_t p = b; p < e; ++p) {
                const Point x = fw.x(p, i);
                Point ep(E.data() + p * m, m);
                MutPoint zp(Zp.data() + p * m * d, m * d);
                zm.predict(x, zp);
                spec.coeffs.f(t, x, ep, zp, fv);
                for (std::size_t k = 0; k < m; ++k) yt[k] = ep[k] + dt * fv[k];
                if (extra_sweep) {
                    spec.coeffs.f(t, x, yt, zp, fv);
                    for (std::size_t k = 0; k < m; ++k) yt[k] = ep[k] + dt * fv[k];
                }
                MutPoint yp(Y.data() + p * m, m);
                prox_of_envelope_into(spec.phi, eps, dt, yt, yp);
                double u2 = 0.0;
                for (std::size_t k = 0; k < m; ++k) {
                    if (!std::isfinite(yp[k])) throw NonFiniteValue("solve_backward: non-finite Y");
                    U[p * m + k] = (yt[k] - yp[k]) / dt;
                    R[p * m + k] += dt * (fv[k] - U[p * m + k]);
                    u2 += U[p * m + k] * U[p * m + k];
                    const double r = ynext[p * m + k] - ep[k];
                    mres[c] += r;
                    mres2[c] += r * r;
                }
                spec.phi.prox_into(eps, yp, jy);
                double d2 = 0.0;
                for (std::size_t k = 0; k < m; ++k) d2 += (yp[k] - jy[k]) * (yp[k] - jy[k]);
                feas[c] += d2;
                const ExtendedReal pj = spec.phi.value(jy);
                env[c] += d2 / (2.0 * eps) + (pj.is_finite() ? pj.value() : 0.0);
                uabs[c] += std::sqrt(u2);
                if (phi_indicator && u2 > 0.0 && spec.phi.in_domain(yp) && spec.phi.boundary_distance(yp) > kBoundaryTol)
                    ++viol[c];
            }
        });
        auto& dg = sol.diagnostics[i - first];
        double sm = 0.0, sm2 = 0.0;
        for (std::size_t c = 0; c < chunks; ++c) {
            dg.feasibility += feas[c];
            dg.envelope_mean += env[c];
            dg.mean_abs_U += uabs[c];
            dg.pairing_violations += viol[c];
            sm += mres[c];
            sm2 += mres2[c];
        }
        const double cnt = static_cast<double>(P);
        dg.feasibility /= cnt;
        dg.envelope_mean /= cnt;
        dg.mean_abs_U /= cnt;
        {
            const double mean = sm / (cnt * static_cast<double>(m));
            const double var = std::max(0.0, sm2 / (cnt * static_cast<double>(m)) - mean * mean);
            const double se = std::sqrt(var / cnt);
            dg.martingale_z = se > 0.0 ? mean / se : 0.0;
        }
        ynext.swap(Y);
        if (cfg.keep_paths)
            std::copy(ynext.begin(), ynext.end(), sol.Y.begin() + static_cast<std::ptrdiff_t>((i - first) * P * m));
    }

    sol.Y0 = ynext;
    sol.Z0 = Zp;
    sol.U0 = U;
    sol.realized = R;
    sol.u_estimate.assign(m, 0.0);
    sol.std_err.assign(m, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
        sol.u_estimate[k] = sample_stats(P, [&](std::size_t p) { return sol.Y0[p * m + k]; }).mean;
        sol.std_err[k] = sample_stats(P, [&](std::size_t p) { return R[p * m + k]; }).std_err;
    }
    return sol;
}

struct PicardConfig {
    double tol = 1e-3;
    std::size_t max_iter = 20;
    int degree = 3;
    bool allow_splitting = true;
    std::size_t outer_sweeps = 2;
    std::size_t search_budget = 100000;
    bool keep_paths = false;
};

/// Outcome of the fixed-point iteration on the forward component.
struct PicardReport {
    std::size_t iterations = 0;
    /// ||X^k - X^{k-1}|| in the discrete e^{-lambda t} dt weighted norm, per iteration.
    std::vector<double> residuals;
    /// residuals[k] / residuals[k-1] where both are measured and the denominator is positive.
    std::vector<double> ratios;
    /// u estimate after each backward pass, final pass included.
    std::vector<double> u_history;
    /// Subinterval boundaries (times), t0 and T included.
    std::vector<double> subintervals;
    bool converged = false;
    double final_residual = 0.0;
    double lambda = 0.0;
    bool split = false;
    std::optional<CompatibilityWitness> witness;
    std::string note;
};

struct PicardResult {
    PathEnsemble forward;
    BackwardSolution backward;
    PicardReport report;
};

/// sqrt(sum_{i in (first, last]} e^{-lambda t_i} dt mean_p |X_i - X'_i|^2),
/// with X' given as a node-major state array of the same layout as a.X.
inline double weighted_distance(const PathEnsemble& a, const std::vector<double>& other_X, double lambda,
                                std::size_t first, std::size_t last) {
    if (a.mode != Recording::Full || other_X.size() != a.X.size())
        throw InvalidArgument("weighted_distance: needs matching Full ensembles");
    const double dt = a.grid.dt();
    const std::size_t n = a.dims.n, P = a.P;
    double total = 0.0;
    for (std::size_t i = first + 1; i <= last; ++i) {
        const double ms = deterministic_sum(P, [&](std::size_t p) {
            double s = 0.0;
            const std::size_t off = (i * P + p) * n;
            for (std::size_t k = 0; k < n; ++k) s += (a.X[off + k] - other_X[off + k]) * (a.X[off + k] - other_X[off + k]);
            return s;
        });
        total += std::exp(-lambda * a.grid.t(i)) * dt * ms / static_cast<double>(P);
    }
    return std::sqrt(total);
}

inline double weighted_distance(const PathEnsemble& a, const PathEnsemble& b, double lambda, std::size_t first,
                                std::size_t last) {
    return weighted_distance(a, b.X, lambda, first, last);
}

namespace detail {

inline YZFeedback zero_feedback() {
    return [](std::size_t, double, Point, MutPoint y, MutPoint z) {
        std::fill(y.begin(), y.end(), 0.0);
        std::fill(z.begin(), z.end(), 0.0);
    };
}

inline bool stop_rule(const PicardReport& r, double tol) {
    const auto& u = r.u_history;
    if (u.size() < 2) return false;
    const double du = std::abs(u[u.size() - 1] - u[u.size() - 2]);
    if (!(du < tol * std::max(1.0, std::abs(u.back())))) return false;
    if (!r.residuals.empty() && r.residuals.back() == 0.0) return true;
    if (r.ratios.size() < 2) return false;
    return r.ratios[r.ratios.size() - 1] < 1.0 && r.ratios[r.ratios.size() - 2] < 1.0;
}

}  // namespace detail

/// Fixed-point iteration X -> (Y, Z) -> X on the penalized system with common
/// increments across iterations. Uses the witness lambda for the norm when
/// (C1) with (C2) or (C3) holds on [t0, T]; otherwise, if allowed, splits the
/// horizon into pieces no longer than small_time_T0 and iterates piece by
/// piece backward in time, stitching through the regression y-model at the
/// piece boundaries, for `outer_sweeps` sweeps. Throws CompatibilityError when
/// (C1) fails or no regime applies.
inline PicardResult picard_solve(const ProblemSpec& spec, double eps, const TimeGrid& grid, std::size_t P,
                                 std::uint64_t master_seed, const PicardConfig& cfg = {}) {
    spec.validate();
    if (std::abs(grid.t0 - spec.t0) > 1e-12 || std::abs(grid.T - spec.T) > 1e-12)
        throw InvalidArgument("picard_solve: grid must span [t0, T] of the problem");
    const auto sc = structural(spec.coeffs.constants);
    if (!(sc.k1 * sc.k2 < 1.0)) throw CompatibilityError("(C1) violated: k1*k2=" + detail::fmt(sc.k1 * sc.k2));
    PicardReport rep;
    const double horizon = spec.T - spec.t0;
    const auto compat = check_compatibility(sc, horizon, cfg.search_budget);
    std::size_t piece_steps = grid.N;
    if (compat.witness) {
        rep.witness = compat.witness;
        rep.lambda = compat.witness->lambda;
    } else {
        if (!cfg.allow_splitting) throw CompatibilityError("no compatibility witness: " + compat.reason);
        const double T0 = small_time_T0(sc);
        auto w = small_time_recipe(sc, T0);
        w.branch = WitnessBranch::SmallTime;
        rep.witness = w;
        rep.lambda = w.lambda;
        piece_steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(T0 / grid.dt())));
        rep.split = piece_steps < grid.N;
        rep.note = "no witness on the full horizon (" + compat.reason + "); split with T0=" + detail::fmt(T0);
    }

    std::vector<std::size_t> bounds{0};
    while (bounds.back() < grid.N) bounds.push_back(std::min(grid.N, bounds.back() + piece_steps));
    for (std::size_t b : bounds) rep.subintervals.push_back(grid.t(b));

    const bool coupled = spec.coeffs.coupled;
    PathEnsemble ens = simulate_forward(spec, eps, grid, P, master_seed, coupled ? detail::zero_feedback() : YZFeedback{});
    BackwardConfig bcfg;
    bcfg.degree = cfg.degree;

    if (!coupled) {
        bcfg.keep_paths = cfg.keep_paths;
        auto sol = solve_backward(ens, spec, eps, bcfg);
        rep.iterations = 1;
        rep.residuals.push_back(0.0);
        rep.u_history.push_back(sol.u_estimate[0]);
        rep.converged = true;
        rep.final_residual = 0.0;
        return {std::move(ens), std::move(sol), std::move(rep)};
    }

    // Picard on pieces [bounds[j], bounds[j+1]], last piece first.
    const std::size_t M = bounds.size() - 1;
    std::vector<std::optional<BackwardSolution>> pieces(M);
    auto piece_of = [&](std::size_t i) {
        std::size_t j = static_cast<std::size_t>(std::upper_bound(bounds.begin(), bounds.end(), i) - bounds.begin());
        return std::min(j - 1, M - 1);
    };
    YZFeedback global = [&](std::size_t i, double t, Point x, MutPoint y, MutPoint z) {
        const auto& pc = pieces[piece_of(i)];
        if (pc) {
            pc->y_at(i, x, y);
            pc->z_at(i, x, z);
        } else {
            detail::zero_feedback()(i, t, x, y, z);
        }
    };

    bool all_converged = true;
    const std::size_t sweeps = M > 1 ? std::max<std::size_t>(1, cfg.outer_sweeps) : 1;
    for (std::size_t sweep = 0; sweep < sweeps; ++sweep) {
        for (std::size_t j = M; j-- > 0;) {
            const std::size_t a = bounds[j], b = bounds[j + 1];
            BackwardConfig pc = bcfg;
            pc.first_node = a;
            pc.last_node = b;
            if (j + 1 < M) {
                const BackwardSolution* next = &*pieces[j + 1];
                pc.terminal = [next, b](Point x, MutPoint y) { next->y_at(b, x, y); };
            }
            PicardReport local;
            bool conv = false;
            for (std::size_t k = 1; k <= cfg.max_iter; ++k) {
                pieces[j] = solve_backward(ens, spec, eps, pc);
                local.u_history.push_back(pieces[j]->u_estimate[0]);
                rep.u_history.push_back(pieces[j]->u_estimate[0]);
                const std::vector<double> prev = ens.X;
                resimulate_segment(ens, spec, a, b, pieces[j]->feedback());
                const double dist = weighted_distance(ens, prev, rep.lambda, a, b);
                if (!local.residuals.empty() && local.residuals.back() > 0.0) {
                    local.ratios.push_back(dist / local.residuals.back());
                    rep.ratios.push_back(local.ratios.back());
                }
                local.residuals.push_back(dist);
                rep.residuals.push_back(dist);
                ++rep.iterations;
                if (detail::stop_rule(local, cfg.tol)) {
                    conv = true;
                    break;
                }
            }
            all_converged = all_converged && conv;
        }
        if (M > 1) resimulate_segment(ens, spec, 0, grid.N, global);
    }

    bcfg.keep_paths = cfg.keep_paths;
    auto sol = solve_backward(ens, spec, eps, bcfg);
    rep.u_history.push_back(sol.u_estimate[0]);
    rep.converged = all_converged;
    rep.final_residual = rep.residuals.empty() ? 0.0 : rep.residuals.back();
    return {std::move(ens), std::move(sol), std::move(rep)};
}

struct UEstimate {
    double value = 0.0;
    double std_err = 0.0;
};

namespace detail {

inline ProblemSpec restart(const ProblemSpec& spec, double t, Point x) {
    ProblemSpec s = spec;
    s.t0 = t;
    s.x0.assign(x.begin(), x.end());
    return s;
}

}  // namespace detail

/// u_eps(t, x) = Y_t^{t,x} for m = 1, by picard_solve on [t, T] with N steps.
inline UEstimate estimate_u(const ProblemSpec& spec, double t, Point x, double eps, std::size_t N, std::size_t P,
                            std::uint64_t master_seed, const PicardConfig& cfg = {}) {
    if (t < spec.t0 || t > spec.T) throw InvalidArgument("estimate_u: t outside [t0, T]");
    if (!spec.psi.in_domain(x, kBoundaryTol)) throw DomainError("estimate_u: x outside Dom psi");
    if (t == spec.T) {
        std::vector<double> y(spec.dims().m);
        spec.coeffs.g(x, y);
        return {y[0], 0.0};
    }
    const auto s = detail::restart(spec, t, x);
    const auto res = picard_solve(s, eps, TimeGrid(t, spec.T, N), P, master_seed, cfg);
    return {res.backward.u_estimate[0], res.backward.std_err[0]};
}

inline UEstimate estimate_u(const ProblemSpec& spec, double t, double x, double eps, std::size_t N, std::size_t P,
                            std::uint64_t master_seed, const PicardConfig& cfg = {}) {
    return estimate_u(spec, t, Point(&x, 1), eps, N, P, master_seed, cfg);
}

struct LipschitzProbe {
    double ratio = 0.0;
    double combined_se = 0.0;  ///< standard error of u(t,x1) - u(t,x2) under common increments
    double u1 = 0.0, u2 = 0.0;
};

/// |u(t,x1) - u(t,x2)| / |x1 - x2| with common random numbers.
inline LipschitzProbe lipschitz_probe(const ProblemSpec& spec, double t, Point x1, Point x2, double eps,
                                      std::size_t N, std::size_t P, std::uint64_t shared_seed,
                                      const PicardConfig& cfg = {}) {
    const double dx = detail::dist(x1, x2);
    if (!(dx > 0.0)) throw InvalidArgument("lipschitz_probe: x1 and x2 must differ");
    LipschitzProbe out;
    if (t == spec.T) {
        const auto a = estimate_u(spec, t, x1, eps, N, P, shared_seed, cfg);
        const auto b = estimate_u(spec, t, x2, eps, N, P, shared_seed, cfg);
        out.u1 = a.value;
        out.u2 = b.value;
        out.ratio = std::abs(a.value - b.value) / dx;
        return out;
    }
    const TimeGrid grid(t, spec.T, N);
    const auto r1 = picard_solve(detail::restart(spec, t, x1), eps, grid, P, shared_seed, cfg);
    const auto r2 = picard_solve(detail::restart(spec, t, x2), eps, grid, P, shared_seed, cfg);
    out.u1 = r1.backward.u_estimate[0];
    out.u2 = r2.backward.u_estimate[0];
    out.ratio = std::abs(out.u1 - out.u2) / dx;
    const std::size_t m = spec.dims().m;
    const auto st = sample_stats(P, [&](std::size_t p) {
        return r1.backward.realized[p * m] - r2.backward.realized[p * m];
    });
    out.combined_se = st.std_err;
    return out;
}

inline LipschitzProbe lipschitz_probe(const ProblemSpec& spec, double t, double x1, double x2, double eps,
                                      std::size_t N, std::size_t P, std::uint64_t shared_seed,
                                      const PicardConfig& cfg = {}) {
    return lipschitz_probe(spec, t, Point(&x1, 1), Point(&x2, 1), eps, N, P, shared_seed, cfg);
}

/// Log-log fit of the penalization difference D(eps) against eps.
struct RateFit {
    std::vector<double> eps;
    std::vector<double> D;
    double eps_ref = 0.0;
    double slope = 0.0;
    double intercept = 0.0;
    double residual = 0.0;  ///< RMS residual of the log-log fit
    double floor = 0.0;     ///< rho / (2 + 4 rho)
    bool exact = false;     ///< every D(eps) is zero; slope is meaningless
};

inline double theoretical_rate_floor(double rho) { return rho / (2.0 + 4.0 * rho); }

/// D(eps) = E sup_i (|X^eps_i - X^ref_i|^2 + |Y^eps_i - Y^ref_i|^2) against
/// eps_ref on common increments, and the least-squares slope of log D
/// against log eps.
inline RateFit penalization_rate_study(const ProblemSpec& spec, const std::vector<double>& eps_list, double eps_ref,
                                       std::size_t N, std::size_t P, std::uint64_t master_seed,
                                       const PicardConfig& cfg = {}) {
    if (eps_list.size() < 3) throw InvalidArgument("penalization_rate_study: need at least 3 eps values");
    for (std::size_t k = 0; k < eps_list.size(); ++k) {
        if (!(eps_list[k] > eps_ref)) throw InvalidArgument("penalization_rate_study: every eps must exceed eps_ref");
        if (k > 0 && !(eps_list[k] < eps_list[k - 1]))
            throw InvalidArgument("penalization_rate_study: eps list must be strictly decreasing");
    }
    detail::check_positive(eps_ref, "penalization_rate_study: eps_ref");
    RateFit fit;
    fit.eps = eps_list;
    fit.eps_ref = eps_ref;
    fit.floor = theoretical_rate_floor(spec.coeffs.constants.rho0);
    const TimeGrid grid(spec.t0, spec.T, N);
    PicardConfig c = cfg;
    c.keep_paths = true;
    const auto ref = picard_solve(spec, eps_ref, grid, P, master_seed, c);
    const std::size_t n = spec.dims().n, m = spec.dims().m;
    for (double e : eps_list) {
        const auto run = picard_solve(spec, e, grid, P, master_seed, c);
        const auto st = sample_stats(P, [&](std::size_t p) {
            double sup = 0.0;
            for (std::size_t i = 0; i <= N; ++i) {
                double s = 0.0;
                const Point xa = run.forward.x(p, i), xb = ref.forward.x(p, i);
                for (std::size_t k = 0; k < n; ++k) s += (xa[k] - xb[k]) * (xa[k] - xb[k]);
                const Point ya = run.backward.y_path(p, i), yb = ref.backward.y_path(p, i);
                for (std::size_t k = 0; k < m; ++k) s += (ya[k] - yb[k]) * (ya[k] - yb[k]);
                sup = std::max(sup, s);
            }
            return sup;
        });
        fit.D.push_back(st.mean);
    }
    if (std::all_of(fit.D.begin(), fit.D.end(), [](double v) { return v == 0.0; })) {
        fit.exact = true;
        return fit;
    }
    for (double v : fit.D)
        if (!(v > 0.0)) throw NonFiniteValue("penalization_rate_study: D vanishes for some but not all eps");
    const std::size_t k = fit.D.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t j = 0; j < k; ++j) {
        const double lx = std::log(fit.eps[j]), ly = std::log(fit.D[j]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double kk = static_cast<double>(k);
    fit.slope = (kk * sxy - sx * sy) / (kk * sxx - sx * sx);
    fit.intercept = (sy - fit.slope * sx) / kk;
    double rss = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        const double r = std::log(fit.D[j]) - (fit.intercept + fit.slope * std::log(fit.eps[j]));
        rss += r * r;
    }
    fit.residual = std::sqrt(rss / kk);
    return fit;
}

}  // namespace fbsvi
