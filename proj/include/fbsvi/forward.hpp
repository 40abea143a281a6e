#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "fbsvi/convex.hpp"
#include "fbsvi/error.hpp"
#include "fbsvi/parallel.hpp"
#include "fbsvi/problem.hpp"
#include "fbsvi/rng.hpp"

namespace fbsvi {

/// Uniform grid t_i = t0 + i (T - t0) / N.
struct TimeGrid {
    double t0 = 0.0;
    double T = 1.0;
    std::size_t N = 1;

    TimeGrid() = default;
    TimeGrid(double t0_, double T_, std::size_t N_) : t0(t0_), T(T_), N(N_) { validate(); }

    void validate() const {
        if (N < 1) throw InvalidArgument("time grid: N must be >= 1");
        if (!(T > t0) || !std::isfinite(T) || !std::isfinite(t0)) throw InvalidArgument("time grid: need t0 < T");
    }
    double dt() const { return (T - t0) / static_cast<double>(N); }
    double t(std::size_t i) const { return i == N ? T : t0 + static_cast<double>(i) * dt(); }
};

/// Which per-node data an ensemble keeps.
enum class Recording {
    Full,      ///< X, V at every node and every Brownian increment
    Terminal,  ///< X, V at the final node only
};

/// Simulated paths of the penalized forward equation.
///
/// Storage is node-major: the state of path p at node i starts at
/// ((i * P) + p) * n. In Terminal mode only node N is stored (as node 0 of
/// the arrays).
struct PathEnsemble {
    TimeGrid grid;
    std::size_t P = 0;
    Dims dims;
    std::uint64_t master_seed = 0;
    Recording mode = Recording::Full;
    double eps = 0.0;

    std::vector<double> X;
    std::vector<double> V;
    std::vector<double> dW;

    /// sup_i |X_i - J_{eps,psi}(X_i)|^2 per path (zero when psi is Zero).
    std::vector<double> sup_penalty2;
    /// Largest observed excess of dist(X_{i+1}, Dom psi) over
    /// dist(Xhat, Dom psi) * eps / (eps + dt); indicator psi only.
    double max_attraction_excess = 0.0;

    std::size_t stored_nodes() const { return mode == Recording::Full ? grid.N + 1 : 1; }
    std::size_t slot(std::size_t i) const { return mode == Recording::Full ? i : (i == grid.N ? 0 : check_node(i)); }

    Point x(std::size_t p, std::size_t i) const { return {X.data() + (slot(i) * P + p) * dims.n, dims.n}; }
    Point v(std::size_t p, std::size_t i) const { return {V.data() + (slot(i) * P + p) * dims.n, dims.n}; }
    Point dw(std::size_t p, std::size_t i) const {
        if (mode != Recording::Full) throw InvalidArgument("ensemble: increments are only kept in Full mode");
        return {dW.data() + (i * P + p) * dims.d, dims.d};
    }
    Point x_terminal(std::size_t p) const { return x(p, grid.N); }

    /// V path of one component of path p (Full mode).
    std::vector<double> v_path(std::size_t p) const {
        if (mode != Recording::Full) throw InvalidArgument("ensemble: V paths are only kept in Full mode");
        std::vector<double> out((grid.N + 1) * dims.n);
        for (std::size_t i = 0; i <= grid.N; ++i)
            std::copy_n(V.data() + (i * P + p) * dims.n, dims.n, out.data() + i * dims.n);
        return out;
    }

    std::uint64_t seed(std::size_t p) const { return path_seed(master_seed, p); }

private:
    std::size_t check_node(std::size_t) const {
        throw InvalidArgument("ensemble: only the terminal node is kept in Terminal mode");
    }
};

/// Backward-component feedback used while simulating coupled coefficients:
/// writes y (m) and z (m x d) at node i for state x.
using YZFeedback = std::function<void(std::size_t i, double t, Point x, MutPoint y, MutPoint z)>;

struct ForwardOptions {
    Recording mode = Recording::Full;
    /// Optional per-path initial states (P * n); defaults to spec.x0 for all paths.
    const std::vector<double>* initial_states = nullptr;
};

namespace detail {

// Brownian increment for (path, step, component), scaled by sqrt(dt).
inline void brownian_increment(NormalStream& s, std::size_t step, std::size_t d, double sqdt, double* out) {
    for (std::size_t k = 0; k < d; ++k) out[k] = sqdt * s(static_cast<std::uint64_t>(step) * d + k);
}

struct StepBuffers {
    std::vector<double> y, z, b, sig, xhat;
    explicit StepBuffers(const Dims& dm)
        : y(dm.m, 0.0), z(dm.m * dm.d, 0.0), b(dm.n), sig(dm.n * dm.d), xhat(dm.n) {}
};

// Euler predictor xhat = x + b dt + sigma dW.
inline void euler_predictor(const ProblemSpec& spec, const YZFeedback* fb, std::size_t i, double t, double dt,
                            Point x, Point dw, StepBuffers& buf) {
    const auto& dm = spec.dims();
    if (fb && *fb) (*fb)(i, t, x, buf.y, buf.z);
    spec.coeffs.b(t, x, buf.y, buf.z, buf.b);
    spec.coeffs.sigma(t, x, buf.y, buf.sig);
    for (std::size_t a = 0; a < dm.n; ++a) {
        double s = x[a] + buf.b[a] * dt;
        for (std::size_t k = 0; k < dm.d; ++k) s += buf.sig[a * dm.d + k] * dw[k];
        buf.xhat[a] = s;
    }
}

inline void check_feedback(const ProblemSpec& spec, const YZFeedback* fb) {
    if (spec.coeffs.coupled && !(fb && *fb))
        throw InvalidArgument("simulate_forward: coupled coefficients need a (y, z) feedback closure");
}

// Advances every path of `ens` from node `first` to node `last`. States at
// `first` are taken from init(p, a) when given, else from the ensemble.
// Increments are regenerated from the path seeds (identical to stored ones).
template <typename Init>
void advance_paths(PathEnsemble& ens, const ProblemSpec& spec, double eps, std::size_t first, std::size_t last,
                   const YZFeedback& feedback, Init&& init) {
    const auto& dm = spec.dims();
    const auto& grid = ens.grid;
    const std::size_t P = ens.P;
    const double dt = grid.dt();
    const double sqdt = std::sqrt(dt);
    const bool penalized = spec.psi.kind() != ConvexKind::Zero;
    const bool indicator = spec.psi.is_indicator();
    const double shrink = eps / (eps + dt);
    const bool full = ens.mode == Recording::Full;
    const std::size_t chunks = (P + kChunk - 1) / kChunk;
    std::vector<double> excess(chunks, 0.0);

    parallel_chunks(P, [&](std::size_t ch, std::size_t b, std::size_t e) {
        const std::size_t cnt = e - b;
        std::vector<NormalStream> streams;
        streams.reserve(cnt);
        for (std::size_t p = b; p < e; ++p) streams.emplace_back(path_seed(ens.master_seed, p));
        std::vector<double> x(cnt * dm.n), v(cnt * dm.n, 0.0), jx(dm.n), dw(dm.d);
        for (std::size_t q = 0; q < cnt; ++q)
            for (std::size_t a = 0; a < dm.n; ++a) {
                if constexpr (std::is_same_v<std::decay_t<Init>, std::nullptr_t>) {
                    x[q * dm.n + a] = ens.X[(first * P + b + q) * dm.n + a];
                    v[q * dm.n + a] = ens.V[(first * P + b + q) * dm.n + a];
                } else {
                    x[q * dm.n + a] = init(b + q, a);
                }
            }
        StepBuffers buf(dm);
        auto store = [&](std::size_t i) {
            if (!full && i != grid.N) return;
            const std::size_t s = full ? i : 0;
            std::copy_n(x.data(), cnt * dm.n, ens.X.data() + (s * P + b) * dm.n);
            std::copy_n(v.data(), cnt * dm.n, ens.V.data() + (s * P + b) * dm.n);
        };
        auto track_penalty = [&](std::size_t q) {
            if (!penalized) return;
            Point xq(x.data() + q * dm.n, dm.n);
            spec.psi.prox_into(eps, xq, jx);
            double d2 = 0.0;
            for (std::size_t a = 0; a < dm.n; ++a) d2 += (xq[a] - jx[a]) * (xq[a] - jx[a]);
            ens.sup_penalty2[b + q] = std::max(ens.sup_penalty2[b + q], d2);
        };
        for (std::size_t q = 0; q < cnt; ++q) track_penalty(q);
        store(first);
        for (std::size_t i = first; i < last; ++i) {
            const double t = grid.t(i);
            for (std::size_t q = 0; q < cnt; ++q) {
                brownian_increment(streams[q], i, dm.d, sqdt, dw.data());
                if (full) std::copy_n(dw.data(), dm.d, ens.dW.data() + (i * P + b + q) * dm.d);
                MutPoint xq(x.data() + q * dm.n, dm.n);
                euler_predictor(spec, &feedback, i, t, dt, xq, dw, buf);
                if (penalized) {
                    prox_of_envelope_into(spec.psi, eps, dt, buf.xhat, xq);
                    for (std::size_t a = 0; a < dm.n; ++a) {
                        if (!std::isfinite(xq[a])) throw NonFiniteValue("simulate_forward: non-finite state");
                        // dt * grad psi_eps(X_{i+1}) = Xhat - X_{i+1}
                        v[q * dm.n + a] += buf.xhat[a] - xq[a];
                    }
                    if (indicator) {
                        const double lhs = spec.psi.domain_distance(xq);
                        const double rhs = spec.psi.domain_distance(buf.xhat) * shrink;
                        excess[ch] = std::max(excess[ch], lhs - rhs);
                    }
                    track_penalty(q);
                } else {
                    for (std::size_t a = 0; a < dm.n; ++a) {
                        if (!std::isfinite(buf.xhat[a])) throw NonFiniteValue("simulate_forward: non-finite state");
                        xq[a] = buf.xhat[a];
                    }
                }
            }
            store(i + 1);
        }
    });
    for (double ex : excess) ens.max_attraction_excess = std::max(ens.max_attraction_excess, ex);
}

}  // namespace detail

/// Euler-Maruyama with a semi-implicit proximal penalization step:
///   Xhat    = X_i + b dt + sigma dW_i
///   X_{i+1} = prox_of_envelope(psi, eps, dt, Xhat)
///   V_{i+1} = V_i + dt grad psi_eps(X_{i+1})
/// so that X_{i+1} + dt grad psi_eps(X_{i+1}) = Xhat. Increments are a pure
/// function of (master_seed, path, step, component).
inline PathEnsemble simulate_forward(const ProblemSpec& spec, double eps, const TimeGrid& grid, std::size_t P,
                                     std::uint64_t master_seed, const YZFeedback& feedback = {},
                                     const ForwardOptions& opt = {}) {
    spec.validate();
    grid.validate();
    detail::check_positive(eps, "simulate_forward: eps");
    if (P < 1) throw InvalidArgument("simulate_forward: P must be >= 1");
    detail::check_feedback(spec, &feedback);
    const auto& dm = spec.dims();
    if (opt.initial_states) {
        if (opt.initial_states->size() != P * dm.n)
            throw InvalidArgument("simulate_forward: initial_states must hold P * n values");
        for (std::size_t p = 0; p < P; ++p)
            if (!spec.psi.in_domain(Point(opt.initial_states->data() + p * dm.n, dm.n), kBoundaryTol))
                throw DomainError("simulate_forward: initial state outside Dom psi");
    }

    PathEnsemble ens;
    ens.grid = grid;
    ens.P = P;
    ens.dims = dm;
    ens.master_seed = master_seed;
    ens.mode = opt.mode;
    ens.eps = eps;
    const std::size_t nodes = ens.stored_nodes();
    ens.X.assign(nodes * P * dm.n, 0.0);
    ens.V.assign(nodes * P * dm.n, 0.0);
    if (opt.mode == Recording::Full) ens.dW.assign(grid.N * P * dm.d, 0.0);
    ens.sup_penalty2.assign(P, 0.0);
    const auto* init = opt.initial_states;
    detail::advance_paths(ens, spec, eps, 0, grid.N, feedback, [&](std::size_t p, std::size_t a) {
        return init ? (*init)[p * dm.n + a] : spec.x0[a];
    });
    return ens;
}

/// Re-simulates nodes first+1..last of a Full ensemble from its states at
/// node `first` with the same increments (used when the feedback changes on
/// one subinterval). sup_penalty2 keeps accumulating over the old values.
inline void resimulate_segment(PathEnsemble& ens, const ProblemSpec& spec, std::size_t first, std::size_t last,
                               const YZFeedback& feedback = {}) {
    if (ens.mode != Recording::Full) throw InvalidArgument("resimulate_segment: needs a Full ensemble");
    if (first > last || last > ens.grid.N) throw InvalidArgument("resimulate_segment: invalid node range");
    detail::check_feedback(spec, &feedback);
    detail::advance_paths(ens, spec, ens.eps, first, last, feedback, nullptr);
}

/// Independent oracle for indicator psi: the Euler predictor followed by the
/// exact Euclidean projection, on the same increments as simulate_forward.
/// V accumulates the projection residuals Xhat - Pi(Xhat).
inline PathEnsemble simulate_projected_oracle(const ProblemSpec& spec, const TimeGrid& grid, std::size_t P,
                                              std::uint64_t master_seed, const YZFeedback& feedback = {},
                                              Recording mode = Recording::Full) {
    spec.validate();
    grid.validate();
    if (!spec.psi.is_indicator() && spec.psi.kind() != ConvexKind::Zero)
        throw InvalidArgument("simulate_projected_oracle: psi must be an indicator");
    if (P < 1) throw InvalidArgument("simulate_projected_oracle: P must be >= 1");
    detail::check_feedback(spec, &feedback);
    const auto& dm = spec.dims();

    PathEnsemble ens;
    ens.grid = grid;
    ens.P = P;
    ens.dims = dm;
    ens.master_seed = master_seed;
    ens.mode = mode;
    const std::size_t nodes = ens.stored_nodes();
    ens.X.assign(nodes * P * dm.n, 0.0);
    ens.V.assign(nodes * P * dm.n, 0.0);
    if (mode == Recording::Full) ens.dW.assign(grid.N * P * dm.d, 0.0);
    ens.sup_penalty2.assign(P, 0.0);
    const double dt = grid.dt();
    const double sqdt = std::sqrt(dt);

    parallel_chunks(P, [&](std::size_t, std::size_t b, std::size_t e) {
        detail::StepBuffers buf(dm);
        std::vector<double> x(dm.n), v(dm.n), dw(dm.d);
        for (std::size_t p = b; p < e; ++p) {
            NormalStream s(path_seed(master_seed, p));
            std::copy(spec.x0.begin(), spec.x0.end(), x.begin());
            std::fill(v.begin(), v.end(), 0.0);
            auto store = [&](std::size_t i) {
                if (mode == Recording::Terminal && i != grid.N) return;
                const std::size_t sl = mode == Recording::Full ? i : 0;
                std::copy_n(x.data(), dm.n, ens.X.data() + (sl * P + p) * dm.n);
                std::copy_n(v.data(), dm.n, ens.V.data() + (sl * P + p) * dm.n);
            };
            store(0);
            for (std::size_t i = 0; i < grid.N; ++i) {
                detail::brownian_increment(s, i, dm.d, sqdt, dw.data());
                if (mode == Recording::Full) std::copy_n(dw.data(), dm.d, ens.dW.data() + (i * P + p) * dm.d);
                detail::euler_predictor(spec, &feedback, i, grid.t(i), dt, x, dw, buf);
                spec.psi.prox_into(1.0, buf.xhat, x);
                for (std::size_t a = 0; a < dm.n; ++a) v[a] += buf.xhat[a] - x[a];
                store(i + 1);
            }
        }
    });
    return ens;
}

/// Discrete total variation sum_i |V_{i+1} - V_i| of a path of n-vectors,
/// plus |V_0| when `include_initial` (the full BV norm).
inline double bv_norm(std::span<const double> path, std::size_t n = 1, bool include_initial = true) {
    if (n == 0 || path.size() % n != 0) throw InvalidArgument("bv_norm: path length must be a multiple of n");
    const std::size_t nodes = path.size() / n;
    double s = 0.0;
    if (nodes == 0) return 0.0;
    if (include_initial) s += detail::norm(path.subspan(0, n));
    for (std::size_t i = 0; i + 1 < nodes; ++i) {
        double d2 = 0.0;
        for (std::size_t a = 0; a < n; ++a) {
            const double d = path[(i + 1) * n + a] - path[i * n + a];
            d2 += d * d;
        }
        s += std::sqrt(d2);
    }
    return s;
}

/// Mean and standard error of a per-path sample.
struct SampleStats {
    double mean = 0.0;
    double std_err = 0.0;
    double sd = 0.0;
    std::size_t count = 0;
};

/// Chunk-ordered two-pass mean and standard error of term(p), p < P.
template <typename Term>
SampleStats sample_stats(std::size_t P, Term&& term) {
    SampleStats s;
    s.count = P;
    if (P == 0) return s;
    s.mean = deterministic_sum(P, term) / static_cast<double>(P);
    const double m = s.mean;
    const double ss = deterministic_sum(P, [&](std::size_t p) {
        const double d = term(p) - m;
        return d * d;
    });
    s.sd = P > 1 ? std::sqrt(ss / static_cast<double>(P - 1)) : 0.0;
    s.std_err = s.sd / std::sqrt(static_cast<double>(P));
    return s;
}

/// Statistics of component a of X_T.
inline SampleStats terminal_stats(const PathEnsemble& ens, std::size_t a = 0) {
    return sample_stats(ens.P, [&](std::size_t p) { return ens.x_terminal(p)[a]; });
}

/// Per-node mean and variance of X and V (component-wise, node-major).
struct EnsembleSummary {
    std::vector<double> t;
    std::vector<double> x_mean, x_var, v_mean, v_var;
    std::size_t n = 1;
};

inline EnsembleSummary summarize(const PathEnsemble& ens) {
    EnsembleSummary s;
    s.n = ens.dims.n;
    const std::size_t nodes = ens.stored_nodes();
    for (std::size_t k = 0; k < nodes; ++k) {
        const std::size_t i = ens.mode == Recording::Full ? k : ens.grid.N;
        s.t.push_back(ens.grid.t(i));
        for (std::size_t a = 0; a < ens.dims.n; ++a) {
            const auto xs = sample_stats(ens.P, [&](std::size_t p) { return ens.x(p, i)[a]; });
            const auto vs = sample_stats(ens.P, [&](std::size_t p) { return ens.v(p, i)[a]; });
            s.x_mean.push_back(xs.mean);
            s.x_var.push_back(xs.sd * xs.sd);
            s.v_mean.push_back(vs.mean);
            s.v_var.push_back(vs.sd * vs.sd);
        }
    }
    return s;
}

/// E sup_i |X_i^proj - X_i^eps|^2 between the projection oracle and the
/// penalized scheme on shared increments, computed path by path without
/// storing trajectories. Decoupled coefficients only.
inline SampleStats projection_sup_gap(const ProblemSpec& spec, double eps, const TimeGrid& grid, std::size_t P,
                                      std::uint64_t master_seed) {
    spec.validate();
    grid.validate();
    detail::check_positive(eps, "projection_sup_gap: eps");
    if (spec.coeffs.coupled) throw InvalidArgument("projection_sup_gap: decoupled coefficients only");
    if (!spec.psi.is_indicator() && spec.psi.kind() != ConvexKind::Zero)
        throw InvalidArgument("projection_sup_gap: psi must be an indicator");
    const auto& dm = spec.dims();
    const double dt = grid.dt();
    const double sqdt = std::sqrt(dt);
    std::vector<double> sup(P, 0.0);
    parallel_chunks(P, [&](std::size_t, std::size_t b, std::size_t e) {
        detail::StepBuffers bp(dm), be(dm);
        std::vector<double> xp(dm.n), xe(dm.n), dw(dm.d);
        for (std::size_t p = b; p < e; ++p) {
            NormalStream s(path_seed(master_seed, p));
            std::copy(spec.x0.begin(), spec.x0.end(), xp.begin());
            std::copy(spec.x0.begin(), spec.x0.end(), xe.begin());
            double m = 0.0;
            for (std::size_t i = 0; i < grid.N; ++i) {
                detail::brownian_increment(s, i, dm.d, sqdt, dw.data());
                detail::euler_predictor(spec, nullptr, i, grid.t(i), dt, xp, dw, bp);
                detail::euler_predictor(spec, nullptr, i, grid.t(i), dt, xe, dw, be);
                spec.psi.prox_into(1.0, bp.xhat, xp);
                prox_of_envelope_into(spec.psi, eps, dt, be.xhat, xe);
                double d2 = 0.0;
                for (std::size_t a = 0; a < dm.n; ++a) d2 += (xp[a] - xe[a]) * (xp[a] - xe[a]);
                m = std::max(m, d2);
            }
            sup[p] = m;
        }
    });
    return sample_stats(P, [&](std::size_t p) { return sup[p]; });
}

}  // namespace fbsvi
