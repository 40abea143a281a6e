#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fbsvi/error.hpp"
#include "fbsvi/extended_real.hpp"

namespace fbsvi {

using Point = std::span<const double>;
using MutPoint = std::span<double>;

/// Absolute tolerance below which a coordinate is considered to sit on the
/// boundary of an indicator domain.
inline constexpr double kBoundaryTol = 1e-12;

enum class ConvexKind {
    Zero,               ///< f = 0 on all of R^n
    IndicatorBox,       ///< indicator of a product of closed (possibly half-infinite) intervals
    IndicatorBall,      ///< indicator of the closed Euclidean ball of radius r
    Quadratic,          ///< c |x|^2 / 2
    PowerPositivePart,  ///< c max(x, 0)^2, one-dimensional
    AbsValue,           ///< c |x|, one-dimensional
    Custom,             ///< user-supplied value and proximal map
};

inline std::string to_string(ConvexKind k) {
    switch (k) {
        case ConvexKind::Zero: return "zero";
        case ConvexKind::IndicatorBox: return "indicator-box";
        case ConvexKind::IndicatorBall: return "indicator-ball";
        case ConvexKind::Quadratic: return "quadratic";
        case ConvexKind::PowerPositivePart: return "power-positive-part";
        case ConvexKind::AbsValue: return "abs-value";
        case ConvexKind::Custom: return "custom";
    }
    return "unknown";
}

namespace detail {

inline double dot(Point a, Point b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double norm(Point a) { return std::sqrt(dot(a, a)); }

inline double dist(Point a, Point b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

inline bool all_finite(Point a) {
    return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace detail

/// A proper, convex, lower semicontinuous function from a fixed catalog.
///
/// Every catalog member has a closed-form proximal map, so Moreau envelopes,
/// Yosida gradients and resolvents are exact. Values are immutable after
/// construction.
class ConvexFn {
public:
    using ValueFn = std::function<ExtendedReal(Point)>;
    using ProxFn = std::function<void(double, Point, MutPoint)>;

    static ConvexFn zero(std::size_t dim) {
        ConvexFn f(ConvexKind::Zero, dim);
        return f;
    }

    /// Indicator of prod_k [lower_k, upper_k]; use +-infinity for open ends.
    static ConvexFn box(std::vector<double> lower, std::vector<double> upper) {
        if (lower.empty() || lower.size() != upper.size())
            throw InvalidArgument("box: lower/upper must be non-empty and of equal length");
        for (std::size_t k = 0; k < lower.size(); ++k) {
            if (std::isnan(lower[k]) || std::isnan(upper[k]) || lower[k] > upper[k])
                throw InvalidArgument("box: need lower <= upper in every coordinate");
        }
        ConvexFn f(ConvexKind::IndicatorBox, lower.size());
        f.lower_ = std::move(lower);
        f.upper_ = std::move(upper);
        return f;
    }

    /// One-dimensional indicator of [a, b].
    static ConvexFn interval(double a, double b) { return box({a}, {b}); }

    static ConvexFn ball(std::size_t dim, double radius) {
        if (!(radius > 0.0) || !std::isfinite(radius))
            throw InvalidArgument("ball: radius must be positive and finite");
        ConvexFn f(ConvexKind::IndicatorBall, dim);
        f.radius_ = radius;
        return f;
    }

    static ConvexFn quadratic(std::size_t dim, double c) {
        if (!(c >= 0.0) || !std::isfinite(c)) throw InvalidArgument("quadratic: need c >= 0");
        ConvexFn f(ConvexKind::Quadratic, dim);
        f.coef_ = c;
        return f;
    }

    static ConvexFn power_positive_part(double c, int p = 2) {
        if (p != 2) throw UnsupportedFunction("power-positive-part: only p = 2 is in the catalog");
        if (!(c >= 0.0) || !std::isfinite(c)) throw InvalidArgument("power-positive-part: need c >= 0");
        ConvexFn f(ConvexKind::PowerPositivePart, 1);
        f.coef_ = c;
        f.power_ = p;
        return f;
    }

    static ConvexFn abs_value(double c) {
        if (!(c >= 0.0) || !std::isfinite(c)) throw InvalidArgument("abs-value: need c >= 0");
        ConvexFn f(ConvexKind::AbsValue, 1);
        f.coef_ = c;
        return f;
    }

    /// Extension point for a user-supplied function with a known prox.
    /// Domain geometry is unknown for such functions, so the directional
    /// subdifferential operations reject them.
    static ConvexFn custom(std::size_t dim, ValueFn value, ProxFn prox) {
        if (!value || !prox) throw InvalidArgument("custom: value and prox must be callable");
        ConvexFn f(ConvexKind::Custom, dim);
        f.custom_value_ = std::move(value);
        f.custom_prox_ = std::move(prox);
        return f;
    }

    ConvexKind kind() const { return kind_; }
    std::size_t dim() const { return dim_; }
    const std::vector<double>& lower() const { return lower_; }
    const std::vector<double>& upper() const { return upper_; }
    double radius() const { return radius_; }
    double coefficient() const { return coef_; }
    int power() const { return power_; }

    bool is_indicator() const {
        return kind_ == ConvexKind::IndicatorBox || kind_ == ConvexKind::IndicatorBall;
    }

    /// True when Dom f is all of R^n.
    bool full_domain() const {
        if (kind_ == ConvexKind::IndicatorBall) return false;
        if (kind_ == ConvexKind::IndicatorBox) {
            for (std::size_t k = 0; k < dim_; ++k)
                if (std::isfinite(lower_[k]) || std::isfinite(upper_[k])) return false;
        }
        return true;
    }

    std::string name() const {
        std::string s = to_string(kind_) + "(dim=" + std::to_string(dim_);
        switch (kind_) {
            case ConvexKind::IndicatorBox:
                for (std::size_t k = 0; k < dim_; ++k)
                    s += ", [" + std::to_string(lower_[k]) + "," + std::to_string(upper_[k]) + "]";
                break;
            case ConvexKind::IndicatorBall: s += ", r=" + std::to_string(radius_); break;
            case ConvexKind::Quadratic:
            case ConvexKind::AbsValue:
            case ConvexKind::PowerPositivePart: s += ", c=" + std::to_string(coef_); break;
            default: break;
        }
        return s + ")";
    }

    void check_dim(Point x) const {
        if (x.size() != dim_)
            throw InvalidArgument(name() + ": point has dimension " + std::to_string(x.size()));
    }

    ExtendedReal value(Point x) const {
        check_dim(x);
        switch (kind_) {
            case ConvexKind::Zero: return 0.0;
            case ConvexKind::IndicatorBox:
            case ConvexKind::IndicatorBall:
                return in_domain(x) ? ExtendedReal(0.0) : ExtendedReal::pos_inf();
            case ConvexKind::Quadratic: return 0.5 * coef_ * detail::dot(x, x);
            case ConvexKind::PowerPositivePart: {
                const double p = std::max(x[0], 0.0);
                return coef_ * p * p;
            }
            case ConvexKind::AbsValue: return coef_ * std::abs(x[0]);
            case ConvexKind::Custom: return custom_value_(x);
        }
        throw UnsupportedFunction("value: unknown convex kind");
    }

    /// Membership in Dom f, allowing an absolute slack `tol` per coordinate.
    bool in_domain(Point x, double tol = 0.0) const {
        check_dim(x);
        switch (kind_) {
            case ConvexKind::IndicatorBox:
                for (std::size_t k = 0; k < dim_; ++k)
                    if (x[k] < lower_[k] - tol || x[k] > upper_[k] + tol) return false;
                return true;
            case ConvexKind::IndicatorBall: return detail::norm(x) <= radius_ + tol;
            case ConvexKind::Custom: return value(x).is_finite();
            default: return true;
        }
    }

    /// Euclidean distance from x to the closed domain.
    double domain_distance(Point x) const {
        check_dim(x);
        switch (kind_) {
            case ConvexKind::IndicatorBox: {
                double s = 0.0;
                for (std::size_t k = 0; k < dim_; ++k) {
                    const double d = std::max({lower_[k] - x[k], x[k] - upper_[k], 0.0});
                    s += d * d;
                }
                return std::sqrt(s);
            }
            case ConvexKind::IndicatorBall: return std::max(detail::norm(x) - radius_, 0.0);
            case ConvexKind::Custom:
                throw UnsupportedFunction("domain_distance: custom functions carry no domain geometry");
            default: return 0.0;
        }
    }

    /// Distance from a point of the domain to the domain boundary;
    /// +infinity when the domain is the whole space.
    double boundary_distance(Point x) const {
        check_dim(x);
        switch (kind_) {
            case ConvexKind::IndicatorBox: {
                double d = std::numeric_limits<double>::infinity();
                for (std::size_t k = 0; k < dim_; ++k)
                    d = std::min({d, x[k] - lower_[k], upper_[k] - x[k]});
                return std::max(d, 0.0);
            }
            case ConvexKind::IndicatorBall: return std::max(radius_ - detail::norm(x), 0.0);
            case ConvexKind::Custom:
                throw UnsupportedFunction("boundary_distance: custom functions carry no domain geometry");
            default: return std::numeric_limits<double>::infinity();
        }
    }

    /// argmin_w |w - v|^2 / (2t) + f(w), written into `out` (may alias v).
    void prox_into(double t, Point v, MutPoint out) const {
        switch (kind_) {
            case ConvexKind::Zero:
                std::copy(v.begin(), v.end(), out.begin());
                return;
            case ConvexKind::IndicatorBox:
                for (std::size_t k = 0; k < dim_; ++k) out[k] = std::clamp(v[k], lower_[k], upper_[k]);
                return;
            case ConvexKind::IndicatorBall: {
                const double r = detail::norm(v);
                double s = r > radius_ ? radius_ / r : 1.0;
                for (std::size_t k = 0; k < dim_; ++k) out[k] = s * v[k];
                // rounding may leave |out| a few ulps above the radius
                while (s < 1.0 && detail::norm(Point(out.data(), dim_)) > radius_) {
                    s = std::nextafter(s, 0.0);
                    for (std::size_t k = 0; k < dim_; ++k) out[k] = s * v[k];
                }
                return;
            }
            case ConvexKind::Quadratic: {
                const double s = 1.0 / (1.0 + t * coef_);
                for (std::size_t k = 0; k < dim_; ++k) out[k] = s * v[k];
                return;
            }
            case ConvexKind::PowerPositivePart:
                // Stationarity on w > 0: w - v + 2 t c w = 0.
                out[0] = v[0] > 0.0 ? v[0] / (1.0 + 2.0 * t * coef_) : v[0];
                return;
            case ConvexKind::AbsValue: {
                const double thr = t * coef_;
                out[0] = v[0] > thr ? v[0] - thr : (v[0] < -thr ? v[0] + thr : 0.0);
                return;
            }
            case ConvexKind::Custom:
                custom_prox_(t, v, out);
                return;
        }
        throw UnsupportedFunction("prox: unknown convex kind");
    }

private:
    ConvexFn(ConvexKind kind, std::size_t dim) : kind_(kind), dim_(dim) {
        if (dim == 0) throw InvalidArgument("convex function dimension must be positive");
    }

    ConvexKind kind_;
    std::size_t dim_;
    std::vector<double> lower_;
    std::vector<double> upper_;
    double radius_ = 0.0;
    double coef_ = 0.0;
    int power_ = 0;
    ValueFn custom_value_;
    ProxFn custom_prox_;
};

namespace detail {

inline void check_positive(double t, const char* what) {
    if (!(t > 0.0) || !std::isfinite(t)) throw InvalidArgument(std::string(what) + " must be positive and finite");
}

inline void check_point(const ConvexFn& f, Point v) {
    f.check_dim(v);
    if (!all_finite(v)) throw InvalidArgument("point has non-finite coordinates");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Proximal maps and Yosida quantities. The `_into` variants are
// allocation-free for use in path-simulation kernels.
// ---------------------------------------------------------------------------

inline void prox_into(const ConvexFn& f, double t, Point v, MutPoint out) {
    detail::check_positive(t, "prox: t");
    detail::check_point(f, v);
    f.prox_into(t, v, out);
}

inline std::vector<double> prox(const ConvexFn& f, double t, Point v) {
    std::vector<double> w(v.size());
    prox_into(f, t, v, w);
    return w;
}

inline double prox(const ConvexFn& f, double t, double v) {
    double w = 0.0;
    prox_into(f, t, Point(&v, 1), MutPoint(&w, 1));
    return w;
}

/// Resolvent J_{eps,f}(u) = u - eps * grad f_eps(u), i.e. the prox with step eps.
inline std::vector<double> resolvent_J(const ConvexFn& f, double eps, Point u) { return prox(f, eps, u); }
inline double resolvent_J(const ConvexFn& f, double eps, double u) { return prox(f, eps, u); }

/// Yosida gradient (u - J_{eps,f}(u)) / eps, written into `out`.
inline void yosida_gradient_into(const ConvexFn& f, double eps, Point u, MutPoint out) {
    prox_into(f, eps, u, out);
    for (std::size_t k = 0; k < u.size(); ++k) out[k] = (u[k] - out[k]) / eps;
}

inline std::vector<double> yosida_gradient(const ConvexFn& f, double eps, Point u) {
    std::vector<double> g(u.size());
    yosida_gradient_into(f, eps, u, g);
    return g;
}

inline double yosida_gradient(const ConvexFn& f, double eps, double u) {
    double g = 0.0;
    yosida_gradient_into(f, eps, Point(&u, 1), MutPoint(&g, 1));
    return g;
}

/// Moreau envelope f_eps(u) = inf_v |u - v|^2 / (2 eps) + f(v), evaluated at the
/// minimizer J_{eps,f}(u).
inline double moreau_envelope(const ConvexFn& f, double eps, Point u) {
    const auto j = prox(f, eps, u);
    const ExtendedReal fj = f.value(j);
    if (!fj.is_finite()) throw NonFiniteValue("moreau_envelope: f is infinite at its own prox point");
    return detail::dist(u, j) * detail::dist(u, j) / (2.0 * eps) + fj.value();
}

inline double moreau_envelope(const ConvexFn& f, double eps, double u) {
    return moreau_envelope(f, eps, Point(&u, 1));
}

/// Solves w + t * grad f_eps(w) = v, using the composition identity
/// w = v + t/(t+eps) * (prox(f, t+eps, v) - v). Writes into `out`.
inline void prox_of_envelope_into(const ConvexFn& f, double eps, double t, Point v, MutPoint out) {
    detail::check_positive(eps, "prox_of_envelope: eps");
    detail::check_positive(t, "prox_of_envelope: t");
    if (f.kind() == ConvexKind::Zero) {
        std::copy(v.begin(), v.end(), out.begin());
        return;
    }
    prox_into(f, t + eps, v, out);
    const double w = t / (t + eps);
    for (std::size_t k = 0; k < v.size(); ++k) out[k] = v[k] + w * (out[k] - v[k]);
}

inline std::vector<double> prox_of_envelope(const ConvexFn& f, double eps, double t, Point v) {
    std::vector<double> w(v.size());
    prox_of_envelope_into(f, eps, t, v, w);
    return w;
}

inline double prox_of_envelope(const ConvexFn& f, double eps, double t, double v) {
    double w = 0.0;
    prox_of_envelope_into(f, eps, t, Point(&v, 1), MutPoint(&w, 1));
    return w;
}

// ---------------------------------------------------------------------------
// Directional subdifferential functionals and one-sided derivatives.
// ---------------------------------------------------------------------------

/// Result of the lower directional functional inf_{x* in d psi(x)} <x*, q>.
struct DirectionalValue {
    ExtendedReal value;
    /// False when x is on the boundary and some outward unit normal n has
    /// <n, q> <= 0; the cone infimum is still returned but the liminf
    /// definition is not known to coincide with it there.
    bool lemma_regime = true;
};

namespace detail {

// Active constraints at a boundary point: each entry is an extreme ray of the
// normal cone, returned as (coordinate or -1 for the ball normal, sign).
struct ActiveRay {
    int coord;
    double sign;
};

inline std::vector<ActiveRay> active_rays(const ConvexFn& psi, Point x) {
    std::vector<ActiveRay> rays;
    if (psi.kind() == ConvexKind::IndicatorBox) {
        for (std::size_t k = 0; k < psi.dim(); ++k) {
            if (std::isfinite(psi.lower()[k]) && std::abs(x[k] - psi.lower()[k]) <= kBoundaryTol)
                rays.push_back({static_cast<int>(k), -1.0});
            if (std::isfinite(psi.upper()[k]) && std::abs(x[k] - psi.upper()[k]) <= kBoundaryTol)
                rays.push_back({static_cast<int>(k), +1.0});
        }
    } else if (psi.kind() == ConvexKind::IndicatorBall) {
        if (std::abs(norm(x) - psi.radius()) <= kBoundaryTol) rays.push_back({-1, +1.0});
    }
    return rays;
}

inline double ray_dot(const ActiveRay& r, Point x, Point q, double ball_radius) {
    if (r.coord >= 0) return r.sign * q[static_cast<std::size_t>(r.coord)];
    return dot(x, q) / ball_radius;  // unit outward normal x / |x|
}

}  // namespace detail

/// inf_{x* in d psi(x)} <x*, q> (the lower directional functional at x).
///
/// In the interior this is <grad psi(x), q> (0 for indicators). On the
/// boundary of an indicator it is the infimum over the outward normal cone,
/// which is 0 or -inf.
inline DirectionalValue partial_psi_star(const ConvexFn& psi, Point x, Point q) {
    psi.check_dim(x);
    psi.check_dim(q);
    if (!detail::all_finite(x) || !detail::all_finite(q))
        throw InvalidArgument("partial_psi_star: non-finite input");
    switch (psi.kind()) {
        case ConvexKind::Zero: return {0.0, true};
        case ConvexKind::Quadratic: return {psi.coefficient() * detail::dot(x, q), true};
        case ConvexKind::PowerPositivePart:
            return {2.0 * psi.coefficient() * std::max(x[0], 0.0) * q[0], true};
        case ConvexKind::AbsValue: {
            const double c = psi.coefficient();
            if (x[0] > 0.0) return {c * q[0], true};
            if (x[0] < 0.0) return {-c * q[0], true};
            return {-c * std::abs(q[0]), true};
        }
        case ConvexKind::IndicatorBox:
        case ConvexKind::IndicatorBall: {
            if (!psi.in_domain(x, kBoundaryTol))
                throw DomainError("partial_psi_star: x outside Dom psi");
            const auto rays = detail::active_rays(psi, x);
            if (rays.empty()) return {0.0, true};
            bool unbounded_below = false;
            bool regime = true;
            for (const auto& r : rays) {
                const double s = detail::ray_dot(r, x, q, psi.radius());
                if (s < 0.0) unbounded_below = true;
                if (!(s > 0.0)) regime = false;
            }
            return {unbounded_below ? ExtendedReal::neg_inf() : ExtendedReal(0.0), regime};
        }
        case ConvexKind::Custom: break;
    }
    throw UnsupportedFunction("partial_psi_star: unsupported kind " + to_string(psi.kind()));
}

inline DirectionalValue partial_psi_star(const ConvexFn& psi, double x, double q) {
    return partial_psi_star(psi, Point(&x, 1), Point(&q, 1));
}

/// Upper directional functional, defined as -partial_psi_star(x, -q).
inline DirectionalValue partial_psi_upper(const ConvexFn& psi, Point x, Point q) {
    std::vector<double> mq(q.begin(), q.end());
    for (auto& v : mq) v = -v;
    auto r = partial_psi_star(psi, x, mq);
    r.value = -r.value;
    return r;
}

inline DirectionalValue partial_psi_upper(const ConvexFn& psi, double x, double q) {
    return partial_psi_upper(psi, Point(&x, 1), Point(&q, 1));
}

/// Left and right derivatives (phi'_-(y), phi'_+(y)) of a one-dimensional phi.
inline std::pair<ExtendedReal, ExtendedReal> one_sided_derivatives(const ConvexFn& phi, double y) {
    if (phi.dim() != 1) throw InvalidArgument("one_sided_derivatives: phi must be one-dimensional");
    if (!std::isfinite(y)) throw InvalidArgument("one_sided_derivatives: y must be finite");
    const double c = phi.coefficient();
    switch (phi.kind()) {
        case ConvexKind::Zero: return {0.0, 0.0};
        case ConvexKind::Quadratic: return {c * y, c * y};
        case ConvexKind::PowerPositivePart: {
            const double d = 2.0 * c * std::max(y, 0.0);
            return {d, d};
        }
        case ConvexKind::AbsValue:
            if (y > 0.0) return {c, c};
            if (y < 0.0) return {-c, -c};
            return {-c, c};
        case ConvexKind::IndicatorBox:
        case ConvexKind::IndicatorBall: {
            const double lo = phi.kind() == ConvexKind::IndicatorBox ? phi.lower()[0] : -phi.radius();
            const double hi = phi.kind() == ConvexKind::IndicatorBox ? phi.upper()[0] : phi.radius();
            if (y < lo - kBoundaryTol || y > hi + kBoundaryTol)
                throw DomainError("one_sided_derivatives: y outside Dom phi");
            const bool at_lo = std::isfinite(lo) && std::abs(y - lo) <= kBoundaryTol;
            const bool at_hi = std::isfinite(hi) && std::abs(y - hi) <= kBoundaryTol;
            return {at_lo ? ExtendedReal::neg_inf() : ExtendedReal(0.0),
                    at_hi ? ExtendedReal::pos_inf() : ExtendedReal(0.0)};
        }
        case ConvexKind::Custom: break;
    }
    throw UnsupportedFunction("one_sided_derivatives: unsupported kind " + to_string(phi.kind()));
}

}  // namespace fbsvi
