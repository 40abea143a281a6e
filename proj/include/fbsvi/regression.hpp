#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fbsvi/convex.hpp"
#include "fbsvi/error.hpp"
#include "fbsvi/parallel.hpp"

namespace fbsvi {

/// Multi-indices of total degree <= degree in n variables, graded order.
inline std::vector<std::vector<int>> total_degree_exponents(std::size_t n, int degree) {
    std::vector<std::vector<int>> out;
    std::vector<int> e(n, 0);
    for (int deg = 0; deg <= degree; ++deg) {
        // Enumerate compositions of deg into n parts.
        std::function<void(std::size_t, int)> rec = [&](std::size_t k, int left) {
            if (k + 1 == n) {
                e[k] = left;
                out.push_back(e);
                return;
            }
            for (int v = left; v >= 0; --v) {
                e[k] = v;
                rec(k + 1, left - v);
            }
        };
        rec(0, deg);
    }
    return out;
}

/// Least-squares polynomial model x -> R^r on standardized inputs
/// (x - center) / scale.
class RegressionModel {
public:
    RegressionModel() = default;

    std::size_t input_dim() const { return center_.size(); }
    std::size_t output_dim() const { return static_cast<std::size_t>(coef_.cols()); }
    std::size_t basis_size() const { return exps_.size(); }
    int degree() const { return degree_; }
    const Eigen::MatrixXd& coefficients() const { return coef_; }
    const std::vector<double>& center() const { return center_; }
    const std::vector<double>& scale() const { return scale_; }

    void basis(Point x, double* out) const {
        const std::size_t n = center_.size();
        double z[8];
        std::vector<double> zv;
        double* zp = z;
        if (n > 8) {
            zv.resize(n);
            zp = zv.data();
        }
        for (std::size_t a = 0; a < n; ++a) zp[a] = (x[a] - center_[a]) / scale_[a];
        for (std::size_t k = 0; k < exps_.size(); ++k) {
            double v = 1.0;
            for (std::size_t a = 0; a < n; ++a)
                for (int j = 0; j < exps_[k][a]; ++j) v *= zp[a];
            out[k] = v;
        }
    }

    void predict(Point x, MutPoint out) const {
        double phi[64];
        std::vector<double> pv;
        double* pp = phi;
        if (exps_.size() > 64) {
            pv.resize(exps_.size());
            pp = pv.data();
        }
        basis(x, pp);
        for (Eigen::Index c = 0; c < coef_.cols(); ++c) {
            double s = 0.0;
            for (std::size_t k = 0; k < exps_.size(); ++k) s += pp[k] * coef_(static_cast<Eigen::Index>(k), c);
            out[static_cast<std::size_t>(c)] = s;
        }
    }

    double predict1(Point x) const {
        double v = 0.0;
        predict(x, MutPoint(&v, 1));
        return v;
    }

    /// Fits targets y(p) (r values written by target(p, out)) against the
    /// states x(p) (n values) for p < P. Gram blocks are accumulated per fixed
    /// chunk and summed in chunk order. If the standardized Gram matrix is
    /// numerically singular the degree is lowered; the returned string is
    /// empty or describes the reduction.
    template <typename XFn, typename TargetFn>
    std::string fit(std::size_t P, std::size_t n, std::size_t r, int degree, XFn&& xs, TargetFn&& target) {
        if (P == 0) throw InvalidArgument("regression: no samples");
        if (degree < 0) throw InvalidArgument("regression: degree must be >= 0");
        center_.assign(n, 0.0);
        scale_.assign(n, 1.0);
        // Standardization, chunk-ordered.
        const std::size_t chunks = (P + kChunk - 1) / kChunk;
        {
            std::vector<std::vector<double>> s1(chunks, std::vector<double>(n, 0.0));
            parallel_chunks(P, [&](std::size_t c, std::size_t b, std::size_t e) {
                for (std::size_t p = b; p < e; ++p) {
                    Point x = xs(p);
                    for (std::size_t a = 0; a < n; ++a) s1[c][a] += x[a];
                }
            });
            for (std::size_t a = 0; a < n; ++a) {
                double s = 0.0;
                for (std::size_t c = 0; c < chunks; ++c) s += s1[c][a];
                center_[a] = s / static_cast<double>(P);
            }
            std::vector<std::vector<double>> s2(chunks, std::vector<double>(n, 0.0));
            parallel_chunks(P, [&](std::size_t c, std::size_t b, std::size_t e) {
                for (std::size_t p = b; p < e; ++p) {
                    Point x = xs(p);
                    for (std::size_t a = 0; a < n; ++a) s2[c][a] += (x[a] - center_[a]) * (x[a] - center_[a]);
                }
            });
            for (std::size_t a = 0; a < n; ++a) {
                double s = 0.0;
                for (std::size_t c = 0; c < chunks; ++c) s += s2[c][a];
                const double sd = std::sqrt(s / static_cast<double>(P));
                scale_[a] = sd > 1e-300 ? sd : 1.0;
            }
        }

        std::string note;
        for (int deg = degree; deg >= 0; --deg) {
            exps_ = total_degree_exponents(n, deg);
            degree_ = deg;
            const auto k = static_cast<Eigen::Index>(exps_.size());
            std::vector<Eigen::MatrixXd> G(chunks), B(chunks);
            parallel_chunks(P, [&](std::size_t c, std::size_t b, std::size_t e) {
                Eigen::MatrixXd g = Eigen::MatrixXd::Zero(k, k);
                Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(k, static_cast<Eigen::Index>(r));
                Eigen::VectorXd phi(k);
                std::vector<double> y(r);
                for (std::size_t p = b; p < e; ++p) {
                    basis(xs(p), phi.data());
                    target(p, MutPoint(y.data(), r));
                    g.selfadjointView<Eigen::Lower>().rankUpdate(phi);
                    for (std::size_t j = 0; j < r; ++j) rhs.col(static_cast<Eigen::Index>(j)) += y[j] * phi;
                }
                G[c] = std::move(g);
                B[c] = std::move(rhs);
            });
            Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(k, k);
            Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(k, static_cast<Eigen::Index>(r));
            for (std::size_t c = 0; c < chunks; ++c) {
                gram += G[c];
                rhs += B[c];
            }
            Eigen::MatrixXd sym = gram.selfadjointView<Eigen::Lower>();
            gram = sym / static_cast<double>(P);
            rhs /= static_cast<double>(P);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
            const double lmin = es.eigenvalues().minCoeff();
            const double lmax = es.eigenvalues().maxCoeff();
            if (deg > 0 && !(lmin > 1e-10 * lmax)) continue;
            coef_ = gram.ldlt().solve(rhs);
            if (!coef_.allFinite()) throw NonFiniteValue("regression: non-finite coefficients");
            if (deg < degree)
                note = "basis degree reduced from " + std::to_string(degree) + " to " + std::to_string(deg) +
                       " (rank-deficient design)";
            return note;
        }
        return note;
    }

private:
    std::vector<double> center_, scale_;
    std::vector<std::vector<int>> exps_;
    int degree_ = 0;
    Eigen::MatrixXd coef_;
};

}  // namespace fbsvi
