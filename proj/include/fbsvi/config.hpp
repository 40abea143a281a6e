#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fbsvi/convex.hpp"
#include "fbsvi/error.hpp"
#include "fbsvi/presets.hpp"
#include "fbsvi/problem.hpp"

namespace fbsvi {

/// Raised when a configuration does not match the schema. Carries every
/// diagnostic found, each prefixed with its JSON path.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> diagnostics)
        : Error(join(diagnostics)), diagnostics_(std::move(diagnostics)) {}
    const std::vector<std::string>& diagnostics() const { return diagnostics_; }

private:
    static std::string join(const std::vector<std::string>& d) {
        std::string s = "invalid configuration:";
        for (const auto& x : d) s += "\n  " + x;
        return s;
    }
    std::vector<std::string> diagnostics_;
};

inline const std::vector<std::string>& study_names() {
    static const std::vector<std::string> names{"compat", "forward", "fbsde",        "pde",
                                                "crosscheck", "rate", "supersolution"};
    return names;
}

struct McSettings {
    std::size_t N = 200;
    std::size_t P = 10000;
    int degree = 3;
};

struct PdeSettings {
    double x_min = -5.0;
    double x_max = 5.0;
    std::size_t nx = 200;
    std::size_t nt = 200;
    double theta = 0.5;
};

struct PicardSettings {
    double tol = 1e-3;
    std::size_t max_iter = 20;
    std::size_t outer_sweeps = 2;
};

struct SupersolutionSettings {
    double K_tilde = 1.0;
    double A_tilde = 1.0;
    double r = 0.1;
    double x_min = -10.0;
    double x_max = 10.0;
    std::size_t nx = 201;
    std::size_t nt = 51;
    double b0 = 1.0;
    double s0 = 1.0;
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::optional<std::uint64_t> seed;
    std::size_t threads = 0;
    std::string output_dir = "runs";
    std::vector<std::string> studies;
    std::string preset;  ///< empty for a literal problem
    ProblemSpec problem;
    double eps = 1e-3;
    std::vector<double> eps_schedule{1e-1, 1e-2, 1e-3};
    double eps_ref = 1e-4;
    McSettings mc;
    PdeSettings pde;
    PicardSettings picard;
    SupersolutionSettings supersolution;
    std::vector<std::pair<double, double>> probes;
    nlohmann::ordered_json source;  ///< the validated input, echoed into the manifest

    bool wants(const std::string& study) const {
        return std::find(studies.begin(), studies.end(), study) != studies.end();
    }
    bool stochastic() const {
        for (const char* s : {"forward", "fbsde", "crosscheck", "rate"})
            if (wants(s)) return true;
        return false;
    }
};

namespace detail {

using cjson = nlohmann::ordered_json;

/// Schema walker: every accessor records a diagnostic instead of throwing,
/// so that a single pass reports all problems.
class SchemaReader {
public:
    std::vector<std::string> errors;

    void allow_keys(const cjson& obj, const std::string& path, std::initializer_list<const char*> keys) {
        if (!obj.is_object()) {
            errors.push_back(path + ": expected an object");
            return;
        }
        std::set<std::string> ok(keys.begin(), keys.end());
        for (auto it = obj.begin(); it != obj.end(); ++it)
            if (!ok.count(it.key())) errors.push_back(path + "." + it.key() + ": unknown key");
    }

    const cjson* get(const cjson& obj, const char* key) const {
        if (!obj.is_object()) return nullptr;
        auto it = obj.find(key);
        return it == obj.end() ? nullptr : &*it;
    }

    /// Numbers, or the strings "inf" / "-inf".
    std::optional<double> number(const cjson& v, const std::string& path) {
        if (v.is_number()) return v.get<double>();
        if (v.is_string()) {
            const auto s = v.get<std::string>();
            if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
            if (s == "-inf") return -std::numeric_limits<double>::infinity();
        }
        errors.push_back(path + ": expected a number");
        return std::nullopt;
    }

    void read(const cjson& obj, const std::string& path, const char* key, double& out, bool finite = true,
              bool positive = false) {
        const cjson* v = get(obj, key);
        if (!v) return;
        const std::string p = path + "." + key;
        if (auto x = number(*v, p)) {
            if (finite && !std::isfinite(*x)) errors.push_back(p + ": must be finite");
            else if (positive && !(*x > 0.0)) errors.push_back(p + ": must be > 0");
            else out = *x;
        }
    }

    template <typename Int>
    void read_int(const cjson& obj, const std::string& path, const char* key, Int& out, Int min_value) {
        const cjson* v = get(obj, key);
        if (!v) return;
        const std::string p = path + "." + key;
        if (!v->is_number_integer()) {
            errors.push_back(p + ": expected an integer");
            return;
        }
        if (v->is_number_unsigned() || v->get<std::int64_t>() >= 0) {
            const auto x = v->get<std::uint64_t>();
            if (x < static_cast<std::uint64_t>(min_value))
                errors.push_back(p + ": must be >= " + std::to_string(min_value));
            else
                out = static_cast<Int>(x);
        } else {
            errors.push_back(p + ": must be non-negative");
        }
    }

    void read(const cjson& obj, const std::string& path, const char* key, std::string& out) {
        const cjson* v = get(obj, key);
        if (!v) return;
        if (!v->is_string()) errors.push_back(path + "." + key + ": expected a string");
        else out = v->get<std::string>();
    }

    std::vector<double> vec(const cjson& v, const std::string& path) {
        std::vector<double> out;
        if (!v.is_array()) {
            errors.push_back(path + ": expected an array of numbers");
            return out;
        }
        for (std::size_t i = 0; i < v.size(); ++i)
            if (auto x = number(v[i], path + "[" + std::to_string(i) + "]")) out.push_back(*x);
        return out;
    }

    Matrix mat(const cjson& v, const std::string& path) {
        Matrix out;
        if (!v.is_array()) {
            errors.push_back(path + ": expected an array of rows");
            return out;
        }
        for (std::size_t i = 0; i < v.size(); ++i) out.push_back(vec(v[i], path + "[" + std::to_string(i) + "]"));
        return out;
    }
};

inline std::optional<ConvexFn> parse_convex(SchemaReader& r, const cjson& v, const std::string& path, std::size_t dim) {
    r.allow_keys(v, path, {"kind", "lower", "upper", "radius", "c", "p"});
    if (!v.is_object()) return std::nullopt;
    std::string kind;
    r.read(v, path, "kind", kind);
    if (kind.empty()) {
        r.errors.push_back(path + ".kind: required");
        return std::nullopt;
    }
    try {
        if (kind == "zero") return ConvexFn::zero(dim);
        if (kind == "box") {
            const cjson* lo = r.get(v, "lower");
            const cjson* hi = r.get(v, "upper");
            if (!lo || !hi) {
                r.errors.push_back(path + ": box needs lower and upper");
                return std::nullopt;
            }
            auto a = r.vec(*lo, path + ".lower");
            auto b = r.vec(*hi, path + ".upper");
            if (a.size() != dim || b.size() != dim) {
                r.errors.push_back(path + ": box bounds must have length " + std::to_string(dim));
                return std::nullopt;
            }
            return ConvexFn::box(a, b);
        }
        double radius = 1.0, c = 1.0, p = 2.0;
        r.read(v, path, "radius", radius, true, true);
        r.read(v, path, "c", c, true, true);
        r.read(v, path, "p", p);
        if (kind == "ball") return ConvexFn::ball(dim, radius);
        if (kind == "quadratic") return ConvexFn::quadratic(dim, c);
        if (kind == "abs" || kind == "power") {
            if (dim != 1) {
                r.errors.push_back(path + ": kind '" + kind + "' is one-dimensional");
                return std::nullopt;
            }
            if (kind == "abs") return ConvexFn::abs_value(c);
            if (p != std::floor(p) || p < 1) {
                r.errors.push_back(path + ".p: must be an integer >= 1");
                return std::nullopt;
            }
            return ConvexFn::power_positive_part(c, static_cast<int>(p));
        }
    } catch (const Error& e) {
        r.errors.push_back(path + ": " + e.what());
        return std::nullopt;
    }
    r.errors.push_back(path + ".kind: unknown kind '" + kind + "' (zero, box, ball, quadratic, abs, power)");
    return std::nullopt;
}

inline std::optional<CoefficientSet> parse_affine(SchemaReader& r, const cjson& v, const std::string& path,
                                                  const DeclaredConstants& k) {
    r.allow_keys(v, path, {"dims", "b", "sigma", "f", "g"});
    if (!v.is_object()) return std::nullopt;
    AffineCoefficients a;
    a.dims = {1, 1, 1};
    if (const cjson* d = r.get(v, "dims")) {
        r.allow_keys(*d, path + ".dims", {"n", "m", "d"});
        r.read_int(*d, path + ".dims", "n", a.dims.n, std::size_t{1});
        r.read_int(*d, path + ".dims", "m", a.dims.m, std::size_t{1});
        r.read_int(*d, path + ".dims", "d", a.dims.d, std::size_t{1});
    }
    auto block = [&](const char* key, std::initializer_list<const char*> keys) -> const cjson* {
        const cjson* b = r.get(v, key);
        if (b) r.allow_keys(*b, path + "." + key, keys);
        return b;
    };
    auto m_of = [&](const cjson* b, const char* key, const std::string& p) {
        const cjson* x = b ? r.get(*b, key) : nullptr;
        return x ? r.mat(*x, p + "." + key) : Matrix{};
    };
    auto v_of = [&](const cjson* b, const char* key, const std::string& p) {
        const cjson* x = b ? r.get(*b, key) : nullptr;
        return x ? r.vec(*x, p + "." + key) : std::vector<double>{};
    };
    auto mats_of = [&](const cjson* b, const char* key, const std::string& p) {
        std::vector<Matrix> out;
        const cjson* x = b ? r.get(*b, key) : nullptr;
        if (!x) return out;
        if (!x->is_array()) {
            r.errors.push_back(p + "." + key + ": expected an array of matrices");
            return out;
        }
        for (std::size_t i = 0; i < x->size(); ++i)
            out.push_back(r.mat((*x)[i], p + "." + key + "[" + std::to_string(i) + "]"));
        return out;
    };
    const cjson* b = block("b", {"x", "y", "z", "c"});
    a.Bx = m_of(b, "x", path + ".b");
    a.By = m_of(b, "y", path + ".b");
    a.Bz = m_of(b, "z", path + ".b");
    a.b0 = v_of(b, "c", path + ".b");
    const cjson* s = block("sigma", {"x", "y", "c"});
    a.S0 = m_of(s, "c", path + ".sigma");
    a.Sx = mats_of(s, "x", path + ".sigma");
    a.Sy = mats_of(s, "y", path + ".sigma");
    const cjson* f = block("f", {"x", "y", "z", "c"});
    a.Fx = m_of(f, "x", path + ".f");
    a.Fy = m_of(f, "y", path + ".f");
    a.Fz = m_of(f, "z", path + ".f");
    a.f0 = v_of(f, "c", path + ".f");
    const cjson* g = block("g", {"x", "c"});
    a.G = m_of(g, "x", path + ".g");
    a.g0 = v_of(g, "c", path + ".g");
    try {
        return make_affine(a, k);
    } catch (const Error& e) {
        r.errors.push_back(path + ": " + e.what());
        return std::nullopt;
    }
}

}  // namespace detail

/// Parses and validates an experiment configuration. Throws ConfigError
/// listing every schema violation; nothing is computed before this returns.
inline ExperimentConfig parse_config(const nlohmann::ordered_json& j) {
    detail::SchemaReader r;
    ExperimentConfig c;
    c.source = j;
    r.allow_keys(j, "$", {"name", "seed", "threads", "output_dir", "studies", "problem", "eps", "eps_schedule",
                          "eps_ref", "mc", "pde", "picard", "supersolution", "probes"});
    if (!j.is_object()) throw ConfigError(r.errors);

    r.read(j, "$", "name", c.name);
    if (const auto* s = r.get(j, "seed")) {
        std::uint64_t seed = 0;
        r.read_int(j, "$", "seed", seed, std::uint64_t{0});
        if (s->is_number_integer()) c.seed = seed;
    }
    r.read_int(j, "$", "threads", c.threads, std::size_t{0});
    r.read(j, "$", "output_dir", c.output_dir);

    if (const auto* st = r.get(j, "studies")) {
        if (!st->is_array() || st->empty()) {
            r.errors.push_back("$.studies: expected a non-empty array of study names");
        } else {
            for (std::size_t i = 0; i < st->size(); ++i) {
                const auto& v = (*st)[i];
                const std::string p = "$.studies[" + std::to_string(i) + "]";
                if (!v.is_string()) {
                    r.errors.push_back(p + ": expected a string");
                    continue;
                }
                const auto name = v.get<std::string>();
                const auto& all = study_names();
                if (std::find(all.begin(), all.end(), name) == all.end())
                    r.errors.push_back(p + ": unknown study '" + name + "'");
                else if (!c.wants(name))
                    c.studies.push_back(name);
            }
        }
    } else {
        r.errors.push_back("$.studies: required");
    }

    r.read(j, "$", "eps", c.eps, true, true);
    r.read(j, "$", "eps_ref", c.eps_ref, true, true);
    if (const auto* e = r.get(j, "eps_schedule")) {
        c.eps_schedule = r.vec(*e, "$.eps_schedule");
        for (double v : c.eps_schedule)
            if (!(v > 0.0) || !std::isfinite(v)) r.errors.push_back("$.eps_schedule: entries must be positive");
    }

    if (const auto* m = r.get(j, "mc")) {
        r.allow_keys(*m, "$.mc", {"N", "P", "degree"});
        r.read_int(*m, "$.mc", "N", c.mc.N, std::size_t{1});
        r.read_int(*m, "$.mc", "P", c.mc.P, std::size_t{2});
        r.read_int(*m, "$.mc", "degree", c.mc.degree, 0);
    }
    if (const auto* p = r.get(j, "pde")) {
        r.allow_keys(*p, "$.pde", {"x_min", "x_max", "nx", "nt", "theta"});
        r.read(*p, "$.pde", "x_min", c.pde.x_min);
        r.read(*p, "$.pde", "x_max", c.pde.x_max);
        r.read_int(*p, "$.pde", "nx", c.pde.nx, std::size_t{4});
        r.read_int(*p, "$.pde", "nt", c.pde.nt, std::size_t{1});
        r.read(*p, "$.pde", "theta", c.pde.theta);
        if (!(c.pde.x_min < c.pde.x_max)) r.errors.push_back("$.pde: x_min must be < x_max");
        if (c.pde.theta < 0.0 || c.pde.theta > 1.0) r.errors.push_back("$.pde.theta: must lie in [0, 1]");
    }
    if (const auto* p = r.get(j, "picard")) {
        r.allow_keys(*p, "$.picard", {"tol", "max_iter", "outer_sweeps"});
        r.read(*p, "$.picard", "tol", c.picard.tol, true, true);
        r.read_int(*p, "$.picard", "max_iter", c.picard.max_iter, std::size_t{1});
        r.read_int(*p, "$.picard", "outer_sweeps", c.picard.outer_sweeps, std::size_t{1});
    }
    if (const auto* s = r.get(j, "supersolution")) {
        auto& q = c.supersolution;
        r.allow_keys(*s, "$.supersolution", {"K_tilde", "A_tilde", "r", "x_min", "x_max", "nx", "nt", "b0", "s0"});
        r.read(*s, "$.supersolution", "K_tilde", q.K_tilde);
        r.read(*s, "$.supersolution", "A_tilde", q.A_tilde, true, true);
        r.read(*s, "$.supersolution", "r", q.r);
        r.read(*s, "$.supersolution", "x_min", q.x_min);
        r.read(*s, "$.supersolution", "x_max", q.x_max);
        r.read_int(*s, "$.supersolution", "nx", q.nx, std::size_t{3});
        r.read_int(*s, "$.supersolution", "nt", q.nt, std::size_t{2});
        r.read(*s, "$.supersolution", "b0", q.b0);
        r.read(*s, "$.supersolution", "s0", q.s0);
        if (q.K_tilde < 0 || q.b0 < 0 || q.s0 < 0 || q.r < 0)
            r.errors.push_back("$.supersolution: K_tilde, r, b0, s0 must be non-negative");
    }
    if (const auto* pr = r.get(j, "probes")) {
        if (!pr->is_array()) {
            r.errors.push_back("$.probes: expected an array of [t, x] pairs");
        } else {
            for (std::size_t i = 0; i < pr->size(); ++i) {
                auto v = r.vec((*pr)[i], "$.probes[" + std::to_string(i) + "]");
                if (v.size() != 2) r.errors.push_back("$.probes[" + std::to_string(i) + "]: expected [t, x]");
                else c.probes.emplace_back(v[0], v[1]);
            }
        }
    }

    // Problem: a preset with optional overrides, or a literal affine spec.
    if (const auto* p = r.get(j, "problem")) {
        r.allow_keys(*p, "$.problem", {"preset", "affine", "psi", "phi", "x0", "T", "t0", "constants"});
        r.read(*p, "$.problem", "preset", c.preset);
        const auto* aff = r.get(*p, "affine");
        if (c.preset.empty() == (aff == nullptr)) {
            r.errors.push_back("$.problem: exactly one of 'preset' or 'affine' is required");
        } else {
            DeclaredConstants k;
            bool preset_ok = true;
            if (!c.preset.empty()) {
                try {
                    c.problem = make_preset(c.preset);
                    k = c.problem.coeffs.constants;
                } catch (const Error& e) {
                    r.errors.push_back("$.problem.preset: " + std::string(e.what()));
                    preset_ok = false;
                }
            }
            if (const auto* ks = r.get(*p, "constants")) {
                r.allow_keys(*ks, "$.problem.constants", {"K", "k1", "k2", "gamma", "L", "eta0", "rho0"});
                r.read(*ks, "$.problem.constants", "K", k.K);
                r.read(*ks, "$.problem.constants", "k1", k.k1);
                r.read(*ks, "$.problem.constants", "k2", k.k2);
                r.read(*ks, "$.problem.constants", "gamma", k.gamma);
                r.read(*ks, "$.problem.constants", "L", k.L);
                r.read(*ks, "$.problem.constants", "eta0", k.eta0);
                r.read(*ks, "$.problem.constants", "rho0", k.rho0);
                if (k.K < 0 || k.k1 < 0 || k.k2 < 0 || k.L < 0 || k.eta0 < 0)
                    r.errors.push_back("$.problem.constants: K, k1, k2, L, eta0 must be non-negative");
                if (k.rho0 < 1) r.errors.push_back("$.problem.constants.rho0: must be >= 1");
            }
            if (aff) {
                if (auto cs = detail::parse_affine(r, *aff, "$.problem.affine", k)) {
                    c.problem = ProblemSpec{};
                    c.problem.name = "affine";
                    c.problem.coeffs = std::move(*cs);
                    c.problem.psi = ConvexFn::zero(c.problem.coeffs.dims.n);
                    c.problem.phi = ConvexFn::zero(c.problem.coeffs.dims.m);
                    c.problem.x0.assign(c.problem.coeffs.dims.n, 0.0);
                }
            } else if (preset_ok) {
                c.problem.coeffs.constants = k;
            }
            const std::size_t n = c.problem.coeffs.dims.n, m = c.problem.coeffs.dims.m;
            if (const auto* v = r.get(*p, "psi"))
                if (auto f = detail::parse_convex(r, *v, "$.problem.psi", n)) c.problem.psi = *f;
            if (const auto* v = r.get(*p, "phi"))
                if (auto f = detail::parse_convex(r, *v, "$.problem.phi", m)) c.problem.phi = *f;
            if (const auto* v = r.get(*p, "x0")) c.problem.x0 = r.vec(*v, "$.problem.x0");
            r.read(*p, "$.problem", "T", c.problem.T, true, true);
            r.read(*p, "$.problem", "t0", c.problem.t0);
            if (r.errors.empty()) {
                try {
                    c.problem.validate();
                } catch (const Error& e) {
                    r.errors.push_back("$.problem: " + std::string(e.what()));
                }
            }
        }
    } else {
        r.errors.push_back("$.problem: required");
    }

    if (c.stochastic() && !c.seed) r.errors.push_back("$.seed: required for stochastic studies");
    if (c.wants("rate")) {
        if (c.eps_schedule.size() < 3) r.errors.push_back("$.eps_schedule: rate study needs at least 3 values");
        for (std::size_t i = 0; i < c.eps_schedule.size(); ++i) {
            if (!(c.eps_schedule[i] > c.eps_ref)) r.errors.push_back("$.eps_schedule: every value must exceed eps_ref");
            if (i > 0 && !(c.eps_schedule[i] < c.eps_schedule[i - 1]))
                r.errors.push_back("$.eps_schedule: must be strictly decreasing");
        }
    }
    for (const auto& [t, x] : c.probes)
        if (t < c.problem.t0 || t > c.problem.T) r.errors.push_back("$.probes: probe time outside [t0, T]");
    if (!r.errors.empty()) throw ConfigError(r.errors);
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError({path.string() + ": cannot open"});
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(is, nullptr, true, /*ignore_comments=*/true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError({path.string() + ": " + e.what()});
    }
    return parse_config(j);
}

}  // namespace fbsvi
