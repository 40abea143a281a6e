#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fbsvi/constants.hpp"
#include "fbsvi/error.hpp"
#include "fbsvi/forward.hpp"
#include "fbsvi/pde.hpp"
#include "fbsvi/problem.hpp"
#include "fbsvi/solver.hpp"

namespace fbsvi {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::string csv_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Writes a header row and numeric rows (CRLF-free, RFC 4180 quoting for the header).
inline void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows) {
    std::ofstream os(path);
    if (!os) throw InvalidArgument("cannot open " + path.string() + " for writing");
    for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << csv_field(header[i]);
    os << "\n";
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << csv_number(r[i]);
        os << "\n";
    }
}

inline void write_summary_csv(const std::filesystem::path& path, const EnsembleSummary& s) {
    std::vector<std::string> header{"t"};
    for (std::size_t a = 0; a < s.n; ++a) {
        const std::string k = std::to_string(a);
        header.insert(header.end(), {"x_mean_" + k, "x_var_" + k, "v_mean_" + k, "v_var_" + k});
    }
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < s.t.size(); ++i) {
        std::vector<double> r{s.t[i]};
        for (std::size_t a = 0; a < s.n; ++a) {
            const std::size_t q = i * s.n + a;
            r.insert(r.end(), {s.x_mean[q], s.x_var[q], s.v_mean[q], s.v_var[q]});
        }
        rows.push_back(std::move(r));
    }
    write_csv(path, header, rows);
}

inline void write_grid_csv(const std::filesystem::path& path, const GridSolution& g) {
    std::vector<std::vector<double>> rows;
    for (std::size_t k = 0; k <= g.nt(); ++k)
        for (std::size_t j = 0; j <= g.nx(); ++j) rows.push_back({g.s[k], g.x[j], g.at(k, j)});
    write_csv(path, {"s", "x", "u"}, rows);
}

// ---------------------------------------------------------------------------
// Binary ensemble dump
//
//   offset  size  content
//   0       8     magic "FBSVIENS"
//   8       4     format version (uint32, = 1)
//   12      4     recording mode (uint32, 0 = Full, 1 = Terminal)
//   16      8*5   n, m, d, N, P (uint64)
//   56      8*3   t0, T, eps (float64)
//   80      8     master seed (uint64)
//   88      ...   X (stored_nodes * P * n), V (same), dW (N * P * d if Full)
//
// All integers and floats little-endian; arrays node-major, then path, then component.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void put_le(std::ostream& os, T v) {
    static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
    unsigned char b[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw InvalidArgument("ensemble file truncated");
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

}  // namespace detail

inline void write_ensemble_binary(const std::filesystem::path& path, const PathEnsemble& e, std::size_t m = 1) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InvalidArgument("cannot open " + path.string() + " for writing");
    os.write("FBSVIENS", 8);
    detail::put_le<std::uint32_t>(os, 1);
    detail::put_le<std::uint32_t>(os, e.mode == Recording::Full ? 0 : 1);
    for (std::uint64_t v : {std::uint64_t(e.dims.n), std::uint64_t(m), std::uint64_t(e.dims.d),
                            std::uint64_t(e.grid.N), std::uint64_t(e.P)})
        detail::put_le(os, v);
    detail::put_le(os, e.grid.t0);
    detail::put_le(os, e.grid.T);
    detail::put_le(os, e.eps);
    detail::put_le<std::uint64_t>(os, e.master_seed);
    for (const auto* arr : {&e.X, &e.V, &e.dW})
        for (double v : *arr) detail::put_le(os, v);
}

inline PathEnsemble read_ensemble_binary(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InvalidArgument("cannot open " + path.string());
    char magic[8];
    if (!is.read(magic, 8) || std::string(magic, 8) != "FBSVIENS") throw InvalidArgument("not an ensemble file");
    if (detail::get_le<std::uint32_t>(is) != 1) throw InvalidArgument("unsupported ensemble file version");
    PathEnsemble e;
    e.mode = detail::get_le<std::uint32_t>(is) == 0 ? Recording::Full : Recording::Terminal;
    e.dims.n = detail::get_le<std::uint64_t>(is);
    e.dims.m = detail::get_le<std::uint64_t>(is);
    e.dims.d = detail::get_le<std::uint64_t>(is);
    e.grid.N = detail::get_le<std::uint64_t>(is);
    e.P = detail::get_le<std::uint64_t>(is);
    e.grid.t0 = detail::get_le<double>(is);
    e.grid.T = detail::get_le<double>(is);
    e.eps = detail::get_le<double>(is);
    e.master_seed = detail::get_le<std::uint64_t>(is);
    const std::size_t xs = e.stored_nodes() * e.P * e.dims.n;
    e.X.resize(xs);
    e.V.resize(xs);
    e.dW.resize(e.mode == Recording::Full ? e.grid.N * e.P * e.dims.d : 0);
    for (auto* arr : {&e.X, &e.V, &e.dW})
        for (double& v : *arr) v = detail::get_le<double>(is);
    return e;
}

// ---------------------------------------------------------------------------
// JSON views of the module results.
// ---------------------------------------------------------------------------

inline json to_json(const CompatibilityWitness& w) {
    json j;
    j["branch"] = to_string(w.branch);
    j["lambda"] = w.lambda;
    j["alpha"] = w.alpha;
    j["C1"] = w.C1;
    j["C2"] = w.C2;
    j["C3"] = w.C3;
    j["C4"] = w.C4 ? json(*w.C4) : json(nullptr);
    j["lambda_bar_1"] = w.lambda_bar_1;
    j["lambda_bar_2"] = w.lambda_bar_2;
    j["mu"] = w.mu;
    j["horizon"] = w.horizon;
    return j;
}

inline json to_json(const CompatibilityResult& r) {
    json j;
    j["found"] = r.witness.has_value();
    j["witness"] = r.witness ? to_json(*r.witness) : json(nullptr);
    j["reason"] = r.reason;
    j["evaluations"] = r.evaluations;
    return j;
}

inline json to_json(const AssumptionReport& r) {
    json j;
    j["sample_count"] = r.sample_count;
    j["seed"] = r.seed;
    j["all_passed"] = r.all_passed();
    json arr = json::array();
    for (const auto& c : r.checks)
        arr.push_back({{"name", c.name},
                       {"declared", c.declared},
                       {"empirical", c.empirical},
                       {"passed", c.passed},
                       {"is_constant", c.is_constant},
                       {"note", c.note}});
    j["checks"] = arr;
    return j;
}

inline json to_json(const PicardReport& r) {
    json j;
    j["iterations"] = r.iterations;
    j["converged"] = r.converged;
    j["final_residual"] = r.final_residual;
    j["lambda"] = r.lambda;
    j["split"] = r.split;
    j["residuals"] = r.residuals;
    j["ratios"] = r.ratios;
    j["u_history"] = r.u_history;
    j["subintervals"] = r.subintervals;
    j["witness"] = r.witness ? to_json(*r.witness) : json(nullptr);
    j["note"] = r.note;
    return j;
}

inline json to_json(const RateFit& f) {
    json j;
    j["eps"] = f.eps;
    j["eps_ref"] = f.eps_ref;
    j["D"] = f.D;
    j["exact"] = f.exact;
    j["slope"] = f.exact ? json("exact") : json(f.slope);
    j["intercept"] = f.intercept;
    j["residual"] = f.residual;
    j["theoretical_floor"] = f.floor;
    return j;
}

inline json to_json(const CrosscheckReport& r) {
    return {{"t", r.t},         {"x", r.x},         {"u_mc", r.u_mc},     {"std_err", r.std_err},
            {"dt_mc", r.dt_mc}, {"u_fd", r.u_fd},   {"u_fd_coarse", r.u_fd_coarse},
            {"C_fd", r.C_fd},   {"e_fine", r.e_fine}, {"tolerance", r.tolerance},
            {"gap", r.gap},     {"pass", r.pass}};
}

inline json to_json(const SupersolutionCertificate& c) {
    return {{"found", c.found},
            {"A_tilde", c.A_tilde},
            {"C_tilde", c.C_tilde},
            {"K_tilde", c.K_tilde},
            {"r", c.r},
            {"t1", c.t1},
            {"min_margin", c.min_margin},
            {"refined_min_margin", c.refined_min_margin},
            {"nx", c.nx},
            {"nt", c.nt},
            {"points_checked", c.points_checked},
            {"note", c.note}};
}

inline json to_json(const ViscosityReport& r) {
    json pts = json::array();
    for (const auto& p : r.points)
        pts.push_back({{"s", p.s},
                       {"x", p.x},
                       {"lhs", p.lhs},
                       {"rhs", p.rhs.to_string()},
                       {"violation", std::isfinite(p.violation) ? json(p.violation) : json("-inf")},
                       {"lemma_regime", p.lemma_regime}});
    return {{"maxima_found", r.maxima_found},
            {"worst_violation", r.worst_violation},
            {"tolerance", r.tolerance},
            {"pass", r.pass},
            {"vacuous", r.vacuous},
            {"points", pts}};
}

inline json to_json(const SampleStats& s) {
    return {{"mean", s.mean}, {"std_err", s.std_err}, {"sd", s.sd}, {"count", s.count}};
}

}  // namespace fbsvi
