// Acceptance run: one PASS/FAIL line per criterion. Tolerances are fixed here.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "fbsvi/fbsvi.hpp"
#include "../support/yosida_suite.hpp"

using namespace fbsvi;

namespace {

constexpr double kYosidaTol = 1e-9;
constexpr std::size_t kYosidaTuples = 10000;
constexpr double kYosidaSeconds = 5.0;
constexpr double kSupGapTol = 1e-3;
constexpr double kReflectedSeconds = 60.0;
constexpr double kRateSlope = 0.15;
constexpr double kRateSeconds = 300.0;
constexpr double kCrosscheckSeconds = 300.0;
constexpr double kPicardTol = 1e-3;
constexpr std::size_t kPicardMaxIter = 15;
constexpr std::size_t kLipschitzPairs = 20;
constexpr double kFeasibilityTol = 1e-2;
constexpr int kDeterminismThreads = 4;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Runs the studies of a config built from JSON; the results document is the
// thread-independent output compared by the determinism criterion.
json run_config(const json& j) { return run_studies(parse_config(j)).results; }

const json* find_assertion(const json& results, const std::string& study, const std::string& name) {
    for (const auto& a : results["assertions"])
        if (a["study"] == study && a["name"] == name) return &a;
    return nullptr;
}

bool all_assertions_pass(const json& results, const std::string& study) {
    bool any = false;
    for (const auto& a : results["assertions"])
        if (a["study"] == study) {
            any = true;
            if (!a["pass"].get<bool>()) return false;
        }
    return any;
}

struct Line {
    bool pass = false;
    std::string detail;
};

void report(int id, const std::string& title, const Line& l) {
    std::printf("%s criterion %d (%s): %s\n", l.pass ? "PASS" : "FAIL", id, title.c_str(), l.detail.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, auto... v) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, v...);
    return buf;
}

// ---------------------------------------------------------------------------
// Stochastic criteria 2-7, each a function of the seed only.
// ---------------------------------------------------------------------------

json c2_reflected() {
    return run_config({{"name", "c2"},
                       {"seed", 20240601},
                       {"studies", {"forward"}},
                       {"problem", {{"preset", "reflected-bm"}, {"x0", {0.0}}, {"T", 1.0}}},
                       {"eps", 1e-4},
                       {"mc", {{"N", 2000}, {"P", 100000}}}});
}

json c3_rate() {
    return run_config({{"name", "c3"},
                       {"seed", 7},
                       {"studies", {"rate"}},
                       {"problem", {{"preset", "reflected-bm"}}},
                       {"eps_schedule", {1e-1, 1e-2, 1e-3}},
                       {"eps_ref", 1e-4},
                       {"mc", {{"N", 500}, {"P", 10000}}}});
}

json c4_crosscheck() {
    json out;
    out["heat"] = run_config({{"name", "c4-heat"},
                              {"seed", 11},
                              {"studies", {"crosscheck"}},
                              {"problem", {{"preset", "heat"}}},
                              {"eps", 1e-2},
                              {"mc", {{"N", 100}, {"P", 20000}}},
                              {"pde", {{"x_min", -8}, {"x_max", 8}, {"nx", 160}, {"nt", 100}}},
                              {"probes", {{0.0, -0.5}, {0.0, 0.0}, {0.0, 0.5}}}});
    out["reflected"] = run_config({{"name", "c4-reflected"},
                                   {"seed", 12},
                                   {"studies", {"crosscheck"}},
                                   {"problem", {{"preset", "reflected-bm"}}},
                                   {"eps", 1e-2},
                                   {"mc", {{"N", 1000}, {"P", 20000}}},
                                   {"pde", {{"x_min", -1}, {"x_max", 7}, {"nx", 160}, {"nt", 100}}},
                                   {"probes", {{0.0, 0.0}, {0.0, 0.5}, {0.0, 1.0}}}});
    return out;
}

json coupled_config(const std::string& name, const std::vector<std::string>& studies) {
    return {{"name", name},
            {"seed", 5},
            {"studies", studies},
            {"problem", {{"preset", "coupled"}}},
            {"eps", 1e-2},
            {"mc", {{"N", 100}, {"P", 20000}}},
            {"picard", {{"tol", kPicardTol}, {"max_iter", kPicardMaxIter}}}};
}

json c5_contraction() { return run_config(coupled_config("c5", {"compat", "fbsde"})); }

json c6_lipschitz() {
    const auto spec = make_preset("coupled");
    const auto sc = structural(spec.coeffs.constants);
    const auto w = check_compatibility(sc, spec.T - spec.t0);
    json out;
    out["witness"] = w.witness ? to_json(*w.witness) : json(nullptr);
    if (!w.witness) return out;
    const double ct = lipschitz_constant_CT(*w.witness, sc);
    out["C_T"] = ct;
    std::mt19937_64 rng(606);
    // starting points inside Dom psi = [-1, inf)
    std::uniform_real_distribution<double> ux(-0.9, 2.0);
    json pairs = json::array();
    for (std::size_t k = 0; k < kLipschitzPairs; ++k) {
        const double x1 = ux(rng);
        double x2 = ux(rng);
        if (std::abs(x2 - x1) < 0.05) x2 = x1 < 1.0 ? x1 + 0.05 : x1 - 0.05;
        const auto pr = lipschitz_probe(spec, 0.0, x1, x2, 1e-2, 50, 4000, 1000 + k);
        pairs.push_back({{"x1", x1}, {"x2", x2}, {"ratio", pr.ratio}, {"combined_se", pr.combined_se},
                         {"u1", pr.u1}, {"u2", pr.u2}});
    }
    out["pairs"] = pairs;
    return out;
}

json c7_feasibility() {
    json out = json::array();
    for (double eps : {1e-1, 1e-2, 1e-3}) {
        const auto r = run_config({{"name", "c7"},
                                   {"seed", 9},
                                   {"studies", {"fbsde"}},
                                   {"problem", {{"preset", "reflected-y"}}},
                                   {"eps", eps},
                                   {"mc", {{"N", 100}, {"P", 10000}}}});
        out.push_back({{"eps", eps}, {"mean_feasibility", r["studies"]["fbsde"]["mean_feasibility"]}});
    }
    return out;
}

using Producer = std::function<json()>;
const std::vector<std::pair<std::string, Producer>>& stochastic_criteria() {
    static const std::vector<std::pair<std::string, Producer>> v{
        {"2", c2_reflected}, {"3", c3_rate},          {"4", c4_crosscheck},
        {"5", c5_contraction}, {"6", c6_lipschitz}, {"7", c7_feasibility}};
    return v;
}

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------

Line eval_c1() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = suite::run(kYosidaTuples, 4242);
    const double s = seconds_since(t0);
    return {r.max() <= kYosidaTol && r.tuples == kYosidaTuples && s < kYosidaSeconds,
            fmt("%zu tuples, worst relative residual %.3g (limit %.0e), %.2f s (limit %.0f s)", r.tuples, r.max(),
                kYosidaTol, s, kYosidaSeconds)};
}

Line eval_c2(const json& r, double s) {
    const auto* m = find_assertion(r, "forward", "mean(X_T)");
    const auto* g = find_assertion(r, "forward", "E sup|X_proj - X_eps|^2");
    if (!m || !g) return {false, "forward study produced no oracle assertions"};
    const bool ok = m->at("pass").get<bool>() && g->at("pass").get<bool>() && s < kReflectedSeconds;
    return {ok, fmt("mean %.5f vs sqrt(2/pi) = %.5f, |diff| %.4f vs 3 se %.4f; sup gap %.3g (limit %.0e); %.1f s",
                    m->at("value").get<double>(), m->at("reference").get<double>(),
                    std::abs(m->at("value").get<double>() - m->at("reference").get<double>()),
                    m->at("tolerance").get<double>(), g->at("value").get<double>(), kSupGapTol, s)};
}

Line eval_c3(const json& r, double s) {
    const auto& f = r["studies"]["rate"];
    if (f["exact"].get<bool>()) return {false, "D(eps) vanished on a constrained problem"};
    const double slope = f["slope"].get<double>();
    const auto& D = f["D"];
    return {slope >= kRateSlope && s < kRateSeconds,
            fmt("D = %.4g, %.4g, %.4g; slope %.3f (floor %.2f); %.1f s", D[0].get<double>(), D[1].get<double>(),
                D[2].get<double>(), slope, kRateSlope, s)};
}

Line eval_c4(const json& r, double s) {
    std::string d;
    bool ok = s < kCrosscheckSeconds;
    for (const char* k : {"heat", "reflected"}) {
        const auto& arr = r[k]["studies"]["crosscheck"];
        ok = ok && arr.size() == 3 && all_assertions_pass(r[k], "crosscheck");
        double worst = 0;
        for (const auto& p : arr) worst = std::max(worst, p["gap"].get<double>() / p["tolerance"].get<double>());
        d += fmt("%s worst gap/tolerance %.2f; ", k, worst);
    }
    return {ok, d + fmt("%.1f s", s)};
}

Line eval_c5(const json& r) {
    const auto& c = r["studies"]["compat"]["compatibility"];
    const auto& p = r["studies"]["fbsde"]["picard"];
    if (!c["found"].get<bool>()) return {false, "no compatibility witness"};
    double worst = 0;
    for (const auto& q : p["ratios"]) worst = std::max(worst, q.get<double>());
    const auto& h = p["u_history"];
    const double last = h.size() >= 2 ? std::abs(h[h.size() - 1].get<double>() - h[h.size() - 2].get<double>())
                                      : INFINITY;
    const std::size_t it = p["iterations"].get<std::size_t>();
    const bool ok = !p["ratios"].empty() && worst < 1.0 && last < kPicardTol && it <= kPicardMaxIter &&
                    p["witness"]["branch"] != "small-time";
    return {ok, fmt("%s witness; %zu iterations, max ratio %.3f, last |du| %.2e (limit %.0e)",
                    c["witness"]["branch"].get<std::string>().c_str(), it, worst, last, kPicardTol)};
}

Line eval_c6(const json& r) {
    if (r["witness"].is_null()) return {false, "no compatibility witness"};
    const double ct = r["C_T"].get<double>();
    std::size_t bad = 0;
    double worst = -INFINITY;
    for (const auto& p : r["pairs"]) {
        const double dx = std::abs(p["x1"].get<double>() - p["x2"].get<double>());
        const double du = std::abs(p["u1"].get<double>() - p["u2"].get<double>());
        // squared estimate |du|^2 <= C_T |dx|^2
        const double excess = du - (std::sqrt(ct) * dx + 3.0 * p["combined_se"].get<double>());
        worst = std::max(worst, excess);
        if (excess > 0) ++bad;
    }
    return {bad == 0 && r["pairs"].size() == kLipschitzPairs,
            fmt("C_T = %.4g, %zu pairs, %zu above sqrt(C_T)|dx| + 3 se, worst excess %.3g", ct, r["pairs"].size(), bad,
                worst)};
}

Line eval_c7(const json& r) {
    bool mono = true;
    for (std::size_t i = 1; i < r.size(); ++i)
        mono = mono && r[i]["mean_feasibility"].get<double>() <= r[i - 1]["mean_feasibility"].get<double>();
    const double last = r.back()["mean_feasibility"].get<double>();
    return {mono && last <= kFeasibilityTol,
            fmt("E|Y - J(Y)|^2 = %.3g, %.3g, %.3g; nonincreasing %s; final limit %.0e",
                r[0]["mean_feasibility"].get<double>(), r[1]["mean_feasibility"].get<double>(), last,
                mono ? "yes" : "no", kFeasibilityTol)};
}

Line eval_c8() {
    std::string d;
    bool ok = true;
    auto expect_witness = [&](const StructuralConstants& c, double T, const char* label) {
        const auto r = check_compatibility(c, T);
        std::string why;
        const bool good = r.witness && verify_witness(*r.witness, c, &why);
        ok = ok && good;
        d += fmt("%s: %s; ", label, r.witness ? to_string(r.witness->branch).c_str() : "none");
    };
    expect_witness({0, 0, 0, 0}, 1.0, "K=k1=k2=0");
    expect_witness({1, 0, 1, -20}, 1.0, "K=1,k2=1,gamma=-20");
    for (const StructuralConstants c : {StructuralConstants{1, 2, 1, 0}, StructuralConstants{0.5, 1, 1, -5}}) {
        const auto r = check_compatibility(c, 1.0);
        ok = ok && !r.witness && r.reason.find("(C1) violated") != std::string::npos;
    }
    d += "k1*k2 >= 1 refused with reason";
    return {ok, d};
}

Line eval_c9() {
    const auto r = run_config({{"name", "c9"},
                               {"studies", {"supersolution"}},
                               {"problem", {{"preset", "reflected-bm"}}},
                               {"supersolution",
                                {{"K_tilde", 1.0},
                                 {"A_tilde", 1.0},
                                 {"r", 0.1},
                                 {"x_min", -10.0},
                                 {"x_max", 10.0},
                                 {"b0", 1.0},
                                 {"s0", 1.0}}}});
    const auto& c = r["studies"]["supersolution"];
    return {c["found"].get<bool>() && c["refined_min_margin"].get<double>() > 0.0,
            fmt("C = %.4g, margin %.3g, refined margin %.3g", c["C_tilde"].get<double>(),
                c["min_margin"].get<double>(), c["refined_min_margin"].get<double>())};
}

}  // namespace

int main() {
    int failures = 0;
    auto emit = [&](int id, const std::string& title, const Line& l) {
        report(id, title, l);
        if (!l.pass) ++failures;
    };

    emit(1, "Yosida property suite", eval_c1());

    set_thread_count(1);
    std::vector<json> first;
    std::vector<double> secs;
    for (const auto& [id, produce] : stochastic_criteria()) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            first.push_back(produce());
        } catch (const std::exception& e) {
            first.push_back({{"error", e.what()}});
        }
        secs.push_back(seconds_since(t0));
    }
    auto guarded = [&](std::size_t i, auto&& fn) -> Line {
        if (first[i].contains("error")) return {false, first[i]["error"].get<std::string>()};
        return fn(first[i]);
    };
    emit(2, "reflected Brownian oracle", guarded(0, [&](const json& r) { return eval_c2(r, secs[0]); }));
    emit(3, "penalization rate", guarded(1, [&](const json& r) { return eval_c3(r, secs[1]); }));
    emit(4, "Monte Carlo vs PDE", guarded(2, [&](const json& r) { return eval_c4(r, secs[2]); }));
    emit(5, "Picard contraction", guarded(3, eval_c5));
    emit(6, "Lipschitz estimate", guarded(4, eval_c6));
    emit(7, "backward feasibility", guarded(5, eval_c7));
    emit(8, "compatibility machinery", eval_c8());
    emit(9, "supersolution certificate", eval_c9());

    set_thread_count(kDeterminismThreads);
    std::size_t same = 0;
    std::string which;
    for (std::size_t i = 0; i < stochastic_criteria().size(); ++i) {
        json again;
        try {
            again = stochastic_criteria()[i].second();
        } catch (const std::exception& e) {
            again = {{"error", e.what()}};
        }
        if (again.dump() == first[i].dump())
            ++same;
        else
            which += " " + stochastic_criteria()[i].first;
    }
    set_thread_count(0);
    emit(10, "determinism",
         {same == stochastic_criteria().size(),
          fmt("criteria 2-7 rerun with %d threads vs 1: %zu/%zu identical%s%s", kDeterminismThreads, same,
              stochastic_criteria().size(), which.empty() ? "" : "; differing:", which.c_str())});

    return failures == 0 ? 0 : 1;
}
