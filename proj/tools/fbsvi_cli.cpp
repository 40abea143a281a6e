// fbsvi: experiment runner and thin wrappers over the library operations.
//
// Exit codes: 0 all assertions pass, 1 an assertion or study failed,
// 2 usage or configuration error.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fbsvi/config.hpp"
#include "fbsvi/constants.hpp"
#include "fbsvi/parallel.hpp"
#include "fbsvi/runner.hpp"

namespace {

using fbsvi::json;

constexpr int kPass = 0;
constexpr int kFail = 1;
constexpr int kUsage = 2;

std::pair<double, double> parse_probe(const std::string& s) {
    const auto comma = s.find(',');
    if (comma == std::string::npos) throw CLI::ValidationError("--probe", "expected t,x");
    return {std::stod(s.substr(0, comma)), std::stod(s.substr(comma + 1))};
}

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    return out;
}

int execute(const fbsvi::ExperimentConfig& cfg, const std::optional<std::string>& out_dir, bool print) {
    const auto outcome = fbsvi::run_studies(cfg);
    if (out_dir) {
        const auto dir = fbsvi::write_run(cfg, outcome, *out_dir);
        std::cerr << "wrote " << dir.string() << "\n";
    }
    if (print) std::cout << outcome.results.dump(2) << "\n";
    if (const auto* f = outcome.first_failure()) {
        std::cerr << "FAIL [" << f->study << "] " << f->name << ": value " << f->value << ", reference "
                  << f->reference << ", tolerance " << f->tolerance;
        if (!f->note.empty()) std::cerr << " (" << f->note << ")";
        std::cerr << "\n";
        return kFail;
    }
    return kPass;
}

struct Common {
    std::string preset = "reflected-bm";
    std::optional<std::uint64_t> seed;
    double eps = 1e-3;
    std::size_t N = 200, P = 10000;
    std::vector<std::string> probes;
    std::optional<std::string> out;

    json base(const std::string& name, std::vector<std::string> studies) const {
        json j = {{"name", name}, {"studies", studies}, {"problem", {{"preset", preset}}}, {"eps", eps},
                  {"mc", {{"N", N}, {"P", P}}}};
        if (seed) j["seed"] = *seed;
        if (!probes.empty()) {
            json arr = json::array();
            for (const auto& p : probes) {
                const auto [t, x] = parse_probe(p);
                arr.push_back({t, x});
            }
            j["probes"] = arr;
        }
        return j;
    }
};

void add_common(CLI::App* app, Common& c, bool stochastic, bool scalar_eps = true) {
    app->add_option("--preset", c.preset, "problem preset")
        ->check(CLI::IsMember(fbsvi::preset_names()))
        ->capture_default_str();
    if (scalar_eps) app->add_option("--eps", c.eps, "penalization parameter")->capture_default_str();
    app->add_option("--probe", c.probes, "probe point t,x (repeatable)");
    app->add_option("--out", c.out, "write a run directory under this path");
    if (stochastic) {
        app->add_option("--seed", c.seed, "master seed")->required();
        app->add_option("--N", c.N, "time steps")->capture_default_str();
        app->add_option("--P", c.P, "paths")->capture_default_str();
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Penalized forward-backward SDEs with subdifferential operators"};
    app.require_subcommand(1);
    std::size_t threads = 0;
    app.add_option("--threads", threads, "worker threads (0 = hardware)");

    // run
    auto* run = app.add_subcommand("run", "run the studies of a JSON config");
    std::string config_path;
    std::optional<std::string> output_dir;
    run->add_option("config", config_path, "config file")->required();
    run->add_option("--output-dir", output_dir, "override output_dir from the config");

    // check-compat
    auto* compat = app.add_subcommand("check-compat", "search a compatibility witness");
    double K = 0, k1 = 0, k2 = 0, gamma = 0, T = 1;
    std::size_t budget = 100000;
    compat->add_option("--K", K)->required();
    compat->add_option("--k1", k1)->required();
    compat->add_option("--k2", k2)->required();
    compat->add_option("--gamma", gamma)->required();
    compat->add_option("--T", T)->required();
    compat->add_option("--budget", budget)->capture_default_str();

    Common fwd, bsde, pde, cross, rate;
    auto* sim = app.add_subcommand("simulate-forward", "simulate the penalized forward equation");
    add_common(sim, fwd, true);
    auto* sol = app.add_subcommand("solve-fbsde", "solve the penalized FBSDE by regression Monte Carlo");
    add_common(sol, bsde, true);
    auto* spde = app.add_subcommand("solve-pde", "solve the penalized PDE (one dimension)");
    add_common(spde, pde, false);
    double x_min = -5, x_max = 5, theta = 0.5;
    std::size_t nx = 200, nt = 200;
    spde->add_option("--x-min", x_min)->capture_default_str();
    spde->add_option("--x-max", x_max)->capture_default_str();
    spde->add_option("--nx", nx)->capture_default_str();
    spde->add_option("--nt", nt)->capture_default_str();
    spde->add_option("--theta", theta)->capture_default_str();
    auto* xc = app.add_subcommand("crosscheck", "compare Monte Carlo and PDE values at probe points");
    add_common(xc, cross, true);
    xc->add_option("--x-min", x_min)->capture_default_str();
    xc->add_option("--x-max", x_max)->capture_default_str();
    xc->add_option("--nx", nx)->capture_default_str();
    xc->add_option("--nt", nt)->capture_default_str();
    auto* rs = app.add_subcommand("rate-study", "fit the penalization convergence rate");
    add_common(rs, rate, true, false);
    std::string eps_list = "1e-1,1e-2,1e-3";
    double eps_ref = 1e-4;
    rs->add_option("--eps,--eps-list", eps_list, "comma-separated eps schedule")->capture_default_str();
    rs->add_option("--eps-ref", eps_ref)->capture_default_str();

    auto* ss = app.add_subcommand("supersolution-check", "search a supersolution certificate");
    std::string ss_preset = "reflected-bm";
    fbsvi::SupersolutionSettings sset;
    ss->add_option("--preset", ss_preset, "problem preset (for psi and T)")
        ->check(CLI::IsMember(fbsvi::preset_names()));
    ss->add_option("--K-tilde", sset.K_tilde)->capture_default_str();
    ss->add_option("--A-tilde", sset.A_tilde)->capture_default_str();
    ss->add_option("--r", sset.r)->capture_default_str();
    ss->add_option("--x-min", sset.x_min)->capture_default_str();
    ss->add_option("--x-max", sset.x_max)->capture_default_str();
    ss->add_option("--nx", sset.nx)->capture_default_str();
    ss->add_option("--nt", sset.nt)->capture_default_str();
    ss->add_option("--b0", sset.b0, "drift growth bound b0 (1 + |x|)")->capture_default_str();
    ss->add_option("--s0", sset.s0, "volatility growth bound s0 (1 + |x|)")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kPass : kUsage;
    }
    fbsvi::set_thread_count(threads);

    try {
        if (*compat) {
            const fbsvi::StructuralConstants c{K, k1, k2, gamma};
            const auto res = fbsvi::check_compatibility(c, T, budget);
            json j = fbsvi::to_json(res);
            if (res.witness) j["C_T"] = fbsvi::lipschitz_constant_CT(*res.witness, c);
            std::cout << j.dump(2) << "\n";
            if (!res.witness) {
                std::cerr << "FAIL [compat] " << res.reason << "\n";
                return kFail;
            }
            return kPass;
        }

        json j;
        std::optional<std::string> out;
        if (*run) {
            auto cfg = fbsvi::load_config(config_path);
            if (threads == 0 && cfg.threads) fbsvi::set_thread_count(cfg.threads);
            return execute(cfg, output_dir ? output_dir : std::optional<std::string>(cfg.output_dir), false);
        } else if (*sim) {
            j = fwd.base("simulate-forward", {"forward"});
            out = fwd.out;
        } else if (*sol) {
            j = bsde.base("solve-fbsde", {"fbsde"});
            out = bsde.out;
        } else if (*spde) {
            j = pde.base("solve-pde", {"pde"});
            j["pde"] = {{"x_min", x_min}, {"x_max", x_max}, {"nx", nx}, {"nt", nt}, {"theta", theta}};
            out = pde.out;
        } else if (*xc) {
            j = cross.base("crosscheck", {"crosscheck"});
            j["pde"] = {{"x_min", x_min}, {"x_max", x_max}, {"nx", nx}, {"nt", nt}};
            out = cross.out;
        } else if (*rs) {
            j = rate.base("rate-study", {"rate"});
            j["eps_schedule"] = parse_list(eps_list);
            j["eps_ref"] = eps_ref;
            out = rate.out;
        } else if (*ss) {
            j = {{"name", "supersolution-check"},
                 {"studies", {"supersolution"}},
                 {"problem", {{"preset", ss_preset}}},
                 {"supersolution",
                  {{"K_tilde", sset.K_tilde},
                   {"A_tilde", sset.A_tilde},
                   {"r", sset.r},
                   {"x_min", sset.x_min},
                   {"x_max", sset.x_max},
                   {"nx", sset.nx},
                   {"nt", sset.nt},
                   {"b0", sset.b0},
                   {"s0", sset.s0}}}};
        }
        return execute(fbsvi::parse_config(j), out, true);
    } catch (const fbsvi::ConfigError& e) {
        std::cerr << e.what() << "\n";
        return kUsage;
    } catch (const CLI::ValidationError& e) {
        std::cerr << e.what() << "\n";
        return kUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid number: " << e.what() << "\n";
        return kUsage;
    } catch (const fbsvi::CompatibilityError& e) {
        std::cerr << "FAIL [compat] " << e.what() << "\n";
        return kFail;
    } catch (const fbsvi::Error& e) {
        std::cerr << "FAIL " << e.what() << "\n";
        return kFail;
    }
}
