// hhc: equilibria, Hopf points, single cycles, diagrams and Floquet tables
// for the Hodgkin-Huxley membrane from the command line.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hhc/config.hpp"
#include "hhc/diagram.hpp"
#include "hhc/io.hpp"

namespace fs = std::filesystem;
using namespace hhc;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Range {
    double from, to, step;
};

Range parse_range(const std::string& text) {
    double v[3];
    std::size_t pos = 0;
    for (int i = 0; i < 3; ++i) {
        const std::size_t end = i < 2 ? text.find(':', pos) : text.size();
        if (end == std::string::npos) throw UsageError("range must look like FROM:TO:STEP, got '" + text + "'");
        const std::string part = text.substr(pos, end - pos);
        char* stop = nullptr;
        v[i] = std::strtod(part.c_str(), &stop);
        if (part.empty() || *stop != '\0') throw UsageError("bad number '" + part + "' in range '" + text + "'");
        pos = end + 1;
    }
    if (!(v[2] > 0.0) || v[1] < v[0]) throw UsageError("range needs FROM <= TO and STEP > 0");
    return {v[0], v[1], v[2]};
}

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        char* stop = nullptr;
        const double x = std::strtod(item.c_str(), &stop);
        if (item.empty() || *stop != '\0') throw UsageError("bad current '" + item + "'");
        out.push_back(x);
    }
    if (out.empty()) throw UsageError("empty current list");
    return out;
}

int worker_cap() {
    const char* env = std::getenv("HHC_THREADS");
    if (!env) return 1;
    char* stop = nullptr;
    const long n = std::strtol(env, &stop, 10);
    if (*stop != '\0' || n < 1) throw UsageError("HHC_THREADS must be a positive integer");
    return static_cast<int>(n);
}

std::string complex_text(const Multiplier& m) {
    char buf[64];
    if (m.imag() == 0.0) std::snprintf(buf, sizeof buf, "%.6g", m.real());
    else std::snprintf(buf, sizeof buf, "%.6g%+.6gi", m.real(), m.imag());
    return buf;
}

struct Common {
    std::string config_path;
    std::string out_dir;
    bool verbose = false;

    RunConfig load() const {
        RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
        if (!out_dir.empty()) cfg.output_dir = out_dir;
        return cfg;
    }
};

void log(const Common& c, const std::string& msg) {
    if (c.verbose) std::cerr << msg << '\n';
}

// equilibria ---------------------------------------------------------------

int cmd_equilibria(const Common& common, const std::string& range_text) {
    const RunConfig cfg = common.load();
    const Range r = range_text.empty() ? Range{cfg.sweep_lo, cfg.sweep_hi, cfg.sweep_step} : parse_range(range_text);
    const fs::path path = fs::path(cfg.output_dir) / "equilibria.csv";
    CsvWriter w(path, "hhc equilibria", config_hash(cfg), {"I", "V", "n", "h", "m", "max_real", "stable"});
    const int n = static_cast<int>(std::floor((r.to - r.from) / r.step + 1e-9));
    State guess = steady_state(0.0);
    bool last_stable = true;
    for (int i = 0; i <= n; ++i) {
        const double I = r.from + i * r.step;
        State x;
        double max_real;
        try {
            x = find_equilibrium(I, cfg.diagram.params, guess);
            max_real = equilibrium_eigenvalues(I, cfg.diagram.params)[0].real();
        } catch (const Error& e) {
            std::cerr << "equilibrium failed at I=" << fmt17(I) << ": " << e.what() << '\n';
            return 2;
        }
        guess = x;
        const bool stable = max_real < 0.0;
        w.row({fmt17(I), fmt17(x[0]), fmt17(x[1]), fmt17(x[2]), fmt17(x[3]), fmt17(max_real), stable ? "1" : "0"});
        if (i > 0 && stable != last_stable)
            std::cout << "stability changes between I=" << fmt17(I - r.step) << " and I=" << fmt17(I) << '\n';
        last_stable = stable;
    }
    std::cout << "wrote " << path.string() << '\n';
    return 0;
}

// hopf ---------------------------------------------------------------------

int cmd_hopf(const Common& common, const std::string& range_text) {
    const RunConfig cfg = common.load();
    const Range r = range_text.empty() ? Range{cfg.sweep_lo, cfg.sweep_hi, cfg.diagram.sweep_step}
                                       : parse_range(range_text);
    const auto sweep = equilibrium_sweep(r.from, r.to, r.step, cfg.diagram.params);
    const auto points = hopf_points(sweep, cfg.diagram.hopf_tol, cfg.diagram.params);
    const fs::path path = fs::path(cfg.output_dir) / "hopf.csv";
    CsvWriter w(path, "hhc hopf", config_hash(cfg), {"I_star", "omega", "period"});
    for (const auto& h : points) {
        const double T = 2.0 * std::numbers::pi / h.omega;
        w.row({fmt17(h.current), fmt17(h.omega), fmt17(T)});
        std::printf("Hopf I*=%.10f  omega=%.8f  T=%.8f\n", h.current, h.omega, T);
    }
    std::cout << "wrote " << path.string() << '\n';
    return 0;
}

// cycle --------------------------------------------------------------------

int cmd_cycle(const Common& common, double I, const std::string& method, std::optional<int> harmonics,
              std::optional<int> subintervals, const std::string& init_path, const std::string& output) {
    if (method != "hb" && method != "collocation" && method != "shoot")
        throw UsageError("--method must be hb, collocation or shoot");
    const RunConfig cfg = common.load();
    const auto& p = cfg.diagram.params;
    const HHField f{p, I};

    // Initial orbit: a stored cycle, or a settled transient at I.
    CycleVariant guess;
    double T0;
    if (!init_path.empty()) {
        const CycleRecord init = read_cycle_file(init_path);
        guess = init.cycle;
        T0 = init.period();
        log(common, "initial guess from " + init_path);
    } else {
        log(common, "settling a transient at I=" + fmt17(I));
        guess = settle_transient(I, cfg.settle_time, p);
        T0 = std::get<Cycle>(guess).period;
    }
    const auto orbit = [&](double t) { return cycle_state(guess, t); };

    CycleVariant result;
    if (method == "hb") {
        const int K = harmonics.value_or(cfg.diagram.hb_harmonics);
        if (K < 1) throw UsageError("--harmonics must be >= 1");
        const auto ops = build_operators(K, cfg.diagram.hb_oversample);
        FourierCycle init = std::holds_alternative<FourierCycle>(guess)
                                ? resize_harmonics(std::get<FourierCycle>(guess), K)
                                : fourier_from_orbit<4>(orbit, T0, ops);
        result = solve_hb(f, init, ops, cfg.cycle_tol);
    } else if (method == "collocation") {
        const int N = subintervals.value_or(cfg.diagram.collocation_subintervals);
        if (N < 4) throw UsageError("--subintervals must be >= 4");
        result = solve_fixed_count(f, [&](double tau) { return orbit(tau * T0); }, T0, N);
    } else {
        Cycle g;
        g.period = T0;
        g.anchor_state = orbit(0.0);
        result = shoot(f, g, cfg.cycle_tol, {.steps_per_period = cfg.shooting_steps});
    }
    FloquetOptions fopt = cfg.diagram.floquet;
    const CycleRecord rec = make_record(result, I, p, config_hash(cfg), std::nullopt, cfg.diagram.hb_oversample,
                                        cfg.shooting_steps, cfg.gibbs_threshold, fopt);
    const fs::path path = output.empty() ? fs::path(cfg.output_dir) / "cycle.json" : fs::path(output);
    write_json_file(path, to_json(rec));

    std::printf("I=%s method=%s T=%.12f residual=%.3e (%s) %s\n", fmt17(I).c_str(), rec.method.c_str(),
                rec.period(), rec.residual, rec.residual_kind.c_str(), to_string(rec.spectrum.stability));
    for (const auto& m : rec.spectrum.all()) std::printf("  mu=%s\n", complex_text(m).c_str());
    if (rec.gibbs_warning())
        std::fprintf(stderr, "warning: Gibbs ripple %.3e above threshold %.3e\n", *rec.ripple, rec.ripple_threshold);
    std::cout << "wrote " << path.string() << '\n';
    return 0;
}

// diagram ------------------------------------------------------------------

int cmd_diagram(const Common& common) {
    const RunConfig cfg = common.load();
    const fs::path dir = cfg.output_dir;
    const int threads = worker_cap();
    DiagramRun run;
    try {
        run = run_diagram(cfg.diagram, [&](const std::string& m) { log(common, m); }, threads);
    } catch (const Error& e) {
        run.incomplete.push_back(std::string("pipeline aborted: ") + e.what());
        write_diagram(dir, run, cfg, false);
        std::cerr << e.what() << "\npartial outputs in " << dir.string() << '\n';
        return 2;
    }
    const auto files = write_diagram(dir, run, cfg);
    for (const auto& e : run.diagram.events)
        std::printf("%-16s I*=%.10f  T=%.8f  branch=%d  certified=%d\n", to_string(e.kind), e.I_star, e.period,
                    e.branch, e.certified ? 1 : 0);
    for (const auto& f : run.incomplete) std::fprintf(stderr, "incomplete: %s\n", f.c_str());
    std::cout << "wrote " << files.size() + 1 << " files to " << dir.string() << '\n';
    return 0;
}

// floquet ------------------------------------------------------------------

int cmd_floquet(const Common& common, const std::string& cycle_path, const std::string& currents,
                std::optional<int> steps) {
    const RunConfig cfg = common.load();
    CycleRecord rec;
    try {
        rec = read_cycle_file(cycle_path);
    } catch (const Error& e) {
        std::cerr << "cannot read cycle file: " << e.what() << '\n';
        return 2;
    }
    FloquetOptions fopt = cfg.diagram.floquet;
    if (steps) {
        if (*steps < 100) throw UsageError("--refine-steps must be >= 100");
        fopt.steps = *steps;
    }
    const std::vector<double> Is = currents.empty() ? std::vector<double>{rec.current} : parse_list(currents);
    const HHField f{rec.params, rec.current};

    // Each current is reached from the stored cycle along its own sheet.
    std::function<BranchPoint(double)> at;
    std::optional<HarmonicBalanceBranch<HHField>> hb;
    std::optional<CollocationBranch<HHField>> col;
    BranchPoint start;
    if (const auto* c = std::get_if<FourierCycle>(&rec.cycle)) {
        hb.emplace(f, c->K, rec.oversample, c->K, cfg.diagram.hb_drop_tol, fopt);
        start = hb->describe(hb->load(*c, rec.current));
        at = [&](double I) { return solve_current_by_period(*hb, start, I); };
    } else {
        CollocationCycle cc;
        if (const auto* c = std::get_if<CollocationCycle>(&rec.cycle)) {
            cc = *c;
        } else {
            const Cycle& s = std::get<Cycle>(rec.cycle);
            const HermiteOrbit<HHField> orbit(f, s.samples);
            cc = solve_fixed_count(f, [&](double tau) { return orbit(tau * s.period); }, s.period,
                                   cfg.diagram.collocation_subintervals);
        }
        col.emplace(f, cc.poly.mesh.subintervals(), cfg.diagram.remesh_every, fopt);
        start = col->describe(col->load(cc, rec.current));
        at = [&](double I) { return solve_current_by_period(*col, start, I); };
    }

    const fs::path path = fs::path(cfg.output_dir) / "floquet.csv";
    CsvWriter w(path, "hhc floquet", config_hash(cfg),
                {"I", "period", "mu1_re", "mu1_im", "mu2_re", "mu2_im", "mu3_re", "mu3_im", "mu4_re", "mu4_im",
                 "trivial_error", "stability"});
    std::printf("%-14s %-14s %-12s %-14s %-16s %-14s %-10s\n", "I", "T", "mu1", "mu2", "mu3", "mu4", "trivial_err");
    for (double I : Is) {
        const BranchPoint q = at(I);
        const auto mu = report_order(q.spectrum);
        std::vector<std::string> row{fmt17(q.I), fmt17(q.period)};
        for (const auto& m : mu) {
            row.push_back(fmt17(m.real()));
            row.push_back(fmt17(m.imag()));
        }
        row.push_back(fmt17(q.spectrum.trivial_error));
        row.push_back(to_string(q.spectrum.stability));
        w.row(row);
        std::printf("%-14.8f %-14.8f %-12s %-14s %-16s %-14s %-10.2e\n", q.I, q.period, complex_text(mu[0]).c_str(),
                    complex_text(mu[1]).c_str(), complex_text(mu[2]).c_str(), complex_text(mu[3]).c_str(),
                    q.spectrum.trivial_error);
    }
    std::cout << "wrote " << path.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Periodic solutions and bifurcations of the Hodgkin-Huxley membrane"};
    app.require_subcommand(1);
    app.fallthrough();
    Common common;
    app.add_option("--config", common.config_path, "key = value configuration file")->check(CLI::ExistingFile);
    app.add_option("--out", common.out_dir, "output directory (overrides output.dir)");
    app.add_flag("--verbose,-v", common.verbose, "progress on stderr");

    std::string range;
    auto* eq = app.add_subcommand("equilibria", "rest states and their stability over a current range");
    eq->add_option("--range", range, "FROM:TO:STEP in uA/cm^2");

    auto* hopf = app.add_subcommand("hopf", "Hopf points of the rest state");
    hopf->add_option("--range", range, "FROM:TO:STEP bracketing sweep");

    double current = 0.0;
    std::string method = "hb", init, output;
    std::optional<int> harmonics, subintervals;
    auto* cyc = app.add_subcommand("cycle", "solve one periodic orbit");
    cyc->add_option("--current,-I", current, "applied current")->required();
    cyc->add_option("--method", method, "hb | collocation | shoot");
    cyc->add_option("--harmonics,-K", harmonics, "harmonic count for hb");
    cyc->add_option("--subintervals,-N", subintervals, "subinterval count for collocation");
    cyc->add_option("--init", init, "cycle JSON used as the initial guess")->check(CLI::ExistingFile);
    cyc->add_option("--output,-o", output, "cycle JSON path (default OUT/cycle.json)");

    auto* dia = app.add_subcommand("diagram", "full bifurcation diagram and artifacts");

    std::string cycle_path, currents;
    std::optional<int> refine;
    auto* flo = app.add_subcommand("floquet", "multiplier table at given currents, continued from a cycle file");
    flo->add_option("--cycle", cycle_path, "cycle JSON")->required();
    flo->add_option("--currents", currents, "comma separated currents (default: the cycle's own)");
    flo->add_option("--refine-steps", refine, "RK4 steps for the variational equation");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        (void)common.load();
    } catch (const Error& e) {
        std::cerr << "config: " << e.what() << '\n';
        return 1;
    }

    try {
        if (*eq) return cmd_equilibria(common, range);
        if (*hopf) return cmd_hopf(common, range);
        if (*cyc) return cmd_cycle(common, current, method, harmonics, subintervals, init, output);
        if (*dia) return cmd_diagram(common);
        if (*flo) return cmd_floquet(common, cycle_path, currents, refine);
    } catch (const UsageError& e) {
        std::cerr << "usage: " << e.what() << '\n';
        return 1;
    } catch (const Error& e) {
        std::cerr << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << e.what() << '\n';
        return 2;
    }
    return 1;
}
