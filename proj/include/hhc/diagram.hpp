#pragma once

// End-to-end bifurcation diagram: equilibrium sweep, Hopf points, the
// branch through the start current in both directions, branches entered
// from Hopf seeds, then event location on every branch.

#include <cmath>
#include <functional>
#include <future>
#include <optional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "hhc/collocation.hpp"
#include "hhc/continuation.hpp"
#include "hhc/harmonic_balance.hpp"
#include "hhc/model.hpp"
#include "hhc/shooting.hpp"

namespace hhc {

struct DiagramSettings {
    HHParams params;
    double I_min = 0.0;
    double I_max = 200.0;
    double sweep_step = 1.0;         // equilibrium sweep used to bracket Hopf points
    double hopf_tol = 1e-10;
    double start_current = 20.0;     // stable cycle seeded by a transient here
    double settle_time = 300.0;
    int hb_harmonics = 50;
    int hb_max_harmonics = 64;
    int hb_oversample = 3;
    double hb_tol = 1e-10;
    double hb_drop_tol = 1e-9;
    int collocation_subintervals = 400;
    int remesh_every = 10;
    double seed_offset = 0.02;       // distance of a Hopf seed from the Hopf point
    double seed_amplitude = 1.0;     // mV
    double handoff_current = 8.5;    // Hopf-seeded branches move to collocation here
    int max_folds = 2;               // turning points followed per collocation branch
    double fold_overrun = 0.05;
    StepControl step;
    FloquetOptions floquet;
};

struct EquilibriumRow {
    double I = 0.0;
    State state = State::Zero();
    double max_real = 0.0;
    bool stable = true;
};

/// Rest state and leading eigenvalue real part on a uniform grid.
inline std::vector<EquilibriumRow> equilibrium_sweep(double I_lo, double I_hi, double step, const HHParams& p = {}) {
    if (!(step > 0.0) || !(I_hi >= I_lo)) throw Error(ErrorKind::StartInvalid, "invalid sweep range");
    std::vector<EquilibriumRow> rows;
    const int n = static_cast<int>(std::floor((I_hi - I_lo) / step + 1e-9));
    State guess = steady_state(0.0);
    for (int i = 0; i <= n; ++i) {
        const double I = I_lo + i * step;
        EquilibriumRow r;
        r.I = I;
        r.state = find_equilibrium(I, p, guess);
        guess = r.state;
        r.max_real = equilibrium_eigenvalues(I, p)[0].real();
        r.stable = r.max_real < 0.0;
        rows.push_back(r);
    }
    return rows;
}

/// Hopf points bracketed by stability changes of a sweep.
inline std::vector<HopfPoint> hopf_points(const std::vector<EquilibriumRow>& sweep, double tol, const HHParams& p = {}) {
    std::vector<HopfPoint> out;
    for (std::size_t k = 0; k + 1 < sweep.size(); ++k)
        if (sweep[k].stable != sweep[k + 1].stable) out.push_back(detect_hopf(sweep[k].I, sweep[k + 1].I, tol, p));
    return out;
}

inline BifurcationEvent hopf_event(const HopfPoint& h, const HHParams& p) {
    BifurcationEvent ev;
    ev.kind = EventKind::Hopf;
    ev.I_star = h.current;
    ev.period = 2.0 * std::numbers::pi / h.omega;
    ev.branch = -1;
    const double d = 1e-6 * std::max(1.0, std::abs(h.current));
    const double below = equilibrium_eigenvalues(h.current - d, p)[0].real();
    const double above = equilibrium_eigenvalues(h.current + d, p)[0].real();
    ev.certificate = {0.0, h.omega};
    ev.certified = (below < 0.0) != (above < 0.0);
    std::ostringstream os;
    os.precision(10);
    os << "max Re(lambda) " << below << " at I-" << d << ", " << above << " at I+" << d << "; omega=" << h.omega;
    ev.evidence = os.str();
    return ev;
}

struct DiagramRun {
    Diagram diagram;
    std::vector<Branch> branches;
    std::vector<HopfPoint> hopf;
    std::vector<std::string> incomplete;  // branches or events that failed, with the reason
};

namespace detail {

// Locates every fold and period doubling along a branch; failures are
// recorded, not thrown.
template <class D>
void locate_events(const D& disc, Branch& br, std::vector<std::string>& failures) {
    for (std::size_t k : turning_points(br, -INFINITY, INFINITY)) {
        try {
            br.events.push_back(locate_fold_at(disc, br, k));
        } catch (const Error& e) {
            failures.push_back("branch " + std::to_string(br.id) + " fold near I=" + std::to_string(br.points[k].I) +
                               ": " + e.what());
        }
    }
    for (std::size_t k : pd_segments(br)) {
        try {
            br.events.push_back(locate_pd_at(disc, br, k));
        } catch (const Error& e) {
            failures.push_back("branch " + std::to_string(br.id) + " period doubling near I=" +
                               std::to_string(br.points[k].I) + ": " + e.what());
        }
    }
}

inline StepControl limited(StepControl c, const DiagramSettings& s) {
    c.I_min = std::max(c.I_min, s.I_min);
    c.I_max = std::min(c.I_max, s.I_max);
    return c;
}

}  // namespace detail

namespace detail {

struct TaskOutput {
    std::vector<Branch> branches;
    std::vector<std::string> failures;
    std::vector<std::string> log;
    std::optional<double> hopf_endpoint;
};

inline std::string describe(const Branch& br, const std::string& what) {
    return "branch " + std::to_string(br.id) + " (" + what + "): " + std::to_string(br.points.size()) + " points, " +
           to_string(br.termination);
}

// Harmonic balance upward from the start cycle.
inline TaskOutput upward_branch(const DiagramSettings& s, const Cycle& c, int id) {
    TaskOutput out;
    try {
        const HHField f{s.params, s.start_current};
        const HermiteOrbit<HHField> orbit(f, c.samples);
        const auto ops = build_operators(s.hb_harmonics, s.hb_oversample);
        const FourierCycle fc = solve_hb(f, fourier_from_orbit<4>(orbit, c.period, ops), ops, s.hb_tol);
        HarmonicBalanceBranch<HHField> disc(f, s.hb_harmonics, s.hb_oversample, s.hb_max_harmonics, s.hb_drop_tol,
                                            s.floquet);
        Branch br = continue_branch(disc, disc.load(fc, s.start_current), +1, limited(s.step, s));
        br.id = id;
        if (br.termination == Termination::HopfEndpoint) out.hopf_endpoint = br.points.back().I;
        locate_events(disc, br, out.failures);
        out.log.push_back(describe(br, "harmonic balance, up"));
        out.branches.push_back(std::move(br));
    } catch (const Error& e) {
        out.failures.push_back("upward branch from I=" + std::to_string(s.start_current) + ": " + e.what());
    }
    return out;
}

// Collocation downward from the start cycle, through the low-current knees.
inline TaskOutput downward_branch(const DiagramSettings& s, const Cycle& c, int id) {
    TaskOutput out;
    try {
        const HHField f{s.params, s.start_current};
        const HermiteOrbit<HHField> orbit(f, c.samples);
        const auto guess = [&](double tau) { return orbit(tau * c.period); };
        const CollocationCycle cc = solve_fixed_count(f, guess, c.period, s.collocation_subintervals);
        CollocationBranch<HHField> disc(f, s.collocation_subintervals, s.remesh_every, s.floquet);
        StepControl ctrl = limited(s.step, s);
        ctrl.max_folds = s.max_folds;
        ctrl.fold_overrun = s.fold_overrun;
        Branch br = continue_branch(disc, disc.load(cc, s.start_current), -1, ctrl);
        br.id = id;
        if (br.termination == Termination::HopfEndpoint) out.hopf_endpoint = br.points.back().I;
        locate_events(disc, br, out.failures);
        out.log.push_back(describe(br, "collocation, down"));
        out.branches.push_back(std::move(br));
    } catch (const Error& e) {
        out.failures.push_back("downward branch from I=" + std::to_string(s.start_current) + ": " + e.what());
    }
    return out;
}

// Harmonic balance from a Hopf seed on the side where the rest state is
// stable, handed to collocation once the cycle has grown.
inline TaskOutput hopf_seeded_branch(const DiagramSettings& s, const HopfPoint& h, int id) {
    TaskOutput out;
    try {
        const double d = s.seed_offset;
        const bool stable_below = equilibrium_eigenvalues(h.current - d, s.params)[0].real() < 0.0;
        const int direction = stable_below ? -1 : +1;
        const double I0 = h.current + direction * d;
        if (I0 <= s.I_min || I0 >= s.I_max) return out;
        const HHField f{s.params, I0};
        const FourierCycle seed = hopf_branch_seed(h.current, h.omega, s.seed_amplitude, s.params);
        const FourierCycle fc = solve_hb(f, seed, build_operators(seed.K, s.hb_oversample), s.hb_tol);

        HarmonicBalanceBranch<HHField> hb(f, seed.K, s.hb_oversample, s.hb_max_harmonics, s.hb_drop_tol, s.floquet);
        StepControl ctrl = limited(s.step, s);
        ctrl.initial = std::min(ctrl.initial, 10.0 * d);
        if (direction < 0 && s.handoff_current < I0) ctrl.I_min = std::max(ctrl.I_min, s.handoff_current);
        Branch near = continue_branch(hb, hb.load(fc, I0), direction, ctrl);
        near.id = id;
        locate_events(hb, near, out.failures);
        out.log.push_back(describe(near, "harmonic balance from the Hopf seed at I=" + std::to_string(h.current)));
        const BranchPoint last = near.points.back();
        out.branches.push_back(std::move(near));
        if (last.I <= s.I_min || last.I >= s.I_max) return out;

        const FourierCycle& fl = std::get<FourierCycle>(last.cycle);
        const HHField g{s.params, last.I};
        const auto guess = [&](double tau) { return evaluate_series(fl, tau * fl.period); };
        const CollocationCycle cc = solve_fixed_count(g, guess, fl.period, s.collocation_subintervals);
        CollocationBranch<HHField> disc(g, s.collocation_subintervals, s.remesh_every, s.floquet);
        StepControl far_ctrl = limited(s.step, s);
        far_ctrl.max_folds = s.max_folds;
        far_ctrl.fold_overrun = s.fold_overrun;
        Branch far = continue_branch(disc, disc.load(cc, last.I), direction, far_ctrl);
        far.id = id + 1;
        locate_events(disc, far, out.failures);
        out.log.push_back(describe(far, "collocation continuation of branch " + std::to_string(id)));
        out.branches.push_back(std::move(far));
    } catch (const Error& e) {
        out.failures.push_back("Hopf seed at I=" + std::to_string(h.current) + ": " + e.what());
    }
    return out;
}

}  // namespace detail

/// Runs the diagram pipeline. With `threads` > 1 independent branches are
/// followed concurrently; results do not depend on it. `progress`, when
/// set, receives one line per stage.
inline DiagramRun run_diagram(const DiagramSettings& s, const std::function<void(const std::string&)>& progress = {},
                              int threads = 1) {
    const auto say = [&](const std::string& m) {
        if (progress) progress(m);
    };
    const auto policy = threads > 1 ? std::launch::async : std::launch::deferred;
    DiagramRun run;
    const auto sweep = equilibrium_sweep(s.I_min, s.I_max, s.sweep_step, s.params);
    run.hopf = hopf_points(sweep, s.hopf_tol, s.params);
    std::vector<BifurcationEvent> hopf_events;
    for (const auto& h : run.hopf) hopf_events.push_back(hopf_event(h, s.params));
    say("hopf points: " + std::to_string(run.hopf.size()));

    std::vector<double> reached;  // currents where a branch collapsed onto a Hopf point
    const auto collect = [&](detail::TaskOutput out) {
        for (auto& b : out.branches) run.branches.push_back(std::move(b));
        for (auto& f : out.failures) run.incomplete.push_back(std::move(f));
        for (const auto& m : out.log) say(m);
        if (out.hopf_endpoint) reached.push_back(*out.hopf_endpoint);
    };

    if (s.start_current > s.I_min && s.start_current < s.I_max) {
        try {
            const HHField base{s.params, s.start_current};
            const Cycle c = shoot(base, settle_transient(s.start_current, s.settle_time, s.params));
            auto up = std::async(policy, [&] { return detail::upward_branch(s, c, 1); });
            auto down = std::async(policy, [&] { return detail::downward_branch(s, c, 2); });
            collect(up.get());
            collect(down.get());
        } catch (const Error& e) {
            run.incomplete.push_back("start cycle at I=" + std::to_string(s.start_current) + ": " + e.what());
        }
    }

    // Hopf points no branch reached get their own seeded branch.
    std::vector<std::future<detail::TaskOutput>> seeded;
    int id = 3;
    for (const auto& h : run.hopf) {
        const bool covered = std::any_of(reached.begin(), reached.end(),
                                         [&](double I) { return std::abs(I - h.current) < 1.0; });
        if (covered) continue;
        seeded.push_back(std::async(policy, [&s, h, id] { return detail::hopf_seeded_branch(s, h, id); }));
        id += 2;
    }
    for (auto& f : seeded) collect(f.get());

    const double boundary = run.hopf.empty() ? s.I_min
                                             : std::min_element(run.hopf.begin(), run.hopf.end(),
                                                                [](const HopfPoint& a, const HopfPoint& b) {
                                                                    return a.current < b.current;
                                                                })->current;
    run.diagram = assemble_diagram(run.branches, boundary, hopf_events);
    return run;
}

}  // namespace hhc
