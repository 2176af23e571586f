// Acceptance report: one PASS/FAIL line per criterion, with the measured
// values next to the targets. Exits 0 once every criterion has been
// evaluated, whatever the verdicts; a crash or a skipped criterion is the
// only failure of the run itself.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "fields.hpp"
#include "hhc/diagram.hpp"
#include "hhc/orbit.hpp"

using namespace hhc;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// Shared across criteria 2 to 5 and 9.
struct DiagramContext {
    DiagramSettings settings;
    DiagramRun run;
    double seconds = 0.0;
    std::vector<HopfPoint> hopf;
};

DiagramContext& diagram() {
    static DiagramContext ctx = [] {
        DiagramContext c;
        const auto t0 = Clock::now();
        c.run = run_diagram(c.settings);
        c.seconds = seconds_since(t0);
        c.hopf = c.run.hopf;
        return c;
    }();
    return ctx;
}

bool starts_at(const Branch& br, double I) { return !br.points.empty() && std::abs(br.points.front().I - I) < 1e-9; }

std::vector<const Branch*> start_branches(const DiagramContext& ctx) {
    std::vector<const Branch*> out;
    for (const auto& br : ctx.run.branches)
        if (starts_at(br, ctx.settings.start_current)) out.push_back(&br);
    return out;
}

std::vector<const Branch*> hopf_seeded_branches(const DiagramContext& ctx) {
    std::vector<const Branch*> out;
    for (const auto& br : ctx.run.branches)
        if (!starts_at(br, ctx.settings.start_current)) out.push_back(&br);
    return out;
}

const BifurcationEvent* nearest_event(const std::vector<BifurcationEvent>& events, EventKind kind, double I) {
    const BifurcationEvent* best = nullptr;
    for (const auto& e : events)
        if (e.kind == kind && (!best || std::abs(e.I_star - I) < std::abs(best->I_star - I))) best = &e;
    return best;
}

Cycle shot_cycle(double I) { return shoot(HHField{HHParams{}, I}, settle_transient(I, 300.0)); }

// 1

Verdict hopf_points_check() {
    const auto t0 = Clock::now();
    const auto h = hopf_points(equilibrium_sweep(0.0, 160.0, 1.0), 1e-10);
    const double secs = seconds_since(t0);
    if (h.size() != 2) return {false, fmt("expected two Hopf points, found %zu", h.size())};
    const double I2 = h[0].current, I1 = h[1].current;
    const bool ok2 = std::abs(I2 - 9.7375) <= 1e-3, ok1 = std::abs(I1 - 154.50) <= 5e-2, fast = secs < 5.0;
    return {ok2 && ok1 && fast,
            fmt("I2=%.8f (target 9.7375 +-1e-3: %s) I1=%.8f (target 154.50 +-5e-2: %s) runtime %.2fs (<5s: %s)", I2,
                ok2 ? "ok" : "off", I1, ok1 ? "ok" : "off", secs, fast ? "ok" : "slow")};
}

// 2

Verdict stable_branch_check() {
    auto& ctx = diagram();
    double lo = INFINITY, hi = -INFINITY, amp_max = 0.0, amp_at_hi = 0.0;
    for (const Branch* br : start_branches(ctx))
        for (const auto& p : br->points) {
            if (p.spectrum.stability != Stability::Stable) continue;
            lo = std::min(lo, p.I);
            amp_max = std::max(amp_max, p.amplitude());
            if (p.I > hi) hi = p.I, amp_at_hi = p.amplitude();
        }
    const auto* I5 = nearest_event(ctx.run.diagram.events, EventKind::Fold, 6.2649);
    if (!I5 || ctx.hopf.size() < 2) return {false, "fold or upper Hopf point missing"};
    const double I1 = ctx.hopf.back().current;
    const bool reaches_fold = lo <= I5->I_star + 1e-2;
    const bool reaches_hopf = std::abs(hi - I1) <= 1.0;
    const bool shrinks = amp_at_hi < 0.05 * amp_max;
    const bool fast = ctx.seconds < 600.0;
    return {reaches_fold && reaches_hopf && shrinks && fast,
            fmt("stable cycles on [%.6f, %.6f] vs [I5=%.6f, I1=%.6f]; amplitude %.3f mV at the top end (max %.1f mV); "
                "diagram runtime %.1fs",
                lo, hi, I5->I_star, I1, amp_at_hi, amp_max, ctx.seconds)};
}

// 3

Verdict fold_I5_check() {
    auto& ctx = diagram();
    const auto* e = nearest_event(ctx.run.diagram.events, EventKind::Fold, 6.2649);
    if (!e) return {false, "no fold found"};
    const auto& br = *std::find_if(ctx.run.branches.begin(), ctx.run.branches.end(),
                                   [&](const Branch& b) { return b.id == e->branch; });
    double gap = INFINITY;
    if (e->where) gap = std::abs(closest_multiplier(e->where->spectrum, 1.0) - 1.0);
    const bool on_target = std::abs(e->I_star - 6.2649) <= 1e-2;
    const bool certified = e->certified && e->where && gap < ctx.settings.floquet.thresholds.distance;
    const bool collocation = br.solver == "collocation";
    return {on_target && certified && collocation,
            fmt("I5=%.10f (target 6.2649 +-1e-2); solver %s; certificate |mu-1|=%.2e, %s", e->I_star,
                br.solver.c_str(), gap, e->evidence.c_str())};
}

// 4

Verdict folds_I3_I4_check() {
    auto& ctx = diagram();
    std::vector<BifurcationEvent> events;
    for (const Branch* br : hopf_seeded_branches(ctx)) events.insert(events.end(), br->events.begin(), br->events.end());
    const auto* I3 = nearest_event(events, EventKind::Fold, 7.92199);
    const auto* I4 = nearest_event(events, EventKind::Fold, 7.84655);
    if (!I3 || !I4 || I3 == I4) return {false, "folds missing on the Hopf-seeded branches"};
    const bool ok3 = std::abs(I3->I_star - 7.92199) <= 1e-3 && I3->certified;
    const bool ok4 = std::abs(I4->I_star - 7.84655) <= 1e-3 && I4->certified;
    return {ok3 && ok4, fmt("I3=%.10f (7.92199 +-1e-3, certified %d) I4=%.10f (7.84655 +-1e-3, certified %d)",
                            I3->I_star, I3->certified, I4->I_star, I4->certified)};
}

// 5

Verdict period_doubling_check() {
    auto& ctx = diagram();
    const auto* e = nearest_event(ctx.run.diagram.events, EventKind::PeriodDoubling, 7.921978);
    if (!e || !e->where) return {false, "no located period doubling"};
    const bool at = std::abs(e->I_star - 7.921978) <= 1e-5;

    const HHField f{ctx.settings.params, e->where->I};
    const auto& cc = std::get<CollocationCycle>(e->where->cycle);
    CollocationBranch<HHField> disc(f, cc.poly.mesh.subintervals(), ctx.settings.remesh_every, ctx.settings.floquet);
    const BranchPoint start = disc.describe(disc.load(cc, e->where->I));
    const BranchPoint row = solve_current_by_period(disc, start, 7.92197768);
    const auto mu = report_order(row.spectrum);
    const bool mu4 = std::abs(mu[3].real() + 1.0) <= 0.02 && std::abs(mu[3].imag()) < 1e-9;
    const bool triv = std::abs(mu[0] - 1.0) <= 1e-3;
    const bool mu3 = std::abs(mu[2]) >= 1000.0 && std::abs(mu[2]) <= 10000.0;
    const bool mu2 = std::abs(mu[1]) < 5e-3;
    std::size_t pd_count = ctx.run.diagram.count(EventKind::PeriodDoubling);
    return {at && mu4 && triv && mu3 && mu2,
            fmt("I6=%.10f (7.921978 +-1e-5); at I=7.92197768: mu1=%.6f mu2=%.1e mu3=%.2f mu4=%.5f (trivial +-1e-3, "
                "|mu2|<5e-3, mu4 -1+-0.02, |mu3| in [1e3,1e4]); %zu period doublings in the diagram",
                e->I_star, mu[0].real(), std::abs(mu[1]), mu[2].real(), mu[3].real(), pd_count)};
}

// 6

Verdict harmonic_count_check() {
    const HopfPoint h = detect_hopf(9.0, 10.0, 1e-10);
    const HHField f{HHParams{}, 9.72};
    int K_needed = -1;
    double res = INFINITY;
    Stability stab = Stability::Stable;
    for (int K = 1; K <= 2 && K_needed < 0; ++K) {
        try {
            const auto ops = build_operators(K, 3);
            const auto c = solve_hb(f, resize_harmonics(hopf_branch_seed(h.current, h.omega, 1.0), K), ops, 1e-12);
            res = hb_residual(c, c.period, f, ops).cwiseAbs().maxCoeff();
            stab = spectrum(f, c).stability;
            if (res < 1e-6 && stab == Stability::Unstable) K_needed = K;
        } catch (const Error&) {
        }
    }
    const bool low = K_needed > 0;

    const HHField f20{HHParams{}, 20.0};
    const Cycle c = shot_cycle(20.0);
    const HermiteOrbit<HHField> orbit(f20, c.samples);
    const auto ops = build_operators(50, 3);
    const auto hb = solve_hb(f20, fourier_from_orbit<4>(orbit, c.period, ops), ops, 1e-10);
    const auto mag = harmonic_magnitudes(hb);
    const double top = *std::max_element(mag.begin() + 1, mag.end());
    const double ratio = mag[50] / top;
    const bool decay = ratio < 1e-8;
    return {low && decay, fmt("(a) I=9.72 unstable cycle: K=%d, balance residual %.1e (<1e-6 with K<=2: %s); "
                              "(b) I=20, K=50: |A50|/max|Ak| = %.2e (<1e-8: %s)",
                              K_needed, res, low ? "ok" : "no", ratio, decay ? "ok" : "no")};
}

// 7

Verdict cross_solver_check() {
    std::ostringstream os;
    bool all = true;
    for (double I : {15.0, 20.0, 50.0, 100.0, 140.0}) {
        const HHField f{HHParams{}, I};
        const Cycle s = shot_cycle(I);
        const HermiteOrbit<HHField> orbit(f, s.samples);
        const auto col =
            solve_fixed_count(f, [&](double tau) { return orbit(tau * s.period); }, s.period, 200);
        const auto ops = build_operators(50, 3);
        const auto hb = solve_hb(f, fourier_from_orbit<4>(orbit, s.period, ops), ops, 1e-10);
        const auto hbo = [&](double t) { return evaluate_series(hb, t); };
        const double dT = std::max({std::abs(col.period / s.period - 1.0), std::abs(hb.period / s.period - 1.0),
                                    std::abs(hb.period / col.period - 1.0)});
        const double dV_col = aligned_deviation(col, col.period, orbit, s.period);
        const double dV_hb = std::max(aligned_deviation(hbo, hb.period, orbit, s.period),
                                      aligned_deviation(hbo, hb.period, col, col.period));
        const bool ok = dT < 1e-5 && dV_col < 1e-2 && dV_hb < 1e-2;
        all = all && ok;
        os << fmt("I=%g %s [dT/T %.1e, dV col %.1e, dV hb %.1e]; ", I, ok ? "ok" : "off", dT, dV_col, dV_hb);
    }
    return {all, os.str() + "tolerances dT/T<1e-5, dV<1e-2 mV"};
}

// 8

Verdict property_check() {
    const auto t0 = Clock::now();
    std::vector<std::string> failed;
    const auto expect = [&](bool ok, const char* what) {
        if (!ok) failed.push_back(what);
    };

    bool expc_ok = std::abs(expc(0.0) - 1.0) == 0.0 && std::isfinite(expc(-745.0)) && std::isfinite(expc(745.0));
    for (double x : {1e-12, 1e-4, 0.3, 7.0, 200.0})
        expc_ok = expc_ok && std::abs(expc(-x) - expc(x) - x) <= 4e-16 * std::max(1.0, x);
    expect(expc_ok, "expc");

    const HHParams p;
    double jac_err = 0.0;
    for (const State& x : {State(-10.0, 0.4, 0.5, 0.1), State(-25.0, 0.6, 0.2, 0.8), State(-90.0, 0.7, 0.1, 0.9)}) {
        const Matrix4 J = jacobian(x, p, 20.0);
        for (int j = 0; j < 4; ++j) {
            const double h = 1e-6 * std::max(1.0, std::abs(x[j]));
            State a = x, b = x;
            a[j] += h, b[j] -= h;
            const State col = (vector_field(a, p, 20.0) - vector_field(b, p, 20.0)) / (2 * h);
            jac_err = std::max(jac_err, (col - J.col(j)).cwiseAbs().maxCoeff() / std::max(1.0, col.cwiseAbs().maxCoeff()));
        }
    }
    expect(jac_err < 1e-6, "jacobian");

    {
        const int K = 8;
        MatrixXd c = MatrixXd::Zero(2 * K + 1, 1);
        for (int i = 0; i < 2 * K + 1; ++i) c(i, 0) = std::sin(1.0 + 3.7 * i);
        const auto fine = build_operators(K, 8), guard = build_operators(K, 2), bare = build_operators(K, 1);
        const auto sq = [&](const SpectralOperators& o) -> MatrixXd {
            return o.analysis * (o.synthesis * c).array().square().matrix();
        };
        expect((guard.analysis * (guard.synthesis * c) - c).cwiseAbs().maxCoeff() < 1e-12, "transform round trip");
        expect((sq(guard) - sq(fine)).cwiseAbs().maxCoeff() < 1e-12 && (sq(bare) - sq(fine)).cwiseAbs().maxCoeff() > 1e-3,
               "aliasing guard");
    }

    {
        const testfields::Oscillator osc;
        const Eigen::Vector2d x0(1.0, 0.0), exact(std::cos(10.0), -std::sin(10.0));
        const double r = (flow(osc, x0, 10.0, 200) - exact).norm() / (flow(osc, x0, 10.0, 400) - exact).norm();
        expect(std::abs(r - 16.0) < 1.0, "rk4 order");
        const auto m = monodromy_coupled(osc, x0, 2.0 * std::numbers::pi, 4000);
        expect((m.matrix - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 1e-10, "oscillator monodromy");
        FourierCycleT<2> c;
        c.K = 1;
        c.period = 2.0 * std::numbers::pi;
        c.coeffs = MatrixXd::Zero(3, 2);
        c.coeffs(1, 0) = 1.0;
        c.coeffs(2, 1) = -1.0;
        expect(hb_residual(c, c.period, osc, build_operators(1, 3)).cwiseAbs().maxCoeff() < 1e-14, "hb exact at K=1");
    }

    {
        const testfields::VanDerPol vdp;
        CycleT<2> g;
        g.anchor_state = flow(vdp, Eigen::Vector2d(2.0, 0.0), 60.0, 6000);
        g.period = 6.6;
        const auto s = shoot(vdp, g);
        HermiteOrbit<testfields::VanDerPol> orbit(vdp, s.samples);
        const auto T_at = [&](int N) {
            return solve_fixed_count(vdp, [&](double tau) { return orbit(tau * s.period); }, s.period, N, 0).period;
        };
        const double r = std::abs(T_at(40) - testfields::vdp_period) / std::abs(T_at(80) - testfields::vdp_period);
        expect(r > 12.0 && r < 20.0, "collocation order");
    }

    const HHField f20{p, 20.0};
    expect(std::abs(spectrum(f20, shot_cycle(20.0)).trivial - 1.0) < 1e-3, "trivial multiplier");

    const double secs = seconds_since(t0);
    std::string list;
    for (const auto& s : failed) list += " " + s;
    return {failed.empty() && secs < 60.0,
            fmt("%zu failing checks%s; runtime %.1fs (<60s)", failed.size(), list.c_str(), secs)};
}

// 9

Verdict gibbs_check() {
    auto& ctx = diagram();
    const DiagramSettings& st = ctx.settings;
    const auto ops = build_operators(50, 3);

    // HB K=50 seeded from a collocation cycle; max V deviation after alignment.
    const auto hb_deviation = [&](const CollocationCycle& cc, double I) {
        const HHField fi{st.params, I};
        const auto hb = solve_hb(fi, fourier_from_orbit<4>(cc, cc.period, ops), ops, 1e-10);
        return aligned_deviation([&](double t) { return evaluate_series(hb, t); }, hb.period, cc, cc.period);
    };

    const HHField f20{st.params, 20.0};
    const Cycle s = shot_cycle(20.0);
    const HermiteOrbit<HHField> orbit(f20, s.samples);
    const auto c20 = solve_fixed_count(f20, [&](double tau) { return orbit(tau * s.period); }, s.period,
                                       st.collocation_subintervals);
    const double base = hb_deviation(c20, 20.0);

    // Collocation reference at low current, continued from the lowest stable
    // point of the downward branch.
    const Branch* down = nullptr;
    for (const Branch* br : start_branches(ctx))
        if (br->solver == "collocation") down = br;
    if (!down) return {false, "collocation branch from the start cycle missing"};
    const BranchPoint* low = nullptr;
    for (const auto& q : down->points)
        if (q.spectrum.stability == Stability::Stable && (!low || q.I < low->I)) low = &q;
    const auto& cc0 = std::get<CollocationCycle>(low->cycle);
    CollocationBranch<HHField> disc(HHField{st.params, low->I}, cc0.poly.mesh.subintervals(), st.remesh_every,
                                    st.floquet);
    const BranchPoint start = disc.describe(disc.load(cc0, low->I));
    const auto ratio_at = [&](double I) {
        const BranchPoint ref = solve_current_by_period(disc, start, I);
        return hb_deviation(std::get<CollocationCycle>(ref.cycle), I) / base;
    };

    const auto* fold = nearest_event(ctx.run.diagram.events, EventKind::Fold, 6.2649);
    std::string detail = fmt("I=20 deviation %.3f mV; %zu periodic solutions at I=6.25 (lowest fold I5=%.6f)", base,
                             cycles_at(ctx.run.branches, 6.25).size(), fold ? fold->I_star : NAN);
    bool pass = false;
    try {
        const double r = ratio_at(6.25);
        pass = r > 10.0;
        detail += fmt("; ratio at 6.25 = %.1f (>10)", r);
    } catch (const Error& e) {
        detail += std::string("; no reference at 6.25: ") + e.what();
    }
    // Same measurement at currents where the stable cycle still exists.
    for (double I : {6.3, 6.27}) {
        try {
            detail += fmt("; ratio at %.2f = %.1f", I, ratio_at(I));
        } catch (const Error& e) {
            detail += fmt("; ratio at %.2f unavailable: ", I) + e.what();
        }
    }
    return {pass, detail};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
        {"Hopf points", hopf_points_check},
        {"stable branch", stable_branch_check},
        {"fold I5", fold_I5_check},
        {"folds I3 I4", folds_I3_I4_check},
        {"period doubling", period_doubling_check},
        {"harmonic counts", harmonic_count_check},
        {"cross-solver agreement", cross_solver_check},
        {"property suites", property_check},
        {"Gibbs ripple at 6.25", gibbs_check},
    };
    int reported = 0, passed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        ++reported;
        passed += v.pass;
        std::printf("criterion %zu (%s): %s  %s\n", i + 1, criteria[i].first, v.pass ? "PASS" : "FAIL",
                    v.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("criteria reported: %d/9, passed: %d/9\n", reported, passed);
    return reported == 9 ? 0 : 1;
}
