#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "hhc/continuation.hpp"
#include "hhc/diagram.hpp"

using namespace hhc;

namespace {

BranchPoint point(double I, double T, std::vector<Multiplier> mu = {0.5, 0.1, 0.01}) {
    BranchPoint p;
    p.I = I;
    p.period = T;
    p.v_min = -100.0;
    p.v_max = 5.0;
    p.spectrum.nontrivial = std::move(mu);
    return p;
}

Branch synthetic(const std::vector<double>& Is) {
    Branch br;
    for (std::size_t k = 0; k < Is.size(); ++k) br.points.push_back(point(Is[k], 10.0 + 0.1 * static_cast<double>(k)));
    return br;
}

const Cycle& cycle_at_twenty() {
    static const Cycle c = shoot(HHField{HHParams{}, 20.0}, settle_transient(20.0, 300.0));
    return c;
}

}  // namespace

TEST(Helpers, IllinoisFindsCubeRoot) {
    const auto g = [](double x) { return x * x * x - 2.0; };
    EXPECT_NEAR(illinois(g, 0.0, g(0.0), 2.0, g(2.0), 1e-14), std::cbrt(2.0), 1e-12);
    EXPECT_THROW(illinois(g, 2.0, g(2.0), 3.0, g(3.0), 1e-12), Error);
}

TEST(Helpers, TurningPointsAreInteriorExtremaInRange) {
    const Branch br = synthetic({10.0, 8.0, 6.3, 6.5, 7.5, 7.9, 7.85, 7.8});
    EXPECT_EQ(turning_points(br, 0.0, 100.0), (std::vector<std::size_t>{2, 5}));
    EXPECT_EQ(turning_points(br, 7.0, 8.0), (std::vector<std::size_t>{5}));
}

TEST(Helpers, PeriodDoublingIndicatorFlipsAtMinusOne) {
    FloquetSpectrum s;
    s.nontrivial = {Multiplier(-3000.0), Multiplier(-0.99), Multiplier(1e-6)};
    const double before = pd_indicator(s);
    s.nontrivial[1] = -1.01;
    EXPECT_NE(before > 0.0, pd_indicator(s) > 0.0);
    // a complex pair never flips the sign on its own
    s.nontrivial = {Multiplier(-3000.0), Multiplier(-1.2, 0.3), Multiplier(-1.2, -0.3)};
    EXPECT_GT(pd_indicator(s) * (-3000.0 + 1.0), 0.0);

    Branch br = synthetic({7.0, 7.1, 7.2, 7.3});
    for (auto& p : br.points) p.spectrum.nontrivial = {Multiplier(-3000.0), Multiplier(-0.99), Multiplier(1e-6)};
    br.points[2].spectrum.nontrivial = {Multiplier(-3000.0), Multiplier(-1.01), Multiplier(1e-6)};
    br.points[3].spectrum.nontrivial = br.points[2].spectrum.nontrivial;
    EXPECT_EQ(pd_segments(br), (std::vector<std::size_t>{1}));
}

TEST(Diagram, AssemblyMergesDuplicatesAndAssignsRegions) {
    Branch a = synthetic({20.0, 15.0, 9.0});
    a.id = 1;
    Branch b = synthetic({20.0, 25.0});
    b.id = 2;
    BifurcationEvent e;
    e.kind = EventKind::Fold;
    e.I_star = 7.9219854;
    a.events.push_back(e);
    e.I_star += 1e-7;
    b.events.push_back(e);
    const Diagram d = assemble_diagram({a, b}, 9.78);
    EXPECT_EQ(d.rows.size(), 4u);  // I = 20 appears once
    EXPECT_EQ(d.count(EventKind::Fold), 1u);
    for (const auto& r : d.rows) EXPECT_EQ(r.region, r.I > 9.78 ? 1 : 2);
}

TEST(Diagram, CyclesAtCountsDistinctPeriods) {
    Branch a;
    a.points = {point(6.0, 12.0), point(8.0, 14.0)};
    Branch b;
    b.points = {point(7.5, 20.0), point(8.0, 21.0)};
    EXPECT_EQ(cycles_at({a, b}, 7.7).size(), 2u);
    EXPECT_EQ(cycles_at({a, b}, 7.0).size(), 1u);
    EXPECT_EQ(cycles_at({a, b}, 9.0).size(), 0u);
}

TEST(Diagram, EquilibriumHopfEventIsCertified) {
    const auto hopf = hopf_points(equilibrium_sweep(0.0, 160.0, 1.0), 1e-10);
    ASSERT_EQ(hopf.size(), 2u);
    const auto ev = hopf_event(hopf[0], HHParams{});
    EXPECT_EQ(ev.kind, EventKind::Hopf);
    EXPECT_TRUE(ev.certified);
    EXPECT_NEAR(ev.I_star, 9.779638, 1e-6);
}

TEST(Continuation, HopfSeedIsSmallHarmonicPerturbation) {
    const HopfPoint h = detect_hopf(9.0, 10.0, 1e-10);
    const FourierCycle c = hopf_branch_seed(h.current, h.omega, 0.5);
    EXPECT_NEAR(c.period, 2.0 * std::numbers::pi / h.omega, 1e-9);
    EXPECT_LT((c.coeffs.row(0).transpose() - find_equilibrium(h.current)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(c.coeffs(1, kV), 0.5, 1e-12);
    EXPECT_NEAR(c.coeffs(2, kV), 0.0, 1e-12);
}

TEST(Continuation, UnstableCycleGrowsFromLowerHopf) {
    const HopfPoint h = detect_hopf(9.0, 10.0, 1e-10);
    const double I = h.current - 0.02;
    const HHField f{HHParams{}, I};
    const auto ops = build_operators(2, 3);
    const FourierCycle c = solve_hb(f, hopf_branch_seed(h.current, h.omega, 1.0), ops, 1e-12);
    const auto s = spectrum(f, c);
    EXPECT_EQ(s.stability, Stability::Unstable);
    EXPECT_NEAR(c.period, 2.0 * std::numbers::pi / h.omega, 0.2);
}

TEST(Continuation, HarmonicBalanceBranchStaysStableAboveTwenty) {
    const Cycle& c = cycle_at_twenty();
    const HHField f{HHParams{}, 20.0};
    const HermiteOrbit<HHField> orbit(f, c.samples);
    const auto ops = build_operators(30, 3);
    const FourierCycle fc = solve_hb(f, fourier_from_orbit<4>(orbit, c.period, ops), ops, 1e-10);
    HarmonicBalanceBranch<HHField> disc(f, 30, 3, 30, 1e-8);
    StepControl sc;
    sc.max_points = 6;
    const Branch br = continue_branch(disc, disc.load(fc, 20.0), +1, sc);
    ASSERT_EQ(br.points.size(), 6u);
    for (std::size_t k = 1; k < br.points.size(); ++k) {
        EXPECT_GT(br.points[k].I, br.points[k - 1].I);
        EXPECT_LT(br.points[k].period, br.points[k - 1].period);
        EXPECT_EQ(br.points[k].spectrum.stability, Stability::Stable);
    }
    EXPECT_TRUE(br.mode_history.empty() || br.mode_history.front().mode == DrivingParameter::Current);
    EXPECT_EQ(br.termination, Termination::MaxPoints);
}

TEST(Continuation, CollocationFindsLowCurrentFold) {
    const Cycle& c = cycle_at_twenty();
    const HHField f{HHParams{}, 20.0};
    const HermiteOrbit<HHField> orbit(f, c.samples);
    const auto cc = solve_fixed_count(f, [&](double tau) { return orbit(tau * c.period); }, c.period, 200);
    CollocationBranch<HHField> disc(f, 200);
    StepControl sc;
    sc.max_folds = 1;
    sc.fold_overrun = 0.05;
    const Branch br = continue_branch(disc, disc.load(cc, 20.0), -1, sc);
    const auto folds = turning_points(br, 0.0, 20.0);
    ASSERT_EQ(folds.size(), 1u);
    const auto ev = locate_fold_at(disc, br, folds[0]);
    EXPECT_NEAR(ev.I_star, 6.26452, 2e-4);
    EXPECT_TRUE(ev.certified) << ev.evidence;
    ASSERT_TRUE(ev.where.has_value());
    EXPECT_NEAR(std::abs(closest_multiplier(ev.where->spectrum, 1.0)), 1.0, 1e-2);
    // stable above the fold, unstable on the return leg
    EXPECT_EQ(br.points.front().spectrum.stability, Stability::Stable);
    EXPECT_EQ(br.points.back().spectrum.stability, Stability::Unstable);

    // fixed-current re-solve lands on the requested current
    const BranchPoint q = solve_current_by_period(disc, br.points[folds[0] - 3], br.points[folds[0] - 3].I + 0.05);
    EXPECT_NEAR(q.I, br.points[folds[0] - 3].I + 0.05, 1e-10);
}
