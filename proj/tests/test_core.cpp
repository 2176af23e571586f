#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fields.hpp"
#include "hhc/diagram.hpp"
#include "hhc/floquet.hpp"
#include "hhc/shooting.hpp"

using namespace hhc;
using testfields::Oscillator;
using testfields::VanDerPol;

namespace {

template <class F>
typename F::Matrix fd_jacobian(const F& f, const typename F::Vector& x) {
    typename F::Matrix J;
    for (int j = 0; j < F::dim; ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(x[j]));
        auto xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        J.col(j) = (f(xp) - f(xm)) / (2.0 * h);
    }
    return J;
}

struct Blowup {
    static constexpr int dim = 1;
    using Vector = Eigen::Matrix<double, 1, 1>;
    using Matrix = Eigen::Matrix<double, 1, 1>;
    Vector operator()(const Vector& x) const { return x.cwiseProduct(x).cwiseProduct(x); }
    Matrix jacobian(const Vector& x) const { return 3.0 * x.cwiseProduct(x); }
};

CycleT<2> vdp_guess() {
    const VanDerPol f;
    CycleT<2> g;
    g.anchor_state = flow(f, Eigen::Vector2d(2.0, 0.0), 60.0, 6000);
    g.period = 6.6;
    return g;
}

}  // namespace

// expc

TEST(Expc, MatchesClosedFormAwayFromOrigin) {
    for (double x : {1e-3, -1e-3, 0.1, 1.0, -5.0, 20.0, -30.0})
        EXPECT_NEAR(expc(x), x / std::expm1(x), 1e-14 * std::max(1.0, std::abs(x))) << x;
}

TEST(Expc, IsOneAtOriginAndContinuousAtSeriesSwitch) {
    EXPECT_EQ(expc(0.0), 1.0);
    for (double x : {1e-4, -1e-4}) {
        const double inside = expc(std::nextafter(x, 0.0));
        const double outside = expc(std::nextafter(x, 2.0 * x));
        EXPECT_NEAR(inside, outside, 1e-15);
    }
}

TEST(Expc, ReflectionIdentity) {
    // expc(-x) - expc(x) = x holds exactly in real arithmetic
    for (double x : {0.0, 1e-12, 1e-8, 5e-5, 1e-4, 2e-4, 1e-2, 0.5, 3.0, 25.0, 300.0})
        EXPECT_NEAR(expc(-x) - expc(x), x, 4e-16 * std::max(1.0, std::abs(x))) << x;
}

TEST(Expc, FiniteForExtremeArguments) {
    for (double x : {-745.0, -700.0, 700.0, 750.0, 1e4}) EXPECT_TRUE(std::isfinite(expc(x))) << x;
    EXPECT_NEAR(expc(1e4), 0.0, 1e-300);
    EXPECT_NEAR(expc(-1e4), 1e4, 1e-9);
}

TEST(Expc, DerivativeMatchesCentralDifference) {
    for (double x : {0.0, 3e-3, -3e-3, 0.02, -0.5, 2.0, 12.0}) {
        const double h = 1e-5;
        EXPECT_NEAR(expc_derivative(x), (expc(x + h) - expc(x - h)) / (2 * h), 1e-9) << x;
    }
}

// HH model

TEST(Model, RatesSmoothThroughRemovableSingularities) {
    for (double V : {-10.0, -25.0}) {
        const RateSet a = rates(V), b = rates(V + 1e-7), c = rates(V - 1e-7);
        EXPECT_TRUE(std::isfinite(a.alpha_n) && std::isfinite(a.alpha_m));
        EXPECT_NEAR(a.alpha_n, 0.5 * (b.alpha_n + c.alpha_n), 1e-10);
        EXPECT_NEAR(a.alpha_m, 0.5 * (b.alpha_m + c.alpha_m), 1e-10);
    }
}

TEST(Model, JacobianMatchesFiniteDifferences) {
    const HHParams p;
    const std::vector<State> states = {steady_state(0.0), State(-10.0, 0.4, 0.5, 0.1), State(-25.0, 0.6, 0.2, 0.8),
                                       State(-100.0, 0.7, 0.1, 0.99), State(15.0, 0.3, 0.6, 0.01)};
    for (double I : {0.0, 20.0})
        for (const auto& x : states) {
            const HHField f{p, I};
            const Matrix4 A = f.jacobian(x), B = fd_jacobian(f, x);
            EXPECT_LT((A - B).cwiseAbs().maxCoeff(), 1e-6 * std::max(1.0, B.cwiseAbs().maxCoeff())) << x.transpose();
        }
}

TEST(Model, CurrentSensitivityMatchesDifference) {
    const HHParams p;
    const State x(-30.0, 0.4, 0.3, 0.6);
    const State d = (vector_field(x, p, 20.5) - vector_field(x, p, 20.0)) / 0.5;
    EXPECT_LT((d - current_sensitivity(p)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Model, RestStateAtZeroCurrent) {
    const HHParams p;
    const State x = find_equilibrium(0.0, p);
    EXPECT_LT(vector_field(x, p, 0.0).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(x[kV], 0.0, 1e-2);
}

TEST(Model, EquilibriumSweepBracketsTwoStabilityChanges) {
    const auto rows = equilibrium_sweep(0.0, 160.0, 1.0);
    std::vector<double> changes;
    for (std::size_t k = 0; k + 1 < rows.size(); ++k)
        if (rows[k].stable != rows[k + 1].stable) changes.push_back(rows[k].I);
    ASSERT_EQ(changes.size(), 2u);
    EXPECT_EQ(changes[0], 9.0);
    EXPECT_EQ(changes[1], 154.0);
    EXPECT_TRUE(rows.front().stable);
    EXPECT_TRUE(rows.back().stable);
}

TEST(Model, HopfCurrentsFrozenOracle) {
    const HopfPoint lo = detect_hopf(9.0, 10.0, 1e-10);
    const HopfPoint hi = detect_hopf(154.0, 155.0, 1e-10);
    EXPECT_NEAR(lo.current, 9.779638, 1e-6);
    EXPECT_NEAR(hi.current, 154.526634, 1e-6);
    EXPECT_NEAR(lo.omega, 0.586234, 1e-5);
    EXPECT_GT(hi.omega, 0.0);
    EXPECT_NEAR(detail::leading_complex_pair(lo.current, HHParams{}).real(), 0.0, 1e-8);
}

TEST(Model, HopfWithoutBracketThrows) {
    try {
        detect_hopf(20.0, 30.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NoSignChange);
    }
}

// RK4

TEST(Integrate, Rk4ConvergesAtFourthOrderOnOscillator) {
    const Oscillator f;
    const Eigen::Vector2d x0(1.0, 0.0);
    const double t = 10.0;
    const Eigen::Vector2d exact(std::cos(t), -std::sin(t));
    const double e1 = (flow(f, x0, t, 200) - exact).norm();
    const double e2 = (flow(f, x0, t, 400) - exact).norm();
    EXPECT_NEAR(e1 / e2, 16.0, 1.0);
}

TEST(Integrate, Rk4ConvergesAtFourthOrderOnHH) {
    const HHField f{HHParams{}, 20.0};
    const State x0 = find_equilibrium(20.0, f.params) + State(-20.0, 0, 0, 0);
    const State ref = flow(f, x0, 10.0, 16000);
    const double e1 = (flow(f, x0, 10.0, 500) - ref).norm();
    const double e2 = (flow(f, x0, 10.0, 1000) - ref).norm();
    EXPECT_GT(e1 / e2, 13.0);
    EXPECT_LT(e1 / e2, 19.0);
}

TEST(Integrate, OscillatorMonodromyIsIdentity) {
    const Oscillator f{1.3};
    const auto m = monodromy_coupled(f, Eigen::Vector2d(0.7, -0.2), 2.0 * std::numbers::pi / 1.3, 4000);
    EXPECT_LT((m.matrix - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff(), 1e-10);
    const auto s = classify_monodromy(m);
    EXPECT_LT(s.trivial_error, 1e-10);
    EXPECT_NEAR(std::abs(s.nontrivial[0] - 1.0), 0.0, 1e-10);
}

TEST(Integrate, NonFiniteStateIsReported) {
    try {
        flow(Blowup{}, Blowup::Vector::Constant(10.0), 10.0, 100);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NonFinite);
    }
}

// Shooting

TEST(Shooting, VanDerPolPeriod) {
    const auto c = shoot(VanDerPol{}, vdp_guess());
    EXPECT_NEAR(c.period, testfields::vdp_period, 1e-8);
    const auto s = spectrum(VanDerPol{}, c);
    EXPECT_LT(s.trivial_error, 1e-6);
    EXPECT_LT(s.liouville_error, 1e-6);
    EXPECT_EQ(s.stability, Stability::Stable);
}

TEST(Shooting, StableCycleAtTwentyFrozenOracle) {
    const HHField f{HHParams{}, 20.0};
    const Cycle c = shoot(f, settle_transient(20.0, 300.0));
    EXPECT_NEAR(c.period, 11.5654923858, 1e-7);
    const auto s = spectrum(f, c);
    EXPECT_NEAR(std::abs(s.trivial), 1.0, 1e-3);
    EXPECT_EQ(s.stability, Stability::Stable);
    // a later phase as anchor gives the same cycle
    Cycle later;
    later.anchor_state = flow(f, c.anchor_state, 0.37 * c.period, 4000);
    later.period = c.period * 1.01;
    EXPECT_NEAR(shoot(f, later).period, c.period, 1e-8);
}

TEST(Shooting, RestAtZeroCurrentHasNoOscillation) {
    try {
        settle_transient(0.0, 100.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NoOscillation);
    }
}

TEST(Shooting, EquilibriumGuessIsDegenerate) {
    const HHField f{HHParams{}, 20.0};
    Cycle g;
    g.anchor_state = find_equilibrium(20.0, f.params);
    g.period = 10.0;
    try {
        shoot(f, g);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::DegenerateCycle);
    }
}

// Floquet classification

namespace {

MonodromyResultT<3> diagonal(double a, double b, double c) {
    MonodromyResultT<3> m;
    m.matrix = Eigen::Vector3d(a, b, c).asDiagonal();
    m.cycle_period = 1.0;
    m.trace_integral = std::log(std::abs(a * b * c));
    m.end_state.setZero();
    return m;
}

SpectrumSample sample(double s, std::vector<Multiplier> mu) {
    SpectrumSample out;
    out.s = s;
    out.I = 10.0 + s;
    out.spectrum.nontrivial = std::move(mu);
    return out;
}

}  // namespace

TEST(Floquet, ClassifiesAndFlags) {
    const auto pd = classify_monodromy(diagonal(1.0, -0.3, -0.98));
    EXPECT_EQ(pd.stability, Stability::Stable);
    EXPECT_TRUE(pd.flags.near_pd);
    EXPECT_FALSE(pd.flags.near_fold);
    EXPECT_LT(pd.liouville_error, 1e-12);

    const auto fold = classify_monodromy(diagonal(0.2, 1.0, 1.02));
    EXPECT_EQ(fold.stability, Stability::Unstable);
    EXPECT_TRUE(fold.flags.near_fold);
    EXPECT_NEAR(std::abs(fold.nontrivial[0]), 1.02, 1e-12);
}

TEST(Floquet, ReportOrderPutsCriticalMultiplierLast) {
    FloquetSpectrum s;
    s.trivial = 0.9999;
    s.nontrivial = {-3057.0, -1.001, 1e-7};
    const auto r = report_order(s);
    ASSERT_EQ(r.size(), 4u);
    EXPECT_EQ(r[0], Multiplier(0.9999));
    EXPECT_EQ(r[1], Multiplier(1e-7));
    EXPECT_EQ(r[2], Multiplier(-3057.0));
    EXPECT_EQ(r[3], Multiplier(-1.001));
}

TEST(Floquet, DetectsMinusOneCrossing) {
    // tracked multiplier -0.9 - 0.2 s crosses -1 at s = 0.5
    const auto mu = [](double s) { return Multiplier(-0.9 - 0.2 * s); };
    std::vector<SpectrumSample> pts;
    for (double s : {0.0, 0.3, 0.6, 0.9}) pts.push_back(sample(s, {Multiplier(3.0 + s), mu(s), 1e-3}));
    const auto r = detect_crossing(pts, CrossingKind::PeriodDoubling,
                                   [&](double s) { return sample(s, {Multiplier(3.0 + s), mu(s), 1e-3}); }, 1e-12);
    EXPECT_NEAR(r.s_star, 0.5, 1e-10);
    EXPECT_NEAR(r.I_star, 10.5, 1e-10);
    EXPECT_THROW(detect_crossing(pts, CrossingKind::Fold), Error);
}

TEST(Floquet, LargeJumpLosesTracking) {
    try {
        match_multipliers({Multiplier(0.5), Multiplier(0.1)}, {Multiplier(2.5), Multiplier(0.1)});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::TrackingLost);
    }
}
