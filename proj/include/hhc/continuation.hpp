#pragma once

// Branch following for periodic orbits in the current I. Natural stepping
// in I is the default; when the period starts to move much faster than I
// (a turning point is near) the period T becomes the driving parameter and
// I is solved for, and when both fail pseudo-arclength takes over.
//
// A branch discretization D wraps one solver (harmonic balance or
// collocation) behind a small interface:
//   problem()                 the PeriodicDiscretization being solved
//   weights()                 inner-product weights on (z, T, I)
//   describe(x)               BranchPoint with extrema and Floquet spectrum
//   accept(x)                 called after every accepted point
//   adapt(x, prev)            may change the layout (K or mesh); maps x, prev
//   load(point)               switches to the point's layout, returns its unknowns

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "hhc/collocation.hpp"
#include "hhc/errors.hpp"
#include "hhc/floquet.hpp"
#include "hhc/harmonic_balance.hpp"
#include "hhc/model.hpp"
#include "hhc/newton.hpp"
#include "hhc/orbit.hpp"
#include "hhc/shooting.hpp"

namespace hhc {

using CycleVariant = std::variant<Cycle, FourierCycle, CollocationCycle>;

/// State along one period of any stored cycle.
inline State cycle_state(const CycleVariant& c, double t) {
    return std::visit(
        [t](const auto& cyc) -> State {
            using C = std::decay_t<decltype(cyc)>;
            if constexpr (std::is_same_v<C, FourierCycle>) {
                return evaluate_series(cyc, t);
            } else if constexpr (std::is_same_v<C, CollocationCycle>) {
                return cyc(t);
            } else {
                const auto& ts = cyc.samples.times;
                const double tt = ts.front() + t;
                auto it = std::upper_bound(ts.begin(), ts.end(), tt);
                std::size_t i = it == ts.begin() ? 0 : static_cast<std::size_t>(it - ts.begin()) - 1;
                i = std::min(i, ts.size() - 2);
                const double w = (tt - ts[i]) / (ts[i + 1] - ts[i]);
                return (1.0 - w) * cyc.samples.states[i] + w * cyc.samples.states[i + 1];
            }
        },
        c);
}

struct BranchPoint {
    double I = 0.0;
    double period = 0.0;
    double v_min = 0.0;
    double v_max = 0.0;
    FloquetSpectrum spectrum;
    CycleVariant cycle;
    AugmentedPoint state;
    double arclength = 0.0;

    double amplitude() const { return v_max - v_min; }
};

enum class DrivingParameter { Current, Period, Arclength };

inline const char* to_string(DrivingParameter d) {
    switch (d) {
        case DrivingParameter::Current: return "I";
        case DrivingParameter::Period: return "T";
        case DrivingParameter::Arclength: return "arclength";
    }
    return "?";
}

struct ModeChange {
    std::size_t index = 0;  // first point computed in the new mode
    DrivingParameter mode = DrivingParameter::Current;
};

enum class EventKind { Hopf, Fold, PeriodDoubling };

inline const char* to_string(EventKind k) {
    switch (k) {
        case EventKind::Hopf: return "hopf";
        case EventKind::Fold: return "fold";
        case EventKind::PeriodDoubling: return "period_doubling";
    }
    return "?";
}

struct BifurcationEvent {
    EventKind kind = EventKind::Fold;
    double I_star = 0.0;
    double period = 0.0;
    int branch = -1;
    /// Multiplier (fold, PD) or eigenvalue (Hopf) certifying the event.
    Multiplier certificate{0.0, 0.0};
    bool certified = false;
    std::string evidence;
    std::vector<SpectrumSample> rows;
    std::optional<BranchPoint> where;  // converged cycle at the event, when one exists
};

enum class Termination { Limit, HopfEndpoint, MinStep, MaxPoints, FoldCount, PeriodLimit };

inline const char* to_string(Termination t) {
    switch (t) {
        case Termination::Limit: return "current_limit";
        case Termination::HopfEndpoint: return "hopf_endpoint";
        case Termination::MinStep: return "min_step";
        case Termination::MaxPoints: return "max_points";
        case Termination::FoldCount: return "fold_count";
        case Termination::PeriodLimit: return "period_limit";
    }
    return "?";
}

struct Branch {
    int id = 0;
    std::string solver;
    std::vector<BranchPoint> points;
    std::vector<BifurcationEvent> events;
    std::vector<ModeChange> mode_history;
    Termination termination = Termination::MaxPoints;
    std::string termination_detail;
};

struct StepControl {
    double initial = 0.25;  // I steps (uA/cm^2)
    double min = 1e-9;
    double max = 2.0;
    double period_initial = 0.05;  // T steps (ms)
    double period_max = 0.25;
    double arclength_initial = 0.05;
    double arclength_max = 0.5;
    double switch_slope = 10.0;  // |dT/dI| (ms per uA/cm^2) above which T drives
    double I_min = 0.0;
    double I_max = 200.0;
    double max_period = 100.0;
    double min_amplitude = 0.5;     // mV; below this the branch has reached a Hopf point
    double max_period_change = 0.05;
    int max_points = 5000;
    int max_folds = -1;             // stop after this many turning points in I
    double fold_overrun = 0.05;     // I distance travelled past the last counted fold
    int grow_after = 3;
    bool arclength = false;
    NewtonOptions newton{.tol = 1e-9, .max_iterations = 12, .max_halvings = 6};
};

namespace detail {

template <class Orbit>
BranchPoint make_point(const Orbit& orbit, double period, double I, CycleVariant cycle, FloquetSpectrum spec,
                       AugmentedPoint state) {
    const Extrema e = component_extrema(orbit, period, kV);
    BranchPoint p;
    p.I = I;
    p.period = period;
    p.v_min = e.min.value;
    p.v_max = e.max.value;
    p.spectrum = std::move(spec);
    p.cycle = std::move(cycle);
    p.state = std::move(state);
    return p;
}

}  // namespace detail

/// Harmonic-balance branch discretization with K grown on demand.
template <VectorField F = HHField>
class HarmonicBalanceBranch {
public:
    using Problem = HarmonicBalanceProblem<F>;

    HarmonicBalanceBranch(F field, int K, int oversample = 3, int K_max = -1, double drop_tol = 1e-8,
                          FloquetOptions floquet = {})
        : field_(std::move(field)),
          oversample_(oversample),
          K_max_(K_max < 0 ? K : K_max),
          drop_tol_(drop_tol),
          floquet_(floquet),
          problem_(field_, build_operators(K, oversample)) {}

    std::string name() const { return "harmonic-balance"; }
    const Problem& problem() const { return problem_; }
    int harmonics() const { return problem_.operators().K; }

    VectorXd weights() const {
        const Eigen::Index n = problem_.unknowns();
        VectorXd w = VectorXd::Ones(n + 2);
        w.head(n) /= static_cast<double>(problem_.coefficient_length());
        return w;
    }

    AugmentedPoint load(const FourierCycle& c, double I) {
        set_harmonics(c.K);
        const FourierCycle anchored = anchor_phase(resize_harmonics(c, harmonics()));
        return {problem_.pack(anchored), c.period, I};
    }

    AugmentedPoint load(const BranchPoint& p) { return load(std::get<FourierCycle>(p.cycle), p.I); }

    BranchPoint describe(const AugmentedPoint& x) const {
        const FourierCycle c = problem_.unpack(x.z, x.T);
        const F f = at_current(field_, x.I);
        const auto orbit = [&c](double t) { return evaluate_series(c, t); };
        return detail::make_point(orbit, x.T, x.I, c, spectrum(f, c, floquet_), x);
    }

    void accept(const AugmentedPoint&) {}

    /// Doubles K (up to K_max) when the top quarter of harmonics is not
    /// below drop_tol.
    bool adapt(AugmentedPoint& x, AugmentedPoint* prev) {
        const int K = harmonics();
        if (K >= K_max_) return false;
        const FourierCycle c = problem_.unpack(x.z, x.T);
        if (choose_harmonics(c, drop_tol_) <= (3 * K) / 4) return false;
        const int K_new = std::min(K_max_, std::max(K + 2, 2 * K));
        const auto remap = [&](AugmentedPoint& p) {
            p.z = pack_for(resize_harmonics(problem_.unpack(p.z, p.T), K_new), K_new);
        };
        remap(x);
        if (prev) remap(*prev);
        set_harmonics(K_new);
        return true;
    }

private:
    VectorXd pack_for(const FourierCycle& c, int K) const {
        Problem tmp(field_, build_operators(K, 1));
        return tmp.pack(c);
    }

    void set_harmonics(int K) {
        if (K != harmonics()) problem_ = Problem(field_, build_operators(K, oversample_));
    }

    F field_;
    int oversample_;
    int K_max_;
    double drop_tol_;
    FloquetOptions floquet_;
    Problem problem_;
};

/// Collocation branch discretization with a fixed subinterval count; the
/// mesh is re-equidistributed every `remesh_every` accepted points.
template <VectorField F = HHField>
class CollocationBranch {
public:
    using Problem = CollocationProblem<F>;

    CollocationBranch(F field, int N, int remesh_every = 10, FloquetOptions floquet = {})
        : field_(std::move(field)),
          N_(N),
          remesh_every_(remesh_every),
          floquet_(floquet),
          problem_(field_, Mesh::uniform(N), std::vector<State>(static_cast<std::size_t>(N), State::Zero())) {}

    std::string name() const { return "collocation"; }
    const Problem& problem() const { return problem_; }

    VectorXd weights() const {
        const Eigen::Index n = problem_.unknowns();
        VectorXd w = VectorXd::Ones(n + 2);
        const Mesh& m = problem_.mesh();
        const int N = m.subintervals();
        for (int i = 0; i < N; ++i) {
            const double wi = 0.5 * (m.width(i) + m.width((i + N - 1) % N));
            w.segment<4>(4 * i).setConstant(wi);
        }
        return w;
    }

    AugmentedPoint load(const CollocationCycle& c, double I) {
        std::vector<State> nodes(c.poly.values.begin(), c.poly.values.end() - 1);
        problem_ = Problem(field_, c.poly.mesh, nodes);
        return {problem_.pack(nodes), c.period, I};
    }

    AugmentedPoint load(const BranchPoint& p) { return load(std::get<CollocationCycle>(p.cycle), p.I); }

    BranchPoint describe(const AugmentedPoint& x) const {
        const F f = at_current(field_, x.I);
        CollocationCycle c;
        c.poly = problem_.polynomial(x.z, x.T, x.I);
        c.period = x.T;
        const auto profile = residual_profile(c.poly, c.period, f);
        c.residual_max = *std::max_element(profile.begin(), profile.end());
        return detail::make_point(c, x.T, x.I, c, spectrum(f, c, floquet_), x);
    }

    void accept(const AugmentedPoint& x) {
        problem_.set_reference(nodes_of(x));
        ++accepted_;
    }

    bool adapt(AugmentedPoint& x, AugmentedPoint* prev) {
        if (remesh_every_ <= 0 || accepted_ % remesh_every_ != 0) return false;
        const F f = at_current(field_, x.I);
        const auto poly = problem_.polynomial(x.z, x.T, x.I);
        const Mesh mesh = equidistribute_mesh(poly.mesh, residual_profile(poly, x.T, f), N_);
        const auto remap = [&](AugmentedPoint& p) {
            const auto old = problem_.polynomial(p.z, p.T, p.I);
            VectorXd z(4 * N_);
            for (int i = 0; i < N_; ++i) z.segment<4>(4 * i) = old(mesh.breakpoints[static_cast<std::size_t>(i)]);
            p.z = z;
        };
        remap(x);
        if (prev) remap(*prev);
        problem_ = Problem(field_, mesh, nodes_of(x));
        return true;
    }

private:
    std::vector<State> nodes_of(const AugmentedPoint& x) const {
        std::vector<State> out(static_cast<std::size_t>(problem_.subintervals()));
        for (int i = 0; i < problem_.subintervals(); ++i) out[static_cast<std::size_t>(i)] = x.z.segment<4>(4 * i);
        return out;
    }

    F field_;
    int N_;
    int remesh_every_;
    FloquetOptions floquet_;
    Problem problem_;
    long accepted_ = 0;
};

namespace detail {

template <class D>
double weighted_norm(const D& disc, const VectorXd& v) {
    return std::sqrt(v.dot(disc.weights().cwiseProduct(v)));
}

inline int sign_of(double x) { return x > 0.0 ? 1 : (x < 0.0 ? -1 : 0); }

}  // namespace detail

/// Follows a branch from a converged start point. `direction` is the
/// initial sign of dI.
template <class D>
Branch continue_branch(D& disc, AugmentedPoint start, int direction, const StepControl& ctrl = {}) {
    if (direction == 0) throw Error(ErrorKind::StartInvalid, "direction must be +1 or -1");
    {
        const VectorXd r = disc.problem().residual(start.z, start.T, start.I);
        if (!r.allFinite() || r.cwiseAbs().maxCoeff() > 1e3 * ctrl.newton.tol)
            throw Error(ErrorKind::StartInvalid, "start point is not converged");
    }
    Branch br;
    br.solver = disc.name();
    DrivingParameter mode = ctrl.arclength ? DrivingParameter::Arclength : DrivingParameter::Current;
    br.mode_history.push_back({0, mode});

    disc.accept(start);
    br.points.push_back(disc.describe(start));
    AugmentedPoint x = start;
    std::optional<AugmentedPoint> prev;

    int dir_I = direction, dir_T = 0;
    double h = mode == DrivingParameter::Arclength ? ctrl.arclength_initial : ctrl.initial;
    int successes = 0;
    int since_switch = 0;
    int folds = 0;
    double last_fold_I = 0.0;
    int last_dI_sign = direction;
    VectorXd tangent;

    const auto set_mode = [&](DrivingParameter m) {
        mode = m;
        br.mode_history.push_back({br.points.size(), m});
        successes = 0;
        since_switch = 0;
    };
    const auto init_tangent = [&]() {
        VectorXd guess = VectorXd::Zero(x.z.size() + 2);
        if (prev) guess = x.stacked() - prev->stacked();
        else guess[guess.size() - 1] = dir_I;
        tangent = curve_tangent(disc.problem(), x, disc.weights(), guess);
    };
    if (mode == DrivingParameter::Arclength) init_tangent();

    while (static_cast<int>(br.points.size()) < ctrl.max_points) {
        AugmentedPoint trial = x;
        bool ok = true;
        std::string failure;
        try {
            if (mode == DrivingParameter::Arclength) {
                const ArclengthConstraint arc{tangent, x.stacked(), disc.weights(), h};
                trial = AugmentedPoint::unstack(x.stacked() + h * tangent);
                newton_solve(disc.problem(), trial, Driver::Current, ctrl.newton, &arc);
            } else {
                const bool by_I = mode == DrivingParameter::Current;
                const double delta = (by_I ? dir_I : dir_T) * h;
                if (prev) {
                    const double last = by_I ? x.I - prev->I : x.T - prev->T;
                    const double scale = std::abs(last) > 1e-14 ? delta / last : 0.0;
                    trial = AugmentedPoint::unstack(x.stacked() + scale * (x.stacked() - prev->stacked()));
                }
                if (by_I) trial.I = x.I + delta;
                else trial.T = x.T + delta;
                newton_solve(disc.problem(), trial, by_I ? Driver::Current : Driver::Period, ctrl.newton);
            }
            if (!(trial.T > 0.0) || !trial.z.allFinite()) {
                ok = false;
                failure = "non-finite or non-positive period";
            } else if (std::abs(trial.T - x.T) > ctrl.max_period_change * x.T) {
                ok = false;
                failure = "period jump";
            }
        } catch (const Error& e) {
            ok = false;
            failure = e.what();
        }

        if (!ok) {
            h *= 0.5;
            successes = 0;
            if (h >= ctrl.min) continue;
            if (br.points.back().amplitude() < 5.0 * ctrl.min_amplitude) {
                br.termination = Termination::HopfEndpoint;
                br.termination_detail = failure;
                break;
            }
            if (mode == DrivingParameter::Current && prev) {
                set_mode(DrivingParameter::Period);
                dir_T = detail::sign_of(x.T - prev->T);
                if (dir_T == 0) dir_T = 1;
                h = ctrl.period_initial;
                continue;
            }
            if (mode != DrivingParameter::Arclength) {
                set_mode(DrivingParameter::Arclength);
                init_tangent();
                h = ctrl.arclength_initial;
                continue;
            }
            br.termination = Termination::MinStep;
            br.termination_detail = failure;
            break;
        }

        // Accept.
        const AugmentedPoint before = x;
        prev = x;
        x = trial;
        if (disc.adapt(x, &*prev)) {
            // New layout: tighten x on it before recording.
            try {
                newton_solve(disc.problem(), x,
                             mode == DrivingParameter::Period ? Driver::Period : Driver::Current, ctrl.newton);
            } catch (const Error& e) {
                br.termination = Termination::MinStep;
                br.termination_detail = std::string("re-solve after layout change: ") + e.what();
                break;
            }
        }
        disc.accept(x);
        BranchPoint pt = disc.describe(x);
        pt.arclength = br.points.back().arclength + detail::weighted_norm(disc, x.stacked() - prev->stacked());
        br.points.push_back(std::move(pt));
        ++since_switch;

        if (++successes >= ctrl.grow_after) {
            const double cap = mode == DrivingParameter::Current
                                   ? ctrl.max
                                   : (mode == DrivingParameter::Period ? ctrl.period_max : ctrl.arclength_max);
            h = std::min(2.0 * h, cap);
            successes = 0;
        }
        if (mode == DrivingParameter::Arclength) tangent = curve_tangent(disc.problem(), x, disc.weights(), tangent);

        const double dI = x.I - before.I, dT = x.T - before.T;
        const int s = detail::sign_of(dI);
        if (s != 0 && s != last_dI_sign) {
            ++folds;
            last_fold_I = before.I;
            last_dI_sign = s;
        }

        // Driving-parameter switching between I and T.
        const double slope = std::abs(dI) > 0.0 ? std::abs(dT / dI) : std::numeric_limits<double>::infinity();
        if (mode == DrivingParameter::Current && (slope > ctrl.switch_slope || (std::abs(dI) < 1e-6 &&
                                                                                detail::weighted_norm(disc, VectorXd(x.stacked() - prev->stacked())) > 1e-3))) {
            set_mode(DrivingParameter::Period);
            dir_T = detail::sign_of(dT);
            h = std::clamp(std::abs(dT), ctrl.min, ctrl.period_max);
        } else if (mode == DrivingParameter::Period && slope < 0.25 * ctrl.switch_slope) {
            set_mode(DrivingParameter::Current);
            dir_I = s != 0 ? s : dir_I;
            h = std::clamp(std::abs(dI), ctrl.min, ctrl.max);
        } else if (mode == DrivingParameter::Arclength && !ctrl.arclength && since_switch >= 5 &&
                   slope < 0.25 * ctrl.switch_slope) {
            set_mode(DrivingParameter::Current);
            dir_I = s != 0 ? s : dir_I;
            h = std::clamp(std::abs(dI), ctrl.min, ctrl.max);
        }

        if (br.points.back().amplitude() < ctrl.min_amplitude) {
            br.termination = Termination::HopfEndpoint;
            break;
        }
        if (x.I < ctrl.I_min || x.I > ctrl.I_max) {
            br.termination = Termination::Limit;
            break;
        }
        if (x.T > ctrl.max_period) {
            br.termination = Termination::PeriodLimit;
            break;
        }
        if (ctrl.max_folds >= 0 && folds >= ctrl.max_folds && std::abs(x.I - last_fold_I) > ctrl.fold_overrun) {
            br.termination = Termination::FoldCount;
            break;
        }
    }
    return br;
}

/// Solves at fixed period T starting from a branch point.
template <class D>
BranchPoint solve_at_period(D disc, const BranchPoint& from, double T, const NewtonOptions& opt = {}) {
    AugmentedPoint x = disc.load(from);
    x.T = T;
    newton_solve(disc.problem(), x, Driver::Period, opt);
    disc.accept(x);
    return disc.describe(x);
}

/// Solves at fixed current I starting from a branch point.
template <class D>
BranchPoint solve_at_current(D disc, const BranchPoint& from, double I, const NewtonOptions& opt = {}) {
    AugmentedPoint x = disc.load(from);
    x.I = I;
    newton_solve(disc.problem(), x, Driver::Current, opt);
    disc.accept(x);
    return disc.describe(x);
}

/// Nontrivial multiplier closest to `target`.
inline Multiplier closest_multiplier(const FloquetSpectrum& s, double target) {
    Multiplier best = s.nontrivial.front();
    for (const auto& m : s.nontrivial)
        if (std::abs(m - target) < std::abs(best - target)) best = m;
    return best;
}

/// Indices k of interior branch points where I has a local extremum and
/// I lies in [I_lo, I_hi].
inline std::vector<std::size_t> turning_points(const Branch& br, double I_lo, double I_hi) {
    std::vector<std::size_t> out;
    for (std::size_t k = 1; k + 1 < br.points.size(); ++k) {
        const double a = br.points[k].I - br.points[k - 1].I, b = br.points[k + 1].I - br.points[k].I;
        const double I = br.points[k].I;
        if (a * b < 0.0 && I >= I_lo && I <= I_hi) out.push_back(k);
    }
    return out;
}

/// Branch point at period T together with dI/dT from the curve tangent.
struct PeriodSolve {
    BranchPoint point;
    double dI_dT = 0.0;
};

template <class D>
PeriodSolve solve_with_slope(D disc, const BranchPoint& from, double T, const NewtonOptions& opt = {}) {
    AugmentedPoint x = disc.load(from);
    x.T = T;
    newton_solve(disc.problem(), x, Driver::Period, opt);
    disc.accept(x);
    VectorXd e_T = VectorXd::Zero(x.z.size() + 2);
    e_T[x.z.size()] = 1.0;
    const VectorXd t = curve_tangent(disc.problem(), x, disc.weights(), e_T);
    return {disc.describe(x), t[x.z.size() + 1] / t[x.z.size()]};
}

/// Illinois iteration on g(T) over a sign-changing bracket [Ta, Tb].
template <class G>
double illinois(G&& g, double a, double ga, double b, double gb, double tol, int max_iter = 60) {
    if ((ga > 0.0) == (gb > 0.0)) throw Error(ErrorKind::NoSignChange, "bracket does not change sign");
    int side = 0;
    for (int it = 0; it < max_iter && std::abs(b - a) > tol; ++it) {
        double c = b - gb * (b - a) / (gb - ga);
        if (!(c > std::min(a, b) && c < std::max(a, b))) c = 0.5 * (a + b);
        const double gc = g(c);
        if (gc == 0.0) return c;
        if ((gc > 0.0) == (ga > 0.0)) {
            a = c, ga = gc;
            if (side == -1) gb *= 0.5;
            side = -1;
        } else {
            b = c, gb = gc;
            if (side == 1) ga *= 0.5;
            side = 1;
        }
    }
    return b - gb * (b - a) / (gb - ga);
}

/// Refines a turning point of I along the branch: successive parabolic
/// interpolation of I(T) from fixed-T re-solves until I settles to `tol`,
/// then the root of dI/dT (from the curve tangent) pins T.
template <class D>
BifurcationEvent locate_fold_at(const D& disc, const Branch& br, std::size_t k, double tol = 1e-6,
                                const NewtonOptions& opt = {}) {
    if (k == 0 || k + 1 >= br.points.size()) throw Error(ErrorKind::NoExtremum, "turning point index out of range");
    const bool is_max = br.points[k].I > br.points[k - 1].I;
    struct Sample { double T, I; BranchPoint point; };
    std::vector<Sample> s;
    for (std::size_t j = k - 1; j <= k + 1; ++j) s.push_back({br.points[j].period, br.points[j].I, br.points[j]});

    const double sgn = is_max ? 1.0 : -1.0;
    const auto by_T = [](const Sample& a, const Sample& b) { return a.T < b.T; };
    double last_I = s[1].I;
    for (int it = 0; it < 40; ++it) {
        std::sort(s.begin(), s.end(), by_T);
        const double t0 = s[0].T, t1 = s[1].T, t2 = s[2].T;
        const double y0 = s[0].I, y1 = s[1].I, y2 = s[2].I;
        const double num = (t1 - t0) * (t1 - t0) * (y1 - y2) - (t1 - t2) * (t1 - t2) * (y1 - y0);
        const double den = (t1 - t0) * (y1 - y2) - (t1 - t2) * (y1 - y0);
        double T_new = den != 0.0 ? t1 - 0.5 * num / den : t1;
        if (!(T_new > t0 && T_new < t2)) T_new = 0.5 * (t0 + t2);
        if (std::abs(T_new - t1) < 1e-12 * t1) break;
        const auto nearest = std::min_element(s.begin(), s.end(), [&](const Sample& a, const Sample& b) {
            return std::abs(a.T - T_new) < std::abs(b.T - T_new);
        });
        BranchPoint p = solve_at_period(disc, nearest->point, T_new, opt);
        const double I_new = p.I;
        // Bracket update: the best of the four stays in the middle.
        Sample fresh{T_new, I_new, std::move(p)};
        if (T_new < t1) {
            if (sgn * I_new > sgn * y1) s = {s[0], fresh, s[1]};
            else s = {fresh, s[1], s[2]};
        } else {
            if (sgn * I_new > sgn * y1) s = {s[1], fresh, s[2]};
            else s = {s[0], s[1], fresh};
        }
        const double change = std::abs(I_new - last_I);
        last_I = I_new;
        if (change < tol) break;
    }
    std::sort(s.begin(), s.end(), by_T);

    // Polish T on the root of dI/dT next to the best point.
    const BranchPoint& centre = s[1].point;
    double width = std::max(s[2].T - s[1].T, s[1].T - s[0].T);
    PeriodSolve left = solve_with_slope(disc, centre, s[1].T - width, opt);
    PeriodSolve right = solve_with_slope(disc, centre, s[1].T + width, opt);
    for (int grow = 0; grow < 8 && (left.dI_dT > 0.0) == (right.dI_dT > 0.0); ++grow) {
        width *= 2.0;
        left = solve_with_slope(disc, centre, s[1].T - width, opt);
        right = solve_with_slope(disc, centre, s[1].T + width, opt);
    }
    BranchPoint best = centre;
    if ((left.dI_dT > 0.0) != (right.dI_dT > 0.0)) {
        std::optional<BranchPoint> last;
        const auto g = [&](double T) {
            PeriodSolve ps = solve_with_slope(disc, last ? *last : centre, T, opt);
            last = ps.point;
            return ps.dI_dT;
        };
        const double T_star = illinois(g, left.point.period, left.dI_dT, right.point.period, right.dI_dT,
                                       1e-10 * centre.period);
        best = solve_at_period(disc, last ? *last : centre, T_star, opt);
    }

    BifurcationEvent ev;
    ev.kind = EventKind::Fold;
    ev.I_star = best.I;
    ev.period = best.period;
    ev.branch = br.id;
    ev.certificate = closest_multiplier(best.spectrum, 1.0);
    ev.certified = std::abs(ev.certificate - 1.0) < 0.05;
    std::ostringstream os;
    os.precision(10);
    os << (is_max ? "maximum" : "minimum") << " of I at T=" << best.period << "; nontrivial multiplier "
       << ev.certificate.real() << (ev.certificate.imag() < 0 ? "-" : "+") << std::abs(ev.certificate.imag())
       << "i, |mu-1|=" << std::abs(ev.certificate - 1.0);
    ev.evidence = os.str();
    ev.rows.push_back({best.period, best.I, best.spectrum});
    ev.where = best;
    return ev;
}

/// Fold at the first turning point of I with I in [I_lo, I_hi].
template <class D>
BifurcationEvent locate_fold(const D& disc, const Branch& br, double I_lo, double I_hi, double tol = 1e-6,
                             const NewtonOptions& opt = {}) {
    const auto ks = turning_points(br, I_lo, I_hi);
    if (ks.empty()) throw Error(ErrorKind::NoExtremum, "no turning point of I in the bracket");
    return locate_fold_at(disc, br, ks.front(), tol, opt);
}

/// Solves for the cycle at current I between two branch points a, b whose
/// currents bracket I, by root-finding I(T) = I in T. Well posed next to a
/// fold, where fixing I makes the Newton matrix nearly singular.
template <class D>
BranchPoint solve_between(const D& disc, const BranchPoint& a, const BranchPoint& b, double I, double tol_T = 1e-11,
                          const NewtonOptions& opt = {}) {
    std::optional<BranchPoint> last;
    const auto g = [&](double T) {
        const BranchPoint& from = std::abs(T - a.period) < std::abs(T - b.period) ? a : b;
        last = solve_at_period(disc, from, T, opt);
        return last->I - I;
    };
    const double T = illinois(g, a.period, a.I - I, b.period, b.I - I, tol_T);
    const BranchPoint& from = last ? *last : a;
    return solve_at_period(disc, from, T, opt);
}

/// Cycle at current I on the sheet of `from`, found by Newton on I(T) with
/// dI/dT from the curve tangent. Stays on one side of a fold, where fixing
/// I would let Newton jump sheets or stall. Throws NoConvergence if the
/// slope changes sign (the target lies beyond a turning point).
template <class D>
BranchPoint solve_current_by_period(const D& disc, const BranchPoint& from, double I, double tol = 1e-13,
                                    const NewtonOptions& opt = {}, int max_iter = 40) {
    PeriodSolve cur = solve_with_slope(disc, from, from.period, opt);
    const int slope_sign = detail::sign_of(cur.dI_dT);
    std::optional<PeriodSolve> other;  // last iterate on the other side of I
    for (int it = 0; it < max_iter; ++it) {
        const double gap = cur.point.I - I;
        if (std::abs(gap) <= tol) return cur.point;
        if (detail::sign_of(cur.dI_dT) != slope_sign || cur.dI_dT == 0.0)
            throw Error(ErrorKind::NoConvergence, "current " + std::to_string(I) + " lies beyond a turning point");
        const double T0 = cur.point.period;
        double T = T0 - gap / cur.dI_dT;
        const double cap = 0.05 * T0;
        T = std::clamp(T, T0 - cap, T0 + cap);
        if (other) {
            const double lo = std::min(T0, other->point.period), hi = std::max(T0, other->point.period);
            if (!(T > lo && T < hi)) T = 0.5 * (lo + hi);
        }
        PeriodSolve next = solve_with_slope(disc, cur.point, T, opt);
        if ((next.point.I - I > 0.0) != (gap > 0.0)) other = cur;
        cur = std::move(next);
    }
    if (std::abs(cur.point.I - I) <= 1e3 * tol) return cur.point;
    throw Error(ErrorKind::NoConvergence, "period search for current " + std::to_string(I) + " did not settle");
}

/// Sample of a branch point keyed by its period.
inline SpectrumSample sample_of(const BranchPoint& p) { return {p.period, p.I, p.spectrum}; }

/// Locates a multiplier crossing -1 among the branch points with I in
/// [I_lo, I_hi]. Consecutive points whose multipliers cannot be matched
/// are bisected in T until tracking holds; the crossing itself is refined
/// with fixed-T re-solves.
template <class D>
BifurcationEvent locate_pd_in(const D& disc, const Branch& br, const std::vector<BranchPoint>& pts, double tol_T = 1e-9,
                              const NewtonOptions& opt = {}, int max_bisections = 14) {
    if (pts.size() < 2) throw Error(ErrorKind::NoSignChange, "fewer than two branch points in the bracket");

    const auto matches = [](const BranchPoint& a, const BranchPoint& b) {
        try {
            match_multipliers(a.spectrum.nontrivial, b.spectrum.nontrivial);
            return true;
        } catch (const Error&) {
            return false;
        }
    };
    // Densify where tracking fails.
    std::vector<BranchPoint> dense{pts.front()};
    for (std::size_t k = 1; k < pts.size(); ++k) {
        std::vector<BranchPoint> stack{pts[k]};
        int depth = 0;
        while (!stack.empty()) {
            const BranchPoint& target = stack.back();
            if (matches(dense.back(), target) || depth > max_bisections) {
                dense.push_back(target);
                stack.pop_back();
                depth = std::max(0, depth - 1);
                continue;
            }
            const double T_mid = 0.5 * (dense.back().period + target.period);
            stack.push_back(solve_at_period(disc, dense.back(), T_mid, opt));
            ++depth;
        }
    }

    std::vector<SpectrumSample> samples;
    samples.reserve(dense.size());
    for (const auto& p : dense) samples.push_back(sample_of(p));

    const auto sign_change_at = [&]() -> std::size_t {
        for (std::size_t k = 0; k + 1 < samples.size(); ++k) {
            try {
                std::vector<SpectrumSample> pair{samples[k], samples[k + 1]};
                detect_crossing(pair, CrossingKind::PeriodDoubling);
                return k;
            } catch (const Error&) {
            }
        }
        throw Error(ErrorKind::NoSignChange, "no multiplier crosses -1 in the bracket");
    };
    const std::size_t k = sign_change_at();
    const BranchPoint left = dense[k], right = dense[k + 1];
    const SpectrumEvaluator eval = [&](double T) {
        const BranchPoint& from = std::abs(T - left.period) < std::abs(T - right.period) ? left : right;
        return sample_of(solve_at_period(disc, from, T, opt));
    };
    const CrossingResult cr =
        detect_crossing({samples[k], samples[k + 1]}, CrossingKind::PeriodDoubling, eval, tol_T);

    BifurcationEvent ev;
    ev.kind = EventKind::PeriodDoubling;
    ev.I_star = cr.I_star;
    ev.period = cr.s_star;
    ev.branch = br.id;
    const Multiplier mb = closest_multiplier(cr.before.spectrum, -1.0);
    const Multiplier ma = closest_multiplier(cr.after.spectrum, -1.0);
    ev.certificate = 0.5 * (ma + mb);
    ev.certified = ((mb.real() + 1.0) > 0.0) != ((ma.real() + 1.0) > 0.0);
    std::ostringstream os;
    os.precision(10);
    os << "mu+1 changes sign between T=" << cr.before.s << " (mu=" << mb.real() << ") and T=" << cr.after.s
       << " (mu=" << ma.real() << ")";
    ev.evidence = os.str();
    ev.rows = {cr.before, cr.after};
    const BranchPoint& from = std::abs(cr.s_star - left.period) < std::abs(cr.s_star - right.period) ? left : right;
    ev.where = solve_at_period(disc, from, cr.s_star, opt);
    return ev;
}

template <class D>
BifurcationEvent locate_pd(const D& disc, const Branch& br, double I_lo, double I_hi, double tol_T = 1e-9,
                           const NewtonOptions& opt = {}, int max_bisections = 14) {
    std::vector<BranchPoint> pts;
    for (const auto& p : br.points)
        if (p.I >= I_lo && p.I <= I_hi) pts.push_back(p);
        else if (!pts.empty()) break;
    return locate_pd_in(disc, br, pts, tol_T, opt, max_bisections);
}

/// prod(mu + 1) over the nontrivial multipliers. Complex pairs contribute
/// |mu + 1|^2, so the sign flips exactly when a real multiplier crosses -1.
inline double pd_indicator(const FloquetSpectrum& s) {
    Multiplier prod{1.0, 0.0};
    for (const auto& m : s.nontrivial) prod *= (m + 1.0);
    return prod.real();
}

/// Indices k where the period-doubling indicator changes sign between
/// points k and k+1.
inline std::vector<std::size_t> pd_segments(const Branch& br) {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k + 1 < br.points.size(); ++k)
        if ((pd_indicator(br.points[k].spectrum) > 0.0) != (pd_indicator(br.points[k + 1].spectrum) > 0.0))
            out.push_back(k);
    return out;
}

/// Period doubling between points k and k+1 of the branch.
template <class D>
BifurcationEvent locate_pd_at(const D& disc, const Branch& br, std::size_t k, double tol_T = 1e-9,
                              const NewtonOptions& opt = {}) {
    return locate_pd_in(disc, br, {br.points.at(k), br.points.at(k + 1)}, tol_T, opt);
}

/// K=2 harmonic-balance seed next to a Hopf point: the equilibrium plus the
/// critical eigenvector, normalized so its V entry is real, scaled so V has
/// the requested amplitude.
inline FourierCycle hopf_branch_seed(double I_star, double omega0, double amplitude, const HHParams& p = {}) {
    const State eq = find_equilibrium(I_star, p);
    Eigen::EigenSolver<Matrix4> es(jacobian(eq, p, I_star));
    int best = 0;
    for (int i = 1; i < 4; ++i)
        if (std::abs(es.eigenvalues()[i].imag() - omega0) < std::abs(es.eigenvalues()[best].imag() - omega0)) best = i;
    Eigen::Vector4cd v = es.eigenvectors().col(best);
    if (std::abs(v[kV]) == 0.0) throw Error(ErrorKind::StartInvalid, "critical eigenvector has no V component");
    v /= v[kV];
    FourierCycle c;
    c.K = 2;
    c.period = 2.0 * std::numbers::pi / std::abs(es.eigenvalues()[best].imag());
    c.coeffs = MatrixXd::Zero(5, 4);
    c.coeffs.row(0) = eq.transpose();
    c.coeffs.row(1) = amplitude * v.real().transpose();
    c.coeffs.row(2) = -amplitude * v.imag().transpose();
    return c;
}

struct DiagramRow {
    double I = 0.0;
    int branch_id = 0;
    Stability stability = Stability::Stable;
    double v_min = 0.0;
    double v_max = 0.0;
    double period = 0.0;
    int region = 1;
};

struct Diagram {
    std::vector<DiagramRow> rows;
    std::vector<BifurcationEvent> events;
    double region_boundary = 0.0;  // I2: Region 1 is I > I2

    std::size_t count(EventKind k) const {
        return static_cast<std::size_t>(
            std::count_if(events.begin(), events.end(), [k](const BifurcationEvent& e) { return e.kind == k; }));
    }
};

/// Periodic solutions present at current I, one per distinct period
/// (relative tolerance `merge_tol`), interpolated from every monotone
/// stretch of every branch.
inline std::vector<std::pair<double, Stability>> cycles_at(const std::vector<Branch>& branches, double I,
                                                           double merge_tol = 1e-3) {
    std::vector<std::pair<double, Stability>> out;
    for (const auto& br : branches) {
        for (std::size_t k = 0; k + 1 < br.points.size(); ++k) {
            const auto& a = br.points[k];
            const auto& b = br.points[k + 1];
            if ((a.I - I) * (b.I - I) > 0.0 || a.I == b.I) continue;
            const double w = (I - a.I) / (b.I - a.I);
            const double T = a.period + w * (b.period - a.period);
            const Stability st = w < 0.5 ? a.spectrum.stability : b.spectrum.stability;
            const bool dup = std::any_of(out.begin(), out.end(), [&](const auto& c) {
                return std::abs(c.first - T) < merge_tol * T;
            });
            if (!dup) out.emplace_back(T, st);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Merges branches into a diagram. Points repeated across branches (same
/// I within 1e-9, period and V extrema within 1e-6) are kept once; events
/// of the same kind closer than `event_merge` in I are kept once.
inline Diagram assemble_diagram(const std::vector<Branch>& branches, double I2,
                                const std::vector<BifurcationEvent>& extra_events = {}, double event_merge = 1e-5) {
    Diagram d;
    d.region_boundary = I2;
    for (const auto& br : branches) {
        for (const auto& p : br.points) {
            const bool dup = std::any_of(d.rows.begin(), d.rows.end(), [&](const DiagramRow& r) {
                return r.branch_id != br.id && std::abs(r.I - p.I) < 1e-9 && std::abs(r.period - p.period) < 1e-6 &&
                       std::abs(r.v_min - p.v_min) < 1e-6 && std::abs(r.v_max - p.v_max) < 1e-6;
            });
            if (dup) continue;
            d.rows.push_back({p.I, br.id, p.spectrum.stability, p.v_min, p.v_max, p.period, p.I > I2 ? 1 : 2});
        }
    }
    std::stable_sort(d.rows.begin(), d.rows.end(), [](const DiagramRow& a, const DiagramRow& b) {
        return a.branch_id != b.branch_id ? a.branch_id < b.branch_id : a.I < b.I;
    });
    std::vector<BifurcationEvent> all = extra_events;
    for (const auto& br : branches) all.insert(all.end(), br.events.begin(), br.events.end());
    for (auto& e : all) {
        const bool dup = std::any_of(d.events.begin(), d.events.end(), [&](const BifurcationEvent& o) {
            return o.kind == e.kind && std::abs(o.I_star - e.I_star) < event_merge;
        });
        if (!dup) d.events.push_back(e);
    }
    std::stable_sort(d.events.begin(), d.events.end(),
                     [](const BifurcationEvent& a, const BifurcationEvent& b) { return a.I_star < b.I_star; });
    return d;
}

}  // namespace hhc
