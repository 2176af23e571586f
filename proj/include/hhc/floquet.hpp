#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "hhc/collocation.hpp"
#include "hhc/errors.hpp"
#include "hhc/harmonic_balance.hpp"
#include "hhc/integrate.hpp"
#include "hhc/model.hpp"
#include "hhc/shooting.hpp"

namespace hhc {

using Multiplier = std::complex<double>;

enum class Stability { Stable, Unstable };

inline const char* to_string(Stability s) { return s == Stability::Stable ? "stable" : "unstable"; }

struct FloquetFlags {
    bool near_fold = false;
    bool near_pd = false;
    bool near_torus = false;

    bool any() const { return near_fold || near_pd || near_torus; }
};

/// Multipliers of a cycle of an n-dimensional field: the trivial one plus
/// the n-1 others sorted by modulus, largest first.
struct FloquetSpectrum {
    Multiplier trivial{1.0, 0.0};
    std::vector<Multiplier> nontrivial;
    double trivial_error = 0.0;
    Stability stability = Stability::Stable;
    FloquetFlags flags;
    /// |prod(mu) - exp(int tr J)| relative to the latter.
    double liouville_error = 0.0;

    bool low_confidence() const { return trivial_error > 1e-2; }

    /// Trivial multiplier first, then the nontrivial ones.
    std::vector<Multiplier> all() const {
        std::vector<Multiplier> out{trivial};
        out.insert(out.end(), nontrivial.begin(), nontrivial.end());
        return out;
    }
};

struct FlagThresholds {
    double distance = 0.05;
    double torus_band = 0.05;
    double imaginary_floor = 1e-9;
};

/// Classifies the eigenvalues of a monodromy matrix.
template <int Dim>
FloquetSpectrum classify_monodromy(const MonodromyResultT<Dim>& mono, const FlagThresholds& th = {}) {
    Eigen::EigenSolver<MatrixN<Dim>> es(mono.matrix, false);
    if (es.info() != Eigen::Success) throw Error(ErrorKind::NonFinite, "monodromy eigenvalue solve failed");
    std::vector<Multiplier> mu(Dim);
    for (int i = 0; i < Dim; ++i) mu[static_cast<std::size_t>(i)] = es.eigenvalues()[i];

    const auto trivial_it = std::min_element(mu.begin(), mu.end(), [](const Multiplier& a, const Multiplier& b) {
        return std::abs(a - 1.0) < std::abs(b - 1.0);
    });
    FloquetSpectrum s;
    s.trivial = *trivial_it;
    s.trivial_error = std::abs(s.trivial - 1.0);
    mu.erase(trivial_it);
    std::stable_sort(mu.begin(), mu.end(),
                     [](const Multiplier& a, const Multiplier& b) { return std::abs(a) > std::abs(b); });
    s.nontrivial = mu;

    s.stability = Stability::Stable;
    for (const auto& m : s.nontrivial) {
        if (std::abs(m) >= 1.0) s.stability = Stability::Unstable;
        if (std::abs(m - 1.0) < th.distance) s.flags.near_fold = true;
        if (std::abs(m + 1.0) < th.distance) s.flags.near_pd = true;
        if (std::abs(m.imag()) > th.imaginary_floor && std::abs(std::abs(m) - 1.0) <= th.torus_band)
            s.flags.near_torus = true;
    }
    const double det_expected = std::exp(mono.trace_integral);
    Multiplier product = s.trivial;
    for (const auto& m : s.nontrivial) product *= m;
    s.liouville_error = std::abs(product - det_expected) / det_expected;
    return s;
}

struct FloquetOptions {
    int steps = 8000;
    FlagThresholds thresholds;
};

/// Time-domain cycles: the variational equation is integrated together with
/// the state from the anchor.
template <VectorField F>
FloquetSpectrum spectrum(const F& field, const CycleT<F::dim>& cycle, const FloquetOptions& opt = {}) {
    const int steps = std::max(opt.steps, 4000);
    return classify_monodromy(monodromy_coupled(field, cycle.anchor_state, cycle.period, steps), opt.thresholds);
}

/// Fourier cycles: the variational equation is integrated along the series.
template <VectorField F>
FloquetSpectrum spectrum(const F& field, const FourierCycleT<F::dim>& cycle, const FloquetOptions& opt = {}) {
    const auto orbit = [&cycle](double t) { return evaluate_series(cycle, t); };
    return classify_monodromy(monodromy_along(field, orbit, cycle.period, opt.steps), opt.thresholds);
}

/// Collocation cycles: the variational equation is integrated along the
/// piecewise polynomial.
template <VectorField F>
FloquetSpectrum spectrum(const F& field, const CollocationCycleT<F::dim>& cycle, const FloquetOptions& opt = {}) {
    return classify_monodromy(monodromy_along(field, cycle, cycle.period, opt.steps), opt.thresholds);
}

/// Report ordering: the trivial multiplier first, the critical one (modulus
/// closest to 1) last, the rest in between by increasing modulus.
inline std::vector<Multiplier> report_order(const FloquetSpectrum& s) {
    std::vector<Multiplier> rest = s.nontrivial;
    std::vector<Multiplier> out{s.trivial};
    if (rest.empty()) return out;
    const auto critical = std::min_element(rest.begin(), rest.end(), [](const Multiplier& a, const Multiplier& b) {
        return std::abs(std::abs(a) - 1.0) < std::abs(std::abs(b) - 1.0);
    });
    const Multiplier last = *critical;
    rest.erase(critical);
    std::stable_sort(rest.begin(), rest.end(),
                     [](const Multiplier& a, const Multiplier& b) { return std::abs(a) < std::abs(b); });
    out.insert(out.end(), rest.begin(), rest.end());
    out.push_back(last);
    return out;
}

enum class CrossingKind { Fold, PeriodDoubling };

inline const char* to_string(CrossingKind k) { return k == CrossingKind::Fold ? "fold" : "period_doubling"; }

/// One point of a multiplier record; `s` is the parameter the root is
/// sought in (I itself, or an arclength/period coordinate near folds).
struct SpectrumSample {
    double s = 0.0;
    double I = 0.0;
    FloquetSpectrum spectrum;
};

struct CrossingResult {
    double s_star = 0.0;
    double I_star = 0.0;
    std::size_t tracked = 0;   // index into the nontrivial multipliers of `before`
    SpectrumSample before;     // bracketing samples after refinement
    SpectrumSample after;
    std::vector<SpectrumSample> evaluations;
};

/// Matches each multiplier of `from` to one of `to` minimizing the total
/// distance; returns perm with to[perm[i]] matched to from[i].
inline std::vector<std::size_t> match_multipliers(const std::vector<Multiplier>& from, const std::vector<Multiplier>& to,
                                                  double max_move = 0.5) {
    if (from.size() != to.size()) throw Error(ErrorKind::TrackingLost, "multiplier count changed");
    std::vector<std::size_t> perm(to.size()), best;
    std::iota(perm.begin(), perm.end(), 0);
    double best_cost = INFINITY;
    const auto scaled = [](const Multiplier& a, const Multiplier& b) {
        return std::abs(a - b) / std::max(1.0, std::min(std::abs(a), std::abs(b)));
    };
    do {
        double cost = 0.0;
        for (std::size_t i = 0; i < from.size(); ++i) cost += scaled(from[i], to[perm[i]]);
        if (cost < best_cost) {
            best_cost = cost;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    for (std::size_t i = 0; i < from.size(); ++i)
        if (scaled(from[i], to[best[i]]) > max_move)
            throw Error(ErrorKind::TrackingLost, "multiplier moved " + std::to_string(std::abs(from[i] - to[best[i]])) +
                                                     " between consecutive points");
    return best;
}

namespace detail {

inline double crossing_target(CrossingKind kind) { return kind == CrossingKind::Fold ? 1.0 : -1.0; }

// Signed distance of a multiplier to the target along the real axis; NaN
// for genuinely complex multipliers, which cannot cross +-1 alone.
inline double signed_gap(const Multiplier& m, CrossingKind kind) {
    if (std::abs(m.imag()) > 1e-9 * std::max(1.0, std::abs(m))) return NAN;
    return kind == CrossingKind::Fold ? m.real() - 1.0 : m.real() + 1.0;
}

}  // namespace detail

using SpectrumEvaluator = std::function<SpectrumSample(double s)>;

/// Locates a multiplier crossing +1 (fold) or -1 (period doubling) in a
/// sequence of spectra, tracking multipliers by nearest-neighbour matching.
/// With an evaluator the bracket is refined by regula falsi (Illinois) until
/// its width is below tol; without one the root is interpolated.
inline CrossingResult detect_crossing(const std::vector<SpectrumSample>& points, CrossingKind kind,
                                      const SpectrumEvaluator& evaluate = {}, double tol = 1e-9,
                                      int max_evaluations = 60) {
    if (points.size() < 2) throw Error(ErrorKind::NoSignChange, "need at least two spectra");
    std::vector<std::vector<Multiplier>> tracked{points.front().spectrum.nontrivial};
    for (std::size_t k = 1; k < points.size(); ++k) {
        const auto perm = match_multipliers(tracked.back(), points[k].spectrum.nontrivial);
        std::vector<Multiplier> next(perm.size());
        for (std::size_t i = 0; i < perm.size(); ++i) next[i] = points[k].spectrum.nontrivial[perm[i]];
        tracked.push_back(std::move(next));
    }

    for (std::size_t k = 0; k + 1 < points.size(); ++k) {
        for (std::size_t j = 0; j < tracked[k].size(); ++j) {
            const double g0 = detail::signed_gap(tracked[k][j], kind);
            const double g1 = detail::signed_gap(tracked[k + 1][j], kind);
            if (!(std::isfinite(g0) && std::isfinite(g1)) || (g0 > 0.0) == (g1 > 0.0)) continue;
            CrossingResult out;
            out.before = points[k];
            out.after = points[k + 1];
            double a = points[k].s, b = points[k + 1].s, ga = g0, gb = g1;
            Multiplier ma = tracked[k][j], mb = tracked[k + 1][j];
            out.tracked = j;
            int side = 0;
            for (int it = 0; evaluate && it < max_evaluations && std::abs(b - a) > tol; ++it) {
                double c = b - gb * (b - a) / (gb - ga);
                if (!(c > std::min(a, b) && c < std::max(a, b))) c = 0.5 * (a + b);
                SpectrumSample sample = evaluate(c);
                out.evaluations.push_back(sample);
                const auto& mu = sample.spectrum.nontrivial;
                const auto nearest = std::min_element(mu.begin(), mu.end(), [&](const Multiplier& x, const Multiplier& y) {
                    return std::abs(x - ma) + std::abs(x - mb) < std::abs(y - ma) + std::abs(y - mb);
                });
                const double gc = detail::signed_gap(*nearest, kind);
                if (!std::isfinite(gc)) throw Error(ErrorKind::TrackingLost, "tracked multiplier became complex");
                if ((gc > 0.0) == (ga > 0.0)) {
                    a = c, ga = gc, ma = *nearest;
                    out.before = sample;
                    if (side == -1) gb *= 0.5;
                    side = -1;
                } else {
                    b = c, gb = gc, mb = *nearest;
                    out.after = sample;
                    if (side == 1) ga *= 0.5;
                    side = 1;
                }
            }
            const double w = ga / (ga - gb);
            out.s_star = a + w * (b - a);
            out.I_star = out.before.I + w * (out.after.I - out.before.I);
            return out;
        }
    }
    throw Error(ErrorKind::NoSignChange, std::string("no tracked multiplier crosses ") +
                                             (kind == CrossingKind::Fold ? "+1" : "-1"));
}

}  // namespace hhc
