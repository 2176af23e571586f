#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "hhc/errors.hpp"
#include "hhc/integrate.hpp"
#include "hhc/model.hpp"

namespace hhc {

enum class CycleSource { Shooting, Collocation, HarmonicBalance, Transient };

inline const char* to_string(CycleSource s) {
    switch (s) {
        case CycleSource::Shooting: return "shooting";
        case CycleSource::Collocation: return "collocation";
        case CycleSource::HarmonicBalance: return "harmonic-balance";
        case CycleSource::Transient: return "transient";
    }
    return "unknown";
}

/// A periodic orbit in the time domain.
template <int Dim>
struct CycleT {
    double period = 0.0;
    VectorN<Dim> anchor_state;
    TrajectoryT<Dim> samples;  // one period, samples.front() == anchor_state
    CycleSource source = CycleSource::Shooting;
};

using Cycle = CycleT<4>;

struct ShootingOptions {
    int steps_per_period = 8000;
    int max_iterations = 40;
    int max_halvings = 8;
    int output_samples = 2000;
};

/// Samples one period starting at x0.
template <VectorField F>
TrajectoryT<F::dim> sample_period(const F& field, const typename F::Vector& x0, double period, int samples,
                                  int steps_per_period) {
    TrajectoryT<F::dim> traj;
    traj.times.reserve(samples + 1);
    traj.states.reserve(samples + 1);
    const int sub = std::max(1, (steps_per_period + samples - 1) / samples);
    const double h = period / (static_cast<double>(samples) * sub);
    typename F::Vector x = x0;
    traj.times.push_back(0.0);
    traj.states.push_back(x);
    for (int i = 1; i <= samples; ++i) {
        for (int k = 0; k < sub; ++k) x = detail::rk4_step(field, x, h);
        detail::check_finite(x, i * h * sub);
        traj.times.push_back(period * i / samples);
        traj.states.push_back(x);
    }
    return traj;
}

namespace detail {

template <int Dim>
struct ShootingSystem {
    VectorN<Dim + 1> residual;
    Eigen::Matrix<double, Dim + 1, Dim + 1> jacobian;
};

template <VectorField F>
ShootingSystem<F::dim> shooting_system(const F& field, const typename F::Vector& x0, double period,
                                       const typename F::Vector& anchor, const typename F::Vector& normal,
                                       int steps) {
    constexpr int n = F::dim;
    const auto mono = monodromy_coupled(field, x0, period, steps);
    ShootingSystem<n> sys;
    sys.residual.template head<n>() = mono.end_state - x0;
    sys.residual[n] = (x0 - anchor).dot(normal);
    sys.jacobian.setZero();
    sys.jacobian.template topLeftCorner<n, n>() = mono.matrix - MatrixN<n>::Identity();
    sys.jacobian.template block<n, 1>(0, n) = field(mono.end_state);
    sys.jacobian.template block<1, n>(n, 0) = normal.transpose();
    return sys;
}

}  // namespace detail

/// Newton shooting on [phi(x0, T) - x0; <x0 - anchor, f(anchor)>] = 0, where
/// the anchor is the guess's first state.
template <VectorField F>
CycleT<F::dim> shoot(const F& field, const CycleT<F::dim>& guess, double tol = 1e-10,
                     const ShootingOptions& opt = {}) {
    constexpr int n = F::dim;
    if (!(guess.period > 0.0)) throw Error(ErrorKind::StartInvalid, "guess period must be positive");
    const VectorN<n> anchor = guess.anchor_state;
    const VectorN<n> normal = field(anchor);
    const auto stationary = [&](const VectorN<n>& y) {
        return field(y).norm() < 1e-8 * std::max(1.0, y.norm());
    };
    if (stationary(anchor)) throw Error(ErrorKind::DegenerateCycle, "guess anchor is an equilibrium");

    VectorN<n> x = anchor;
    double T = guess.period;
    auto sys = detail::shooting_system(field, x, T, anchor, normal, opt.steps_per_period);
    double res = sys.residual.template head<n>().cwiseAbs().maxCoeff();
    for (int it = 0; it < opt.max_iterations; ++it) {
        if (res < tol) {
            if (stationary(x)) throw Error(ErrorKind::DegenerateCycle, "shooting converged to an equilibrium");
            CycleT<n> out;
            out.period = T;
            out.anchor_state = x;
            out.samples = sample_period(field, x, T, opt.output_samples, opt.steps_per_period);
            out.source = CycleSource::Shooting;
            return out;
        }
        Eigen::FullPivLU<Eigen::Matrix<double, n + 1, n + 1>> lu(sys.jacobian);
        if (!lu.isInvertible() || lu.rcond() < 1e-14)
            throw Error(ErrorKind::SingularJacobian, "shooting Newton matrix is singular");
        const VectorN<n + 1> delta = -lu.solve(sys.residual);
        double lambda = 1.0;
        bool accepted = false;
        for (int k = 0; k <= opt.max_halvings; ++k, lambda *= 0.5) {
            const VectorN<n> x_try = x + lambda * delta.template head<n>();
            const double T_try = T + lambda * delta[n];
            if (!(T_try > 0.0)) continue;
            try {
                auto trial = detail::shooting_system(field, x_try, T_try, anchor, normal, opt.steps_per_period);
                const double r_try = trial.residual.template head<n>().cwiseAbs().maxCoeff();
                if (r_try < res || k == opt.max_halvings) {
                    x = x_try;
                    T = T_try;
                    sys = trial;
                    res = r_try;
                    accepted = true;
                    break;
                }
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::NonFinite) throw;
            }
        }
        if (!accepted) break;
    }
    throw Error(ErrorKind::NoConvergence, "shooting residual " + std::to_string(res));
}

struct TransientOptions {
    double step = 0.01;               // ms
    double perturbation = -20.0;      // mV added to V at rest (depolarizing)
    double window = 150.0;            // ms of post-settling record scanned for crossings
    double min_amplitude = 1e-3;      // mV
    int output_samples = 2000;
    int steps_per_period = 8000;
};

/// Runs a transient from a perturbed rest state and cuts one period out of
/// the settled oscillation.
inline Cycle settle_transient(double I, double settle_time, const HHParams& p = {},
                              const TransientOptions& opt = {}) {
    const HHField field{p, I};
    State x0 = find_equilibrium(I, p);
    x0[kV] += opt.perturbation;
    const State settled = flow(field, x0, settle_time, static_cast<int>(std::ceil(settle_time / opt.step)));
    const Trajectory record = integrate_rk4(field, settled, 0.0, opt.window, opt.step);

    double v_min = record.states.front()[kV], v_max = v_min, v_mean = 0.0;
    for (const auto& s : record.states) {
        v_min = std::min(v_min, s[kV]);
        v_max = std::max(v_max, s[kV]);
        v_mean += s[kV];
    }
    v_mean /= static_cast<double>(record.size());
    if (v_max - v_min < opt.min_amplitude)
        throw Error(ErrorKind::NoOscillation, "transient settled to rest at I=" + std::to_string(I));

    std::vector<double> crossings;
    std::vector<std::size_t> crossing_index;
    for (std::size_t i = 0; i + 1 < record.size(); ++i) {
        const double a = record.states[i][kV] - v_mean, b = record.states[i + 1][kV] - v_mean;
        if (a < 0.0 && b >= 0.0) {
            crossings.push_back(record.times[i] + (record.times[i + 1] - record.times[i]) * (-a) / (b - a));
            crossing_index.push_back(i);
        }
    }
    if (crossings.size() < 3)
        throw Error(ErrorKind::NoOscillation, "fewer than 3 upward crossings at I=" + std::to_string(I));
    const std::size_t last = crossings.size() - 1;
    const double period = 0.5 * (crossings[last] - crossings[last - 2]);

    // Start the sampled period exactly on the last crossing.
    const std::size_t i0 = crossing_index[last];
    const double dt = crossings[last] - record.times[i0];
    const State anchor = dt > 0.0 ? flow(field, record.states[i0], dt, 1) : record.states[i0];

    Cycle out;
    out.period = period;
    out.anchor_state = anchor;
    out.samples = sample_period(field, anchor, period, opt.output_samples, opt.steps_per_period);
    out.source = CycleSource::Transient;
    return out;
}

}  // namespace hhc
