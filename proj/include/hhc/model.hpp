#pragma once

// Hodgkin-Huxley membrane model in the original (inverted) voltage
// convention: rest sits at V = 0 and depolarization is negative.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <concepts>
#include <limits>
#include <string>

#include "hhc/errors.hpp"

namespace hhc {

/// Component order of the state vector: (V, n, h, m).
enum StateIndex : int { kV = 0, kN = 1, kH = 2, kM = 3 };

using State = Eigen::Vector4d;
using Matrix4 = Eigen::Matrix4d;

struct HHParams {
    double C = 1.0;        // uF/cm^2
    double gNa = 120.0;    // mS/cm^2
    double gK = 36.0;
    double gL = 0.3;
    double ENa = -115.0;   // mV
    double EK = 12.0;
    double EL = -10.599;

    bool valid() const { return C > 0 && gNa > 0 && gK > 0 && gL > 0; }
};

struct RateSet {
    double alpha_n, beta_n;
    double alpha_h, beta_h;
    double alpha_m, beta_m;
};

/// Any autonomous vector field usable by the integrators and solvers.
template <class F>
concept VectorField = requires(const F& f, const typename F::Vector& x) {
    { F::dim } -> std::convertible_to<int>;
    { f(x) } -> std::convertible_to<typename F::Vector>;
    { f.jacobian(x) } -> std::convertible_to<typename F::Matrix>;
};

/// x / (e^x - 1), continued by 1 at the origin.
inline double expc(double x) {
    if (std::abs(x) < 1e-4) {
        const double x2 = x * x;
        return 1.0 - 0.5 * x + x2 / 12.0 - x2 * x2 / 720.0;
    }
    return x / std::expm1(x);
}

inline double expc_derivative(double x) {
    if (std::abs(x) < 1e-2) {
        const double x2 = x * x;
        return -0.5 + x / 6.0 - x2 * x / 180.0 + x2 * x2 * x / 5040.0;
    }
    const double em1 = std::expm1(x);
    return (em1 - x * std::exp(x)) / (em1 * em1);
}

inline RateSet rates(double V) {
    return RateSet{
        .alpha_n = 0.1 * expc(0.1 * (10.0 + V)),
        .beta_n = std::exp(V / 80.0) / 8.0,
        .alpha_h = 0.07 * std::exp(V / 20.0),
        .beta_h = 1.0 / (1.0 + std::exp(0.1 * (30.0 + V))),
        .alpha_m = expc(0.1 * (25.0 + V)),
        .beta_m = 4.0 * std::exp(V / 18.0),
    };
}

/// dRates/dV, same layout as RateSet.
inline RateSet rate_derivatives(double V) {
    const RateSet r = rates(V);
    const double eh = std::exp(0.1 * (30.0 + V));
    return RateSet{
        .alpha_n = 0.01 * expc_derivative(0.1 * (10.0 + V)),
        .beta_n = r.beta_n / 80.0,
        .alpha_h = r.alpha_h / 20.0,
        .beta_h = -0.1 * eh / ((1.0 + eh) * (1.0 + eh)),
        .alpha_m = 0.1 * expc_derivative(0.1 * (25.0 + V)),
        .beta_m = r.beta_m / 18.0,
    };
}

/// Voltage-dependent steady state of every gate, with V in slot kV.
inline State steady_state(double V) {
    const RateSet r = rates(V);
    State x;
    x << V, r.alpha_n / (r.alpha_n + r.beta_n), r.alpha_h / (r.alpha_h + r.beta_h),
        r.alpha_m / (r.alpha_m + r.beta_m);
    return x;
}

/// The external current is applied with the sign that makes positive I
/// depolarizing in this convention (it drives V negative).
inline State vector_field(const State& x, const HHParams& p, double I) {
    const double V = x[kV], n = x[kN], h = x[kH], m = x[kM];
    const RateSet r = rates(V);
    const double n2 = n * n, m3 = m * m * m;
    const double ionic = p.gNa * m3 * h * (V - p.ENa) + p.gK * n2 * n2 * (V - p.EK) + p.gL * (V - p.EL);
    State dx;
    dx[kV] = (-I - ionic) / p.C;
    dx[kN] = r.alpha_n * (1.0 - n) - r.beta_n * n;
    dx[kH] = r.alpha_h * (1.0 - h) - r.beta_h * h;
    dx[kM] = r.alpha_m * (1.0 - m) - r.beta_m * m;
    return dx;
}

/// Derivative of the vector field with respect to the applied current.
inline State current_sensitivity(const HHParams& p) {
    return State(-1.0 / p.C, 0.0, 0.0, 0.0);
}

inline Matrix4 jacobian(const State& x, const HHParams& p, double I) {
    (void)I;
    const double V = x[kV], n = x[kN], h = x[kH], m = x[kM];
    const RateSet r = rates(V);
    const RateSet d = rate_derivatives(V);
    const double n3 = n * n * n, m2 = m * m;
    Matrix4 J = Matrix4::Zero();
    J(kV, kV) = -(p.gNa * m2 * m * h + p.gK * n3 * n + p.gL) / p.C;
    J(kV, kN) = -4.0 * p.gK * n3 * (V - p.EK) / p.C;
    J(kV, kH) = -p.gNa * m2 * m * (V - p.ENa) / p.C;
    J(kV, kM) = -3.0 * p.gNa * m2 * h * (V - p.ENa) / p.C;
    J(kN, kV) = d.alpha_n * (1.0 - n) - d.beta_n * n;
    J(kN, kN) = -(r.alpha_n + r.beta_n);
    J(kH, kV) = d.alpha_h * (1.0 - h) - d.beta_h * h;
    J(kH, kH) = -(r.alpha_h + r.beta_h);
    J(kM, kV) = d.alpha_m * (1.0 - m) - d.beta_m * m;
    J(kM, kM) = -(r.alpha_m + r.beta_m);
    return J;
}

/// HH vector field with parameters and applied current bound.
struct HHField {
    static constexpr int dim = 4;
    using Vector = State;
    using Matrix = Matrix4;

    HHParams params{};
    double current = 0.0;

    Vector operator()(const Vector& x) const { return vector_field(x, params, current); }
    Matrix jacobian(const Vector& x) const { return hhc::jacobian(x, params, current); }
    Vector current_sensitivity() const { return hhc::current_sensitivity(params); }
};

static_assert(VectorField<HHField>);

namespace detail {

// Voltage equation with every gate pinned to its steady state.
inline double reduced_current(double V, const HHParams& p, double I) {
    return vector_field(steady_state(V), p, I)[kV];
}

inline double reduced_current_slope(double V, const HHParams& p, double I) {
    const State x = steady_state(V);
    const RateSet r = rates(V);
    const RateSet d = rate_derivatives(V);
    auto gate_slope = [](double a, double b, double da, double db) {
        return (da * b - a * db) / ((a + b) * (a + b));
    };
    const Eigen::RowVector4d row = jacobian(x, p, I).row(kV);
    return row[kV] + row[kN] * gate_slope(r.alpha_n, r.beta_n, d.alpha_n, d.beta_n) +
           row[kH] * gate_slope(r.alpha_h, r.beta_h, d.alpha_h, d.beta_h) +
           row[kM] * gate_slope(r.alpha_m, r.beta_m, d.alpha_m, d.beta_m);
}

}  // namespace detail

/// Rest state at current I. Only the guess voltage is used: the gates are
/// eliminated through their steady states and a damped scalar Newton
/// iteration runs on V.
inline State find_equilibrium(double I, const HHParams& p = {}, const State& guess = steady_state(0.0),
                              int max_iter = 100) {
    double V = guess[kV];
    if (!std::isfinite(V)) throw Error(ErrorKind::NoConvergence, "non-finite equilibrium guess");
    double g = detail::reduced_current(V, p, I);
    for (int it = 0; it < max_iter; ++it) {
        const State x = steady_state(V);
        if (vector_field(x, p, I).cwiseAbs().maxCoeff() < 1e-12) return x;
        const double slope = detail::reduced_current_slope(V, p, I);
        if (slope == 0.0 || !std::isfinite(slope)) break;
        double step = -g / slope;
        step = std::clamp(step, -20.0, 20.0);
        double trial = V + step;
        double g_trial = detail::reduced_current(trial, p, I);
        for (int k = 0; k < 30 && std::abs(g_trial) >= std::abs(g); ++k) {
            step *= 0.5;
            trial = V + step;
            g_trial = detail::reduced_current(trial, p, I);
        }
        if (trial == V) {
            // Stalled at the floating-point floor; accept if the residual is tiny.
            if (std::abs(g) < 1e-11) return x;
            break;
        }
        V = trial;
        g = g_trial;
    }
    const State x = steady_state(V);
    if (vector_field(x, p, I).cwiseAbs().maxCoeff() < 1e-12) return x;
    throw Error(ErrorKind::NoConvergence, "equilibrium Newton iteration at I=" + std::to_string(I));
}

using EigenvalueSet = std::array<std::complex<double>, 4>;

/// Eigenvalues of the Jacobian at the rest state, sorted by real part, largest first.
inline EigenvalueSet equilibrium_eigenvalues(double I, const HHParams& p = {}) {
    const State x = find_equilibrium(I, p);
    Eigen::EigenSolver<Matrix4> solver(jacobian(x, p, I), false);
    EigenvalueSet out;
    for (int i = 0; i < 4; ++i) out[i] = solver.eigenvalues()[i];
    std::sort(out.begin(), out.end(), [](auto a, auto b) {
        if (a.real() != b.real()) return a.real() > b.real();
        return a.imag() > b.imag();
    });
    return out;
}

struct HopfPoint {
    double current;
    double omega;  // imaginary part of the critical pair, rad/ms
};

namespace detail {

// Leading complex pair of the rest state; NaN real part when none exists.
inline std::complex<double> leading_complex_pair(double I, const HHParams& p) {
    for (const auto& ev : equilibrium_eigenvalues(I, p))
        if (std::abs(ev.imag()) > 1e-10) return {ev.real(), std::abs(ev.imag())};
    return {std::numeric_limits<double>::quiet_NaN(), 0.0};
}

}  // namespace detail

/// Bisects the real part of the leading complex eigenvalue pair.
inline HopfPoint detect_hopf(double I_lo, double I_hi, double tol = 1e-8, const HHParams& p = {}) {
    auto lo = detail::leading_complex_pair(I_lo, p);
    auto hi = detail::leading_complex_pair(I_hi, p);
    if (!(lo.real() * hi.real() < 0.0))
        throw Error(ErrorKind::NoSignChange, "no Hopf crossing in [" + std::to_string(I_lo) + ", " +
                                                 std::to_string(I_hi) + "]");
    while (I_hi - I_lo > tol) {
        const double mid = 0.5 * (I_lo + I_hi);
        const auto at = detail::leading_complex_pair(mid, p);
        if (!std::isfinite(at.real())) throw Error(ErrorKind::NoSignChange, "complex pair lost during bisection");
        if ((at.real() < 0.0) == (lo.real() < 0.0)) {
            I_lo = mid;
            lo = at;
        } else {
            I_hi = mid;
            hi = at;
        }
    }
    const double I = 0.5 * (I_lo + I_hi);
    return {I, detail::leading_complex_pair(I, p).imag()};
}

}  // namespace hhc
