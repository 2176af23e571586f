#pragma once

// Harmonic balance: a cycle is a truncated real Fourier series per state
// variable, and the vector field's spectrum is read off by sampling the
// series on an oversampled grid of trigonometric-Lagrange nodes, applying
// the field pointwise, and projecting back onto the leading harmonics.
//
// Coefficient layout, per variable: (A0, A1, B1, A2, B2, ..., AK, BK), so
// A_k sits at index 2k-1 and B_k at 2k.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "hhc/errors.hpp"
#include "hhc/integrate.hpp"
#include "hhc/model.hpp"
#include "hhc/newton.hpp"

namespace hhc {

using Eigen::MatrixXd;

template <int Dim>
struct FourierCycleT {
    int K = 0;
    double period = 0.0;
    /// (2K+1) x Dim, one column per state variable.
    MatrixXd coeffs;

    Eigen::Index length() const { return 2 * K + 1; }
};

using FourierCycle = FourierCycleT<4>;

struct SpectralOperators {
    int K = 0;
    int n = 0;  // nodes = 2n + 1
    std::vector<double> nodes;
    MatrixXd synthesis;  // (2n+1) x (2K+1)
    MatrixXd analysis;   // (2K+1) x (2n+1)
    MatrixXd D;          // (2K+1) x (2K+1)

    int node_count() const { return 2 * n + 1; }
};

inline SpectralOperators build_operators(int K, int oversample = 4) {
    if (K < 1 || oversample < 1) throw Error(ErrorKind::StartInvalid, "need K >= 1 and oversample >= 1");
    SpectralOperators ops;
    ops.K = K;
    ops.n = oversample * K;
    const int M = ops.node_count();
    const int L = 2 * K + 1;
    ops.nodes.resize(M);
    ops.synthesis.resize(M, L);
    ops.analysis.resize(L, M);
    for (int j = 0; j < M; ++j) {
        const double theta = 2.0 * std::numbers::pi * j / M;
        ops.nodes[j] = theta;
        ops.synthesis(j, 0) = 1.0;
        ops.analysis(0, j) = 1.0 / M;
        for (int k = 1; k <= K; ++k) {
            const double c = std::cos(k * theta), s = std::sin(k * theta);
            ops.synthesis(j, 2 * k - 1) = c;
            ops.synthesis(j, 2 * k) = s;
            ops.analysis(2 * k - 1, j) = 2.0 * c / M;
            ops.analysis(2 * k, j) = 2.0 * s / M;
        }
    }
    ops.D = MatrixXd::Zero(L, L);
    for (int k = 1; k <= K; ++k) {
        ops.D(2 * k - 1, 2 * k) = k;
        ops.D(2 * k, 2 * k - 1) = -k;
    }
    return ops;
}

/// Copy of `field` evaluated at current I (no-op for fields without a current).
template <class F>
F at_current(F field, double I) {
    if constexpr (requires { field.current; }) field.current = I;
    (void)I;
    return field;
}

/// Derivative of f with respect to the current, zero for unparameterized fields.
template <VectorField F>
typename F::Vector field_current_sensitivity(const F& field, const typename F::Vector& /*x*/) {
    if constexpr (requires { field.current_sensitivity(); }) {
        return field.current_sensitivity();
    } else {
        return F::Vector::Zero();
    }
}

/// Node values of the series: (2n+1) x Dim.
template <int Dim>
MatrixXd node_values(const FourierCycleT<Dim>& cycle, const SpectralOperators& ops) {
    return ops.synthesis * cycle.coeffs;
}

/// Leading Fourier coefficients of f(X_K(t)), through the node values.
template <VectorField F>
MatrixXd nonlinear_spectrum(const FourierCycleT<F::dim>& cycle, const F& field, const SpectralOperators& ops) {
    if (ops.K != cycle.K) throw Error(ErrorKind::StartInvalid, "operators and cycle disagree on K");
    const MatrixXd X = node_values(cycle, ops);
    MatrixXd Y(X.rows(), F::dim);
    for (Eigen::Index j = 0; j < X.rows(); ++j) {
        const typename F::Vector x = X.row(j).transpose();
        Y.row(j) = field(x).transpose();
    }
    return ops.analysis * Y;
}

template <int Dim>
double angular_frequency(const FourierCycleT<Dim>& c) {
    return 2.0 * std::numbers::pi / c.period;
}

/// Balance residual omega D X - Y_F(X) stacked variable by variable, then
/// the phase row B1 of variable 0.
template <VectorField F>
VectorXd hb_residual(const FourierCycleT<F::dim>& cycle, double T, const F& field, const SpectralOperators& ops) {
    const Eigen::Index L = cycle.length();
    const double omega = 2.0 * std::numbers::pi / T;
    const MatrixXd R = omega * ops.D * cycle.coeffs - nonlinear_spectrum(cycle, field, ops);
    VectorXd out(F::dim * L + 1);
    for (int a = 0; a < F::dim; ++a) out.segment(a * L, L) = R.col(a);
    out[F::dim * L] = L > 2 ? cycle.coeffs(2, 0) : 0.0;
    return out;
}

template <int Dim>
typename Eigen::Matrix<double, Dim, 1> evaluate_series(const FourierCycleT<Dim>& cycle, double t) {
    const double theta = 2.0 * std::numbers::pi * t / cycle.period;
    Eigen::Matrix<double, Dim, 1> x = cycle.coeffs.row(0).transpose();
    for (int k = 1; k <= cycle.K; ++k) {
        const double phase = std::remainder(k * theta, 2.0 * std::numbers::pi);
        x += std::cos(phase) * cycle.coeffs.row(2 * k - 1).transpose() +
             std::sin(phase) * cycle.coeffs.row(2 * k).transpose();
    }
    return x;
}

/// Time derivative of the series, term by term.
template <int Dim>
typename Eigen::Matrix<double, Dim, 1> evaluate_series_derivative(const FourierCycleT<Dim>& cycle, double t) {
    FourierCycleT<Dim> d = cycle;
    d.coeffs = MatrixXd::Zero(cycle.length(), Dim);
    const double omega = angular_frequency(cycle);
    for (int k = 1; k <= cycle.K; ++k) {
        d.coeffs.row(2 * k - 1) = omega * k * cycle.coeffs.row(2 * k);
        d.coeffs.row(2 * k) = -omega * k * cycle.coeffs.row(2 * k - 1);
    }
    return evaluate_series(d, t);
}

/// Time shift X(t) -> X(t + shift) applied in coefficient space.
template <int Dim>
FourierCycleT<Dim> shift_time(const FourierCycleT<Dim>& cycle, double shift) {
    FourierCycleT<Dim> out = cycle;
    const double sigma = 2.0 * std::numbers::pi * shift / cycle.period;
    for (int k = 1; k <= cycle.K; ++k) {
        const double c = std::cos(k * sigma), s = std::sin(k * sigma);
        const auto A = cycle.coeffs.row(2 * k - 1), B = cycle.coeffs.row(2 * k);
        out.coeffs.row(2 * k - 1) = c * A + s * B;
        out.coeffs.row(2 * k) = c * B - s * A;
    }
    return out;
}

/// Rotates the phase so that B1 of variable 0 vanishes with A1 >= 0.
template <int Dim>
FourierCycleT<Dim> anchor_phase(const FourierCycleT<Dim>& cycle) {
    if (cycle.K < 1) return cycle;
    const double A1 = cycle.coeffs(1, 0), B1 = cycle.coeffs(2, 0);
    if (A1 == 0.0 && B1 == 0.0) return cycle;
    const double sigma = std::atan2(B1, A1);
    FourierCycleT<Dim> out = shift_time(cycle, sigma * cycle.period / (2.0 * std::numbers::pi));
    out.coeffs(2, 0) = 0.0;
    return out;
}

/// Changes the harmonic count, zero-padding or truncating.
template <int Dim>
FourierCycleT<Dim> resize_harmonics(const FourierCycleT<Dim>& cycle, int K) {
    FourierCycleT<Dim> out;
    out.K = K;
    out.period = cycle.period;
    out.coeffs = MatrixXd::Zero(2 * K + 1, Dim);
    const Eigen::Index rows = std::min<Eigen::Index>(out.length(), cycle.length());
    out.coeffs.topRows(rows) = cycle.coeffs.topRows(rows);
    return out;
}

/// Fourier coefficients of a time-domain orbit x(t), t in [0, period),
/// through the analysis matrix of the given operators.
template <int Dim, class Orbit>
FourierCycleT<Dim> fourier_from_orbit(const Orbit& orbit, double period, const SpectralOperators& ops) {
    const int M = ops.node_count();
    MatrixXd X(M, Dim);
    for (int j = 0; j < M; ++j) X.row(j) = orbit(period * j / M).transpose();
    FourierCycleT<Dim> out;
    out.K = ops.K;
    out.period = period;
    out.coeffs = ops.analysis * X;
    return out;
}

/// Smallest K' whose discarded tail is below drop_tol relative to the
/// largest coefficient, worst case over variables; clamped to [1, K].
template <int Dim>
int choose_harmonics(const FourierCycleT<Dim>& cycle, double drop_tol) {
    for (int Kp = 1; Kp < cycle.K; ++Kp) {
        bool ok = true;
        for (int a = 0; a < Dim && ok; ++a) {
            const auto col = cycle.coeffs.col(a);
            const double whole = col.cwiseAbs().maxCoeff();
            if (whole == 0.0) continue;
            const double tail = col.tail(cycle.length() - (2 * Kp + 1)).cwiseAbs().maxCoeff();
            ok = tail / whole < drop_tol;
        }
        if (ok) return Kp;
    }
    return std::max(1, cycle.K);
}

/// Per-harmonic magnitude |A_k| + |B_k| of one variable, k = 0..K.
/// Time-domain defect of a truncated series: the largest |x'(t) - f(x)| in
/// one component over a grid much finer than the collocation nodes,
/// relative to the largest |f| in that component. Gibbs ripple shows up here
/// long before it shows in the balance residual.
template <VectorField F>
double ripple_metric(const FourierCycleT<F::dim>& c, const F& field, int component = 0, int per_harmonic = 16) {
    const int samples = per_harmonic * static_cast<int>(c.length());
    double defect = 0.0, scale = 0.0;
    for (int i = 0; i < samples; ++i) {
        const double t = c.period * i / samples;
        const auto fx = field(evaluate_series(c, t));
        defect = std::max(defect, std::abs(evaluate_series_derivative(c, t)[component] - fx[component]));
        scale = std::max(scale, std::abs(fx[component]));
    }
    return scale > 0.0 ? defect / scale : defect;
}

template <int Dim>
std::vector<double> harmonic_magnitudes(const FourierCycleT<Dim>& cycle, int variable = 0) {
    std::vector<double> out(cycle.K + 1);
    out[0] = std::abs(cycle.coeffs(0, variable));
    for (int k = 1; k <= cycle.K; ++k)
        out[k] = std::abs(cycle.coeffs(2 * k - 1, variable)) + std::abs(cycle.coeffs(2 * k, variable));
    return out;
}

enum class JacobianMode { Analytic, FiniteDifference };

/// Harmonic-balance discretization at a fixed harmonic count.
template <VectorField F>
class HarmonicBalanceProblem {
public:
    static constexpr int dim = F::dim;

    HarmonicBalanceProblem(F field, SpectralOperators ops, JacobianMode mode = JacobianMode::Analytic)
        : field_(std::move(field)), ops_(std::move(ops)), mode_(mode) {}

    const SpectralOperators& operators() const { return ops_; }
    const F& field() const { return field_; }
    Eigen::Index coefficient_length() const { return 2 * ops_.K + 1; }
    Eigen::Index unknowns() const { return dim * coefficient_length(); }

    FourierCycleT<dim> unpack(const VectorXd& z, double T) const {
        FourierCycleT<dim> c;
        c.K = ops_.K;
        c.period = T;
        c.coeffs.resize(coefficient_length(), dim);
        for (int a = 0; a < dim; ++a) c.coeffs.col(a) = z.segment(a * coefficient_length(), coefficient_length());
        return c;
    }

    VectorXd pack(const FourierCycleT<dim>& c) const {
        VectorXd z(unknowns());
        for (int a = 0; a < dim; ++a) z.segment(a * coefficient_length(), coefficient_length()) = c.coeffs.col(a);
        return z;
    }

    VectorXd residual(const VectorXd& z, double T, double I) const {
        return hb_residual(unpack(z, T), T, at_current(field_, I), ops_);
    }

    SparseMatrix jacobian(const VectorXd& z, double T, double I) const {
        const MatrixXd J = mode_ == JacobianMode::Analytic ? analytic_jacobian(z, T, I) : fd_jacobian(z, T, I);
        return J.sparseView();
    }

    MatrixXd dense_jacobian(const VectorXd& z, double T, double I) const {
        return mode_ == JacobianMode::Analytic ? analytic_jacobian(z, T, I) : fd_jacobian(z, T, I);
    }

private:
    MatrixXd analytic_jacobian(const VectorXd& z, double T, double I) const {
        const Eigen::Index L = coefficient_length();
        const Eigen::Index n = unknowns();
        const F f = at_current(field_, I);
        const FourierCycleT<dim> c = unpack(z, T);
        const MatrixXd X = node_values(c, ops_);
        const Eigen::Index M = X.rows();
        std::vector<typename F::Matrix> Jn(static_cast<std::size_t>(M));
        MatrixXd dI(M, dim);
        for (Eigen::Index j = 0; j < M; ++j) {
            const typename F::Vector x = X.row(j).transpose();
            Jn[static_cast<std::size_t>(j)] = f.jacobian(x);
            dI.row(j) = field_current_sensitivity(f, x).transpose();
        }
        const double omega = 2.0 * std::numbers::pi / T;
        MatrixXd out = MatrixXd::Zero(n + 1, n + 2);
        MatrixXd scaled(M, L);
        for (int a = 0; a < dim; ++a) {
            out.block(a * L, a * L, L, L) = omega * ops_.D;
            for (int b = 0; b < dim; ++b) {
                bool any = false;
                for (Eigen::Index j = 0; j < M; ++j) {
                    const double v = Jn[static_cast<std::size_t>(j)](a, b);
                    scaled.row(j) = v * ops_.synthesis.row(j);
                    any = any || v != 0.0;
                }
                if (any) out.block(a * L, b * L, L, L).noalias() -= ops_.analysis * scaled;
            }
            out.block(a * L, n, L, 1) = -(2.0 * std::numbers::pi / (T * T)) * (ops_.D * c.coeffs.col(a));
            out.block(a * L, n + 1, L, 1) = -(ops_.analysis * dI.col(a));
        }
        if (L > 2) out(n, 2) = 1.0;
        return out;
    }

    MatrixXd fd_jacobian(const VectorXd& z, double T, double I) const {
        const Eigen::Index n = unknowns();
        const VectorXd r0 = residual(z, T, I);
        MatrixXd out(n + 1, n + 2);
        VectorXd zp = z;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double h = 1e-7 * std::max(1.0, std::abs(z[i]));
            zp[i] = z[i] + h;
            out.col(i) = (residual(zp, T, I) - r0) / h;
            zp[i] = z[i];
        }
        const double hT = 1e-7 * std::max(1.0, T), hI = 1e-7 * std::max(1.0, std::abs(I));
        out.col(n) = (residual(z, T + hT, I) - r0) / hT;
        out.col(n + 1) = (residual(z, T, I + hI) - r0) / hI;
        return out;
    }

    F field_;
    SpectralOperators ops_;
    JacobianMode mode_;
};

struct HBOptions {
    NewtonOptions newton{.tol = 1e-9, .max_iterations = 40, .max_halvings = 8};
    JacobianMode jacobian = JacobianMode::Analytic;
};

/// Damped Newton on the balance equations over (coefficients, T) at the
/// field's current. The initial guess is phase-rotated to satisfy B1(V) = 0.
template <VectorField F>
FourierCycleT<F::dim> solve_hb(const F& field, const FourierCycleT<F::dim>& init, const SpectralOperators& ops,
                               double tol = 1e-9, const HBOptions& opt = {}) {
    if (!(init.period > 0.0)) throw Error(ErrorKind::StartInvalid, "initial period must be positive");
    const FourierCycleT<F::dim> start = anchor_phase(resize_harmonics(init, ops.K));
    HarmonicBalanceProblem<F> problem(field, ops, opt.jacobian);
    double I = 0.0;
    if constexpr (requires { field.current; }) I = field.current;
    AugmentedPoint x{problem.pack(start), start.period, I};
    NewtonOptions nopt = opt.newton;
    nopt.tol = tol;
    newton_solve(problem, x, Driver::Current, nopt);
    return problem.unpack(x.z, x.T);
}

}  // namespace hhc
