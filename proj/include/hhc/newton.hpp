#pragma once

// Damped Newton iteration shared by the collocation and harmonic-balance
// discretizations. A discretization exposes its unknown vector z together
// with the period T and current I; the residual has one more row than z
// (the phase condition) so exactly one of (T, I) must be fixed, or an
// extra arclength row supplied, to make the system square.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <Eigen/LU>

#include <cmath>
#include <optional>
#include <string>

#include "hhc/errors.hpp"

namespace hhc {

using Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

/// Requirements on a periodic-orbit discretization.
template <class P>
concept PeriodicDiscretization = requires(const P& p, const VectorXd& z, double T, double I) {
    { p.unknowns() } -> std::convertible_to<Eigen::Index>;
    { p.residual(z, T, I) } -> std::convertible_to<VectorXd>;
    // (unknowns + 1) x (unknowns + 2); the last two columns are d/dT and d/dI.
    { p.jacobian(z, T, I) } -> std::convertible_to<SparseMatrix>;
};

/// Discretizations whose Jacobian is naturally dense may expose it directly;
/// Newton then factorizes with dense partial-pivot LU.
template <class P>
concept HasDenseJacobian = requires(const P& p, const VectorXd& z, double T, double I) {
    { p.dense_jacobian(z, T, I) } -> std::convertible_to<Eigen::MatrixXd>;
};

/// Which of the two scalar parameters is held fixed.
enum class Driver { Current, Period };

/// Full unknown vector (z, T, I) of a continuation point.
struct AugmentedPoint {
    VectorXd z;
    double T = 0.0;
    double I = 0.0;

    VectorXd stacked() const {
        VectorXd u(z.size() + 2);
        u << z, T, I;
        return u;
    }
    static AugmentedPoint unstack(const VectorXd& u) {
        const Eigen::Index n = u.size() - 2;
        return {u.head(n), u[n], u[n + 1]};
    }
};

/// Extra row tangent . W (u - base) = step closing a pseudo-arclength system.
struct ArclengthConstraint {
    VectorXd tangent;
    VectorXd base;
    VectorXd weights;
    double step = 0.0;
};

struct NewtonOptions {
    double tol = 1e-9;
    int max_iterations = 30;
    int max_halvings = 8;
};

struct NewtonReport {
    int iterations = 0;
    double residual_norm = 0.0;
};

namespace detail {

inline SparseMatrix select_columns(const SparseMatrix& J, Eigen::Index drop) {
    // Drops one column (T or I) from a matrix stored column-major.
    SparseMatrix out(J.rows(), J.cols() - 1);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(J.nonZeros()));
    for (Eigen::Index c = 0; c < J.outerSize(); ++c) {
        if (c == drop) continue;
        const Eigen::Index cc = c < drop ? c : c - 1;
        for (SparseMatrix::InnerIterator it(J, c); it; ++it) trip.emplace_back(it.row(), cc, it.value());
    }
    out.setFromTriplets(trip.begin(), trip.end());
    return out;
}

inline SparseMatrix append_row(const SparseMatrix& J, const VectorXd& row) {
    SparseMatrix out(J.rows() + 1, J.cols());
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(J.nonZeros() + row.size()));
    for (Eigen::Index c = 0; c < J.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(J, c); it; ++it) trip.emplace_back(it.row(), it.col(), it.value());
    for (Eigen::Index c = 0; c < row.size(); ++c)
        if (row[c] != 0.0) trip.emplace_back(J.rows(), c, row[c]);
    out.setFromTriplets(trip.begin(), trip.end());
    return out;
}

inline VectorXd sparse_solve(const SparseMatrix& A, const VectorXd& b) {
    Eigen::SparseLU<SparseMatrix> lu;
    lu.analyzePattern(A);
    lu.factorize(A);
    if (lu.info() != Eigen::Success) throw Error(ErrorKind::SingularJacobian, "Newton matrix factorization failed");
    VectorXd x = lu.solve(b);
    if (lu.info() != Eigen::Success || !x.allFinite())
        throw Error(ErrorKind::SingularJacobian, "Newton solve failed");
    return x;
}

inline Eigen::MatrixXd drop_column(const Eigen::MatrixXd& J, Eigen::Index drop) {
    Eigen::MatrixXd out(J.rows(), J.cols() - 1);
    out.leftCols(drop) = J.leftCols(drop);
    out.rightCols(J.cols() - 1 - drop) = J.rightCols(J.cols() - 1 - drop);
    return out;
}

inline Eigen::MatrixXd append_row(const Eigen::MatrixXd& J, const VectorXd& row) {
    Eigen::MatrixXd out(J.rows() + 1, J.cols());
    out.topRows(J.rows()) = J;
    out.row(J.rows()) = row.transpose();
    return out;
}

inline VectorXd dense_solve(const Eigen::MatrixXd& A, const VectorXd& b) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
    if (!(lu.rcond() > 1e-15)) throw Error(ErrorKind::SingularJacobian, "Newton matrix is singular");
    VectorXd x = lu.solve(b);
    if (!x.allFinite()) throw Error(ErrorKind::SingularJacobian, "Newton solve failed");
    return x;
}

// Solves [J with T or I column dropped] d = b, or [J; row] d = b when a
// border row is given.
template <PeriodicDiscretization P>
VectorXd bordered_solve(const P& problem, const VectorXd& z, double T, double I, const VectorXd* border,
                        Eigen::Index drop, const VectorXd& b) {
    if constexpr (HasDenseJacobian<P>) {
        const Eigen::MatrixXd J = problem.dense_jacobian(z, T, I);
        return border ? dense_solve(append_row(J, *border), b) : dense_solve(drop_column(J, drop), b);
    } else {
        const SparseMatrix J = problem.jacobian(z, T, I);
        return border ? sparse_solve(append_row(J, *border), b) : sparse_solve(select_columns(J, drop), b);
    }
}

}  // namespace detail

/// Newton step on the square system obtained by fixing one parameter
/// (`driver`) or, when `arc` is set, by appending the arclength row.
template <PeriodicDiscretization P>
struct AugmentedSystem {
    const P& problem;
    Driver driver = Driver::Current;
    const ArclengthConstraint* arc = nullptr;

    VectorXd residual(const AugmentedPoint& x) const {
        VectorXd r = problem.residual(x.z, x.T, x.I);
        if (!arc) return r;
        VectorXd out(r.size() + 1);
        out << r, arc->tangent.dot(arc->weights.cwiseProduct(x.stacked() - arc->base)) - arc->step;
        return out;
    }

    AugmentedPoint apply(const AugmentedPoint& x, const VectorXd& delta, double lambda) const {
        AugmentedPoint y = x;
        const Eigen::Index n = x.z.size();
        y.z += lambda * delta.head(n);
        if (arc) {
            y.T += lambda * delta[n];
            y.I += lambda * delta[n + 1];
        } else if (driver == Driver::Current) {
            y.T += lambda * delta[n];
        } else {
            y.I += lambda * delta[n];
        }
        return y;
    }

    VectorXd newton_direction(const AugmentedPoint& x, const VectorXd& r) const {
        const Eigen::Index n = x.z.size();
        if (arc) {
            const VectorXd border = arc->tangent.cwiseProduct(arc->weights);
            return -detail::bordered_solve(problem, x.z, x.T, x.I, &border, 0, r);
        }
        const Eigen::Index drop = driver == Driver::Current ? n + 1 : n;
        return -detail::bordered_solve(problem, x.z, x.T, x.I, nullptr, drop, r);
    }
};

template <PeriodicDiscretization P>
NewtonReport newton_solve(const P& problem, AugmentedPoint& x, Driver driver, const NewtonOptions& opt = {},
                          const ArclengthConstraint* arc = nullptr) {
    const AugmentedSystem<P> sys{problem, driver, arc};
    VectorXd r = sys.residual(x);
    double norm = r.cwiseAbs().maxCoeff();
    NewtonReport report;
    for (int it = 0; it < opt.max_iterations; ++it) {
        if (!std::isfinite(norm)) break;
        if (norm < opt.tol) {
            report.iterations = it;
            report.residual_norm = norm;
            return report;
        }
        const VectorXd delta = sys.newton_direction(x, r);
        double lambda = 1.0;
        bool accepted = false;
        for (int k = 0; k <= opt.max_halvings; ++k, lambda *= 0.5) {
            const AugmentedPoint trial = sys.apply(x, delta, lambda);
            if (!(trial.T > 0.0)) continue;
            const VectorXd r_trial = sys.residual(trial);
            const double n_trial = r_trial.cwiseAbs().maxCoeff();
            if (std::isfinite(n_trial) && (n_trial < norm || k == opt.max_halvings)) {
                x = trial;
                r = r_trial;
                norm = n_trial;
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
    }
    throw Error(ErrorKind::NoConvergence, "Newton residual " + std::to_string(norm));
}

/// Unit tangent of the solution curve: null vector of the (n+1) x (n+2)
/// Jacobian, oriented to agree with `previous` under the weighted inner product.
template <PeriodicDiscretization P>
VectorXd curve_tangent(const P& problem, const AugmentedPoint& x, const VectorXd& weights,
                       const VectorXd& previous) {
    // Border with the previous tangent to make the system square: [J; p^T W] t = e_last.
    const VectorXd border = previous.cwiseProduct(weights);
    VectorXd rhs = VectorXd::Zero(x.z.size() + 2);
    rhs[rhs.size() - 1] = 1.0;
    VectorXd t = detail::bordered_solve(problem, x.z, x.T, x.I, &border, 0, rhs);
    t /= std::sqrt(t.dot(weights.cwiseProduct(t)));
    if (t.dot(weights.cwiseProduct(previous)) < 0.0) t = -t;
    return t;
}

}  // namespace hhc
