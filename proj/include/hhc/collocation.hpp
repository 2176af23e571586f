#pragma once

// Periodic boundary-value collocation on the normalized interval [0, 1]:
// du/dtau = T f(u), u(0) = u(1). Each subinterval carries the cubic Hermite
// polynomial through the node values with slopes T f(y_i); collocating it at
// the three Lobatto points {0, 1/2, 1} leaves only the midpoint condition as
// a genuine equation (the endpoint ones hold by construction), so the
// approximation is C^1 and fourth-order accurate.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "hhc/errors.hpp"
#include "hhc/harmonic_balance.hpp"
#include "hhc/integrate.hpp"
#include "hhc/model.hpp"
#include "hhc/newton.hpp"

namespace hhc {

struct Mesh {
    std::vector<double> breakpoints{0.0, 1.0};
    std::array<double, 3> rho{0.0, 0.5, 1.0};

    static Mesh uniform(int N) {
        Mesh m;
        m.breakpoints.resize(static_cast<std::size_t>(N) + 1);
        for (int i = 0; i <= N; ++i) m.breakpoints[static_cast<std::size_t>(i)] = static_cast<double>(i) / N;
        return m;
    }

    int subintervals() const { return static_cast<int>(breakpoints.size()) - 1; }
    double width(int i) const { return breakpoints[i + 1] - breakpoints[i]; }

    bool valid() const {
        if (breakpoints.size() < 2 || breakpoints.front() != 0.0 || breakpoints.back() != 1.0) return false;
        for (std::size_t i = 1; i < breakpoints.size(); ++i)
            if (!(breakpoints[i] > breakpoints[i - 1])) return false;
        return true;
    }

    /// Subinterval containing tau (clamped to the mesh).
    int locate(double tau) const {
        auto it = std::upper_bound(breakpoints.begin(), breakpoints.end(), tau);
        const int i = static_cast<int>(it - breakpoints.begin()) - 1;
        return std::clamp(i, 0, subintervals() - 1);
    }
};

/// Piecewise cubic Hermite function on [0, 1], periodic: values.back() ==
/// values.front(). Slopes are d/dtau.
template <int Dim>
struct PiecewisePolyT {
    Mesh mesh;
    std::vector<VectorN<Dim>> values;
    std::vector<VectorN<Dim>> slopes;

    VectorN<Dim> operator()(double tau) const { return evaluate(tau, false); }
    VectorN<Dim> derivative(double tau) const { return evaluate(tau, true); }

    /// Monomial coefficients c0..c3 in the local variable s in [0, 1] of
    /// subinterval i, one column per state variable component.
    Eigen::Matrix<double, 4, Dim> coefficients(int i) const {
        const double h = mesh.width(i);
        const VectorN<Dim>& y0 = values[i];
        const VectorN<Dim>& y1 = values[i + 1];
        const VectorN<Dim> d0 = h * slopes[i], d1 = h * slopes[i + 1];
        Eigen::Matrix<double, 4, Dim> c;
        c.row(0) = y0.transpose();
        c.row(1) = d0.transpose();
        c.row(2) = (3.0 * (y1 - y0) - 2.0 * d0 - d1).transpose();
        c.row(3) = (2.0 * (y0 - y1) + d0 + d1).transpose();
        return c;
    }

private:
    VectorN<Dim> evaluate(double tau, bool derivative) const {
        tau -= std::floor(tau);
        const int i = mesh.locate(tau);
        const double h = mesh.width(i);
        const double s = (tau - mesh.breakpoints[i]) / h;
        const auto c = coefficients(i);
        if (derivative) return ((c.row(1) + s * (2.0 * c.row(2) + 3.0 * s * c.row(3))) / h).transpose();
        return (c.row(0) + s * (c.row(1) + s * (c.row(2) + s * c.row(3)))).transpose();
    }
};

using PiecewisePoly = PiecewisePolyT<4>;

/// A converged collocation cycle: the polynomial plus the period it was solved with.
template <int Dim>
struct CollocationCycleT {
    PiecewisePolyT<Dim> poly;
    double period = 0.0;
    double residual_max = 0.0;  // continuous residual certificate

    VectorN<Dim> operator()(double t) const { return poly(t / period); }
};

using CollocationCycle = CollocationCycleT<4>;

/// Collocation discretization: unknowns are the node values y_0..y_{N-1}
/// (y_N identified with y_0); residual rows are the midpoint conditions
/// followed by an integral phase condition against a reference orbit.
template <VectorField F>
class CollocationProblem {
public:
    static constexpr int dim = F::dim;
    using Vec = VectorN<dim>;
    using Mat = MatrixN<dim>;

    CollocationProblem(F field, Mesh mesh, std::vector<Vec> reference)
        : field_(std::move(field)), mesh_(std::move(mesh)), reference_(std::move(reference)) {
        if (!mesh_.valid()) throw Error(ErrorKind::StartInvalid, "invalid collocation mesh");
        if (static_cast<int>(reference_.size()) < mesh_.subintervals())
            throw Error(ErrorKind::StartInvalid, "phase reference does not match the mesh");
        set_reference(reference_);
    }

    const Mesh& mesh() const { return mesh_; }
    const F& field() const { return field_; }
    int subintervals() const { return mesh_.subintervals(); }
    Eigen::Index unknowns() const { return static_cast<Eigen::Index>(dim) * subintervals(); }

    /// Replaces the phase reference (node values on this mesh).
    void set_reference(const std::vector<Vec>& ref) {
        reference_ = ref;
        reference_.resize(static_cast<std::size_t>(subintervals()));
        const F f = field_;
        ref_direction_.resize(reference_.size());
        weights_.resize(reference_.size());
        const int N = subintervals();
        for (int i = 0; i < N; ++i) {
            ref_direction_[static_cast<std::size_t>(i)] = f(reference_[static_cast<std::size_t>(i)]);
            weights_[static_cast<std::size_t>(i)] = 0.5 * (mesh_.width(i) + mesh_.width((i + N - 1) % N));
        }
        const double scale = phase_scale();
        for (auto& d : ref_direction_) d /= scale;
    }

    Vec node(const VectorXd& z, int i) const {
        const int N = subintervals();
        return z.template segment<dim>(static_cast<Eigen::Index>(dim) * (i % N));
    }

    VectorXd pack(const std::vector<Vec>& values) const {
        VectorXd z(unknowns());
        for (int i = 0; i < subintervals(); ++i) z.template segment<dim>(dim * i) = values[static_cast<std::size_t>(i)];
        return z;
    }

    PiecewisePolyT<dim> polynomial(const VectorXd& z, double T, double I) const {
        const F f = at_current(field_, I);
        PiecewisePolyT<dim> p;
        p.mesh = mesh_;
        const int N = subintervals();
        p.values.resize(static_cast<std::size_t>(N) + 1);
        p.slopes.resize(static_cast<std::size_t>(N) + 1);
        for (int i = 0; i <= N; ++i) {
            p.values[static_cast<std::size_t>(i)] = node(z, i);
            p.slopes[static_cast<std::size_t>(i)] = T * f(node(z, i));
        }
        return p;
    }

    VectorXd residual(const VectorXd& z, double T, double I) const {
        const F f = at_current(field_, I);
        const int N = subintervals();
        VectorXd r(unknowns() + 1);
        Vec f_left = f(node(z, 0));
        for (int i = 0; i < N; ++i) {
            const double h = mesh_.width(i);
            const Vec y0 = node(z, i), y1 = node(z, i + 1);
            const Vec f_right = f(y1);
            const Vec y_mid = 0.5 * (y0 + y1) + (h * T / 8.0) * (f_left - f_right);
            r.template segment<dim>(dim * i) =
                (1.5 / (h * T)) * (y1 - y0) - 0.25 * (f_left + f_right) - f(y_mid);
            f_left = f_right;
        }
        r[unknowns()] = phase(z);
        return r;
    }

    SparseMatrix jacobian(const VectorXd& z, double T, double I) const {
        const F f = at_current(field_, I);
        const int N = subintervals();
        const Eigen::Index n = unknowns();
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(static_cast<std::size_t>(N) * (2 * dim * dim + 2 * dim) + static_cast<std::size_t>(n));
        const Mat Id = Mat::Identity();
        Vec f_left = f(node(z, 0));
        Mat J_left = f.jacobian(node(z, 0));
        Vec s_left = field_current_sensitivity(f, node(z, 0));
        for (int i = 0; i < N; ++i) {
            const double h = mesh_.width(i);
            const Vec y0 = node(z, i), y1 = node(z, i + 1);
            const Vec f_right = f(y1);
            const Mat J_right = f.jacobian(y1);
            const Vec s_right = field_current_sensitivity(f, y1);
            const Vec y_mid = 0.5 * (y0 + y1) + (h * T / 8.0) * (f_left - f_right);
            const Mat J_mid = f.jacobian(y_mid);
            const Vec s_mid = field_current_sensitivity(f, y_mid);
            const double a = 1.5 / (h * T);
            const Mat d_left = -a * Id - 0.25 * J_left - J_mid * (0.5 * Id + (h * T / 8.0) * J_left);
            const Mat d_right = a * Id - 0.25 * J_right - J_mid * (0.5 * Id - (h * T / 8.0) * J_right);
            const Vec d_T = -(a / T) * (y1 - y0) - J_mid * ((h / 8.0) * (f_left - f_right));
            const Vec d_I = -0.25 * (s_left + s_right) - s_mid - J_mid * ((h * T / 8.0) * (s_left - s_right));
            const Eigen::Index row = static_cast<Eigen::Index>(dim) * i;
            const Eigen::Index col_left = static_cast<Eigen::Index>(dim) * i;
            const Eigen::Index col_right = static_cast<Eigen::Index>(dim) * ((i + 1) % N);
            for (int r = 0; r < dim; ++r) {
                for (int c = 0; c < dim; ++c) {
                    if (d_left(r, c) != 0.0) trip.emplace_back(row + r, col_left + c, d_left(r, c));
                    if (d_right(r, c) != 0.0) trip.emplace_back(row + r, col_right + c, d_right(r, c));
                }
                trip.emplace_back(row + r, n, d_T[r]);
                if (d_I[r] != 0.0) trip.emplace_back(row + r, n + 1, d_I[r]);
            }
            f_left = f_right;
            J_left = J_right;
            s_left = s_right;
        }
        for (int i = 0; i < N; ++i)
            for (int c = 0; c < dim; ++c) {
                const double w = weights_[static_cast<std::size_t>(i)] * ref_direction_[static_cast<std::size_t>(i)][c];
                if (w != 0.0) trip.emplace_back(n, static_cast<Eigen::Index>(dim) * i + c, w);
            }
        SparseMatrix J(n + 1, n + 2);
        J.setFromTriplets(trip.begin(), trip.end());
        return J;
    }

    double phase(const VectorXd& z) const {
        double acc = 0.0;
        for (int i = 0; i < subintervals(); ++i) {
            const auto k = static_cast<std::size_t>(i);
            acc += weights_[k] * (node(z, i) - reference_[k]).dot(ref_direction_[k]);
        }
        return acc;
    }

private:
    double phase_scale() const {
        double s = 0.0;
        for (const auto& d : ref_direction_) s = std::max(s, d.cwiseAbs().maxCoeff());
        return s > 0.0 ? s : 1.0;
    }

    F field_;
    Mesh mesh_;
    std::vector<Vec> reference_;
    std::vector<Vec> ref_direction_;
    std::vector<double> weights_;
};

/// Midpoint collocation rows (1/T) P'(mid) - f(P(mid)) of a given
/// polynomial, plus the integral phase row against `reference`.
template <VectorField F>
VectorXd collocation_system(const PiecewisePolyT<F::dim>& poly, double T, const F& field,
                            const std::vector<VectorN<F::dim>>& reference) {
    constexpr int dim = F::dim;
    const int N = poly.mesh.subintervals();
    VectorXd r(static_cast<Eigen::Index>(dim) * N + 1);
    for (int i = 0; i < N; ++i) {
        const double tau = poly.mesh.breakpoints[i] + 0.5 * poly.mesh.width(i);
        r.template segment<dim>(dim * i) = poly.derivative(tau) / T - field(poly(tau));
    }
    CollocationProblem<F> problem(field, poly.mesh, reference);
    std::vector<VectorN<dim>> nodes(poly.values.begin(), poly.values.end() - 1);
    r[static_cast<Eigen::Index>(dim) * N] = problem.phase(problem.pack(nodes));
    return r;
}

/// Maximum of |(1/T) P' - f(P)|_inf over `samples` points per subinterval.
template <VectorField F>
std::vector<double> residual_profile(const PiecewisePolyT<F::dim>& poly, double T, const F& field,
                                     int samples = 10) {
    const int N = poly.mesh.subintervals();
    std::vector<double> out(static_cast<std::size_t>(N), 0.0);
    for (int i = 0; i < N; ++i) {
        const double a = poly.mesh.breakpoints[i], h = poly.mesh.width(i);
        double worst = 0.0;
        for (int k = 0; k < samples; ++k) {
            const double tau = a + h * (k + 0.5) / samples;
            worst = std::max(worst, (poly.derivative(tau) / T - field(poly(tau))).cwiseAbs().maxCoeff());
        }
        out[static_cast<std::size_t>(i)] = worst;
    }
    return out;
}

/// Splits every subinterval whose residual exceeds half the maximum.
inline Mesh refine_mesh(const Mesh& mesh, const std::vector<double>& profile, int max_subintervals = 2000) {
    if (static_cast<int>(profile.size()) != mesh.subintervals())
        throw Error(ErrorKind::StartInvalid, "residual profile does not match the mesh");
    const double worst = *std::max_element(profile.begin(), profile.end());
    Mesh out;
    out.rho = mesh.rho;
    out.breakpoints.clear();
    for (int i = 0; i < mesh.subintervals(); ++i) {
        out.breakpoints.push_back(mesh.breakpoints[i]);
        if (profile[static_cast<std::size_t>(i)] > 0.5 * worst)
            out.breakpoints.push_back(mesh.breakpoints[i] + 0.5 * mesh.width(i));
    }
    out.breakpoints.push_back(1.0);
    if (out.subintervals() > max_subintervals)
        throw Error(ErrorKind::MeshTooCoarse, "refinement needs " + std::to_string(out.subintervals()) +
                                                  " subintervals (max " + std::to_string(max_subintervals) + ")");
    return out;
}

/// Mesh of N subintervals equidistributing the local error indicator
/// (r_i / h_i^3)^(1/4) h_i implied by a residual profile on `mesh`.
inline Mesh equidistribute_mesh(const Mesh& mesh, const std::vector<double>& profile, int N) {
    const int M = mesh.subintervals();
    std::vector<double> cumulative(static_cast<std::size_t>(M) + 1, 0.0);
    double floor_density = 0.0;
    std::vector<double> density(static_cast<std::size_t>(M));
    for (int i = 0; i < M; ++i) {
        const double h = mesh.width(i);
        density[static_cast<std::size_t>(i)] = std::pow(profile[static_cast<std::size_t>(i)] / (h * h * h), 0.25);
        floor_density = std::max(floor_density, density[static_cast<std::size_t>(i)]);
    }
    // Keep a uniform share so flat stretches are not starved.
    floor_density *= 0.05;
    for (int i = 0; i < M; ++i)
        cumulative[static_cast<std::size_t>(i) + 1] =
            cumulative[static_cast<std::size_t>(i)] +
            (density[static_cast<std::size_t>(i)] + floor_density) * mesh.width(i);
    Mesh out;
    out.rho = mesh.rho;
    out.breakpoints.resize(static_cast<std::size_t>(N) + 1);
    out.breakpoints.front() = 0.0;
    out.breakpoints.back() = 1.0;
    int seg = 0;
    for (int k = 1; k < N; ++k) {
        const double target = cumulative.back() * k / N;
        while (cumulative[static_cast<std::size_t>(seg) + 1] < target) ++seg;
        const double frac = (target - cumulative[static_cast<std::size_t>(seg)]) /
                            (cumulative[static_cast<std::size_t>(seg) + 1] - cumulative[static_cast<std::size_t>(seg)]);
        out.breakpoints[static_cast<std::size_t>(k)] = mesh.breakpoints[static_cast<std::size_t>(seg)] + frac * mesh.width(seg);
    }
    return out;
}

/// Values of a periodic orbit x(tau), tau in [0,1), at the mesh breakpoints.
template <int Dim, class Orbit>
std::vector<VectorN<Dim>> sample_on_mesh(const Orbit& orbit_tau, const Mesh& mesh) {
    std::vector<VectorN<Dim>> out;
    out.reserve(static_cast<std::size_t>(mesh.subintervals()));
    for (int i = 0; i < mesh.subintervals(); ++i) out.push_back(orbit_tau(mesh.breakpoints[i]));
    return out;
}

struct CollocationOptions {
    NewtonOptions newton{.tol = 1e-10, .max_iterations = 30, .max_halvings = 8};
    int max_subintervals = 2000;
    int residual_samples = 10;
    int max_refinements = 30;
};

/// Solves on a fixed mesh; `guess_tau` maps tau in [0,1) to a state.
template <VectorField F, class Orbit>
CollocationCycleT<F::dim> solve_on_mesh(const F& field, const Orbit& guess_tau, double T_guess, const Mesh& mesh,
                                        const CollocationOptions& opt = {},
                                        const std::vector<VectorN<F::dim>>* phase_reference = nullptr) {
    constexpr int dim = F::dim;
    const auto nodes = sample_on_mesh<dim>(guess_tau, mesh);
    double amplitude = 0.0;
    for (const auto& y : nodes) amplitude = std::max(amplitude, (y - nodes.front()).cwiseAbs().maxCoeff());
    if (amplitude < 1e-8) throw Error(ErrorKind::DegenerateCycle, "initial guess is an equilibrium");
    CollocationProblem<F> problem(field, mesh, phase_reference ? *phase_reference : nodes);
    double I = 0.0;
    if constexpr (requires { field.current; }) I = field.current;
    AugmentedPoint x{problem.pack(nodes), T_guess, I};
    newton_solve(problem, x, Driver::Current, opt.newton);
    CollocationCycleT<dim> out;
    out.poly = problem.polynomial(x.z, x.T, I);
    out.period = x.T;
    double span = 0.0;
    for (const auto& s : out.poly.slopes) span = std::max(span, s.cwiseAbs().maxCoeff());
    if (span < 1e-8) throw Error(ErrorKind::DegenerateCycle, "collocation converged to an equilibrium");
    const auto profile = residual_profile(out.poly, out.period, field, opt.residual_samples);
    out.residual_max = *std::max_element(profile.begin(), profile.end());
    return out;
}

/// Newton on a residual-controlled mesh: solve, measure the continuous
/// residual, split the worst subintervals, repeat until below tol.
template <VectorField F, class Orbit>
CollocationCycleT<F::dim> solve_bvp(const F& field, const Orbit& guess_tau, double T_guess, double tol,
                                    Mesh mesh = Mesh::uniform(50), const CollocationOptions& opt = {}) {
    CollocationCycleT<F::dim> cycle = solve_on_mesh(field, guess_tau, T_guess, mesh, opt);
    for (int round = 0; round < opt.max_refinements; ++round) {
        if (cycle.residual_max <= tol) return cycle;
        const auto profile = residual_profile(cycle.poly, cycle.period, field, opt.residual_samples);
        mesh = refine_mesh(cycle.poly.mesh, profile, opt.max_subintervals);
        const auto previous = cycle.poly;
        const auto ref = sample_on_mesh<F::dim>(previous, mesh);
        cycle = solve_on_mesh(field, previous, cycle.period, mesh, opt, &ref);
    }
    if (cycle.residual_max <= tol) return cycle;
    throw Error(ErrorKind::MeshTooCoarse, "residual " + std::to_string(cycle.residual_max) + " above tol");
}

/// Fixed subinterval count with a mesh adapted by repeated equidistribution.
template <VectorField F, class Orbit>
CollocationCycleT<F::dim> solve_fixed_count(const F& field, const Orbit& guess_tau, double T_guess, int N,
                                            int passes = 4, const CollocationOptions& opt = {}) {
    CollocationCycleT<F::dim> cycle = solve_on_mesh(field, guess_tau, T_guess, Mesh::uniform(N), opt);
    for (int pass = 0; pass < passes; ++pass) {
        const auto profile = residual_profile(cycle.poly, cycle.period, field, opt.residual_samples);
        const Mesh mesh = equidistribute_mesh(cycle.poly.mesh, profile, N);
        const auto previous = cycle.poly;
        const auto ref = sample_on_mesh<F::dim>(previous, mesh);
        cycle = solve_on_mesh(field, previous, cycle.period, mesh, opt, &ref);
    }
    return cycle;
}

}  // namespace hhc
