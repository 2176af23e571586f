#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hhc/errors.hpp"
#include "hhc/model.hpp"

namespace hhc {

template <int Dim>
using VectorN = Eigen::Matrix<double, Dim, 1>;
template <int Dim>
using MatrixN = Eigen::Matrix<double, Dim, Dim>;

/// Time samples of a solution. `times` is strictly increasing.
template <int Dim>
struct TrajectoryT {
    std::vector<double> times;
    std::vector<VectorN<Dim>> states;

    std::size_t size() const { return times.size(); }
    bool empty() const { return times.empty(); }
    const VectorN<Dim>& front() const { return states.front(); }
    const VectorN<Dim>& back() const { return states.back(); }
    double duration() const { return times.back() - times.front(); }
};

using Trajectory = TrajectoryT<4>;

template <int Dim>
struct MonodromyResultT {
    MatrixN<Dim> matrix;
    double cycle_period = 0.0;
    /// Integral of trace J along the orbit; det(matrix) should equal its exponential.
    double trace_integral = 0.0;
    /// State reached after one period (equals the start for an exact cycle).
    VectorN<Dim> end_state;
};

using MonodromyResult = MonodromyResultT<4>;

namespace detail {

template <class Vec>
void check_finite(const Vec& x, double t) {
    if (!x.allFinite()) throw Error(ErrorKind::NonFinite, "integration blew up at t=" + std::to_string(t));
}

template <VectorField F>
typename F::Vector rk4_step(const F& field, const typename F::Vector& x, double h) {
    const auto k1 = field(x);
    const auto k2 = field(x + 0.5 * h * k1);
    const auto k3 = field(x + 0.5 * h * k2);
    const auto k4 = field(x + h * k3);
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

/// Classical fixed-step RK4 from t0 to t1. The last step is shortened so the
/// trajectory ends exactly at t1.
template <VectorField F>
TrajectoryT<F::dim> integrate_rk4(const F& field, const typename F::Vector& x0, double t0, double t1, double h) {
    if (!(h > 0.0) || !(t1 > t0)) throw Error(ErrorKind::NonFinite, "integrate_rk4 needs h > 0 and t1 > t0");
    TrajectoryT<F::dim> traj;
    const auto full_steps = static_cast<std::size_t>(std::floor((t1 - t0) / h * (1.0 + 1e-12)));
    traj.times.reserve(full_steps + 2);
    traj.states.reserve(full_steps + 2);
    traj.times.push_back(t0);
    traj.states.push_back(x0);
    typename F::Vector x = x0;
    for (std::size_t i = 1; i <= full_steps; ++i) {
        const double t = t0 + static_cast<double>(i) * h;
        if (t > t1) break;
        x = detail::rk4_step(field, x, h);
        detail::check_finite(x, t);
        traj.times.push_back(t);
        traj.states.push_back(x);
    }
    const double remaining = t1 - traj.times.back();
    if (remaining > 1e-12 * std::max(1.0, std::abs(t1))) {
        x = detail::rk4_step(field, x, remaining);
        detail::check_finite(x, t1);
        traj.times.push_back(t1);
        traj.states.push_back(x);
    } else {
        traj.times.back() = t1;
    }
    return traj;
}

/// Endpoint of `steps` equal RK4 steps over [0, duration]; no samples kept.
template <VectorField F>
typename F::Vector flow(const F& field, typename F::Vector x, double duration, int steps) {
    const double h = duration / steps;
    for (int i = 0; i < steps; ++i) x = detail::rk4_step(field, x, h);
    detail::check_finite(x, duration);
    return x;
}

/// Integrates the state together with the variational equation Y' = J(x) Y,
/// Y(0) = I, as one coupled RK4 system.
template <VectorField F>
MonodromyResultT<F::dim> monodromy_coupled(const F& field, const typename F::Vector& x0, double period, int steps) {
    using Vec = typename F::Vector;
    using Mat = typename F::Matrix;
    const double h = period / steps;
    Vec x = x0;
    Mat Y = Mat::Identity();
    double trace_integral = 0.0;
    for (int i = 0; i < steps; ++i) {
        const Vec k1 = field(x);
        const Mat J1 = field.jacobian(x);
        const Vec x2 = x + 0.5 * h * k1;
        const Vec k2 = field(x2);
        const Mat J2 = field.jacobian(x2);
        const Vec x3 = x + 0.5 * h * k2;
        const Vec k3 = field(x3);
        const Mat J3 = field.jacobian(x3);
        const Vec x4 = x + h * k3;
        const Vec k4 = field(x4);
        const Mat J4 = field.jacobian(x4);
        const Mat L1 = J1 * Y;
        const Mat L2 = J2 * (Y + 0.5 * h * L1);
        const Mat L3 = J3 * (Y + 0.5 * h * L2);
        const Mat L4 = J4 * (Y + h * L3);
        x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        Y += (h / 6.0) * (L1 + 2.0 * L2 + 2.0 * L3 + L4);
        trace_integral += (h / 6.0) * (J1.trace() + 2.0 * J2.trace() + 2.0 * J3.trace() + J4.trace());
    }
    detail::check_finite(x, period);
    if (!Y.allFinite()) throw Error(ErrorKind::NonFinite, "variational integration blew up");
    return {Y, period, trace_integral, x};
}

/// Variational equation along a prescribed orbit x(t), t in [0, period].
template <VectorField F, class Orbit>
MonodromyResultT<F::dim> monodromy_along(const F& field, const Orbit& orbit, double period, int steps) {
    using Mat = typename F::Matrix;
    const double h = period / steps;
    Mat Y = Mat::Identity();
    double trace_integral = 0.0;
    Mat J_left = field.jacobian(orbit(0.0));
    for (int i = 0; i < steps; ++i) {
        const double t = i * h;
        const Mat J_mid = field.jacobian(orbit(t + 0.5 * h));
        const Mat J_right = field.jacobian(orbit(t + h));
        const Mat L1 = J_left * Y;
        const Mat L2 = J_mid * (Y + 0.5 * h * L1);
        const Mat L3 = J_mid * (Y + 0.5 * h * L2);
        const Mat L4 = J_right * (Y + h * L3);
        Y += (h / 6.0) * (L1 + 2.0 * L2 + 2.0 * L3 + L4);
        trace_integral += (h / 6.0) * (J_left.trace() + 4.0 * J_mid.trace() + J_right.trace());
        J_left = J_right;
    }
    if (!Y.allFinite()) throw Error(ErrorKind::NonFinite, "variational integration blew up");
    return {Y, period, trace_integral, orbit(period)};
}

/// Cubic Hermite interpolant through trajectory samples, slopes from the field.
template <VectorField F>
class HermiteOrbit {
public:
    HermiteOrbit(const F& field, const TrajectoryT<F::dim>& samples) : samples_(samples) {
        slopes_.reserve(samples.size());
        for (const auto& x : samples.states) slopes_.push_back(field(x));
    }

    typename F::Vector operator()(double t) const {
        const auto& ts = samples_.times;
        t += ts.front();
        auto it = std::upper_bound(ts.begin(), ts.end(), t);
        std::size_t i = it == ts.begin() ? 0 : static_cast<std::size_t>(it - ts.begin()) - 1;
        i = std::min(i, ts.size() - 2);
        const double h = ts[i + 1] - ts[i];
        const double s = (t - ts[i]) / h;
        const double s2 = s * s, s3 = s2 * s;
        const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s;
        const double h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
        return h00 * samples_.states[i] + h10 * h * slopes_[i] + h01 * samples_.states[i + 1] +
               h11 * h * slopes_[i + 1];
    }

private:
    const TrajectoryT<F::dim>& samples_;
    std::vector<typename F::Vector> slopes_;
};

/// Monodromy of a sampled one-period orbit. The orbit is interpolated by
/// cubic Hermite segments and the variational equation is integrated with
/// at least `min_steps` RK4 steps.
template <VectorField F>
MonodromyResultT<F::dim> monodromy(const F& field, const TrajectoryT<F::dim>& cycle_samples, int min_steps = 4000,
                                   double periodicity_tol = 1e-6) {
    if (cycle_samples.size() < 2) throw Error(ErrorKind::NotPeriodic, "need at least two samples");
    const double mismatch = (cycle_samples.back() - cycle_samples.front()).cwiseAbs().maxCoeff();
    if (mismatch > periodicity_tol)
        throw Error(ErrorKind::NotPeriodic, "endpoint mismatch " + std::to_string(mismatch));
    const int steps = std::max<int>(min_steps, static_cast<int>(cycle_samples.size()) - 1);
    HermiteOrbit<F> orbit(field, cycle_samples);
    return monodromy_along(field, orbit, cycle_samples.duration(), steps);
}

}  // namespace hhc
