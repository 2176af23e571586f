#pragma once

// Time-domain comparisons of periodic orbits: extrema, phase alignment,
// pointwise deviation and point-set distance. An orbit is any callable
// t -> state valid on [0, period].

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "hhc/integrate.hpp"

namespace hhc {

struct Extremum {
    double time = 0.0;
    double value = 0.0;
};

struct Extrema {
    Extremum min;
    Extremum max;
    double amplitude() const { return max.value - min.value; }
};

namespace detail {

// Vertex of the parabola through three equally spaced samples.
inline Extremum parabolic_vertex(double t_mid, double dt, double ym, double y0, double yp) {
    const double denom = ym - 2.0 * y0 + yp;
    if (denom == 0.0) return {t_mid, y0};
    const double off = 0.5 * (ym - yp) / denom;
    if (std::abs(off) > 1.0) return {t_mid, y0};
    return {t_mid + off * dt, y0 - 0.25 * (ym - yp) * off};
}

}  // namespace detail

/// Extrema of one component over a period from `samples` uniform points,
/// refined by a parabola through the neighbours of the best sample.
template <class Orbit>
Extrema component_extrema(const Orbit& orbit, double period, int component = 0, int samples = 2000) {
    std::vector<double> y(static_cast<std::size_t>(samples));
    const double dt = period / samples;
    for (int i = 0; i < samples; ++i) y[static_cast<std::size_t>(i)] = orbit(i * dt)[component];
    const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
    const auto refine = [&](std::size_t i) {
        const std::size_t n = y.size();
        return detail::parabolic_vertex(static_cast<double>(i) * dt, dt, y[(i + n - 1) % n], y[i], y[(i + 1) % n]);
    };
    Extrema e;
    e.min = refine(static_cast<std::size_t>(lo - y.begin()));
    e.max = refine(static_cast<std::size_t>(hi - y.begin()));
    return e;
}

/// Maximum over t of |a(t + ta) - b(t + tb)| in one component, where ta,
/// tb are the times of each orbit's maximum in that component. Both orbits
/// are sampled on their own period scaled to a common phase grid.
template <class OrbitA, class OrbitB>
double aligned_deviation(const OrbitA& a, double period_a, const OrbitB& b, double period_b, int component = 0,
                         int samples = 4000) {
    const double ta = component_extrema(a, period_a, component, samples).max.time;
    const double tb = component_extrema(b, period_b, component, samples).max.time;
    double worst = 0.0;
    for (int i = 0; i < samples; ++i) {
        const double phase = static_cast<double>(i) / samples;
        const double xa = a(std::fmod(ta + phase * period_a, period_a))[component];
        const double xb = b(std::fmod(tb + phase * period_b, period_b))[component];
        worst = std::max(worst, std::abs(xa - xb));
    }
    return worst;
}

namespace detail {

// max over sampled points of `from` of the distance to the curve `to`; the
// nearest sample of `to` is polished by golden-section search in time.
template <int Dim, class Orbit>
double directed_distance(const std::vector<VectorN<Dim>>& from, const Orbit& to, double period, int samples) {
    std::vector<VectorN<Dim>> pts(static_cast<std::size_t>(samples));
    const double dt = period / samples;
    for (int i = 0; i < samples; ++i) pts[static_cast<std::size_t>(i)] = to(i * dt);
    const auto at = [&](double t) { return to(std::fmod(t + period, period)); };
    double worst = 0.0;
    for (const auto& p : from) {
        std::size_t j = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < pts.size(); ++k) {
            const double d = (p - pts[k]).squaredNorm();
            if (d < best) best = d, j = k;
        }
        double lo = (static_cast<double>(j) - 1.0) * dt, hi = (static_cast<double>(j) + 1.0) * dt;
        const double g = 0.5 * (std::sqrt(5.0) - 1.0);
        double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
        double f1 = (p - at(x1)).norm(), f2 = (p - at(x2)).norm();
        for (int it = 0; it < 60; ++it) {
            if (f1 < f2) {
                hi = x2, x2 = x1, f2 = f1;
                x1 = hi - g * (hi - lo);
                f1 = (p - at(x1)).norm();
            } else {
                lo = x1, x1 = x2, f1 = f2;
                x2 = lo + g * (hi - lo);
                f2 = (p - at(x2)).norm();
            }
        }
        worst = std::max(worst, std::min({f1, f2, std::sqrt(best)}));
    }
    return worst;
}

}  // namespace detail

/// Symmetric Hausdorff distance between two closed orbits (Euclidean norm
/// on the full state).
template <int Dim, class OrbitA, class OrbitB>
double orbit_distance(const OrbitA& a, double period_a, const OrbitB& b, double period_b, int samples = 500) {
    std::vector<VectorN<Dim>> pa, pb;
    pa.reserve(static_cast<std::size_t>(samples));
    pb.reserve(static_cast<std::size_t>(samples));
    for (int i = 0; i < samples; ++i) {
        pa.push_back(a(period_a * i / samples));
        pb.push_back(b(period_b * i / samples));
    }
    return std::max(detail::directed_distance<Dim>(pa, b, period_b, samples),
                    detail::directed_distance<Dim>(pb, a, period_a, samples));
}

}  // namespace hhc
