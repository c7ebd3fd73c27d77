#pragma once

// Lorentz (hyperboloid) model of hyperbolic space with curvature -1/K.
//
// Two surfaces over the same formulas:
//  * point-level functions on LorentzPoint / TangentVector (plain f64, Eigen),
//  * row-batched functions on tape variables (namespace `rows`), where each
//    matrix row is one ambient vector and K is a differentiable scalar.

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "bhgcn/autodiff.hpp"

namespace bhgcn::lorentz {

using Vec = Eigen::VectorXd;

/// Lower clamp for arcosh arguments; removes the coincident-point singularity.
inline constexpr double kArcoshFloor = 1.0 + 1e-12;
/// Tangent vectors with Lorentz norm below this are treated as zero by exp maps.
inline constexpr double kZeroTangent = 1e-12;
/// Membership / tangency tolerance (scaled by operand magnitude).
inline constexpr double kTolerance = 1e-9;

class GeometryError : public Error {
public:
    using Error::Error;
};

struct LorentzPoint {
    Vec coords;
    double K = 1.0;

    Eigen::Index dim() const { return coords.size() - 1; }
};

struct TangentVector {
    Vec coords;
    LorentzPoint base;
};

/// -x0*y0 + sum_i xi*yi
inline double lorentz_inner(const Vec& x, const Vec& y) {
    if (x.size() != y.size())
        throw ShapeError("lorentz_inner: length mismatch " + std::to_string(x.size()) + " vs " +
                         std::to_string(y.size()));
    if (x.size() < 2) throw ShapeError("lorentz_inner: ambient vectors need length >= 2");
    return -x[0] * y[0] + x.tail(x.size() - 1).dot(y.tail(y.size() - 1));
}

/// sqrt(<v,v>_L) for spacelike v. Timelike input beyond -1e-9 is an internal error.
inline double lorentz_norm(const Vec& v) {
    const double sq = lorentz_inner(v, v);
    if (sq < -kTolerance * std::max(1.0, v.squaredNorm()))
        throw GeometryError("lorentz_norm: vector is timelike (<v,v>_L = " + std::to_string(sq) + ")");
    return std::sqrt(std::max(sq, 0.0));
}

inline LorentzPoint origin(Eigen::Index n, double K) {
    Vec o = Vec::Zero(n + 1);
    o[0] = std::sqrt(K);
    return {std::move(o), K};
}

/// Keep the spatial part and solve the time coordinate: x0 = sqrt(K + |s|^2).
inline LorentzPoint project_to_hyperboloid(const Vec& raw, double K) {
    if (raw.size() < 2) throw ShapeError("project_to_hyperboloid: ambient vectors need length >= 2");
    if (!(K > 0)) throw GeometryError("project_to_hyperboloid: K must be positive");
    Vec x = raw;
    x[0] = std::sqrt(K + raw.tail(raw.size() - 1).squaredNorm());
    return {std::move(x), K};
}

/// Orthogonal projection onto T_x: raw + (<x,raw>_L / K) x.
inline TangentVector project_to_tangent(const LorentzPoint& x, const Vec& raw) {
    Vec v = raw + (lorentz_inner(x.coords, raw) / x.K) * x.coords;
    return {std::move(v), x};
}

inline bool on_hyperboloid(const LorentzPoint& x, double tol = kTolerance) {
    const double scale = std::max(1.0, x.coords.squaredNorm());
    return std::abs(lorentz_inner(x.coords, x.coords) + x.K) <= tol * scale && x.coords[0] > 0;
}

inline bool is_tangent(const LorentzPoint& x, const Vec& v, double tol = kTolerance) {
    const double scale = std::max(1.0, x.coords.norm() * v.norm());
    return std::abs(lorentz_inner(x.coords, v)) <= tol * scale;
}

namespace detail {
inline void same_curvature(const char* op, double a, double b) {
    if (a != b)
        throw GeometryError(std::string(op) + ": curvature mismatch (K=" + std::to_string(a) +
                            " vs K=" + std::to_string(b) + ")");
}
}  // namespace detail

inline double geodesic_distance(const LorentzPoint& x, const LorentzPoint& y) {
    detail::same_curvature("geodesic_distance", x.K, y.K);
    // at the floor the points coincide; report 0 like log_map does
    const double a = -lorentz_inner(x.coords, y.coords) / x.K;
    return a <= kArcoshFloor ? 0.0 : std::acosh(a);
}

/// cosh(|v|/sqrt K) x + sqrt K sinh(|v|/sqrt K) v/|v|, re-projected. Zero v returns x.
inline LorentzPoint exp_map(const TangentVector& v) {
    const LorentzPoint& x = v.base;
    if (!is_tangent(x, v.coords)) throw GeometryError("exp_map: vector is not tangent at the base point");
    const double n = lorentz_norm(v.coords);
    if (n < kZeroTangent) return x;
    const double sk = std::sqrt(x.K);
    const Vec y = std::cosh(n / sk) * x.coords + (sk * std::sinh(n / sk) / n) * v.coords;
    return project_to_hyperboloid(y, x.K);
}

inline LorentzPoint exp_map(const LorentzPoint& x, const Vec& v) { return exp_map(TangentVector{v, x}); }

/// Tangent vector at x pointing to y with Lorentz norm sqrt(K) d_K(x, y).
inline TangentVector log_map(const LorentzPoint& x, const LorentzPoint& y) {
    detail::same_curvature("log_map", x.K, y.K);
    const double ip = lorentz_inner(x.coords, y.coords);
    const double a = -ip / x.K;
    if (a <= kArcoshFloor) return {Vec::Zero(x.coords.size()), x};
    const double coef = ad::detail::arcosh_ratio_value(std::acosh(a));
    Vec v = coef * (y.coords + (ip / x.K) * x.coords);
    return project_to_tangent(x, v);
}

/// Transport along the geodesic x -> y: v + <y,v>_L / (K - <x,y>_L) (x + y).
inline TangentVector parallel_transport(const LorentzPoint& x, const LorentzPoint& y, const TangentVector& v) {
    detail::same_curvature("parallel_transport", x.K, y.K);
    const double c = lorentz_inner(y.coords, v.coords) / (x.K - lorentz_inner(x.coords, y.coords));
    return {v.coords + c * (x.coords + y.coords), y};
}

// ---------------------------------------------------------------------------
// Row-batched, differentiable forms. Every matrix row is one ambient vector.

namespace rows {

using ad::Var;

/// Row-wise Lorentz inner products, (N,1).
inline Var inner(Var x, Var y) { return ad::minkowski_rows(x, y); }

/// All pairwise Lorentz inner products, (N,M).
inline Var gram(Var x, Var y) { return ad::minkowski_gram(x, y); }

inline Var spatial(Var x) { return ad::slice(x, 1, 1, x.cols()); }

/// Prepend the time coordinate sqrt(K + |s|^2) to spatial rows s.
inline Var lift_spatial(Var s, Var K) {
    Var x0 = ad::sqrt(K + ad::sum(ad::square(s), 1));
    return ad::concat({x0, s}, 1);
}

inline Var project(Var x, Var K) { return lift_spatial(spatial(x), K); }

/// arcosh(a) / sqrt(a^2 - 1), continuous through a = 1.
inline Var log_coefficient(Var a) { return ad::arcosh_ratio(a); }

inline Var distance(Var x, Var y, Var K) {
    Var a = ad::clamp(-inner(x, y) / K, kArcoshFloor);
    Tensor coincident = a.value();
    for (std::size_t i = 0; i < coincident.size(); ++i) coincident[i] = coincident[i] <= kArcoshFloor ? 1.0 : 0.0;
    return ad::select(coincident, a.tape->constant(Tensor::zeros_like(coincident)), ad::arcosh(a));
}

/// exp_x(v) row-wise, followed by projection onto the hyperboloid.
inline Var exp(Var x, Var v, Var K) {
    Var sk = ad::sqrt(K);
    Var n = ad::sqrt(ad::clamp(inner(v, v), kZeroTangent * kZeroTangent));
    Var r = n / sk;
    Var y = ad::cosh(r) * x + (sk * ad::sinh(r) / n) * v;
    return project(y, K);
}

/// log_x(y) row-wise.
inline Var log(Var x, Var y, Var K) {
    Var a = -inner(x, y) / K;
    Var c = log_coefficient(a);
    return c * (y - a * x);
}

/// Spatial part of log_o(x); the time coordinate of log_o is identically zero.
inline Var log_origin(Var x, Var K) {
    Var a = ad::slice(x, 1, 0, 1) / ad::sqrt(K);
    return log_coefficient(a) * spatial(x);
}

/// exp_o((0, u)) for spatial rows u.
inline Var exp_origin(Var u, Var K) {
    Var sk = ad::sqrt(K);
    Var n = ad::sqrt(ad::clamp(ad::sum(ad::square(u), 1), kZeroTangent * kZeroTangent));
    Var s = (sk * ad::sinh(n / sk) / n) * u;
    return lift_spatial(s, K);
}

/// Parallel transport of rows of v from x to y.
inline Var transport(Var x, Var y, Var v, Var K) {
    Var c = inner(y, v) / (K - inner(x, y));
    return v + c * (x + y);
}

/// Transport of spatial origin-tangent rows (0, b) from o to x.
inline Var transport_from_origin(Var x, Var b, Var K) {
    Var s = spatial(x);
    Var x0 = ad::slice(x, 1, 0, 1);
    Var sk = ad::sqrt(K);
    Var c = ad::sum(s * b, 1) / (K + sk * x0);
    Var head = c * (x0 + sk);
    return ad::concat({head, b + c * s}, 1);
}

}  // namespace rows

}  // namespace bhgcn::lorentz
