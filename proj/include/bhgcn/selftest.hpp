#pragma once

// Property suites over the manifold primitives, the batched tape forms and the
// full model gradient. Shared by `brainhgcn geom-selftest` and the acceptance run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bhgcn/autodiff.hpp"
#include "bhgcn/graph.hpp"
#include "bhgcn/lorentz.hpp"
#include "bhgcn/model.hpp"
#include "bhgcn/readout.hpp"

namespace bhgcn::selftest {

using lorentz::LorentzPoint;
using lorentz::Vec;

struct SuiteResult {
    std::string name;
    bool passed = true;
    std::size_t cases = 0;
    double max_error = 0.0;
    double tolerance = 0.0;
    double seconds = 0.0;
    std::string detail;
};

inline nlohmann::json to_json(const SuiteResult& r) {
    return {{"name", r.name},           {"passed", r.passed},       {"cases", r.cases},
            {"max_error", r.max_error}, {"tolerance", r.tolerance}, {"seconds", r.seconds},
            {"detail", r.detail}};
}

// ---------------------------------------------------------------------------
// Sampling

/// Spatial coordinates ~ N(0, spread^2), lifted onto the hyperboloid.
inline LorentzPoint random_point(std::mt19937_64& rng, Eigen::Index n, double K, double spread = 1.0) {
    std::normal_distribution<double> normal(0.0, spread);
    Vec raw(n + 1);
    for (Eigen::Index i = 0; i <= n; ++i) raw[i] = normal(rng);
    return lorentz::project_to_hyperboloid(raw, K);
}

/// Random direction in T_x with Lorentz norm exactly `norm`.
inline Vec random_tangent(std::mt19937_64& rng, const LorentzPoint& x, double norm) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vec raw(x.coords.size());
    for (Eigen::Index i = 0; i < raw.size(); ++i) raw[i] = normal(rng);
    Vec v = lorentz::project_to_tangent(x, raw).coords;
    return v * (norm / lorentz::lorentz_norm(v));
}

namespace detail {

template <class F>
SuiteResult timed(const std::string& name, double tol, F body) {
    SuiteResult r;
    r.name = name;
    r.tolerance = tol;
    const auto t0 = std::chrono::steady_clock::now();
    body(r);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

inline Eigen::Index dim_for(std::size_t i) { return 2 + static_cast<Eigen::Index>(i % 5); }

inline std::string sci(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", x);
    return buf;
}

}  // namespace detail

inline constexpr double kCurvatures[] = {0.5, 1.0, 2.0};

// ---------------------------------------------------------------------------
// Manifold suites

/// |log_x(exp_x(v)) - v|_inf over random x and |v|_L <= 3.
inline SuiteResult round_trip_suite(std::uint64_t seed, std::size_t samples = 1000, double tol = 1e-6) {
    return detail::timed("exp_log_round_trip", tol, [&](SuiteResult& r) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (double K : kCurvatures)
            for (std::size_t i = 0; i < samples; ++i) {
                const LorentzPoint x = random_point(rng, detail::dim_for(i), K);
                const Vec v = random_tangent(rng, x, 3.0 * (1.0 - unit(rng)));
                const Vec back = lorentz::log_map(x, lorentz::exp_map(x, v)).coords;
                r.max_error = std::max(r.max_error, (back - v).cwiseAbs().maxCoeff());
                ++r.cases;
            }
        r.passed = r.max_error < tol;
    });
}

/// |log_x(y)|_L against sqrt(K) d_K(x, y).
inline SuiteResult norm_identity_suite(std::uint64_t seed, std::size_t samples = 1000, double tol = 1e-8) {
    return detail::timed("log_norm_identity", tol, [&](SuiteResult& r) {
        std::mt19937_64 rng(seed);
        for (double K : kCurvatures)
            for (std::size_t i = 0; i < samples; ++i) {
                const Eigen::Index n = detail::dim_for(i);
                const LorentzPoint x = random_point(rng, n, K), y = random_point(rng, n, K);
                const double lhs = lorentz::lorentz_norm(lorentz::log_map(x, y).coords);
                const double rhs = std::sqrt(K) * lorentz::geodesic_distance(x, y);
                r.max_error = std::max(r.max_error, std::abs(lhs - rhs));
                ++r.cases;
            }
        r.passed = r.max_error < tol;
    });
}

/// Inner products preserved, result tangent at the target, and transport back recovers the input.
inline SuiteResult transport_suite(std::uint64_t seed, std::size_t samples = 1000, double tol_inner = 1e-8,
                                   double tol_tangent = 1e-9, double tol_round_trip = 1e-7) {
    return detail::timed("parallel_transport", tol_inner, [&](SuiteResult& r) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        double e_inner = 0, e_tangent = 0, e_back = 0;
        for (double K : kCurvatures)
            for (std::size_t i = 0; i < samples; ++i) {
                const Eigen::Index n = detail::dim_for(i);
                const LorentzPoint x = random_point(rng, n, K), y = random_point(rng, n, K);
                const Vec u = random_tangent(rng, x, 3.0 * unit(rng));
                const Vec v = random_tangent(rng, x, 3.0 * unit(rng));
                const Vec pu = lorentz::parallel_transport(x, y, {u, x}).coords;
                const Vec pv = lorentz::parallel_transport(x, y, {v, x}).coords;
                e_inner = std::max(e_inner, std::abs(lorentz::lorentz_inner(pu, pv) - lorentz::lorentz_inner(u, v)));
                e_tangent = std::max({e_tangent, std::abs(lorentz::lorentz_inner(y.coords, pu)),
                                      std::abs(lorentz::lorentz_inner(y.coords, pv))});
                const Vec back = lorentz::parallel_transport(y, x, {pu, y}).coords;
                e_back = std::max(e_back, (back - u).cwiseAbs().maxCoeff());
                ++r.cases;
            }
        r.max_error = e_inner;
        r.passed = e_inner < tol_inner && e_tangent < tol_tangent && e_back < tol_round_trip;
        r.detail = "inner " + detail::sci(e_inner) + ", tangency " + detail::sci(e_tangent) + ", round trip " +
                   detail::sci(e_back);
    });
}

/// Brute-force minimiser of d(m,x)^2 + d(m,y)^2 along the geodesic x -> y: grid scan, then golden section.
inline LorentzPoint geodesic_midpoint_oracle(const LorentzPoint& x, const LorentzPoint& y) {
    const Vec dir = lorentz::log_map(x, y).coords;
    auto at = [&](double t) { return lorentz::exp_map(x, lorentz::project_to_tangent(x, t * dir).coords); };
    auto f = [&](double t) {
        const LorentzPoint m = at(t);
        const double a = lorentz::geodesic_distance(m, x), b = lorentz::geodesic_distance(m, y);
        return a * a + b * b;
    };
    constexpr int kGrid = 1000;
    int best = 0;
    double fbest = f(0.0);
    for (int k = 1; k <= kGrid; ++k) {
        const double fk = f(static_cast<double>(k) / kGrid);
        if (fk < fbest) {
            fbest = fk;
            best = k;
        }
    }
    double lo = std::max(0, best - 1) / static_cast<double>(kGrid);
    double hi = std::min(kGrid, best + 1) / static_cast<double>(kGrid);
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
        const double a = hi - phi * (hi - lo), b = lo + phi * (hi - lo);
        if (f(a) < f(b)) hi = b;
        else lo = a;
    }
    return at(0.5 * (lo + hi));
}

/// Frechet objective never increases along the flow; two-point long-run mean equals the geodesic midpoint.
inline SuiteResult karcher_suite(std::uint64_t seed, std::size_t clouds = 100, double tol = 1e-6) {
    return detail::timed("karcher_flow", tol, [&](SuiteResult& r) {
        std::mt19937_64 rng(seed);
        std::size_t increases = 0;
        double worst_rise = 0.0;
        for (std::size_t c = 0; c < clouds; ++c) {
            const double K = kCurvatures[c % 3];
            const Eigen::Index n = detail::dim_for(c);
            std::vector<LorentzPoint> pts;
            for (int i = 0; i < 10; ++i) pts.push_back(random_point(rng, n, K));
            std::vector<double> trace;
            readout::karcher_flow(pts, 5, 0.1, readout::KarcherInit::mean_projection, &trace);
            for (std::size_t t = 1; t < trace.size(); ++t) {
                const double rise = trace[t] - trace[t - 1];
                if (rise > 1e-12 * std::max(1.0, trace[t - 1])) ++increases;
                worst_rise = std::max(worst_rise, rise);
            }
            ++r.cases;
        }
        double midpoint_err = 0.0;
        for (std::size_t c = 0; c < 20; ++c) {
            const double K = kCurvatures[c % 3];
            const Eigen::Index n = detail::dim_for(c);
            const LorentzPoint x = random_point(rng, n, K), y = random_point(rng, n, K);
            const LorentzPoint mu = readout::karcher_flow({x, y}, 1000, 0.1);
            const LorentzPoint oracle = geodesic_midpoint_oracle(x, y);
            midpoint_err = std::max(midpoint_err, (mu.coords - oracle.coords).cwiseAbs().maxCoeff());
            ++r.cases;
        }
        r.max_error = midpoint_err;
        r.passed = increases == 0 && midpoint_err < tol;
        r.detail = "objective increases " + std::to_string(increases) + " (largest rise " + detail::sci(worst_rise) +
                   "), midpoint error " + detail::sci(midpoint_err);
    });
}

/// Batched tape forms agree with the point-level reference.
inline SuiteResult batched_agreement_suite(std::uint64_t seed, std::size_t samples = 200, double tol = 1e-9) {
    return detail::timed("batched_matches_pointwise", tol, [&](SuiteResult& r) {
        std::mt19937_64 rng(seed);
        namespace lr = lorentz::rows;
        for (double K : kCurvatures) {
            const Eigen::Index n = 4;
            std::vector<double> xs, ys, vs;
            std::vector<LorentzPoint> px, py;
            std::vector<Vec> pv;
            for (std::size_t i = 0; i < samples; ++i) {
                px.push_back(random_point(rng, n, K));
                py.push_back(random_point(rng, n, K));
                pv.push_back(random_tangent(rng, px.back(), 2.0));
                for (Eigen::Index j = 0; j <= n; ++j) {
                    xs.push_back(px.back().coords[j]);
                    ys.push_back(py.back().coords[j]);
                    vs.push_back(pv.back()[j]);
                }
            }
            ad::Tape tape;
            const Shape s{samples, static_cast<std::size_t>(n + 1)};
            ad::Var X = tape.constant(Tensor(s, xs)), Y = tape.constant(Tensor(s, ys)), V = tape.constant(Tensor(s, vs));
            ad::Var Kv = tape.constant(K);
            const Tensor E = lr::exp(X, V, Kv).value(), L = lr::log(X, Y, Kv).value();
            const Tensor P = lr::transport(X, Y, V, Kv).value(), D = lr::distance(X, Y, Kv).value();
            for (std::size_t i = 0; i < samples; ++i) {
                const Vec e = lorentz::exp_map(px[i], pv[i]).coords;
                const Vec l = lorentz::log_map(px[i], py[i]).coords;
                const Vec p = lorentz::parallel_transport(px[i], py[i], {pv[i], px[i]}).coords;
                const double d = lorentz::geodesic_distance(px[i], py[i]);
                double err = std::abs(D(i, 0) - d) / std::max(1.0, d);
                for (Eigen::Index j = 0; j <= n; ++j) {
                    const auto c = static_cast<std::size_t>(j);
                    err = std::max(err, std::abs(E(i, c) - e[j]) / std::max(1.0, std::abs(e[j])));
                    err = std::max(err, std::abs(L(i, c) - l[j]) / std::max(1.0, std::abs(l[j])));
                    err = std::max(err, std::abs(P(i, c) - p[j]) / std::max(1.0, std::abs(p[j])));
                }
                r.max_error = std::max(r.max_error, err);
                ++r.cases;
            }
        }
        r.passed = r.max_error < tol;
    });
}

// ---------------------------------------------------------------------------
// Gradient suites

/// Central-difference check of the tape primitives used by the model.
inline SuiteResult primitive_gradient_suite(std::uint64_t seed, double tol = 1e-6) {
    return detail::timed("primitive_gradients", tol, [&](SuiteResult& r) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        auto rand = [&](std::size_t rows, std::size_t cols, double shift = 0.0) {
            Tensor t(Shape{rows, cols});
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal(rng) + shift;
            return t;
        };
        using ad::Var;
        using Fn = std::function<Var(ad::Tape&, const std::vector<Var>&)>;
        struct Case {
            const char* name;
            Fn f;
            std::vector<Tensor> params;
        };
        const std::vector<std::size_t> dst{0, 0, 1, 2, 2, 2}, src{1, 2, 0, 0, 1, 2};
        const std::vector<std::size_t> seg{0, 0, 1, 2, 2, 3};
        const std::vector<std::size_t> flat{1, 2, 3, 6, 7, 8};
        auto weights = [](ad::Tape& t) {
            Tensor w(Shape{3, 4});
            for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.1 * static_cast<double>(i);
            return t.constant(w);
        };
        auto wsum = [&](Var v) {
            Tensor w(v.shape());
            for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + static_cast<double>(i));
            return ad::sum(v * v.tape->constant(w));
        };
        const std::vector<Case> cases = {
            {"add_broadcast", [&](ad::Tape&, auto& p) { return wsum(p[0] + p[1]); }, {rand(3, 4), rand(1, 4)}},
            {"mul_column", [&](ad::Tape&, auto& p) { return wsum(p[0] * p[1]); }, {rand(3, 4), rand(3, 1)}},
            {"div", [&](ad::Tape&, auto& p) { return wsum(p[0] / ad::exp(p[1])); }, {rand(3, 4), rand(3, 4)}},
            {"matmul", [&](ad::Tape&, auto& p) { return wsum(ad::matmul(p[0], p[1])); }, {rand(3, 4), rand(4, 2)}},
            {"matmul_nt", [&](ad::Tape&, auto& p) { return wsum(ad::matmul_nt(p[0], p[1])); }, {rand(3, 4), rand(5, 4)}},
            {"minkowski_gram", [&](ad::Tape&, auto& p) { return wsum(ad::minkowski_gram(p[0], p[1])); },
             {rand(3, 4), rand(2, 4)}},
            {"minkowski_rows", [&](ad::Tape&, auto& p) { return wsum(ad::minkowski_rows(p[0], p[1])); },
             {rand(3, 4), rand(1, 4)}},
            {"transcendental",
             [&](ad::Tape&, auto& p) {
                 Var a = ad::arcosh(ad::square(p[0]) + 1.5);
                 return wsum(ad::cosh(p[0]) + ad::sinh(p[0]) + a + ad::log(ad::softplus(p[0])) + ad::sqrt(ad::exp(p[0])));
             },
             {rand(3, 4)}},
            {"reductions", [&](ad::Tape& t, auto& p) { return wsum(ad::sum(p[0], 1) * ad::mean(p[0], 0) + ad::sum(p[0] * weights(t))); },
             {rand(3, 4)}},
            {"slice_concat",
             [&](ad::Tape&, auto& p) { return wsum(ad::concat({ad::slice(p[0], 1, 1, 3), ad::slice(p[0], 1, 0, 1)}, 1)); },
             {rand(3, 4)}},
            {"segment_softmax", [&](ad::Tape&, auto& p) { return wsum(ad::segment_softmax(p[0], seg, 4)); }, {rand(6, 1)}},
            {"gather_segment_sum",
             [&](ad::Tape&, auto& p) { return wsum(ad::segment_sum(ad::gather(p[0], flat) * 2.0, dst, 3)); },
             {rand(3, 3)}},
            {"scatter_rows", [&](ad::Tape&, auto& p) { return wsum(ad::scatter_rows(p[0], p[1], dst, src, 3)); },
             {rand(6, 1), rand(3, 4)}},
            {"logsumexp_rows", [&](ad::Tape&, auto& p) { return wsum(ad::logsumexp_rows(p[0])); }, {rand(3, 4)}},
        };
        std::string failed;
        for (const auto& c : cases) {
            const auto rep = ad::check_gradients(c.f, c.params, 1e-6, tol);
            r.max_error = std::max(r.max_error, rep.max_rel_error);
            ++r.cases;
            if (!rep.passed) failed += std::string(failed.empty() ? "" : ", ") + c.name;
        }
        r.passed = failed.empty();
        r.detail = failed.empty() ? "all primitives agree" : "failed: " + failed;
    });
}

/// Small graph used by the end-to-end gradient check: 6 ROIs, 8 time points.
/// Features are left unnormalised at amplitude ~0.25 so embeddings stay within a few
/// units of the origin, where hyperboloid coordinates are well conditioned.
inline graph::SignedGraph gradient_check_graph(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    graph::SubjectTimeSeries ts;
    ts.subject_id = "gradcheck";
    ts.label = 1;
    ts.series.resize(6, 8);
    for (Eigen::Index i = 0; i < 6; ++i)
        for (Eigen::Index t = 0; t < 8; ++t)
            ts.series(i, t) = 0.25 * normal(rng) + (i > 0 ? 0.5 * ts.series(i - 1, t) : 0.0);
    return graph::subject_graph(ts, 2, false);
}

/// Finite-difference step for the model check. Smaller steps drown in roundoff:
/// the loss carries ~1e-15 absolute noise, which h=1e-6 turns into ~1e-9 gradient error.
inline constexpr double kModelCheckStep = 1e-5;

/// Every parameter block of the full model (2 layers, d=4, H=2, 5-step Karcher readout)
/// against central differences.
inline SuiteResult model_gradient_suite(std::uint64_t seed, double tol = 1e-4,
                                        const model::Ablation& ablation = {}) {
    return detail::timed("model_gradient", tol, [&](SuiteResult& r) {
        model::ModelConfig mc;
        mc.input_dim = 8;
        mc.layers = 2;
        mc.layer.d = 4;
        mc.layer.heads = 2;
        mc.ablation = ablation;
        const model::GraphInput in = model::prepare(gradient_check_graph(seed), mc);
        const model::ParameterSet ps = model::init_parameters(mc, seed);
        const auto rep = ad::check_gradients(
            [&](ad::Tape&, const std::vector<ad::Var>& p) { return model::loss(mc, p, in); }, ps.values, kModelCheckStep, tol,
            ps.names);
        r.cases = rep.blocks.size();
        r.max_error = rep.max_rel_error;
        r.passed = rep.passed;
        std::string worst;
        double w = -1;
        for (const auto& b : rep.blocks)
            if (b.rel_error > w) {
                w = b.rel_error;
                worst = b.name;
            }
        r.detail = std::to_string(rep.blocks.size()) + " blocks, worst " + worst + " at " + detail::sci(w);
    });
}

inline std::vector<SuiteResult> run_all(std::uint64_t seed) {
    return {round_trip_suite(seed),        norm_identity_suite(seed + 1),     transport_suite(seed + 2),
            karcher_suite(seed + 3),       batched_agreement_suite(seed + 4), primitive_gradient_suite(seed + 5),
            model_gradient_suite(seed + 6)};
}

}  // namespace bhgcn::selftest
