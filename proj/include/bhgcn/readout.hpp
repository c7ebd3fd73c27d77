#pragma once

// Graph readout: Frechet mean by Karcher flow, pooling of log maps in the tangent
// space at the mean, affine two-class head and cross-entropy.

#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "bhgcn/autodiff.hpp"
#include "bhgcn/lorentz.hpp"

namespace bhgcn::readout {

enum class KarcherInit { mean_projection, first_node };

struct ReadoutConfig {
    std::size_t karcher_iters = 5;
    double eta = 0.1;
    KarcherInit init = KarcherInit::mean_projection;

    void validate() const {
        if (karcher_iters < 1) throw Error("readout: karcher_iters must be >= 1");
        if (!(eta > 0 && eta <= 1)) throw Error("readout: eta must lie in (0, 1]");
    }
};

using lorentz::LorentzPoint;
using lorentz::Vec;

/// (1/N) sum_i d(mu, x_i)^2
inline double frechet_objective(const std::vector<LorentzPoint>& pts, const LorentzPoint& mu) {
    double s = 0.0;
    for (const auto& p : pts) {
        const double d = lorentz::geodesic_distance(mu, p);
        s += d * d;
    }
    return s / static_cast<double>(pts.size());
}

inline LorentzPoint karcher_init(const std::vector<LorentzPoint>& pts, KarcherInit init) {
    if (init == KarcherInit::first_node) return pts.front();
    Vec m = Vec::Zero(pts.front().coords.size());
    for (const auto& p : pts) m += p.coords;
    m /= static_cast<double>(pts.size());
    return lorentz::project_to_hyperboloid(m, pts.front().K);
}

/// Mean of log_mu(x_i); tangent at mu.
inline Vec tangent_pool(const std::vector<LorentzPoint>& pts, const LorentzPoint& mu) {
    if (pts.empty()) throw Error("tangent_pool: empty input");
    Vec z = Vec::Zero(mu.coords.size());
    for (const auto& p : pts) z += lorentz::log_map(mu, p).coords;
    return z / static_cast<double>(pts.size());
}

/// mu <- exp_mu(eta * mean_i log_mu(x_i)), `iters` times. When `trace` is given it
/// receives the objective before the first and after every step.
inline LorentzPoint karcher_flow(const std::vector<LorentzPoint>& pts, std::size_t iters, double eta,
                                 KarcherInit init = KarcherInit::mean_projection,
                                 std::vector<double>* trace = nullptr) {
    if (pts.empty()) throw Error("karcher_flow: empty input");
    for (const auto& p : pts) lorentz::detail::same_curvature("karcher_flow", p.K, pts.front().K);
    LorentzPoint mu = karcher_init(pts, init);
    if (trace) trace->push_back(frechet_objective(pts, mu));
    for (std::size_t t = 0; t < iters; ++t) {
        const Vec v = tangent_pool(pts, mu);
        mu = lorentz::exp_map(lorentz::project_to_tangent(mu, eta * v));
        if (trace) trace->push_back(frechet_objective(pts, mu));
    }
    return mu;
}

struct ClassifierParams {
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(2, 1);
    Eigen::Vector2d b = Eigen::Vector2d::Zero();
};

inline Eigen::Vector2d classify(const Vec& z, const ClassifierParams& p) {
    if (p.W.cols() != z.size()) throw ShapeError("classify: classifier expects " + std::to_string(p.W.cols()) +
                                                 " inputs, got " + std::to_string(z.size()));
    return p.W * z + p.b;
}

inline Eigen::Vector2d softmax(const Eigen::Vector2d& logits) {
    const double m = logits.maxCoeff();
    Eigen::Vector2d e = (logits.array() - m).exp();
    return e / e.sum();
}

/// -log softmax(logits)[label], log-sum-exp stabilised.
inline double cross_entropy(const Eigen::Vector2d& logits, int label) {
    if (label != 0 && label != 1) throw Error("cross_entropy: label must be 0 or 1");
    const double m = logits.maxCoeff();
    const double lse = m + std::log(std::exp(logits[0] - m) + std::exp(logits[1] - m));
    return lse - logits[label];
}

// ---------------------------------------------------------------------------
// Tape forms. Points are rows of an (N, d+1) matrix; results are (1, d+1) rows.

namespace batched {

using ad::Var;
namespace lr = lorentz::rows;

inline Var karcher_flow(Var x, Var K, const ReadoutConfig& cfg) {
    Var mu = cfg.init == KarcherInit::first_node ? ad::slice(x, 0, 0, 1) : lr::project(ad::mean(x, 0), K);
    for (std::size_t t = 0; t < cfg.karcher_iters; ++t) {
        Var v = ad::mean(lr::log(mu, x, K), 0);
        mu = lr::exp(mu, v * cfg.eta, K);
    }
    return mu;
}

inline Var tangent_pool(Var x, Var mu, Var K) { return ad::mean(lr::log(mu, x, K), 0); }

/// Pool at the origin instead of the Frechet mean: (0, mean_i log_o(x_i)).
inline Var origin_pool(Var x, Var K) {
    Var s = ad::mean(lr::log_origin(x, K), 0);
    return ad::concat({x.tape->constant(Tensor(Shape{1, 1}, 0.0)), s}, 1);
}

/// z W^T + b -> (1, 2) logits. W is (2, C), b is (1, 2).
inline Var classify(Var z, Var W, Var b) { return ad::matmul_nt(z, W) + b; }

inline Var cross_entropy(Var logits, int label) {
    if (label != 0 && label != 1) throw Error("cross_entropy: label must be 0 or 1");
    return ad::sum(ad::logsumexp_rows(logits) - ad::gather(logits, {static_cast<std::size_t>(label)}));
}

}  // namespace batched

}  // namespace bhgcn::readout
