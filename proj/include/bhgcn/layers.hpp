#pragma once

// Hyperbolic graph attention with signed aggregation.
//
// Each layer maps node points on the hyperboloid of curvature K_prev to points on
// the hyperboloid of curvature K_next:
//   h_i   = (W (x) x_i) (+) b                        hyperbolic linear map + bias
//   q,k,v = head maps applied to h                    one triple per head
//   s_ij  = <q_i, k_j>_L / (sqrt(d) tau0 / sqrt K)    Lorentzian attention score
//   w+/w- = softmax over positive / negative neighbourhoods separately
//   D_i   = sum+ w log_{h_i}(v_j) - sum- w log_{h_i}(v_j),   averaged over heads
//   y_i   = exp_{h_i}(mean_m D_i)
//   x'_i  = exp_o^{K_next}(sigma(log_o^{K_prev}(y_i)))
//
// The `point` namespace evaluates every step on single points with plain doubles.
// The batched path below computes the same quantities on the tape for all nodes at
// once; log maps toward neighbours are expanded as
//   sum_j c_j (v_j - a_j h_i) = sum_j c_j v_j - (sum_j c_j a_j) h_i
// so only per-edge scalars and one sparse row accumulation are recorded.

#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "bhgcn/autodiff.hpp"
#include "bhgcn/graph.hpp"
#include "bhgcn/lorentz.hpp"

namespace bhgcn::layers {

enum class Activation { identity, relu };

/// How per-head query/key/value points are formed from h.
enum class HeadMapMode {
    hyperbolic,  // exp_o(W log_o(h))
    ambient,     // W applied to the spatial ambient coordinates, then re-projected
};

struct LayerConfig {
    std::size_t d = 64;
    std::size_t heads = 4;
    double tau0 = 1.0;
    Activation activation = Activation::relu;
    bool self_loops = true;
    HeadMapMode head_maps = HeadMapMode::hyperbolic;
};

/// K = softplus(rho) + 1e-4
inline constexpr double kCurvatureFloor = 1e-4;

inline double curvature_from_raw(double rho) {
    const double sp = rho > 0 ? rho + std::log1p(std::exp(-rho)) : std::log1p(std::exp(rho));
    return sp + kCurvatureFloor;
}

/// Raw parameter giving curvature scale K exactly (up to rounding).
inline double raw_from_curvature(double K) { return std::log(std::expm1(K - kCurvatureFloor)); }

inline double apply_activation(Activation a, double x) { return a == Activation::relu ? (x > 0 ? x : 0.0) : x; }

// ---------------------------------------------------------------------------
// Point-level operations

namespace point {

using lorentz::LorentzPoint;
using lorentz::Vec;

inline LorentzPoint lift_to_manifold(const Vec& x, double K0) {
    Vec v = Vec::Zero(x.size() + 1);
    v.tail(x.size()) = x;
    return lorentz::exp_map(lorentz::origin(x.size(), K0), v);
}

/// Spatial part of log_o(x).
inline Vec log_origin(const LorentzPoint& x) {
    const Vec v = lorentz::log_map(lorentz::origin(x.dim(), x.K), x).coords;
    return v.tail(v.size() - 1);
}

inline LorentzPoint exp_origin(const Vec& u, double K) {
    Vec v = Vec::Zero(u.size() + 1);
    v.tail(u.size()) = u;
    return lorentz::exp_map(lorentz::origin(u.size(), K), v);
}

/// exp_o(W log_o(x)), then exp_x(PT_{o->x}((0, b))) when a bias is given.
inline LorentzPoint hyperbolic_linear(const LorentzPoint& x, const Eigen::MatrixXd& W, const Vec* bias = nullptr) {
    if (W.cols() != x.dim())
        throw ShapeError("hyperbolic_linear: W has " + std::to_string(W.cols()) + " columns, point dimension is " +
                         std::to_string(x.dim()));
    LorentzPoint h = exp_origin(W * log_origin(x), x.K);
    if (bias) {
        if (bias->size() != W.rows()) throw ShapeError("hyperbolic_linear: bias dimension mismatch");
        Vec b = Vec::Zero(bias->size() + 1);
        b.tail(bias->size()) = *bias;
        const auto o = lorentz::origin(W.rows(), x.K);
        const auto moved = lorentz::parallel_transport(o, h, lorentz::TangentVector{b, o});
        h = lorentz::exp_map(lorentz::project_to_tangent(h, moved.coords));
    }
    return h;
}

/// <q,k>_L / (sqrt(d) tau) with tau = tau0 / sqrt(K).
inline double attention_score(const LorentzPoint& q, const LorentzPoint& k, std::size_t d, double tau0) {
    const double tau = tau0 / std::sqrt(q.K);
    return lorentz::lorentz_inner(q.coords, k.coords) / (std::sqrt(static_cast<double>(d)) * tau);
}

struct SignedWeights {
    std::vector<double> pos;
    std::vector<double> neg;
};

/// Softmax of `scores` restricted separately to the positive and negative index sets.
inline SignedWeights signed_softmax(const std::vector<double>& scores, const std::vector<std::size_t>& pos,
                                    const std::vector<std::size_t>& neg) {
    auto soft = [&](const std::vector<std::size_t>& idx) {
        std::vector<double> w;
        if (idx.empty()) return w;
        double mx = scores[idx[0]];
        for (std::size_t j : idx) mx = std::max(mx, scores[j]);
        double z = 0.0;
        for (std::size_t j : idx) {
            w.push_back(std::exp(scores[j] - mx));
            z += w.back();
        }
        for (double& x : w) x /= z;
        return w;
    };
    return {soft(pos), soft(neg)};
}

/// One head's neighbourhood: value points with their signed weights.
struct HeadMessages {
    std::vector<LorentzPoint> pos_values;
    std::vector<double> pos_weights;
    std::vector<LorentzPoint> neg_values;
    std::vector<double> neg_weights;
};

/// exp_h(mean over heads of [sum+ w log_h(v) - sum- w log_h(v)]).
inline LorentzPoint signed_aggregate(const LorentzPoint& h, const std::vector<HeadMessages>& heads) {
    Vec delta = Vec::Zero(h.coords.size());
    for (const auto& m : heads) {
        for (std::size_t j = 0; j < m.pos_values.size(); ++j)
            delta += m.pos_weights[j] * lorentz::log_map(h, m.pos_values[j]).coords;
        for (std::size_t j = 0; j < m.neg_values.size(); ++j)
            delta -= m.neg_weights[j] * lorentz::log_map(h, m.neg_values[j]).coords;
    }
    if (!heads.empty()) delta /= static_cast<double>(heads.size());
    return lorentz::exp_map(lorentz::project_to_tangent(h, delta));
}

/// exp_o^{K_next}(sigma(log_o^{K_prev}(y))).
inline LorentzPoint layer_update(const LorentzPoint& y, double K_next, Activation act) {
    Vec u = log_origin(y);
    for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = apply_activation(act, u[i]);
    return exp_origin(u, K_next);
}

}  // namespace point

// ---------------------------------------------------------------------------
// Neighbourhood index for the batched layer

/// Directed message list (src -> dst) with sign and softmax segment per edge.
/// Segment dst holds the positive neighbourhood of dst, segment n + dst the negative one.
struct NeighborIndex {
    std::size_t n = 0;
    std::vector<std::size_t> dst;
    std::vector<std::size_t> src;
    std::vector<double> sign;
    std::vector<std::size_t> segment;
    std::size_t n_segments = 0;
    std::vector<std::size_t> pair_index;  // dst * n + src, for gathering from n x n matrices

    std::size_t size() const noexcept { return dst.size(); }
};

/// Build the message list. `signed_split=false` merges both signs into one positive neighbourhood.
inline NeighborIndex make_neighbor_index(const graph::SignedGraph& g, bool self_loops, bool signed_split = true) {
    NeighborIndex ix;
    ix.n = g.n;
    ix.n_segments = signed_split ? 2 * g.n : g.n;
    std::vector<std::vector<std::pair<std::size_t, double>>> nb(g.n);
    for (std::size_t i = 0; i < g.n; ++i)
        if (self_loops) nb[i].push_back({i, 1.0});
    for (const auto& e : g.pos_edges) nb[e.i].push_back({e.j, 1.0});
    for (const auto& e : g.neg_edges) nb[e.i].push_back({e.j, -1.0});
    for (std::size_t i = 0; i < g.n; ++i) {
        for (auto [j, s] : nb[i]) {
            ix.dst.push_back(i);
            ix.src.push_back(j);
            ix.sign.push_back(signed_split ? s : 1.0);
            ix.segment.push_back(signed_split && s < 0 ? g.n + i : i);
            ix.pair_index.push_back(i * g.n + j);
        }
    }
    return ix;
}

// ---------------------------------------------------------------------------
// Batched tape operations. Node points are rows of an (N, d+1) matrix.

namespace batched {

using ad::Var;
namespace lr = lorentz::rows;

inline Var curvature(Var rho) { return ad::softplus(rho) + kCurvatureFloor; }

/// exp_o((0, x_i)) for every row of x.
inline Var lift_to_manifold(Var x, Var K0) { return lr::exp_origin(x, K0); }

/// exp_o(W log_o(x)) and optional bias addition by transport from the origin.
/// W is (d_out, d_in); bias is (1, d_out).
inline Var hyperbolic_linear(Var x, Var W, const Var* bias, Var K) {
    Var h = lr::exp_origin(ad::matmul_nt(lr::log_origin(x, K), W), K);
    if (bias) h = lr::exp(h, lr::transport_from_origin(h, *bias, K), K);
    return h;
}

/// hyperbolic_linear without bias, given u = log_o(x) precomputed.
inline Var tangent_linear(Var u, Var W, Var K) { return lr::exp_origin(ad::matmul_nt(u, W), K); }

inline Var ambient_linear(Var x, Var W, Var K) { return lr::lift_spatial(ad::matmul_nt(lr::spatial(x), W), K); }

inline Var activate(Var u, Activation a) { return a == Activation::relu ? ad::relu(u) : u; }

/// Per-edge attention scores, (E,1).
inline Var attention_scores(Var q, Var k, const NeighborIndex& ix, std::size_t d, double tau0, Var K,
                            bool euclidean) {
    if (euclidean) {
        Var s = ad::matmul_nt(lr::log_origin(q, K), lr::log_origin(k, K));
        return ad::gather(s, ix.pair_index) * (ad::sqrt(K) / (std::sqrt(static_cast<double>(d)) * tau0));
    }
    Var s = lr::gram(q, k);
    return ad::gather(s, ix.pair_index) * (ad::sqrt(K) / (std::sqrt(static_cast<double>(d)) * tau0));
}

/// Sum over edges of sign * weight * log_{h_dst}(v_src), one row per node, (N, d+1).
inline Var signed_messages(Var h, Var v, Var weights, const NeighborIndex& ix, Var K) {
    Var a = -ad::gather(lr::gram(h, v), ix.pair_index) / K;
    Var c = lr::log_coefficient(a);
    Var beta = c * weights * h.tape->constant(Tensor(Shape{ix.size(), 1}, ix.sign));
    Var toward = ad::scatter_rows(beta, v, ix.dst, ix.src, ix.n);
    Var pull = ad::segment_sum(beta * a, ix.dst, ix.n);
    return toward - pull * h;
}

struct LayerVars {
    Var W;
    Var b;
    std::vector<Var> Wq, Wk, Wv;
    Var rho;
};

struct LayerOptions {
    bool euclidean_attention = false;
};

/// One full layer: points on K_prev in, points on K_next out.
inline Var forward_layer(Var x, const LayerVars& p, const NeighborIndex& ix, const LayerConfig& cfg, Var K_prev,
                         Var K_next, LayerOptions opt = {}) {
    Var h = hyperbolic_linear(x, p.W, &p.b, K_prev);
    const bool hyp = cfg.head_maps == HeadMapMode::hyperbolic;
    Var uh = hyp ? lr::log_origin(h, K_prev) : lr::spatial(h);
    std::vector<Var> deltas;
    for (std::size_t m = 0; m < p.Wq.size(); ++m) {
        auto map = [&](Var W) {
            return hyp ? tangent_linear(uh, W, K_prev) : lr::lift_spatial(ad::matmul_nt(uh, W), K_prev);
        };
        Var q = map(p.Wq[m]), k = map(p.Wk[m]), v = map(p.Wv[m]);
        Var s = attention_scores(q, k, ix, cfg.d, cfg.tau0, K_prev, opt.euclidean_attention);
        Var w = ad::segment_softmax(s, ix.segment, ix.n_segments);
        deltas.push_back(signed_messages(h, v, w, ix, K_prev));
    }
    Var delta = deltas.front();
    for (std::size_t m = 1; m < deltas.size(); ++m) delta = delta + deltas[m];
    delta = delta * (1.0 / static_cast<double>(deltas.size()));
    Var y = lr::exp(h, delta, K_prev);
    return lr::exp_origin(activate(lr::log_origin(y, K_prev), cfg.activation), K_next);
}

/// Flat-space counterpart used by the Euclidean-geometry ablation: log/exp are
/// identities and attention uses dot products.
inline Var forward_layer_euclidean(Var x, const LayerVars& p, const NeighborIndex& ix, const LayerConfig& cfg) {
    Var h = ad::matmul_nt(x, p.W) + p.b;
    std::vector<Var> deltas;
    const double scale = 1.0 / (std::sqrt(static_cast<double>(cfg.d)) * cfg.tau0);
    for (std::size_t m = 0; m < p.Wq.size(); ++m) {
        Var q = ad::matmul_nt(h, p.Wq[m]);
        Var k = ad::matmul_nt(h, p.Wk[m]);
        Var v = ad::matmul_nt(h, p.Wv[m]);
        Var s = ad::gather(ad::matmul_nt(q, k), ix.pair_index) * scale;
        Var w = ad::segment_softmax(s, ix.segment, ix.n_segments);
        Var beta = w * h.tape->constant(Tensor(Shape{ix.size(), 1}, ix.sign));
        deltas.push_back(ad::scatter_rows(beta, v, ix.dst, ix.src, ix.n) - ad::segment_sum(beta, ix.dst, ix.n) * h);
    }
    Var delta = deltas.front();
    for (std::size_t m = 1; m < deltas.size(); ++m) delta = delta + deltas[m];
    Var y = h + delta * (1.0 / static_cast<double>(deltas.size()));
    return activate(y, cfg.activation);
}

}  // namespace batched

}  // namespace bhgcn::layers
