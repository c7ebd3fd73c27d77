#pragma once

// Synthetic stand-ins for fMRI cohorts and the tree-embedding distortion experiment.
//
// Each class owns a latent hierarchy (a truncated b-ary tree over N regions). A
// subject's signals are Gaussian with covariance (I - lambda A_norm)^-1 rescaled
// to unit diagonal, where A_norm = D^-1/2 A D^-1/2 is the (optionally rewired)
// tree adjacency; white noise is added on top.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "bhgcn/autodiff.hpp"
#include "bhgcn/graph.hpp"
#include "bhgcn/lorentz.hpp"
#include "bhgcn/optim.hpp"

namespace bhgcn::synth {

struct SynthSpec {
    std::size_t subjects_per_class = 100;
    std::size_t roi_count = 32;
    std::size_t time_points = 64;
    std::size_t depth = 0;  // 0: no depth limit
    std::size_t branching_class0 = 2;
    std::size_t branching_class1 = 3;
    double noise = 0.5;
    double rewire = 0.05;
    double coupling = 0.5;  // lambda
    std::uint64_t seed = 42;

    void validate() const {
        if (roi_count < 4) throw Error("synth: roi_count must be >= 4");
        if (time_points < 8) throw Error("synth: time_points must be >= 8");
        if (noise < 0) throw Error("synth: noise must be >= 0");
        if (rewire < 0 || rewire > 1) throw Error("synth: rewire must lie in [0, 1]");
        if (branching_class0 < 1 || branching_class1 < 1) throw Error("synth: branching factors must be >= 1");
    }

    /// AAL-116-shaped subjects.
    static SynthSpec full_size() {
        SynthSpec s;
        s.roi_count = 116;
        s.time_points = 150;
        return s;
    }
};

using EdgeList = std::vector<std::pair<std::size_t, std::size_t>>;

/// Breadth-first b-ary tree over n nodes (node 0 is the root). With a depth limit,
/// nodes that would fall below it attach round-robin to the deepest allowed level.
inline EdgeList latent_tree(std::size_t n, std::size_t branching, std::size_t depth = 0) {
    EdgeList edges;
    std::vector<std::size_t> level(n, 0), children(n, 0);
    std::size_t parent = 0, overflow = 0;
    std::vector<std::size_t> last_level;
    for (std::size_t v = 1; v < n; ++v) {
        while (children[parent] >= branching) ++parent;
        std::size_t p = parent;
        if (depth > 0 && level[p] + 1 > depth) {
            if (last_level.empty())
                for (std::size_t u = 0; u < v; ++u)
                    if (level[u] + 1 == depth) last_level.push_back(u);
            p = last_level[overflow++ % last_level.size()];
        }
        ++children[p];
        level[v] = level[p] + 1;
        edges.emplace_back(p, v);
    }
    return edges;
}

/// Move each edge's child endpoint to a uniformly chosen node with probability `p`
/// (no self-loops or duplicate edges are created).
inline EdgeList rewire(const EdgeList& edges, std::size_t n, double p, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::set<std::pair<std::size_t, std::size_t>> present;
    for (auto [a, b] : edges) present.insert({std::min(a, b), std::max(a, b)});
    EdgeList out;
    for (auto [a, b] : edges) {
        if (coin(rng) < p) {
            for (int attempt = 0; attempt < 16; ++attempt) {
                const std::size_t c = pick(rng);
                const auto key = std::make_pair(std::min(a, c), std::max(a, c));
                if (c == a || present.count(key)) continue;
                present.erase({std::min(a, b), std::max(a, b)});
                present.insert(key);
                b = c;
                break;
            }
        }
        out.emplace_back(a, b);
    }
    return out;
}

/// (I - lambda D^-1/2 A D^-1/2)^-1 rescaled to unit diagonal.
inline Eigen::MatrixXd resolvent_covariance(const EdgeList& edges, std::size_t n, double lambda) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (auto [a, b] : edges) {
        A(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = 1.0;
        A(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = 1.0;
    }
    Eigen::VectorXd deg = A.rowwise().sum();
    for (Eigen::Index i = 0; i < deg.size(); ++i) deg[i] = deg[i] > 0 ? 1.0 / std::sqrt(deg[i]) : 0.0;
    Eigen::MatrixXd An = deg.asDiagonal() * A * deg.asDiagonal();
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(An.rows(), An.cols()) - lambda * An;
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    if (llt.info() != Eigen::Success)
        throw Error("synth: I - lambda*A_norm is not positive definite; use a smaller coupling lambda (< 1)");
    Eigen::MatrixXd S = llt.solve(Eigen::MatrixXd::Identity(An.rows(), An.cols()));
    Eigen::VectorXd s = S.diagonal().cwiseSqrt().cwiseInverse();
    return s.asDiagonal() * S * s.asDiagonal();
}

/// One subject of class `cls`, deterministic given the rng state.
inline graph::SubjectTimeSeries generate_subject(const SynthSpec& spec, int cls, std::mt19937_64& rng) {
    spec.validate();
    const std::size_t n = spec.roi_count, t = spec.time_points;
    const EdgeList tree = latent_tree(n, cls == 0 ? spec.branching_class0 : spec.branching_class1, spec.depth);
    const EdgeList edges = rewire(tree, n, spec.rewire, rng);
    const Eigen::MatrixXd cov = resolvent_covariance(edges, n, spec.coupling);
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw Error("synth: covariance factorisation failed; use a smaller coupling lambda");
    const Eigen::MatrixXd L = llt.matrixL();
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(t));
    for (Eigen::Index j = 0; j < z.cols(); ++j)
        for (Eigen::Index i = 0; i < z.rows(); ++i) z(i, j) = normal(rng);
    Eigen::MatrixXd x = L * z;
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, j) += spec.noise * normal(rng);
    graph::SubjectTimeSeries ts;
    ts.series = std::move(x);
    ts.label = cls;
    return ts;
}

/// Balanced dataset, classes interleaved (subject 2k is class 0, 2k+1 is class 1).
inline std::vector<graph::SubjectTimeSeries> generate_dataset(const SynthSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::vector<graph::SubjectTimeSeries> out;
    for (std::size_t s = 0; s < spec.subjects_per_class; ++s) {
        for (int cls : {0, 1}) {
            auto ts = generate_subject(spec, cls, rng);
            ts.subject_id = "sub" + std::to_string(out.size()) + "_c" + std::to_string(cls);
            out.push_back(std::move(ts));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tree embedding distortion

enum class Geometry { hyperbolic, euclidean };

struct DistortionReport {
    Geometry geometry = Geometry::hyperbolic;
    double curvature = 1.0;
    std::size_t dim = 2;
    double average = 0.0;  // mean |d_embed/d_graph - 1|
    double worst = 0.0;    // max |d_embed/d_graph - 1|
    double final_stress = 0.0;
};

struct EmbedOptions {
    Geometry geometry = Geometry::hyperbolic;
    double curvature = 1.0;
    std::size_t dim = 2;
    std::size_t iters = 2000;
    double lr = 0.05;
    std::uint64_t seed = 0;
    // Targets are scaled from 0.1 to 1 over this fraction of the iterations. Starting
    // small keeps early iterates near the origin, where the hyperbolic plane is nearly
    // flat; from a full-scale start subtrees tangle and the run stalls in a poor minimum.
    double ramp = 0.5;
};

/// All-pairs hop distances; throws if the graph is disconnected.
inline std::vector<std::vector<double>> hop_distances(const EdgeList& edges, std::size_t n) {
    std::vector<std::vector<std::size_t>> adj(n);
    for (auto [a, b] : edges) {
        if (a >= n || b >= n) throw Error("distortion: edge endpoint out of range");
        adj[a].push_back(b);
        adj[b].push_back(a);
    }
    std::vector<std::vector<double>> d(n, std::vector<double>(n, -1.0));
    for (std::size_t s = 0; s < n; ++s) {
        std::queue<std::size_t> q;
        q.push(s);
        d[s][s] = 0;
        while (!q.empty()) {
            const std::size_t u = q.front();
            q.pop();
            for (std::size_t v : adj[u])
                if (d[s][v] < 0) {
                    d[s][v] = d[s][u] + 1;
                    q.push(v);
                }
        }
        for (std::size_t v = 0; v < n; ++v)
            if (d[s][v] < 0) throw Error("distortion: input graph is disconnected");
    }
    return d;
}

/// Complete binary tree of the given depth (depth 0 is a single node).
inline EdgeList binary_tree(std::size_t depth) { return latent_tree((std::size_t{1} << (depth + 1)) - 1, 2); }

/// Place tree nodes to minimise sum_{i<j} (d_embed - d_graph)^2 by Adam through the tape.
/// Hyperbolic coordinates live in the origin tangent space and are mapped by exp_o.
inline DistortionReport embed_tree_distortion(const EdgeList& edges, std::size_t n, const EmbedOptions& opt) {
    if (opt.dim < 2) throw Error("distortion: dim must be >= 2");
    if (opt.ramp < 0 || opt.ramp > 1) throw Error("distortion: ramp must lie in [0, 1]");
    if (n < 2) throw Error("distortion: need at least 2 nodes");
    const auto dg = hop_distances(edges, n);
    std::vector<std::size_t> pairs;
    std::vector<double> target;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            pairs.push_back(i * n + j);
            target.push_back(dg[i][j]);
        }
    const Tensor target_t(Shape{target.size(), 1}, target);

    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> normal(0.0, 0.5);
    std::vector<Tensor> params{Tensor(Shape{n, opt.dim})};
    for (std::size_t i = 0; i < params[0].size(); ++i) params[0][i] = normal(rng);

    auto distances = [&](ad::Tape& tape, ad::Var u) {
        if (opt.geometry == Geometry::hyperbolic) {
            ad::Var K = tape.constant(opt.curvature);
            ad::Var x = lorentz::rows::exp_origin(u, K);
            ad::Var a = -ad::gather(lorentz::rows::gram(x, x), pairs) / K;
            return ad::arcosh(ad::clamp(a, lorentz::kArcoshFloor));
        }
        ad::Var g = ad::matmul(u, ad::transpose(u));
        ad::Var sq = ad::sum(ad::square(u), 1);
        ad::Var d2 = sq + ad::transpose(sq) - 2.0 * g;
        return ad::sqrt(ad::clamp(ad::gather(d2, pairs), 1e-18));
    };

    optim::AdamWState state;
    const optim::AdamWConfig oc{opt.lr, 0.0};
    double stress = 0.0;
    for (std::size_t it = 0; it < opt.iters; ++it) {
        ad::Tape tape;
        ad::Var u = tape.leaf(params[0]);
        const double scale =
            opt.ramp > 0 ? std::min(1.0, 0.1 + 0.9 * static_cast<double>(it) / (opt.ramp * static_cast<double>(opt.iters)))
                         : 1.0;
        ad::Var diff = distances(tape, u) - scale * tape.constant(target_t);
        ad::Var loss = ad::sum(ad::square(diff));
        stress = loss.item();
        tape.backward(loss);
        optim::adamw_step(params, {tape.grad(u)}, state, oc);
    }

    ad::Tape tape;
    ad::Var u = tape.constant(params[0]);
    const Tensor de = distances(tape, u).value();
    DistortionReport r;
    r.geometry = opt.geometry;
    r.curvature = opt.curvature;
    r.dim = opt.dim;
    r.final_stress = stress;
    for (std::size_t e = 0; e < target.size(); ++e) {
        const double rel = std::abs(de[e] / target[e] - 1.0);
        r.average += rel;
        r.worst = std::max(r.worst, rel);
    }
    r.average /= static_cast<double>(target.size());
    return r;
}

}  // namespace bhgcn::synth
