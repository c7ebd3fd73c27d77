#pragma once

// Model assembly: parameter layout and initialisation, ablation switches and the
// end-to-end forward pass from a signed graph to two class logits.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "bhgcn/autodiff.hpp"
#include "bhgcn/graph.hpp"
#include "bhgcn/layers.hpp"
#include "bhgcn/lorentz.hpp"
#include "bhgcn/readout.hpp"

namespace bhgcn::model {

/// Component removals for ablation runs.
struct Ablation {
    bool euclidean_geometry = false;    // every manifold op replaced by its flat counterpart
    bool fixed_base_readout = false;    // pool in the origin tangent space, no Karcher flow
    bool euclidean_attention = false;   // dot products of origin-tangent coordinates
    bool unsigned_aggregation = false;  // one softmax over all neighbours, all pulled

    bool any_partial() const { return fixed_base_readout || euclidean_attention || unsigned_aggregation; }

    void validate() const {
        if (euclidean_geometry && any_partial())
            throw Error("ablation: euclidean_geometry already removes the other components; do not combine it");
    }

    std::string name() const {
        if (euclidean_geometry) return "euclidean_geometry";
        std::string s;
        auto add = [&](bool on, const char* n) {
            if (!on) return;
            if (!s.empty()) s += '+';
            s += n;
        };
        add(fixed_base_readout, "fixed_base_readout");
        add(euclidean_attention, "euclidean_attention");
        add(unsigned_aggregation, "unsigned_aggregation");
        return s.empty() ? "full" : s;
    }

    /// Set one flag by its name; returns false for unknown names.
    bool set(const std::string& flag) {
        if (flag == "euclidean_geometry") euclidean_geometry = true;
        else if (flag == "fixed_base_readout") fixed_base_readout = true;
        else if (flag == "euclidean_attention") euclidean_attention = true;
        else if (flag == "unsigned_aggregation") unsigned_aggregation = true;
        else return false;
        return true;
    }

    friend bool operator==(const Ablation&, const Ablation&) = default;
};

struct ModelConfig {
    std::size_t input_dim = 64;  // time points T
    std::size_t layers = 3;
    layers::LayerConfig layer;
    readout::ReadoutConfig readout;
    Ablation ablation;
    double init_curvature = 1.0;
    bool classifier_spatial_only = false;

    void validate() const {
        if (input_dim < 1 || layers < 1 || layer.d < 1 || layer.heads < 1)
            throw Error("model: dimensions, layer count and head count must be >= 1");
        if (!(layer.tau0 > 0)) throw Error("model: tau0 must be positive");
        if (!(init_curvature > layers::kCurvatureFloor)) throw Error("model: initial curvature must exceed 1e-4");
        readout.validate();
        ablation.validate();
    }
};

/// Named parameter tensors in a fixed order.
struct ParameterSet {
    std::vector<std::string> names;
    std::vector<Tensor> values;

    std::size_t size() const noexcept { return values.size(); }

    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return i;
        throw Error("unknown parameter '" + name + "'");
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& v : values) n += v.size();
        return n;
    }

    friend bool operator==(const ParameterSet&, const ParameterSet&) = default;
};

/// Parameter positions inside a ParameterSet.
struct Layout {
    struct LayerSlots {
        std::size_t W, b, rho;
        std::vector<std::size_t> Wq, Wk, Wv;
    };
    std::size_t input_rho = 0;
    std::vector<LayerSlots> layers;
    std::size_t classifier_W = 0, classifier_b = 0;
};

inline Layout make_layout(const ModelConfig& cfg) {
    Layout lay;
    std::size_t k = 0;
    lay.input_rho = k++;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        Layout::LayerSlots s;
        s.W = k++;
        s.b = k++;
        s.rho = k++;
        for (std::size_t m = 0; m < cfg.layer.heads; ++m) {
            s.Wq.push_back(k++);
            s.Wk.push_back(k++);
            s.Wv.push_back(k++);
        }
        lay.layers.push_back(std::move(s));
    }
    lay.classifier_W = k++;
    lay.classifier_b = k++;
    return lay;
}

/// Random initial parameters. Layer weights are Gaussian scaled so that a z-scored
/// input row maps to a tangent vector of roughly unit norm; head maps start near
/// the identity; every curvature starts at `init_curvature`.
inline ParameterSet init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t d = cfg.layer.d;
    auto gaussian = [&](std::size_t r, std::size_t c, double sd) {
        Tensor t(Shape{r, c});
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = sd * normal(rng);
        return t;
    };
    auto near_identity = [&](std::size_t n) {
        Tensor t = gaussian(n, n, 0.1 / std::sqrt(static_cast<double>(n)));
        for (std::size_t i = 0; i < n; ++i) t(i, i) += 1.0;
        return t;
    };
    const double rho0 = layers::raw_from_curvature(cfg.init_curvature);
    ParameterSet ps;
    auto push = [&](std::string name, Tensor t) {
        ps.names.push_back(std::move(name));
        ps.values.push_back(std::move(t));
    };
    push("input.rho", Tensor::scalar(rho0));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        const std::size_t din = l == 0 ? cfg.input_dim : d;
        const double in_norm = l == 0 ? std::sqrt(static_cast<double>(din)) : 1.0;
        push(p + "W", gaussian(d, din, 1.0 / (in_norm * std::sqrt(static_cast<double>(d)))));
        push(p + "b", Tensor(Shape{1, d}, 0.0));
        push(p + "rho", Tensor::scalar(rho0));
        for (std::size_t m = 0; m < cfg.layer.heads; ++m) {
            const std::string h = p + "head" + std::to_string(m) + ".";
            push(h + "Wq", near_identity(d));
            push(h + "Wk", near_identity(d));
            push(h + "Wv", near_identity(d));
        }
    }
    push("classifier.W", gaussian(2, d + 1, 0.1));
    push("classifier.b", Tensor(Shape{1, 2}, 0.0));
    return ps;
}

/// A graph prepared for repeated forward passes.
struct GraphInput {
    Tensor features;  // (N, T)
    layers::NeighborIndex index;
    int label = 0;
};

inline GraphInput prepare(const graph::SignedGraph& g, const ModelConfig& cfg) {
    GraphInput in;
    const auto r = static_cast<std::size_t>(g.features.rows()), c = static_cast<std::size_t>(g.features.cols());
    if (r != g.n) throw ShapeError("prepare: graph has " + std::to_string(g.n) + " nodes but " + std::to_string(r) +
                                   " feature rows");
    if (c != cfg.input_dim)
        throw ShapeError("prepare: feature length " + std::to_string(c) + " does not match model input dimension " +
                         std::to_string(cfg.input_dim));
    in.features = Tensor(Shape{r, c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            in.features(i, j) = g.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    const bool split = !(cfg.ablation.unsigned_aggregation);
    in.index = layers::make_neighbor_index(g, cfg.layer.self_loops, split);
    in.label = g.label.value_or(0);
    return in;
}

struct ForwardResult {
    ad::Var node_points;  // final-layer node representations
    ad::Var pooled;       // (1, d+1) readout vector
    ad::Var logits;       // (1, 2)
};

/// End-to-end forward pass on `tape` with parameters `p` (ordered as the ParameterSet).
inline ForwardResult forward(const ModelConfig& cfg, const std::vector<ad::Var>& p, const GraphInput& in) {
    const Layout lay = make_layout(cfg);
    ad::Tape& tape = *p.front().tape;
    auto layer_vars = [&](const Layout::LayerSlots& s) {
        layers::batched::LayerVars v;
        v.W = p[s.W];
        v.b = p[s.b];
        v.rho = p[s.rho];
        for (std::size_t m = 0; m < s.Wq.size(); ++m) {
            v.Wq.push_back(p[s.Wq[m]]);
            v.Wk.push_back(p[s.Wk[m]]);
            v.Wv.push_back(p[s.Wv[m]]);
        }
        return v;
    };
    ad::Var x = tape.constant(in.features);
    ForwardResult out;
    if (cfg.ablation.euclidean_geometry) {
        for (const auto& s : lay.layers) x = layers::batched::forward_layer_euclidean(x, layer_vars(s), in.index, cfg.layer);
        out.node_points = x;
        out.pooled = ad::concat({tape.constant(Tensor(Shape{1, 1}, 0.0)), ad::mean(x, 0)}, 1);
    } else {
        ad::Var K = layers::batched::curvature(p[lay.input_rho]);
        x = layers::batched::lift_to_manifold(x, K);
        layers::batched::LayerOptions opt{cfg.ablation.euclidean_attention};
        for (const auto& s : lay.layers) {
            ad::Var K_next = layers::batched::curvature(p[s.rho]);
            x = layers::batched::forward_layer(x, layer_vars(s), in.index, cfg.layer, K, K_next, opt);
            K = K_next;
        }
        out.node_points = x;
        if (cfg.ablation.fixed_base_readout) {
            out.pooled = readout::batched::origin_pool(x, K);
        } else {
            ad::Var mu = readout::batched::karcher_flow(x, K, cfg.readout);
            out.pooled = readout::batched::tangent_pool(x, mu, K);
        }
    }
    ad::Var z = out.pooled;
    if (cfg.classifier_spatial_only)
        z = ad::concat({tape.constant(Tensor(Shape{1, 1}, 0.0)), lorentz::rows::spatial(z)}, 1);
    out.logits = readout::batched::classify(z, p[lay.classifier_W], p[lay.classifier_b]);
    return out;
}

inline ad::Var loss(const ModelConfig& cfg, const std::vector<ad::Var>& p, const GraphInput& in) {
    return readout::batched::cross_entropy(forward(cfg, p, in).logits, in.label);
}

/// Positive-class probability for one graph (no gradient bookkeeping).
inline double predict(const ModelConfig& cfg, const ParameterSet& ps, const GraphInput& in) {
    ad::Tape tape;
    std::vector<ad::Var> p;
    for (const auto& v : ps.values) p.push_back(tape.constant(v));
    const Tensor& l = forward(cfg, p, in).logits.value();
    const double m = std::max(l[0], l[1]);
    const double e0 = std::exp(l[0] - m), e1 = std::exp(l[1] - m);
    return e1 / (e0 + e1);
}

struct LossAndGrad {
    double loss = 0.0;
    std::vector<Tensor> grads;
    std::size_t hyperbolic_evaluations = 0;
};

inline LossAndGrad loss_and_grad(const ModelConfig& cfg, const ParameterSet& ps, const GraphInput& in) {
    ad::Tape tape;
    std::vector<ad::Var> p;
    for (const auto& v : ps.values) p.push_back(tape.leaf(v));
    ad::Var l = loss(cfg, p, in);
    tape.backward(l);
    LossAndGrad r;
    r.loss = l.item();
    for (ad::Var v : p) r.grads.push_back(tape.grad(v));
    r.hyperbolic_evaluations = tape.hyperbolic_evaluations();
    return r;
}

}  // namespace bhgcn::model
