#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "bhgcn/tensor.hpp"

namespace bhgcn::optim {

struct AdamWConfig {
    double lr = 1e-3;
    double weight_decay = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment estimates and step count, one moment tensor per parameter block.
struct AdamWState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::size_t step = 0;
};

/// AdamW with decoupled weight decay: p <- p - lr*wd*p, then the bias-corrected Adam update.
inline void adamw_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamWState& state,
                       const AdamWConfig& cfg) {
    if (grads.size() != params.size()) throw ShapeError("adamw_step: gradient/parameter block count mismatch");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.push_back(Tensor::zeros_like(p));
            state.v.push_back(Tensor::zeros_like(p));
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t b = 0; b < params.size(); ++b) {
        Tensor& p = params[b];
        const Tensor& g = grads[b];
        if (g.shape() != p.shape())
            throw ShapeError("adamw_step: gradient shape " + shape_str(g.shape()) + " vs parameter " +
                             shape_str(p.shape()));
        Tensor& m = state.m[b];
        Tensor& v = state.v[b];
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] -= cfg.lr * cfg.weight_decay * p[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

}  // namespace bhgcn::optim
