#pragma once

// Reverse-mode automatic differentiation over dense f64 tensors.
//
// A Tape records every primitive eagerly: the forward value is computed when
// the op is recorded, and the adjoint closure is replayed by backward() in
// reverse recording order. Operand ids always precede the node that uses them,
// so a single reverse sweep visits every node exactly once.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "bhgcn/tensor.hpp"

namespace bhgcn::ad {

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    double item() const { return value().item(); }
};

class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    Tape() { nodes_.reserve(256); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// A differentiable input (model parameter or checked variable).
    Var leaf(Tensor value) { return push("leaf", {}, std::move(value), nullptr, true); }

    /// A value that never receives a gradient.
    Var constant(Tensor value) { return push("constant", {}, std::move(value), nullptr, false); }
    Var constant(double v) { return constant(Tensor::scalar(v)); }

    Var record(const char* kind, std::vector<std::size_t> inputs, Tensor value, Backward fn) {
        bool needs = false;
        for (std::size_t in : inputs) needs = needs || nodes_[in].requires_grad;
        if (!needs) fn = nullptr;
        return push(kind, std::move(inputs), std::move(value), std::move(fn), needs);
    }

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    const Tensor& value(Var v) const { return nodes_[v.id].value; }

    /// Gradient of the last backward() loss with respect to `v` (zeros if unreached).
    Tensor grad(Var v) const {
        const Node& n = nodes_[v.id];
        if (n.grad.empty()) return Tensor::zeros_like(n.value);
        return Tensor(n.value.shape(), n.grad);
    }

    /// Accumulation buffer for node `id`, or nullptr when it does not need a gradient.
    double* grad_buffer(std::size_t id) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return nullptr;
        if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
        return n.grad.data();
    }

    const double* out_grad(std::size_t id) const { return nodes_[id].grad.data(); }
    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

    void zero_grad() {
        for (auto& n : nodes_) n.grad.clear();
    }

    void backward(Var loss) {
        if (loss.tape != this) throw Error("backward: loss belongs to a different tape");
        if (nodes_[loss.id].value.size() != 1)
            throw ShapeError("backward: loss must be scalar, got shape " +
                             shape_str(nodes_[loss.id].value.shape()));
        zero_grad();
        if (!nodes_[loss.id].requires_grad) return;
        nodes_[loss.id].grad.assign(1, 1.0);
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.grad.empty() || !n.backward) continue;
            n.backward(*this, i);
        }
    }

    std::size_t size() const noexcept { return nodes_.size(); }
    const char* kind(std::size_t id) const { return nodes_[id].kind; }

    /// Throw on any non-finite forward value when enabled.
    void set_finite_check(bool on) noexcept { finite_check_ = on; }

    /// Number of hyperbolic transcendental evaluations (cosh, sinh, arcosh) recorded.
    std::size_t hyperbolic_evaluations() const noexcept { return hyperbolic_evals_; }
    void count_hyperbolic(std::size_t n) noexcept { hyperbolic_evals_ += n; }

private:
    struct Node {
        const char* kind;
        std::vector<std::size_t> inputs;
        Tensor value;
        std::vector<double> grad;
        Backward backward;
        bool requires_grad;
    };

    Var push(const char* kind, std::vector<std::size_t> inputs, Tensor value, Backward fn, bool rg) {
        if (finite_check_ && !value.all_finite())
            throw Error(std::string("non-finite value produced by op '") + kind + "'");
        nodes_.push_back(Node{kind, std::move(inputs), std::move(value), {}, std::move(fn), rg});
        return Var{this, nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
    bool finite_check_ = false;
    std::size_t hyperbolic_evals_ = 0;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace detail {

struct Dim2 {
    std::size_t r, c;
};

inline Dim2 dim2(const Shape& s) {
    if (s.empty()) return {1, 1};
    if (s.size() == 1) return {1, s[0]};
    return {s[0], s[1]};
}

inline void require_rank2(const char* op, const Tensor& t) {
    if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
}

inline Tape* tape_of(Var a, Var b) {
    if (a.tape != b.tape) throw Error("operands recorded on different tapes");
    return a.tape;
}

inline Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
    if (a == b) return a;
    const Dim2 da = dim2(a), db = dim2(b);
    auto join = [&](std::size_t x, std::size_t y) -> std::size_t {
        if (x == y || y == 1) return x;
        if (x == 1) return y;
        throw ShapeError(std::string(op) + ": cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
    };
    const std::size_t r = join(da.r, db.r), c = join(da.c, db.c);
    const std::size_t rank = std::max(a.size(), b.size());
    if (rank == 0) return {};
    if (rank == 1 && r == 1) return {c};
    return {r, c};
}

// Sum `g` (laid out as out-dims) into `dst` (laid out as in-dims), reducing broadcast axes.
inline void reduce_into(double* dst, Dim2 in, const double* g, Dim2 out) {
    if (in.r == out.r && in.c == out.c) {
        for (std::size_t i = 0; i < in.r * in.c; ++i) dst[i] += g[i];
        return;
    }
    for (std::size_t i = 0; i < out.r; ++i)
        for (std::size_t j = 0; j < out.c; ++j)
            dst[(in.r == 1 ? 0 : i) * in.c + (in.c == 1 ? 0 : j)] += g[i * out.c + j];
}

// Broadcast pattern of one operand against the output.
enum class Bcast { same, scalar, column, row, general };

inline Bcast pattern(Dim2 in, Dim2 out) {
    if (in.r == out.r && in.c == out.c) return Bcast::same;
    if (in.r == 1 && in.c == 1) return Bcast::scalar;
    if (in.r == out.r && in.c == 1) return Bcast::column;
    if (in.r == 1 && in.c == out.c) return Bcast::row;
    return Bcast::general;
}

inline std::size_t bindex(Bcast p, Dim2 in, std::size_t i, std::size_t j, std::size_t k) {
    switch (p) {
        case Bcast::same: return k;
        case Bcast::scalar: return 0;
        case Bcast::column: return i;
        case Bcast::row: return j;
        default: return (in.r == 1 ? 0 : i) * in.c + (in.c == 1 ? 0 : j);
    }
}

// Elementwise binary op with broadcasting. `da`/`db` map (a, b, out, g) to the operand adjoint.
template <class F, class DA, class DB>
Var binary(const char* kind, Var a, Var b, F f, DA da, DB db) {
    Tape* t = tape_of(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    Shape os = broadcast_shape(kind, A.shape(), B.shape());
    Tensor out(os);
    const Dim2 o = dim2(os), ia = dim2(A.shape()), ib = dim2(B.shape());
    const Bcast pa = pattern(ia, o), pb = pattern(ib, o);
    if (pa == Bcast::same && pb == Bcast::same) {
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = f(A[k], B[k]);
    } else if (pa == Bcast::same && pb == Bcast::scalar) {
        const double y = B[0];
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = f(A[k], y);
    } else if (pa == Bcast::scalar && pb == Bcast::same) {
        const double x = A[0];
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = f(x, B[k]);
    } else {
        for (std::size_t i = 0, k = 0; i < o.r; ++i)
            for (std::size_t j = 0; j < o.c; ++j, ++k)
                out[k] = f(A[bindex(pa, ia, i, j, k)], B[bindex(pb, ib, i, j, k)]);
    }
    const std::size_t ida = a.id, idb = b.id;
    return t->record(kind, {ida, idb}, std::move(out), [ida, idb, o, ia, ib, pa, pb, da, db](Tape& tp, std::size_t self) {
        const Tensor& A = tp.value(ida);
        const Tensor& B = tp.value(idb);
        const Tensor& Y = tp.value(self);
        const double* g = tp.out_grad(self);
        double* ga = tp.grad_buffer(ida);
        double* gb = tp.grad_buffer(idb);
        if (pa == Bcast::same && pb == Bcast::same) {
            const std::size_t n = Y.size();
            if (ga)
                for (std::size_t k = 0; k < n; ++k) ga[k] += da(A[k], B[k], Y[k], g[k]);
            if (gb)
                for (std::size_t k = 0; k < n; ++k) gb[k] += db(A[k], B[k], Y[k], g[k]);
            return;
        }
        for (std::size_t i = 0, k = 0; i < o.r; ++i)
            for (std::size_t j = 0; j < o.c; ++j, ++k) {
                const std::size_t ka = bindex(pa, ia, i, j, k);
                const std::size_t kb = bindex(pb, ib, i, j, k);
                if (ga) ga[ka] += da(A[ka], B[kb], Y[k], g[k]);
                if (gb) gb[kb] += db(A[ka], B[kb], Y[k], g[k]);
            }
    });
}

// Elementwise unary op. `df` maps (x, y, g) to the input adjoint.
template <class F, class DF>
Var unary(const char* kind, Var a, F f, DF df) {
    const Tensor& A = a.value();
    Tensor out(A.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(A[i]);
    const std::size_t ida = a.id;
    return a.tape->record(kind, {ida}, std::move(out), [ida, df](Tape& tp, std::size_t self) {
        const Tensor& X = tp.value(ida);
        const Tensor& Y = tp.value(self);
        const double* g = tp.out_grad(self);
        double* gx = tp.grad_buffer(ida);
        for (std::size_t i = 0; i < X.size(); ++i) gx[i] += df(X[i], Y[i], g[i]);
    });
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Arithmetic

inline Var add(Var a, Var b) {
    return detail::binary(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double, double g) { return g; },
        [](double, double, double, double g) { return g; });
}

inline Var sub(Var a, Var b) {
    return detail::binary(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double, double g) { return g; },
        [](double, double, double, double g) { return -g; });
}

inline Var mul(Var a, Var b) {
    return detail::binary(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y, double, double g) { return g * y; },
        [](double x, double, double, double g) { return g * x; });
}

inline Var div(Var a, Var b) {
    return detail::binary(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y, double, double g) { return g / y; },
        [](double, double y, double out, double g) { return -g * out / y; });
}

inline Var neg(Var a) {
    return detail::unary(
        "neg", a, [](double x) { return -x; }, [](double, double, double g) { return -g; });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator+(Var a, double b) { return add(a, a.tape->constant(b)); }
inline Var operator+(double a, Var b) { return add(b.tape->constant(a), b); }
inline Var operator-(Var a, double b) { return sub(a, a.tape->constant(b)); }
inline Var operator-(double a, Var b) { return sub(b.tape->constant(a), b); }
inline Var operator*(Var a, double b) { return mul(a, a.tape->constant(b)); }
inline Var operator*(double a, Var b) { return mul(b.tape->constant(a), b); }
inline Var operator/(Var a, double b) { return mul(a, a.tape->constant(1.0 / b)); }
inline Var operator/(double a, Var b) { return div(b.tape->constant(a), b); }

// ---------------------------------------------------------------------------
// Elementwise transcendental functions

inline Var sqrt(Var a) {
    return detail::unary(
        "sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y, double g) { return g * 0.5 / y; });
}

inline Var exp(Var a) {
    return detail::unary(
        "exp", a, [](double x) { return std::exp(x); }, [](double, double y, double g) { return g * y; });
}

inline Var log(Var a) {
    return detail::unary(
        "log", a, [](double x) { return std::log(x); }, [](double x, double, double g) { return g / x; });
}

inline Var cosh(Var a) {
    a.tape->count_hyperbolic(a.value().size());
    return detail::unary(
        "cosh", a, [](double x) { return std::cosh(x); },
        [](double x, double, double g) { return g * std::sinh(x); });
}

inline Var sinh(Var a) {
    a.tape->count_hyperbolic(a.value().size());
    return detail::unary(
        "sinh", a, [](double x) { return std::sinh(x); },
        [](double x, double, double g) { return g * std::cosh(x); });
}

/// Inverse hyperbolic cosine. Adjoint 1/sqrt(x^2-1); callers clamp x away from 1.
inline Var arcosh(Var a) {
    a.tape->count_hyperbolic(a.value().size());
    return detail::unary(
        "arcosh", a, [](double x) { return std::acosh(x); },
        [](double x, double, double g) { return g / std::sqrt((x - 1.0) * (x + 1.0)); });
}

namespace detail {
// t / sinh(t) and its derivative with respect to cosh(t). Both have removable
// singularities at t = 0 and lose all precision there in closed form.
inline double arcosh_ratio_value(double t) {
    if (t < 1e-3) {
        const double t2 = t * t;
        return 1.0 - t2 / 6.0 + 7.0 * t2 * t2 / 360.0;
    }
    return t / std::sinh(t);
}
inline double arcosh_ratio_slope(double t) {
    if (t < 1e-2) {
        const double t2 = t * t;
        return (-1.0 / 3.0 - t2 / 30.0 - t2 * t2 / 840.0) / (1.0 + t2 / 2.0 + 13.0 * t2 * t2 / 120.0);
    }
    const double s = std::sinh(t);
    return (s - t * std::cosh(t)) / (s * s * s);
}
}  // namespace detail

/// arcosh(a) / sqrt(a^2 - 1) for a >= 1, equal to 1 at a = 1. Inputs below 1 are
/// treated as 1 with zero gradient.
inline Var arcosh_ratio(Var a) {
    a.tape->count_hyperbolic(a.value().size());
    return detail::unary(
        "arcosh_ratio", a,
        [](double x) { return detail::arcosh_ratio_value(x > 1.0 ? std::acosh(x) : 0.0); },
        [](double x, double, double g) { return x > 1.0 ? g * detail::arcosh_ratio_slope(std::acosh(x)) : 0.0; });
}

inline Var softplus(Var a) {
    return detail::unary(
        "softplus", a, [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
        [](double x, double, double g) { return g / (1.0 + std::exp(-x)); });
}

inline Var relu(Var a) {
    return detail::unary(
        "relu", a, [](double x) { return x > 0 ? x : 0.0; },
        [](double x, double, double g) { return x > 0 ? g : 0.0; });
}

inline Var square(Var a) {
    return detail::unary(
        "square", a, [](double x) { return x * x; }, [](double x, double, double g) { return 2.0 * x * g; });
}

/// Clamp to [lo, hi]. Zero gradient strictly outside; the boundary takes the interior value.
inline Var clamp(Var a, double lo, double hi = std::numeric_limits<double>::infinity()) {
    return detail::unary(
        "clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double, double g) { return (x >= lo && x <= hi) ? g : 0.0; });
}

/// Elementwise select: mask > 0 takes `a`, otherwise `b`. All three share one shape.
inline Var select(const Tensor& mask, Var a, Var b) {
    Tape* t = detail::tape_of(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.shape() != B.shape() || mask.shape() != A.shape())
        throw ShapeError("select: shapes " + shape_str(mask.shape()) + ", " + shape_str(A.shape()) + ", " +
                         shape_str(B.shape()) + " differ");
    Tensor out(A.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask[i] > 0 ? A[i] : B[i];
    const std::size_t ida = a.id, idb = b.id;
    return t->record("select", {ida, idb}, std::move(out), [ida, idb, mask](Tape& tp, std::size_t self) {
        const double* g = tp.out_grad(self);
        double* ga = tp.grad_buffer(ida);
        double* gb = tp.grad_buffer(idb);
        for (std::size_t i = 0; i < mask.size(); ++i) {
            if (mask[i] > 0) {
                if (ga) ga[i] += g[i];
            } else if (gb) {
                gb[i] += g[i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Shape manipulation and reductions

namespace detail {
template <bool TransB>
Var matmul_impl(Var a, Var b) {
    Tape* t = tape_of(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    const std::size_t inner_b = TransB ? B.cols() : B.rows();
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != inner_b)
        throw ShapeError(std::string(TransB ? "matmul_nt" : "matmul") + ": incompatible shapes " +
                         shape_str(A.shape()) + " and " + shape_str(B.shape()));
    const std::size_t m = A.rows(), k = A.cols(), n = TransB ? B.rows() : B.cols();
    const std::size_t br = B.rows(), bc = B.cols();
    Tensor out(Shape{m, n});
    if constexpr (TransB)
        MMap(out.data(), m, n).noalias() = CMap(A.data(), m, k) * CMap(B.data(), br, bc).transpose();
    else
        MMap(out.data(), m, n).noalias() = CMap(A.data(), m, k) * CMap(B.data(), br, bc);
    const std::size_t ida = a.id, idb = b.id;
    return t->record(TransB ? "matmul_nt" : "matmul", {ida, idb}, std::move(out),
                     [ida, idb, m, k, n, br, bc](Tape& tp, std::size_t self) {
                         CMap G(tp.out_grad(self), m, n);
                         CMap Bm(tp.value(idb).data(), br, bc);
                         if (double* ga = tp.grad_buffer(ida)) {
                             if constexpr (TransB)
                                 MMap(ga, m, k).noalias() += G * Bm;
                             else
                                 MMap(ga, m, k).noalias() += G * Bm.transpose();
                         }
                         if (double* gb = tp.grad_buffer(idb)) {
                             CMap Am(tp.value(ida).data(), m, k);
                             if constexpr (TransB)
                                 MMap(gb, br, bc).noalias() += G.transpose() * Am;
                             else
                                 MMap(gb, br, bc).noalias() += Am.transpose() * G;
                         }
                     });
}
}  // namespace detail

inline Var matmul(Var a, Var b) { return detail::matmul_impl<false>(a, b); }

/// a * b^T without materialising the transpose.
inline Var matmul_nt(Var a, Var b) { return detail::matmul_impl<true>(a, b); }

/// Pairwise Minkowski products x_i^T J y_j with J = diag(-1, 1, ..., 1), (N, M).
inline Var minkowski_gram(Var a, Var b) {
    Tape* t = detail::tape_of(a, b);
    const Tensor& X = a.value();
    const Tensor& Y = b.value();
    if (X.rank() != 2 || Y.rank() != 2 || X.cols() != Y.cols() || X.cols() < 2)
        throw ShapeError("minkowski_gram: incompatible shapes " + shape_str(X.shape()) + " and " +
                         shape_str(Y.shape()));
    const std::size_t n = X.rows(), m = Y.rows(), c = X.cols();
    Tensor out(Shape{n, m});
    detail::MMap O(out.data(), n, m);
    detail::CMap Xm(X.data(), n, c), Ym(Y.data(), m, c);
    O.noalias() = Xm.rightCols(c - 1) * Ym.rightCols(c - 1).transpose();
    O.noalias() -= Xm.col(0) * Ym.col(0).transpose();
    const std::size_t ida = a.id, idb = b.id;
    return t->record("minkowski_gram", {ida, idb}, std::move(out), [ida, idb, n, m, c](Tape& tp, std::size_t self) {
        detail::CMap G(tp.out_grad(self), n, m);
        detail::CMap Xm(tp.value(ida).data(), n, c), Ym(tp.value(idb).data(), m, c);
        if (double* ga = tp.grad_buffer(ida)) {
            detail::MMap gx(ga, n, c);
            gx.rightCols(c - 1).noalias() += G * Ym.rightCols(c - 1);
            gx.col(0).noalias() -= G * Ym.col(0);
        }
        if (double* gb = tp.grad_buffer(idb)) {
            detail::MMap gy(gb, m, c);
            gy.rightCols(c - 1).noalias() += G.transpose() * Xm.rightCols(c - 1);
            gy.col(0).noalias() -= G.transpose() * Xm.col(0);
        }
    });
}

/// Row-wise Minkowski products, (N,1). A single-row operand is broadcast over the rows of the other.
inline Var minkowski_rows(Var a, Var b) {
    Tape* t = detail::tape_of(a, b);
    const Tensor& X = a.value();
    const Tensor& Y = b.value();
    if (X.rank() != 2 || Y.rank() != 2 || X.cols() != Y.cols() || X.cols() < 2 ||
        (X.rows() != Y.rows() && X.rows() != 1 && Y.rows() != 1))
        throw ShapeError("minkowski_rows: incompatible shapes " + shape_str(X.shape()) + " and " +
                         shape_str(Y.shape()));
    const std::size_t n = std::max(X.rows(), Y.rows()), c = X.cols();
    const bool xb = X.rows() == 1 && n > 1, yb = Y.rows() == 1 && n > 1;
    Tensor out(Shape{n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        const double* x = X.data() + (xb ? 0 : i) * c;
        const double* y = Y.data() + (yb ? 0 : i) * c;
        double s = -x[0] * y[0];
        for (std::size_t j = 1; j < c; ++j) s += x[j] * y[j];
        out[i] = s;
    }
    const std::size_t ida = a.id, idb = b.id;
    return t->record("minkowski_rows", {ida, idb}, std::move(out), [ida, idb, n, c, xb, yb](Tape& tp, std::size_t self) {
        const double* g = tp.out_grad(self);
        const Tensor& X = tp.value(ida);
        const Tensor& Y = tp.value(idb);
        double* ga = tp.grad_buffer(ida);
        double* gb = tp.grad_buffer(idb);
        for (std::size_t i = 0; i < n; ++i) {
            const double* x = X.data() + (xb ? 0 : i) * c;
            const double* y = Y.data() + (yb ? 0 : i) * c;
            if (ga) {
                double* gx = ga + (xb ? 0 : i) * c;
                gx[0] -= g[i] * y[0];
                for (std::size_t j = 1; j < c; ++j) gx[j] += g[i] * y[j];
            }
            if (gb) {
                double* gy = gb + (yb ? 0 : i) * c;
                gy[0] -= g[i] * x[0];
                for (std::size_t j = 1; j < c; ++j) gy[j] += g[i] * x[j];
            }
        }
    });
}

inline Var transpose(Var a) {
    const Tensor& A = a.value();
    detail::require_rank2("transpose", A);
    const std::size_t r = A.rows(), c = A.cols();
    Tensor out(Shape{c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = A[i * c + j];
    const std::size_t ida = a.id;
    return a.tape->record("transpose", {ida}, std::move(out), [ida, r, c](Tape& tp, std::size_t self) {
        const double* g = tp.out_grad(self);
        double* ga = tp.grad_buffer(ida);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    });
}

/// Sum of all entries, as a scalar.
inline Var sum(Var a) {
    const Tensor& A = a.value();
    double s = 0.0;
    for (double v : A.values()) s += v;
    const std::size_t ida = a.id;
    return a.tape->record("sum", {ida}, Tensor::scalar(s), [ida](Tape& tp, std::size_t self) {
        const double g = tp.out_grad(self)[0];
        double* ga = tp.grad_buffer(ida);
        for (std::size_t i = 0; i < tp.value(ida).size(); ++i) ga[i] += g;
    });
}

/// Sum along `axis` of a matrix, keeping the reduced dimension (axis 0 -> 1xc, axis 1 -> rx1).
inline Var sum(Var a, int axis) {
    const Tensor& A = a.value();
    detail::require_rank2("sum", A);
    const std::size_t r = A.rows(), c = A.cols();
    Tensor out(axis == 0 ? Shape{1, c} : Shape{r, 1});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[axis == 0 ? j : i] += A[i * c + j];
    const std::size_t ida = a.id;
    return a.tape->record("sum_axis", {ida}, std::move(out), [ida, r, c, axis](Tape& tp, std::size_t self) {
        const double* g = tp.out_grad(self);
        double* ga = tp.grad_buffer(ida);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[axis == 0 ? j : i];
    });
}

inline Var mean(Var a) { return sum(a) * (1.0 / static_cast<double>(a.value().size())); }

inline Var mean(Var a, int axis) {
    const double n = static_cast<double>(axis == 0 ? a.rows() : a.cols());
    return sum(a, axis) * (1.0 / n);
}

inline Var broadcast_to(Var a, const Shape& shape) {
    const Tensor& A = a.value();
    const Shape joined = detail::broadcast_shape("broadcast", A.shape(), shape);
    if (joined != shape)
        throw ShapeError("broadcast: cannot broadcast " + shape_str(A.shape()) + " to " + shape_str(shape));
    const detail::Dim2 o = detail::dim2(shape), ia = detail::dim2(A.shape());
    Tensor out(shape);
    for (std::size_t i = 0; i < o.r; ++i)
        for (std::size_t j = 0; j < o.c; ++j)
            out[i * o.c + j] = A[(ia.r == 1 ? 0 : i) * ia.c + (ia.c == 1 ? 0 : j)];
    const std::size_t ida = a.id;
    return a.tape->record("broadcast", {ida}, std::move(out), [ida, o, ia](Tape& tp, std::size_t self) {
        detail::reduce_into(tp.grad_buffer(ida), ia, tp.out_grad(self), o);
    });
}

/// Columns [begin, end) (axis 1) or rows [begin, end) (axis 0) of a matrix.
inline Var slice(Var a, int axis, std::size_t begin, std::size_t end) {
    const Tensor& A = a.value();
    detail::require_rank2("slice", A);
    const std::size_t r = A.rows(), c = A.cols();
    const std::size_t lim = axis == 0 ? r : c;
    if (begin > end || end > lim)
        throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") out of shape " +
                         shape_str(A.shape()));
    const std::size_t w = end - begin;
    Tensor out(axis == 0 ? Shape{w, c} : Shape{r, w});
    if (axis == 0) {
        std::copy(A.data() + begin * c, A.data() + end * c, out.data());
    } else {
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * w + j] = A[i * c + begin + j];
    }
    const std::size_t ida = a.id;
    return a.tape->record("slice", {ida}, std::move(out), [ida, r, c, w, begin, axis](Tape& tp, std::size_t self) {
        const double* g = tp.out_grad(self);
        double* ga = tp.grad_buffer(ida);
        if (axis == 0) {
            for (std::size_t k = 0; k < w * c; ++k) ga[begin * c + k] += g[k];
        } else {
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < w; ++j) ga[i * c + begin + j] += g[i * w + j];
        }
    });
}

/// Concatenate matrices along `axis`.
inline Var concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no operands");
    Tape* t = parts.front().tape;
    const std::size_t r0 = parts.front().rows(), c0 = parts.front().cols();
    std::size_t total = 0;
    std::vector<std::size_t> ids, widths;
    for (Var p : parts) {
        detail::require_rank2("concat", p.value());
        if (p.tape != t) throw Error("concat: operands on different tapes");
        if ((axis == 0 ? p.cols() != c0 : p.rows() != r0))
            throw ShapeError("concat: mismatched shapes " + shape_str(parts.front().shape()) + " and " +
                             shape_str(p.shape()));
        const std::size_t w = axis == 0 ? p.rows() : p.cols();
        widths.push_back(w);
        ids.push_back(p.id);
        total += w;
    }
    const std::size_t R = axis == 0 ? total : r0, C = axis == 0 ? c0 : total;
    Tensor out(Shape{R, C});
    std::size_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const Tensor& P = parts[p].value();
        const std::size_t w = widths[p];
        if (axis == 0) {
            std::copy(P.data(), P.data() + P.size(), out.data() + off * C);
        } else {
            for (std::size_t i = 0; i < R; ++i)
                for (std::size_t j = 0; j < w; ++j) out[i * C + off + j] = P[i * w + j];
        }
        off += w;
    }
    return t->record("concat", ids, std::move(out), [ids, widths, R, C, axis](Tape& tp, std::size_t self) {
        const double* g = tp.out_grad(self);
        std::size_t off = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
            const std::size_t w = widths[p];
            if (double* gp = tp.grad_buffer(ids[p])) {
                if (axis == 0) {
                    for (std::size_t k = 0; k < w * C; ++k) gp[k] += g[off * C + k];
                } else {
                    for (std::size_t i = 0; i < R; ++i)
                        for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * C + off + j];
                }
            }
            off += w;
        }
    });
}

// ---------------------------------------------------------------------------
// Index-based primitives for sparse neighbourhood computations

/// Pick entries of `a` (flat row-major indices) into an (E,1) column.
inline Var gather(Var a, std::vector<std::size_t> index) {
    const Tensor& A = a.value();
    Tensor out(Shape{index.size(), 1});
    for (std::size_t e = 0; e < index.size(); ++e) {
        if (index[e] >= A.size()) throw ShapeError("gather: index out of range for shape " + shape_str(A.shape()));
        out[e] = A[index[e]];
    }
    const std::size_t ida = a.id;
    return a.tape->record("gather", {ida}, std::move(out), [ida, index = std::move(index)](Tape& tp, std::size_t self) {
        const double* g = tp.out_grad(self);
        double* ga = tp.grad_buffer(ida);
        for (std::size_t e = 0; e < index.size(); ++e) ga[index[e]] += g[e];
    });
}

/// Per-segment sum of an (E,1) column into an (n_segments,1) column.
inline Var segment_sum(Var a, std::vector<std::size_t> segment, std::size_t n_segments) {
    const Tensor& A = a.value();
    if (A.size() != segment.size()) throw ShapeError("segment_sum: " + shape_str(A.shape()) + " vs segment ids");
    Tensor out(Shape{n_segments, 1});
    for (std::size_t e = 0; e < segment.size(); ++e) out[segment[e]] += A[e];
    const std::size_t ida = a.id;
    return a.tape->record("segment_sum", {ida}, std::move(out),
                          [ida, segment = std::move(segment)](Tape& tp, std::size_t self) {
                              const double* g = tp.out_grad(self);
                              double* ga = tp.grad_buffer(ida);
                              for (std::size_t e = 0; e < segment.size(); ++e) ga[e] += g[segment[e]];
                          });
}

/// Softmax restricted to each index subset (segment). Entries of one segment sum to 1;
/// a segment with no members contributes nothing.
inline Var segment_softmax(Var a, std::vector<std::size_t> segment, std::size_t n_segments) {
    const Tensor& A = a.value();
    if (A.size() != segment.size()) throw ShapeError("segment_softmax: " + shape_str(A.shape()) + " vs segment ids");
    std::vector<double> mx(n_segments, -std::numeric_limits<double>::infinity()), den(n_segments, 0.0);
    for (std::size_t e = 0; e < segment.size(); ++e) mx[segment[e]] = std::max(mx[segment[e]], A[e]);
    Tensor out(A.shape());
    for (std::size_t e = 0; e < segment.size(); ++e) {
        out[e] = std::exp(A[e] - mx[segment[e]]);
        den[segment[e]] += out[e];
    }
    for (std::size_t e = 0; e < segment.size(); ++e) out[e] /= den[segment[e]];
    const std::size_t ida = a.id;
    return a.tape->record(
        "segment_softmax", {ida}, std::move(out),
        [ida, n_segments, segment = std::move(segment)](Tape& tp, std::size_t self) {
            const Tensor& Y = tp.value(self);
            const double* g = tp.out_grad(self);
            double* ga = tp.grad_buffer(ida);
            std::vector<double> dot(n_segments, 0.0);
            for (std::size_t e = 0; e < segment.size(); ++e) dot[segment[e]] += Y[e] * g[e];
            for (std::size_t e = 0; e < segment.size(); ++e) ga[e] += Y[e] * (g[e] - dot[segment[e]]);
        });
}

/// Sparse coefficient-weighted row accumulation: out[dst[e]] += coef[e] * rows[src[e]].
inline Var scatter_rows(Var coef, Var rows, std::vector<std::size_t> dst, std::vector<std::size_t> src,
                        std::size_t n_out) {
    Tape* t = detail::tape_of(coef, rows);
    const Tensor& W = coef.value();
    const Tensor& V = rows.value();
    detail::require_rank2("scatter_rows", V);
    if (W.size() != dst.size() || dst.size() != src.size())
        throw ShapeError("scatter_rows: coefficient shape " + shape_str(W.shape()) + " does not match edge count");
    const std::size_t C = V.cols();
    Tensor out(Shape{n_out, C});
    for (std::size_t e = 0; e < dst.size(); ++e) {
        if (dst[e] >= n_out || src[e] >= V.rows()) throw ShapeError("scatter_rows: index out of range");
        const double w = W[e];
        const double* v = V.data() + src[e] * C;
        double* o = out.data() + dst[e] * C;
        for (std::size_t j = 0; j < C; ++j) o[j] += w * v[j];
    }
    const std::size_t idw = coef.id, idv = rows.id;
    return t->record("scatter_rows", {idw, idv}, std::move(out),
                     [idw, idv, C, dst = std::move(dst), src = std::move(src)](Tape& tp, std::size_t self) {
                         const double* g = tp.out_grad(self);
                         const Tensor& W = tp.value(idw);
                         const Tensor& V = tp.value(idv);
                         double* gw = tp.grad_buffer(idw);
                         double* gv = tp.grad_buffer(idv);
                         for (std::size_t e = 0; e < dst.size(); ++e) {
                             const double* go = g + dst[e] * C;
                             if (gw) {
                                 const double* v = V.data() + src[e] * C;
                                 double s = 0.0;
                                 for (std::size_t j = 0; j < C; ++j) s += go[j] * v[j];
                                 gw[e] += s;
                             }
                             if (gv) {
                                 double* o = gv + src[e] * C;
                                 for (std::size_t j = 0; j < C; ++j) o[j] += W[e] * go[j];
                             }
                         }
                     });
}

/// Row-wise log-sum-exp of a matrix, (r,1). The max shift is a constant.
inline Var logsumexp_rows(Var a) {
    const Tensor& A = a.value();
    detail::require_rank2("logsumexp", A);
    Tensor m(Shape{A.rows(), 1});
    for (std::size_t i = 0; i < A.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < A.cols(); ++j) mx = std::max(mx, A(i, j));
        m[i] = mx;
    }
    Var shift = a.tape->constant(std::move(m));
    return log(sum(exp(a - shift), 1)) + shift;
}

// ---------------------------------------------------------------------------
// Finite-difference verification

struct GradCheckBlock {
    std::string name;
    double rel_error = 0.0;      // |analytic - numeric| / max(|analytic|, |numeric|) over the whole block
    double max_rel_error = 0.0;  // worst single coordinate, floor 1e-8 in the denominator
    double max_abs_error = 0.0;
    double noise_floor = 0.0;  // absolute allowance for rounding in the differences
    bool passed = true;
};

struct GradCheckReport {
    std::vector<GradCheckBlock> blocks;
    double max_rel_error = 0.0;  // worst block rel_error
    bool passed = true;
};

using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Compare tape gradients of `f` against central differences (f(p+h)-f(p-h))/2h.
/// A block passes when the Euclidean norms satisfy
///   |a-b| <= tol * max(|a|,|b|) + noise * sqrt(block size),
/// where noise = 10 eps max(|f|,1) / h is the roundoff level of one central difference.
/// Without the floor, blocks whose true gradient is ~0 fail on rounding alone.
inline GradCheckReport check_gradients(const ScalarFn& f, const std::vector<Tensor>& params, double h, double tol,
                                       const std::vector<std::string>& names = {}) {
    if (!(h > 0)) throw Error("check_gradients: step must be positive");
    std::vector<Tensor> analytic;
    double f0 = 0.0;
    {
        Tape tape;
        std::vector<Var> vars;
        for (const auto& p : params) vars.push_back(tape.leaf(p));
        Var loss = f(tape, vars);
        f0 = loss.item();
        tape.backward(loss);
        for (Var v : vars) analytic.push_back(tape.grad(v));
    }
    auto eval = [&](const std::vector<Tensor>& ps) {
        Tape tape;
        std::vector<Var> vars;
        for (const auto& p : ps) vars.push_back(tape.constant(p));
        return f(tape, vars).item();
    };
    const double noise = 10.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(f0), 1.0) / h;
    GradCheckReport report;
    std::vector<Tensor> work = params;
    for (std::size_t b = 0; b < params.size(); ++b) {
        GradCheckBlock blk;
        blk.name = b < names.size() ? names[b] : "param" + std::to_string(b);
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        for (std::size_t i = 0; i < params[b].size(); ++i) {
            const double orig = work[b][i];
            work[b][i] = orig + h;
            const double fp = eval(work);
            work[b][i] = orig - h;
            const double fm = eval(work);
            work[b][i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[b][i];
            const double abs_err = std::abs(a - numeric);
            const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), 1e-8});
            blk.max_rel_error = std::max(blk.max_rel_error, rel);
            blk.max_abs_error = std::max(blk.max_abs_error, abs_err);
            diff2 += abs_err * abs_err;
            a2 += a * a;
            n2 += numeric * numeric;
        }
        const double scale = std::sqrt(std::max(a2, n2));
        blk.rel_error = scale > 0 ? std::sqrt(diff2) / scale : 0.0;
        blk.noise_floor = noise * std::sqrt(static_cast<double>(params[b].size()));
        blk.passed = std::sqrt(diff2) <= tol * scale + blk.noise_floor;
        report.max_rel_error = std::max(report.max_rel_error, blk.rel_error);
        report.passed = report.passed && blk.passed;
        report.blocks.push_back(std::move(blk));
    }
    return report;
}

}  // namespace bhgcn::ad
