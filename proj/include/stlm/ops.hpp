#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "stlm/rng.hpp"
#include "stlm/tape.hpp"
#include "stlm/tensor.hpp"

namespace stlm {

// Differentiable tensor ops. Every op validates shapes, computes the
// forward value with Eigen, fails on non-finite outputs, and records a
// backward rule on the tape when gradients are enabled and any input
// requires them. Broadcasting is deliberately limited to bias-add over
// the last dim; everything else is rank- and shape-matched.

namespace detail {

template <typename S>
inline bool track(const Tape<S>& tape, std::initializer_list<const TensorPtr<S>*> ins) {
    if (!tape.grad_enabled()) return false;
    for (const auto* p : ins)
        if ((*p)->requires_grad) return true;
    return false;
}

template <typename S>
inline ConstMatMap<S> grad2d(const Tensor<S>& t) {
    return ConstMatMap<S>(t.grad.data(), t.rows2d(), t.last_dim());
}

template <typename S>
inline ConstVecMap<S> grad1d(const Tensor<S>& t) {
    return ConstVecMap<S>(t.grad.data(), t.numel());
}

} // namespace detail

template <typename S>
TensorPtr<S> add(Tape<S>& tape, const TensorPtr<S>& a, const TensorPtr<S>& b) {
    if (a->shape != b->shape)
        throw ShapeError("add: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    auto out = make_tensor<S>(a->shape);
    out->vec() = a->vec() + b->vec();
    check_finite(*out, "add");
    if (detail::track(tape, {&a, &b})) {
        out->requires_grad = true;
        tape.record(out, [a, b, out] {
            if (a->requires_grad) a->grad_vec() += detail::grad1d(*out);
            if (b->requires_grad) b->grad_vec() += detail::grad1d(*out);
        });
    }
    return out;
}

template <typename S>
TensorPtr<S> sub(Tape<S>& tape, const TensorPtr<S>& a, const TensorPtr<S>& b) {
    if (a->shape != b->shape)
        throw ShapeError("sub: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    auto out = make_tensor<S>(a->shape);
    out->vec() = a->vec() - b->vec();
    check_finite(*out, "sub");
    if (detail::track(tape, {&a, &b})) {
        out->requires_grad = true;
        tape.record(out, [a, b, out] {
            if (a->requires_grad) a->grad_vec() += detail::grad1d(*out);
            if (b->requires_grad) b->grad_vec() -= detail::grad1d(*out);
        });
    }
    return out;
}

// Hadamard product.
template <typename S>
TensorPtr<S> mul(Tape<S>& tape, const TensorPtr<S>& a, const TensorPtr<S>& b) {
    if (a->shape != b->shape)
        throw ShapeError("mul: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    auto out = make_tensor<S>(a->shape);
    out->vec() = a->vec().cwiseProduct(b->vec());
    check_finite(*out, "mul");
    if (detail::track(tape, {&a, &b})) {
        out->requires_grad = true;
        tape.record(out, [a, b, out] {
            if (a->requires_grad) a->grad_vec() += detail::grad1d(*out).cwiseProduct(b->vec());
            if (b->requires_grad) b->grad_vec() += detail::grad1d(*out).cwiseProduct(a->vec());
        });
    }
    return out;
}

template <typename S>
TensorPtr<S> scale(Tape<S>& tape, const TensorPtr<S>& a, double factor) {
    auto out = make_tensor<S>(a->shape);
    out->vec() = a->vec() * static_cast<S>(factor);
    check_finite(*out, "scale");
    if (detail::track(tape, {&a})) {
        out->requires_grad = true;
        tape.record(out, [a, out, factor] {
            if (a->requires_grad) a->grad_vec() += detail::grad1d(*out) * static_cast<S>(factor);
        });
    }
    return out;
}

// x: [.. x n], bias: [n]; adds bias to every last-dim slice.
template <typename S>
TensorPtr<S> add_bias(Tape<S>& tape, const TensorPtr<S>& x, const TensorPtr<S>& bias) {
    if (bias->rank() != 1 || bias->dim(0) != x->last_dim())
        throw ShapeError("add_bias: bias " + shape_str(bias->shape) + " does not match last dim of " +
                         shape_str(x->shape));
    auto out = make_tensor<S>(x->shape);
    out->mat() = x->mat().rowwise() + bias->vec().transpose();
    check_finite(*out, "add_bias");
    if (detail::track(tape, {&x, &bias})) {
        out->requires_grad = true;
        tape.record(out, [x, bias, out] {
            if (x->requires_grad) x->grad_vec() += detail::grad1d(*out);
            if (bias->requires_grad)
                bias->grad_vec() += detail::grad2d(*out).colwise().sum().transpose();
        });
    }
    return out;
}

template <typename S>
TensorPtr<S> matmul(Tape<S>& tape, const TensorPtr<S>& a, const TensorPtr<S>& b) {
    if (a->rank() != 2 || b->rank() != 2 || a->dim(1) != b->dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a->shape) + " and " + shape_str(b->shape));
    auto out = make_tensor<S>(Shape{a->dim(0), b->dim(1)});
    out->mat().noalias() = a->mat() * b->mat();
    check_finite(*out, "matmul");
    if (detail::track(tape, {&a, &b})) {
        out->requires_grad = true;
        tape.record(out, [a, b, out] {
            auto g = detail::grad2d(*out);
            if (a->requires_grad) a->grad_mat().noalias() += g * b->mat().transpose();
            if (b->requires_grad) b->grad_mat().noalias() += a->mat().transpose() * g;
        });
    }
    return out;
}

// a [m x k] times b^T where b is [n x k]; avoids materializing the
// transpose of large matrices (tied LM head).
template <typename S>
TensorPtr<S> matmul_nt(Tape<S>& tape, const TensorPtr<S>& a, const TensorPtr<S>& b) {
    if (a->rank() != 2 || b->rank() != 2 || a->dim(1) != b->dim(1))
        throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a->shape) + " and " + shape_str(b->shape));
    auto out = make_tensor<S>(Shape{a->dim(0), b->dim(0)});
    out->mat().noalias() = a->mat() * b->mat().transpose();
    check_finite(*out, "matmul_nt");
    if (detail::track(tape, {&a, &b})) {
        out->requires_grad = true;
        tape.record(out, [a, b, out] {
            auto g = detail::grad2d(*out);
            if (a->requires_grad) a->grad_mat().noalias() += g * b->mat();
            if (b->requires_grad) b->grad_mat().noalias() += g.transpose() * a->mat();
        });
    }
    return out;
}

// Batched matmul: a [N x m x k], b [N x k x n] -> [N x m x n].
template <typename S>
TensorPtr<S> bmm(Tape<S>& tape, const TensorPtr<S>& a, const TensorPtr<S>& b) {
    if (a->rank() != 3 || b->rank() != 3 || a->dim(0) != b->dim(0) || a->dim(2) != b->dim(1))
        throw ShapeError("bmm: incompatible shapes " + shape_str(a->shape) + " and " + shape_str(b->shape));
    const Index n_batch = a->dim(0), m = a->dim(1), k = a->dim(2), n = b->dim(2);
    auto out = make_tensor<S>(Shape{n_batch, m, n});
    for (Index i = 0; i < n_batch; ++i) {
        ConstMatMap<S> ai(a->values.data() + i * m * k, m, k);
        ConstMatMap<S> bi(b->values.data() + i * k * n, k, n);
        MatMap<S>(out->values.data() + i * m * n, m, n).noalias() = ai * bi;
    }
    check_finite(*out, "bmm");
    if (detail::track(tape, {&a, &b})) {
        out->requires_grad = true;
        tape.record(out, [a, b, out, n_batch, m, k, n] {
            if (a->requires_grad) a->ensure_grad();
            if (b->requires_grad) b->ensure_grad();
            for (Index i = 0; i < n_batch; ++i) {
                ConstMatMap<S> gi(out->grad.data() + i * m * n, m, n);
                ConstMatMap<S> ai(a->values.data() + i * m * k, m, k);
                ConstMatMap<S> bi(b->values.data() + i * k * n, k, n);
                if (a->requires_grad)
                    MatMap<S>(a->grad.data() + i * m * k, m, k).noalias() += gi * bi.transpose();
                if (b->requires_grad)
                    MatMap<S>(b->grad.data() + i * k * n, k, n).noalias() += ai.transpose() * gi;
            }
        });
    }
    return out;
}

// Batched a times b^T: a [N x m x k], b [N x n x k] -> [N x m x n].
template <typename S>
TensorPtr<S> bmm_nt(Tape<S>& tape, const TensorPtr<S>& a, const TensorPtr<S>& b) {
    if (a->rank() != 3 || b->rank() != 3 || a->dim(0) != b->dim(0) || a->dim(2) != b->dim(2))
        throw ShapeError("bmm_nt: incompatible shapes " + shape_str(a->shape) + " and " + shape_str(b->shape));
    const Index n_batch = a->dim(0), m = a->dim(1), k = a->dim(2), n = b->dim(1);
    auto out = make_tensor<S>(Shape{n_batch, m, n});
    for (Index i = 0; i < n_batch; ++i) {
        ConstMatMap<S> ai(a->values.data() + i * m * k, m, k);
        ConstMatMap<S> bi(b->values.data() + i * n * k, n, k);
        MatMap<S>(out->values.data() + i * m * n, m, n).noalias() = ai * bi.transpose();
    }
    check_finite(*out, "bmm_nt");
    if (detail::track(tape, {&a, &b})) {
        out->requires_grad = true;
        tape.record(out, [a, b, out, n_batch, m, k, n] {
            if (a->requires_grad) a->ensure_grad();
            if (b->requires_grad) b->ensure_grad();
            for (Index i = 0; i < n_batch; ++i) {
                ConstMatMap<S> gi(out->grad.data() + i * m * n, m, n);
                ConstMatMap<S> ai(a->values.data() + i * m * k, m, k);
                ConstMatMap<S> bi(b->values.data() + i * n * k, n, k);
                if (a->requires_grad)
                    MatMap<S>(a->grad.data() + i * m * k, m, k).noalias() += gi * bi;
                if (b->requires_grad)
                    MatMap<S>(b->grad.data() + i * n * k, n, k).noalias() += gi.transpose() * ai;
            }
        });
    }
    return out;
}

template <typename S>
TensorPtr<S> reshape(Tape<S>& tape, const TensorPtr<S>& x, Shape shape) {
    if (shape_numel(shape) != x->numel())
        throw ShapeError("reshape: cannot view " + shape_str(x->shape) + " as " + shape_str(shape));
    auto out = make_tensor<S>(std::move(shape));
    out->values = x->values;
    if (detail::track(tape, {&x})) {
        out->requires_grad = true;
        tape.record(out, [x, out] {
            if (x->requires_grad) x->grad_vec() += detail::grad1d(*out);
        });
    }
    return out;
}

// Gathers rows of the 2D view of x. Serves embedding lookups and strided
// readouts of activations; backward scatter-adds.
template <typename S>
TensorPtr<S> rows(Tape<S>& tape, const TensorPtr<S>& x, const std::vector<Index>& idx) {
    const Index n_rows = x->rows2d(), cols = x->last_dim();
    for (Index i : idx)
        if (i < 0 || i >= n_rows)
            throw IndexError("rows: index " + std::to_string(i) + " out of range [0, " +
                             std::to_string(n_rows) + ")");
    auto out = make_tensor<S>(Shape{static_cast<Index>(idx.size()), cols});
    for (size_t i = 0; i < idx.size(); ++i)
        out->mat().row(static_cast<Index>(i)) = x->mat().row(idx[i]);
    check_finite(*out, "rows");
    if (detail::track(tape, {&x})) {
        out->requires_grad = true;
        tape.record(out, [x, out, idx] {
            if (!x->requires_grad) return;
            x->ensure_grad();
            auto g = detail::grad2d(*out);
            for (size_t i = 0; i < idx.size(); ++i)
                x->grad_mat().row(idx[i]) += g.row(static_cast<Index>(i));
        });
    }
    return out;
}

template <typename S>
TensorPtr<S> slice_cols(Tape<S>& tape, const TensorPtr<S>& x, Index c0, Index nc) {
    if (c0 < 0 || nc <= 0 || c0 + nc > x->last_dim())
        throw ShapeError("slice_cols: [" + std::to_string(c0) + ", " + std::to_string(c0 + nc) +
                         ") out of " + shape_str(x->shape));
    auto out = make_tensor<S>(Shape{x->rows2d(), nc});
    out->mat() = x->mat().middleCols(c0, nc);
    if (detail::track(tape, {&x})) {
        out->requires_grad = true;
        tape.record(out, [x, out, c0, nc] {
            if (!x->requires_grad) return;
            x->grad_mat().middleCols(c0, nc) += detail::grad2d(*out);
        });
    }
    return out;
}

template <typename S>
TensorPtr<S> concat_cols(Tape<S>& tape, const std::vector<TensorPtr<S>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const Index n_rows = parts[0]->rows2d();
    Index total = 0;
    for (const auto& p : parts) {
        if (p->rows2d() != n_rows)
            throw ShapeError("concat_cols: row count mismatch at " + shape_str(p->shape));
        total += p->last_dim();
    }
    auto out = make_tensor<S>(Shape{n_rows, total});
    Index c = 0;
    for (const auto& p : parts) {
        out->mat().middleCols(c, p->last_dim()) = p->mat();
        c += p->last_dim();
    }
    const bool needs = tape.grad_enabled() &&
                       std::any_of(parts.begin(), parts.end(), [](const auto& p) { return p->requires_grad; });
    if (needs) {
        out->requires_grad = true;
        tape.record(out, [parts, out] {
            auto g = detail::grad2d(*out);
            Index c = 0;
            for (const auto& p : parts) {
                if (p->requires_grad) p->grad_mat() += g.middleCols(c, p->last_dim());
                c += p->last_dim();
            }
        });
    }
    return out;
}

template <typename S>
TensorPtr<S> concat_rows(Tape<S>& tape, const std::vector<TensorPtr<S>>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const Index cols = parts[0]->last_dim();
    Index total = 0;
    for (const auto& p : parts) {
        if (p->last_dim() != cols)
            throw ShapeError("concat_rows: column count mismatch at " + shape_str(p->shape));
        total += p->rows2d();
    }
    auto out = make_tensor<S>(Shape{total, cols});
    Index r = 0;
    for (const auto& p : parts) {
        out->mat().middleRows(r, p->rows2d()) = p->mat();
        r += p->rows2d();
    }
    const bool needs = tape.grad_enabled() &&
                       std::any_of(parts.begin(), parts.end(), [](const auto& p) { return p->requires_grad; });
    if (needs) {
        out->requires_grad = true;
        tape.record(out, [parts, out] {
            auto g = detail::grad2d(*out);
            Index r = 0;
            for (const auto& p : parts) {
                if (p->requires_grad) p->grad_mat() += g.middleRows(r, p->rows2d());
                r += p->rows2d();
            }
        });
    }
    return out;
}

// Max-subtracted softmax over the last dim.
template <typename S>
TensorPtr<S> softmax_rows(Tape<S>& tape, const TensorPtr<S>& x) {
    if (x->rank() < 1) throw ShapeError("softmax_rows: empty last dim in " + shape_str(x->shape));
    const Index n_rows = x->rows2d();
    auto out = make_tensor<S>(x->shape);
    for (Index r = 0; r < n_rows; ++r) {
        auto row = x->mat().row(r);
        const S m = row.maxCoeff();
        out->mat().row(r) = (row.array() - m).exp();
        out->mat().row(r) /= out->mat().row(r).sum();
    }
    check_finite(*out, "softmax_rows");
    if (detail::track(tape, {&x})) {
        out->requires_grad = true;
        tape.record(out, [x, out, n_rows] {
            if (!x->requires_grad) return;
            x->ensure_grad();
            auto g = detail::grad2d(*out);
            for (Index r = 0; r < n_rows; ++r) {
                auto p = out->mat().row(r);
                const S dot = g.row(r).cwiseProduct(p).sum();
                x->grad_mat().row(r) += p.cwiseProduct(g.row(r)) - dot * p;
            }
        });
    }
    return out;
}

// Mean of -log softmax(logits)[t, target_t] over rows whose target is not
// ignore_index. Natural log; returns a scalar tensor.
template <typename S>
TensorPtr<S> cross_entropy(Tape<S>& tape, const TensorPtr<S>& logits, const std::vector<int>& targets,
                           int ignore_index = -1) {
    if (logits->rank() != 2)
        throw ShapeError("cross_entropy: logits must be rank 2, got " + shape_str(logits->shape));
    const Index n_rows = logits->dim(0), n_classes = logits->dim(1);
    if (static_cast<Index>(targets.size()) != n_rows)
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(n_rows) + " rows");
    double loss = 0.0;
    Index counted = 0;
    for (Index r = 0; r < n_rows; ++r) {
        const int t = targets[static_cast<size_t>(r)];
        if (t == ignore_index) continue;
        if (t < 0 || t >= n_classes)
            throw IndexError("cross_entropy: target " + std::to_string(t) + " out of range [0, " +
                             std::to_string(n_classes) + ")");
        auto row = logits->mat().row(r);
        const S m = row.maxCoeff();
        const double lse = static_cast<double>(m) +
                           std::log(static_cast<double>((row.array() - m).exp().sum()));
        loss += lse - static_cast<double>(row(t));
        ++counted;
    }
    if (counted == 0) throw DataError("cross_entropy: every target equals the ignore index");
    auto out = make_tensor<S>(Shape{1});
    out->values[0] = static_cast<S>(loss / static_cast<double>(counted));
    check_finite(*out, "cross_entropy");
    if (detail::track(tape, {&logits})) {
        out->requires_grad = true;
        tape.record(out, [logits, out, targets, ignore_index, n_rows, counted] {
            if (!logits->requires_grad) return;
            logits->ensure_grad();
            const S gscale = out->grad[0] / static_cast<S>(counted);
            for (Index r = 0; r < n_rows; ++r) {
                const int t = targets[static_cast<size_t>(r)];
                if (t == ignore_index) continue;
                auto row = logits->mat().row(r);
                const S m = row.maxCoeff();
                Eigen::Matrix<S, 1, Eigen::Dynamic> p = (row.array() - m).exp();
                p /= p.sum();
                logits->grad_mat().row(r) += gscale * p;
                logits->grad_mat()(r, t) -= gscale;
            }
        });
    }
    return out;
}

// RMS normalization over the last dim with a learned gain, no bias.
template <typename S>
TensorPtr<S> rmsnorm(Tape<S>& tape, const TensorPtr<S>& x, const TensorPtr<S>& gain, double eps = 1e-5) {
    const Index n = x->last_dim();
    if (gain->rank() != 1 || gain->dim(0) != n)
        throw ShapeError("rmsnorm: gain " + shape_str(gain->shape) + " does not match last dim of " +
                         shape_str(x->shape));
    const Index n_rows = x->rows2d();
    auto out = make_tensor<S>(x->shape);
    for (Index r = 0; r < n_rows; ++r) {
        auto row = x->mat().row(r);
        const S inv = S(1) / std::sqrt(row.squaredNorm() / static_cast<S>(n) + static_cast<S>(eps));
        out->mat().row(r) = (row * inv).cwiseProduct(gain->vec().transpose());
    }
    check_finite(*out, "rmsnorm");
    if (detail::track(tape, {&x, &gain})) {
        out->requires_grad = true;
        tape.record(out, [x, gain, out, eps, n, n_rows] {
            auto g = detail::grad2d(*out);
            for (Index r = 0; r < n_rows; ++r) {
                auto row = x->mat().row(r);
                const S inv = S(1) / std::sqrt(row.squaredNorm() / static_cast<S>(n) + static_cast<S>(eps));
                if (gain->requires_grad)
                    gain->grad_vec() += (g.row(r).cwiseProduct(row) * inv).transpose();
                if (x->requires_grad) {
                    x->ensure_grad();
                    Eigen::Matrix<S, 1, Eigen::Dynamic> gg = g.row(r).cwiseProduct(gain->vec().transpose());
                    const S dot = gg.cwiseProduct(row).sum();
                    x->grad_mat().row(r) += inv * gg - (inv * inv * inv / static_cast<S>(n)) * dot * row;
                }
            }
        });
    }
    return out;
}

// Swish: x * sigmoid(x).
template <typename S>
TensorPtr<S> silu(Tape<S>& tape, const TensorPtr<S>& x) {
    auto out = make_tensor<S>(x->shape);
    out->vec() = x->vec().unaryExpr([](S v) {
        const S s = S(1) / (S(1) + std::exp(-v));
        return v * s;
    });
    check_finite(*out, "silu");
    if (detail::track(tape, {&x})) {
        out->requires_grad = true;
        tape.record(out, [x, out] {
            if (!x->requires_grad) return;
            x->grad_vec() += detail::grad1d(*out).cwiseProduct(x->vec().unaryExpr([](S v) {
                const S s = S(1) / (S(1) + std::exp(-v));
                return s * (S(1) + v * (S(1) - s));
            }));
        });
    }
    return out;
}

// Exact GeLU via erf.
template <typename S>
TensorPtr<S> gelu(Tape<S>& tape, const TensorPtr<S>& x) {
    constexpr double inv_sqrt2 = 0.7071067811865475;
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    auto out = make_tensor<S>(x->shape);
    out->vec() = x->vec().unaryExpr([](S v) {
        return static_cast<S>(0.5 * static_cast<double>(v) *
                              (1.0 + std::erf(static_cast<double>(v) * inv_sqrt2)));
    });
    check_finite(*out, "gelu");
    if (detail::track(tape, {&x})) {
        out->requires_grad = true;
        tape.record(out, [x, out] {
            if (!x->requires_grad) return;
            x->grad_vec() += detail::grad1d(*out).cwiseProduct(x->vec().unaryExpr([](S v) {
                const double d = static_cast<double>(v);
                const double cdf = 0.5 * (1.0 + std::erf(d * inv_sqrt2));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * d * d);
                return static_cast<S>(cdf + d * pdf);
            }));
        });
    }
    return out;
}

// Inverted dropout. Identity (and consumes no randomness) when not
// training or rate == 0, so dropout-free forwards are bitwise repeatable.
template <typename S>
TensorPtr<S> dropout(Tape<S>& tape, const TensorPtr<S>& x, double rate, Rng& rng, bool training) {
    if (rate < 0.0 || rate >= 1.0)
        throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return x;
    auto mask = std::make_shared<std::vector<S>>(x->values.size());
    const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
    for (auto& m : *mask) m = rng.uniform() < rate ? S(0) : keep_scale;
    auto out = make_tensor<S>(x->shape);
    out->vec() = x->vec().cwiseProduct(ConstVecMap<S>(mask->data(), x->numel()));
    check_finite(*out, "dropout");
    if (detail::track(tape, {&x})) {
        out->requires_grad = true;
        tape.record(out, [x, out, mask] {
            if (x->requires_grad)
                x->grad_vec() += detail::grad1d(*out).cwiseProduct(ConstVecMap<S>(mask->data(), x->numel()));
        });
    }
    return out;
}

// Rotary position encoding of one head: x is [T x d] or [N x T x d] with
// d even. Pair (2i, 2i+1) at position t rotates by t * 10000^(-2i/d).
// The rotation is orthogonal, so backward rotates the gradient by the
// negative angle.
template <typename S>
TensorPtr<S> rope(Tape<S>& tape, const TensorPtr<S>& x, Index pos_offset = 0) {
    if (x->rank() != 2 && x->rank() != 3)
        throw ShapeError("rope: expected rank 2 or 3, got " + shape_str(x->shape));
    const Index d = x->last_dim();
    if (d % 2 != 0)
        throw ConfigError("rope: head dim must be even, got " + std::to_string(d));
    const Index t_len = x->rank() == 2 ? x->dim(0) : x->dim(1);
    const Index n_batch = x->rank() == 2 ? 1 : x->dim(0);

    auto angles = std::make_shared<std::vector<S>>(static_cast<size_t>(t_len * d / 2) * 2);
    for (Index t = 0; t < t_len; ++t) {
        for (Index i = 0; i < d / 2; ++i) {
            const double theta = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
            const double a = static_cast<double>(t + pos_offset) * theta;
            (*angles)[static_cast<size_t>((t * d / 2 + i) * 2)] = static_cast<S>(std::cos(a));
            (*angles)[static_cast<size_t>((t * d / 2 + i) * 2 + 1)] = static_cast<S>(std::sin(a));
        }
    }

    auto out = make_tensor<S>(x->shape);
    for (Index b = 0; b < n_batch; ++b) {
        for (Index t = 0; t < t_len; ++t) {
            const S* src = x->values.data() + (b * t_len + t) * d;
            S* dst = out->values.data() + (b * t_len + t) * d;
            for (Index i = 0; i < d / 2; ++i) {
                const S c = (*angles)[static_cast<size_t>((t * d / 2 + i) * 2)];
                const S s = (*angles)[static_cast<size_t>((t * d / 2 + i) * 2 + 1)];
                dst[2 * i] = src[2 * i] * c - src[2 * i + 1] * s;
                dst[2 * i + 1] = src[2 * i] * s + src[2 * i + 1] * c;
            }
        }
    }
    check_finite(*out, "rope");
    if (detail::track(tape, {&x})) {
        out->requires_grad = true;
        tape.record(out, [x, out, angles, n_batch, t_len, d] {
            if (!x->requires_grad) return;
            x->ensure_grad();
            for (Index b = 0; b < n_batch; ++b) {
                for (Index t = 0; t < t_len; ++t) {
                    const S* g = out->grad.data() + (b * t_len + t) * d;
                    S* gx = x->grad.data() + (b * t_len + t) * d;
                    for (Index i = 0; i < d / 2; ++i) {
                        const S c = (*angles)[static_cast<size_t>((t * d / 2 + i) * 2)];
                        const S s = (*angles)[static_cast<size_t>((t * d / 2 + i) * 2 + 1)];
                        gx[2 * i] += g[2 * i] * c + g[2 * i + 1] * s;
                        gx[2 * i + 1] += -g[2 * i] * s + g[2 * i + 1] * c;
                    }
                }
            }
        });
    }
    return out;
}

template <typename S>
TensorPtr<S> sum(Tape<S>& tape, const TensorPtr<S>& x) {
    auto out = make_tensor<S>(Shape{1});
    out->values[0] = x->vec().sum();
    check_finite(*out, "sum");
    if (detail::track(tape, {&x})) {
        out->requires_grad = true;
        tape.record(out, [x, out] {
            if (x->requires_grad) x->grad_vec().array() += out->grad[0];
        });
    }
    return out;
}

} // namespace stlm
